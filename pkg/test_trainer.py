#!/usr/bin/env python3
"""Tests for ray sampling, the phase schedule and the training loop."""

import csv
import json
import math
import warnings

import numpy as np
import pytest
import torch

import trainer as trainer_module
from dataset import load_dataset
from losses import LossThresholds, RobustLossParams, loss_image_ray
from radiance_core import transmittance_profile
from rendering import merged_density
from run_config import RunConfig
from scene_sim import emit_dataset, make_scene
from siren_net import ParamStore, load_checkpoint, partition_freeze_sets
from trainer import (
    METRIC_COLUMNS,
    PhaseSchedule,
    PriorHeight,
    StepMetrics,
    Trainer,
    image_loss_trend,
    make_solar_rays,
    ray_box_interval,
    rho_h,
    robust_floor,
    sample_ray,
    sample_rays,
    smoothed,
)
from utils import DatasetIOError, EmptyRayError, InvalidArgument, NumericFailure

T = torch.float64


def down_rays(xy):
    xy = torch.as_tensor(xy, dtype=T)
    origins = torch.cat([xy, torch.ones(len(xy), 1, dtype=T)], dim=-1)
    directions = torch.tensor([0.0, 0.0, -1.0], dtype=T).expand_as(origins).clone()
    return origins, directions


def test_phase_schedule():
    schedule = PhaseSchedule(total_steps=100, phase1_fraction=0.2)
    assert schedule.phase1_steps == 20
    assert [schedule.gamma(s) for s in (0, 10, 20, 50)] == [0.0, 0.5, 1.0, 1.0]
    assert schedule.phase(19) == 1 and schedule.phase(20) == 2
    disabled = PhaseSchedule(total_steps=100, phase1_enabled=False)
    assert disabled.phase1_steps == 0
    assert disabled.gamma(0) == 1.0
    assert not disabled.in_phase1(0)


def test_merged_density_examples():
    assert float(merged_density(torch.tensor(2.0), torch.tensor(4.0), 0.5)) == 3.0
    rho = torch.tensor([1.0, 2.0])
    assert merged_density(rho, torch.zeros(2), 1.0) is rho
    with pytest.raises(InvalidArgument):
        merged_density(rho, rho, 1.5)


def test_prior_height_sampling():
    prior = PriorHeight([[1.0, 2.0], [3.0, 4.0]])
    xy = torch.tensor([[-0.5, 0.5], [0.5, -0.5], [0.0, 0.0], [2.0, 2.0]], dtype=T)
    assert prior.sample(xy).tolist() == pytest.approx([1.0, 4.0, 2.5, 2.0])
    with pytest.raises(InvalidArgument):
        PriorHeight([[float("nan")]])


def test_rho_h_examples():
    prior = PriorHeight([[0.0]])
    points = torch.tensor([[0.1, 0.2, -0.3], [0.1, 0.2, 0.0], [0.1, 0.2, 0.4]], dtype=T)
    deltas = torch.full((3,), 0.05, dtype=T)
    assert rho_h(points, deltas, prior).tolist() == pytest.approx([200.0, 200.0, 0.0])


def test_ray_box_interval():
    origins, directions = down_rays([[0.0, 0.0], [3.0, 0.0]])
    t_near, t_far, hit = ray_box_interval(origins, directions)
    assert hit.tolist() == [True, False]
    assert float(t_near[0]) == 0.0
    assert float(t_far[0]) == pytest.approx(2.0)


def test_sample_rays_ordered_and_in_bounds():
    origins, directions = down_rays(torch.rand(20, 2, dtype=T) * 2 - 1)
    samples = sample_rays(origins, directions, 16, torch.Generator().manual_seed(0))
    assert samples.positions.shape == (20, 16, 3)
    assert (samples.t_values[:, 1:] > samples.t_values[:, :-1]).all()
    assert (samples.positions.abs() <= 1.0).all()
    assert (samples.deltas > 0).all()
    assert torch.equal(samples.deltas[:, -1], samples.deltas[:, -2])


def test_sample_rays_deterministic_per_generator():
    origins, directions = down_rays([[0.2, -0.4]])
    a = sample_rays(origins, directions, 8, torch.Generator().manual_seed(5))
    b = sample_rays(origins, directions, 8, torch.Generator().manual_seed(5))
    c = sample_rays(origins, directions, 8, torch.Generator().manual_seed(6))
    assert torch.equal(a.t_values, b.t_values)
    assert not torch.equal(a.t_values, c.t_values)


def test_sample_rays_midpoints_and_single_sample():
    origins, directions = down_rays([[0.0, 0.0]])
    mid = sample_rays(origins, directions, 4, jitter=False)
    assert mid.t_values[0].tolist() == pytest.approx([0.25, 0.75, 1.25, 1.75])
    single = sample_ray(origins[0], directions[0], 1, jitter=False)
    assert single.deltas.tolist() == pytest.approx([2.0])


def test_sample_rays_errors():
    origins, directions = down_rays([[0.0, 0.0], [1.5, 0.0]])
    with pytest.raises(EmptyRayError):
        sample_rays(origins, directions, 8)
    with pytest.raises(InvalidArgument):
        sample_rays(origins[:1], directions[:1], 0)


def test_stratified_transmittance_matches_closed_form():
    """Opacity of a smooth vertical density profile stays within 0.01 of the exact value."""
    gen = torch.Generator().manual_seed(11)
    origins, directions = down_rays(torch.rand(100, 2, generator=gen, dtype=T) * 2 - 1)
    depth = torch.rand(100, 1, generator=gen, dtype=T) * 4
    samples = sample_rays(origins, directions, 96, gen)
    z = samples.positions[..., 2]
    # integrates to `depth` over z in [-1, 1]
    density = depth * 0.75 * (1 - z ** 2)
    opacity = transmittance_profile(density, samples.deltas).p_surface.sum(-1)
    exact = 1 - torch.exp(-depth[:, 0])
    assert float((opacity - exact).abs().max()) <= 0.01


def test_solar_rays_travel_against_the_sun():
    sun = torch.tensor([0.5, -0.3, 0.8], dtype=T)
    sun = sun / sun.norm()
    samples = make_solar_rays(2000, sun, 8, torch.Generator().manual_seed(2))
    assert torch.allclose(samples.directions, -sun.expand(2000, 3))
    assert torch.allclose(samples.origins[:, 2], torch.ones(2000, dtype=T))
    crossing = samples.origins + ((samples.origins[:, 2] + 1) / sun[2])[:, None] * samples.directions
    x, y = crossing[:, 0], crossing[:, 1]
    for sx in (-1, 1):
        for sy in (-1, 1):
            assert ((x * sx > 0.5) & (y * sy > 0.5) & (x.abs() <= 1) & (y.abs() <= 1)).any()


def test_solar_rays_reject_low_sun():
    with pytest.raises(InvalidArgument):
        make_solar_rays(10, torch.tensor([1.0, 0.0, 0.0]), 8)
    with pytest.raises(InvalidArgument):
        make_solar_rays(10, torch.tensor([0.6, 0.0, -0.8]), 8)


def test_smoothed():
    assert smoothed([1.0, 2.0, 3.0, 4.0], 2).tolist() == [1.5, 2.5, 3.5]
    with pytest.raises(InvalidArgument):
        smoothed([1.0], 0)


def test_training_step_respects_freeze_sets(tiny_dataset, tiny_config, monkeypatch):
    """Image-ray gradients skip the solar branch; solar-ray gradients touch only sky and solar branch."""
    calls = []
    real = trainer_module.gradients

    def recording(store, loss_fn, frozen=()):
        grad = real(store, loss_fn, frozen)
        calls.append((frozenset(frozen), grad, store.slices()))
        return grad

    monkeypatch.setattr(trainer_module, "gradients", recording)
    Trainer(tiny_config, tiny_dataset).train_step(0)
    sets = partition_freeze_sets()
    (image_frozen, image_grad, slices), (solar_frozen, solar_grad, _) = calls
    assert image_frozen == sets.image_ray_frozen
    assert solar_frozen == sets.solar_ray_frozen
    assert torch.count_nonzero(image_grad[slices["solar_vis_branch"]]) == 0
    assert torch.count_nonzero(image_grad[slices["trunk"]]) > 0
    for name in sets.solar_ray_frozen:
        assert torch.count_nonzero(solar_grad[slices[name]]) == 0, name
    assert torch.count_nonzero(solar_grad[slices["solar_vis_branch"]]) > 0


def test_prior_loss_only_in_phase_one(tiny_dataset, tiny_config):
    run = Trainer(tiny_config, tiny_dataset)
    history = run.run(steps=5)
    assert [m.phase for m in history] == [1, 1, 1, 2, 2]
    assert history[0].gamma == 0.0
    assert all(m.L_p != 0 for m in history[:3])
    assert all(m.L_p == 0 for m in history[3:])
    assert all(math.isfinite(m.L_IR) and math.isfinite(m.L_SR) for m in history)


def test_case_d_matches_disabled_phase_one(tiny_dataset, tiny_config):
    case_d = Trainer(tiny_config.for_case("D"), tiny_dataset).run(steps=3)
    no_phase1 = tiny_config.model_copy(update={"phase1_fraction": 0.0, "lambda_ds": 0.0})
    other = Trainer(no_phase1, tiny_dataset).run(steps=3)
    assert [m.L_IR for m in case_d] == [m.L_IR for m in other]
    assert [m.L_SR for m in case_d] == [m.L_SR for m in other]


def test_run_writes_outputs(tiny_dataset, tiny_config, tmp_path):
    out = tmp_path / "run"
    Trainer(tiny_config, tiny_dataset, out).run()
    assert (out / "final.snrf").exists()
    assert sorted(p.name for p in (out / "checkpoints").iterdir()) == [
        "step_4.optim.pt", "step_4.snrf", "step_8.optim.pt", "step_8.snrf"]
    assert (out / "final.optim.pt").exists()
    with open(out / "metrics.csv", newline="", encoding="utf-8") as handle:
        rows = list(csv.DictReader(handle))
    assert tuple(rows[0]) == METRIC_COLUMNS
    assert [int(r["step"]) for r in rows] == list(range(10))
    meta = json.loads((out / "run_meta.json").read_text())
    assert meta["optimizer"] == "adam"
    assert meta["phase1_steps"] == 3
    assert set(meta["image_loss_excess"]) == {"first", "last", "window"}
    _, ckpt_meta = load_checkpoint(out / "final.snrf")
    assert ckpt_meta["step"] == 10


def test_seeded_runs_are_bit_identical(tiny_dataset, tiny_config, tmp_path):
    for name in ("a", "b"):
        Trainer(tiny_config, tiny_dataset, tmp_path / name).run(steps=4)
    assert (tmp_path / "a" / "final.snrf").read_bytes() == (tmp_path / "b" / "final.snrf").read_bytes()


def test_resume_continues_the_same_trajectory(tiny_dataset, tiny_config, tmp_path):
    """Resuming from a periodic checkpoint replays the uninterrupted run."""
    straight = Trainer(tiny_config, tiny_dataset, tmp_path / "straight").run()

    resumed = Trainer(tiny_config, tiny_dataset, tmp_path / "resumed")
    assert resumed.resume(tmp_path / "straight" / "checkpoints" / "step_4.snrf") == 4
    got = resumed.run()
    assert [m.step for m in got] == list(range(4, 10))
    for a, b in zip(straight[4:], got):
        assert b.L_IR == pytest.approx(a.L_IR, abs=1e-6)
        assert b.L_SR == pytest.approx(a.L_SR, abs=1e-6)
        assert b.lr == pytest.approx(a.lr)


def test_resume_refuses_without_matching_optimizer_state(tiny_dataset, tiny_config, tmp_path):
    out = tmp_path / "run"
    Trainer(tiny_config, tiny_dataset, out).run()
    checkpoints = out / "checkpoints"
    (checkpoints / "step_8.optim.pt").replace(checkpoints / "step_4.optim.pt")
    with pytest.raises(DatasetIOError, match="step 8"):
        Trainer(tiny_config, tiny_dataset).resume(checkpoints / "step_4.snrf")
    with pytest.raises(DatasetIOError, match="no optimizer state"):
        Trainer(tiny_config, tiny_dataset).resume(checkpoints / "step_8.snrf")


def test_non_finite_loss_dumps_checkpoint(tiny_dataset, tiny_config, tmp_path, monkeypatch):
    monkeypatch.setattr(trainer_module, "loss_image_ray", lambda *args, **kwargs: torch.tensor(float("nan")))
    out = tmp_path / "broken"
    with pytest.raises(NumericFailure):
        Trainer(tiny_config, tiny_dataset, out).run()
    assert (out / "checkpoints" / "failure_step_0.snrf").exists()


def test_parameters_move_after_a_step(tiny_dataset, tiny_config):
    run = Trainer(tiny_config, tiny_dataset)
    before = ParamStore(run.model).flat().clone()
    run.train_step(0)
    assert not torch.equal(ParamStore(run.model).flat(), before)


def test_step_metrics_read_losses_without_grad_warnings(tiny_dataset, tiny_config):
    run = Trainer(tiny_config, tiny_dataset)
    with warnings.catch_warnings():
        warnings.filterwarnings("error", message=".*requires_grad.*")
        metrics = run.train_step(0)
    assert math.isfinite(metrics.L_IR) and math.isfinite(metrics.L_IR_floor)
    assert metrics.L_IR > metrics.L_IR_floor


def test_image_loss_trend_measures_above_the_floor():
    """Progress is measured on L_IR minus the loss of a perfect prediction."""
    history = [StepMetrics(step=k, phase=2, gamma=0.0, lr=1e-4, L_IR=0.5 + 0.1 / (k + 1), L_SR=0.0, L_p=0.0,
                           alpha=1.0, c=0.5, L_IR_floor=0.5) for k in range(20)]
    first, last = image_loss_trend(history, window=5)
    assert first == pytest.approx(np.mean([0.1 / (k + 1) for k in range(5)]))
    assert last == pytest.approx(np.mean([0.1 / (k + 1) for k in range(15, 20)]))
    assert image_loss_trend(history[:4], window=5) is None


def test_robust_floor_is_the_loss_of_a_perfect_prediction():
    params = RobustLossParams(alpha=torch.tensor(1.0), c=torch.tensor(0.5))
    expected = loss_image_ray(torch.zeros(1, 3), torch.zeros(1, 3), torch.zeros(1, 3), torch.zeros(1, 3), params,
                              LossThresholds(lambda_sc=0.0, lambda_ds=0.0))
    assert robust_floor(params).item() == pytest.approx(expected.item(), rel=1e-5)


@pytest.mark.slow
def test_training_smoke(tmp_path):
    """The default configuration cuts the image loss above its floor by a fifth within 200 steps."""
    root = tmp_path / "town"
    emit_dataset(make_scene("town", np.random.default_rng(0)), root, n_views=24, image_size=32, seed=0)
    config = RunConfig(total_steps=200)
    history = Trainer(config, load_dataset(root)).run()
    assert len(history) == 200
    first, last = image_loss_trend(history)
    assert last <= 0.8 * first
    assert np.mean([m.L_IR for m in history[-10:]]) < np.mean([m.L_IR for m in history[:10]])


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
