#!/usr/bin/env python3
"""Tests for image, height, shadow and stability metrics."""

import csv
import math

import numpy as np
import pytest
import torch

from dataset import CameraSpec, load_dataset
from evaluation import (
    EvaluationReport,
    TuneBaselines,
    ViewRender,
    contact_sheet,
    emd_histogram,
    evaluate_model,
    height_from_field,
    height_metrics,
    psnr,
    render_view,
    seasonal_align,
    shadow_exact,
    shadow_metrics,
    ssim,
    stability_sweep,
    sweep_cameras,
    tune_score,
    write_report_csv,
)
from radiance_core import ShadowParams
from run_config import RunConfig
from scene_sim import NoiseSpec, emit_dataset, make_scene
from siren_net import NetworkConfig, SeasonField
from trainer import Trainer
from utils import InvalidArgument

TINY_NET = NetworkConfig(trunk_width=16, trunk_depth=2, n_season_classes=2, pe_levels_pos=2, pe_levels_sun=2,
                         branch_width=8)


class EmptyField:
    def density(self, points):
        return torch.zeros(points.shape[:-1], dtype=points.dtype)


class SlabField:
    """Opaque below altitude ``level``: density 10/δ for the evaluation sample spacing."""

    def __init__(self, level, delta):
        self.level, self.delta = level, delta

    def density(self, points):
        z = points[..., 2]
        return torch.where(z <= self.level, torch.full_like(z, 10.0 / self.delta), torch.zeros_like(z))


def tiny_field(seed=0):
    torch.manual_seed(seed)
    return SeasonField(TINY_NET)


def test_psnr_examples():
    a = np.zeros((4, 4, 3))
    assert psnr(a, a) == 99.0
    assert psnr(a, a + 0.1) == pytest.approx(20.0)
    with pytest.raises(InvalidArgument):
        psnr(a, np.zeros((4, 4)))


def test_ssim_examples():
    rng = np.random.default_rng(0)
    image = rng.random((16, 16, 3))
    assert ssim(image, image) == pytest.approx(1.0)
    assert ssim(image, 1.0 - image) < 0.5
    with pytest.raises(InvalidArgument):
        ssim(np.zeros((8, 8)), np.zeros((8, 8)))


def test_emd_histogram_examples():
    black, white = np.zeros((4, 4, 3)), np.ones((4, 4, 3))
    assert emd_histogram(black, black) == 0.0
    assert emd_histogram(black, white) == pytest.approx(255.0)
    half = np.full((4, 4, 3), 0.5)
    assert emd_histogram(black, half) == pytest.approx(128.0)
    # permuting pixels leaves histograms unchanged
    rng = np.random.default_rng(1)
    image = rng.random((6, 6, 3))
    shuffled = image.reshape(-1, 3)[rng.permutation(36)].reshape(6, 6, 3)
    assert emd_histogram(image, shuffled) == 0.0


def test_height_metrics_match_a_plain_loop():
    rng = np.random.default_rng(2)
    pred, truth = rng.normal(size=(7, 9)), rng.normal(size=(7, 9))
    metrics = height_metrics(pred, truth, meters_per_unit=50.0)
    errors = [abs(p - t) * 50.0 for p, t in zip(pred.ravel(), truth.ravel())]
    total, squares = 0.0, 0.0
    for e in errors:
        total += e
        squares += e * e
    assert metrics.mae == total / len(errors)
    assert metrics.rmse == math.sqrt(squares / len(errors))
    assert metrics.median_error == pytest.approx(float(np.median(errors)))
    assert metrics.pct_within_1m == sum(e <= 1.0 for e in errors) / len(errors)


def test_height_metrics_identical_maps():
    truth = np.linspace(-1, 1, 16).reshape(4, 4)
    metrics = height_metrics(truth, truth, 50.0)
    assert (metrics.mae, metrics.rmse, metrics.median_error, metrics.pct_within_1m) == (0.0, 0.0, 0.0, 1.0)


def test_height_from_empty_field_is_the_floor():
    extraction = height_from_field(EmptyField(), 5, 4, samples=16)
    assert extraction.heights.shape == (4, 5)
    assert (extraction.heights == -1.0).all()
    assert (extraction.surface_mass == 0.0).all()


def test_height_from_opaque_slab():
    samples = 96
    extraction = height_from_field(SlabField(0.3, 2.0 / samples), 6, 6, samples=samples)
    assert np.abs(extraction.heights - 0.3).max() <= 2.0 / samples
    assert (extraction.surface_mass > 0.99).all()


def test_shadow_exact_of_empty_field():
    params = ShadowParams()
    positions = torch.zeros(3, 4, 3, dtype=torch.float64)
    p_surface = torch.zeros(3, 4, dtype=torch.float64)
    sun = torch.tensor([[0.0, 0.6, 0.8]] * 3, dtype=torch.float64)
    mask = shadow_exact(EmptyField(), positions, p_surface, sun, params, solar_samples=8)
    assert mask.tolist() == pytest.approx([1 / (1 + math.exp(6.0))] * 3)


def test_shadow_exact_sees_an_occluder():
    """A surface point under an opaque slab is dark; the same point with the slab below it is lit."""
    params = ShadowParams()
    positions = torch.tensor([[[0.0, 0.0, -0.5]]], dtype=torch.float64)
    p_surface = torch.ones(1, 1, dtype=torch.float64)
    sun = torch.tensor([[0.0, 0.0, 1.0]], dtype=torch.float64)
    dark = shadow_exact(SlabField(0.5, 0.01), positions, p_surface, sun, params, solar_samples=96)
    lit = shadow_exact(SlabField(-0.9, 0.01), positions, p_surface, sun, params, solar_samples=96)
    assert float(dark) < 0.01
    assert float(lit) > 0.99


def test_shadow_metrics_match_counting():
    rng = np.random.default_rng(3)
    pred = rng.random(200)
    truth = rng.random(200) > 0.4
    metrics = shadow_metrics(pred, truth)
    p = pred > 0.5
    tp = sum(a and b for a, b in zip(p, truth))
    tn = sum((not a) and (not b) for a, b in zip(p, truth))
    fp = sum(a and (not b) for a, b in zip(p, truth))
    fn = sum((not a) and b for a, b in zip(p, truth))
    precision, recall = tp / (tp + fp), tp / (tp + fn)
    assert metrics.accuracy == pytest.approx((tp + tn) / 200)
    assert metrics.sun_f1 == pytest.approx(2 * precision * recall / (precision + recall))
    assert metrics.shadow_precision == pytest.approx(tn / (tn + fn))
    assert metrics.shadow_recall == pytest.approx(tn / (tn + fp))


def test_shadow_metrics_edge_cases():
    all_lit = shadow_metrics(np.ones(5), np.ones(5, dtype=bool))
    assert (all_lit.accuracy, all_lit.sun_f1, all_lit.shadow_precision, all_lit.shadow_recall) == (1.0, 1.0, 1.0, 1.0)
    inverted = shadow_metrics(np.zeros(4), np.ones(4, dtype=bool))
    assert inverted.sun_f1 == 0.0
    assert inverted.accuracy == 0.0
    with pytest.raises(InvalidArgument):
        shadow_metrics(np.ones(3), np.ones(4, dtype=bool))


def _toy_renderer():
    rng = np.random.default_rng(4)
    base = rng.random((6, 6, 3)) * 0.5 + 0.2
    mask = np.zeros((6, 6))
    mask[:, :3] = 1.0

    def render(t):
        return ViewRender(col_sa=base, col_t=base * (0.3 + 0.6 * t),
                          mask=mask, sky=np.full(3, 0.5))

    return render


def test_seasonal_align_recovers_time_and_sky():
    render = _toy_renderer()
    sky = np.array([0.3, 0.5, 0.7])
    source = render(0.2)
    target = source.col_t * (source.mask[..., None] + (1 - source.mask[..., None]) * sky)
    result = seasonal_align(render, target, n_times=10)
    assert result.day_fraction == pytest.approx(0.2)
    assert result.sky == pytest.approx(sky)
    assert result.mse == pytest.approx(0.0, abs=1e-20)


def test_seasonal_align_keeps_a_better_identity():
    render = _toy_renderer()
    source = render(0.33)
    sky = np.full(3, 0.4)
    target = source.col_t * (source.mask[..., None] + (1 - source.mask[..., None]) * sky)
    result = seasonal_align(render, target, n_times=10, identity=(0.33, sky))
    assert result.day_fraction == 0.33
    assert result.mse == 0.0


def test_seasonal_align_black_target_clamps_sky():
    result = seasonal_align(_toy_renderer(), np.zeros((6, 6, 3)), n_times=8)
    assert (result.sky >= 1e-3).all() and (result.sky <= 1.0).all()
    assert np.isfinite(result.mse)


def test_tune_score_examples():
    baselines = TuneBaselines(ssim=0.8, mae=4.0, emd=0.2)
    assert tune_score(0.8, 2.0, 0.1, baselines) == pytest.approx(1.5)
    assert tune_score(0.8, 2.0, 0.2, baselines) == pytest.approx(0.5)
    with pytest.raises(InvalidArgument):
        tune_score(0.8, 2.0, 0.1, TuneBaselines(ssim=0.0, mae=4.0, emd=0.2))


def test_sweep_cameras():
    cams = sweep_cameras(5, 8)
    assert cams[0].off_nadir_deg == 0.0
    assert [c.off_nadir_deg for c in cams[1:]] == [20.0] * 4
    assert [c.azimuth_deg for c in cams[1:]] == [0.0, 90.0, 180.0, 270.0]


def test_render_view_shapes_and_ranges():
    view = render_view(tiny_field(), CameraSpec(width=5, height=4), np.array([0.0, 0.6, 0.8]), 0.3,
                       ShadowParams(), samples=8)
    assert view.col_sa.shape == (4, 5, 3)
    assert view.mask.shape == (4, 5)
    assert ((view.mask > 0) & (view.mask < 1)).all()
    assert np.isfinite(view.col_sa).all()


def test_stability_sweep_single_view_is_degenerate(monkeypatch):
    monkeypatch.setenv("SEASON_FIELD_THREADS", "2")
    report = stability_sweep(tiny_field(), ShadowParams(), n_views=1, n_suns=1, n_times=2, image_size=4, samples=4)
    assert report.degenerate
    assert (report.median, report.q95, report.max) == (0.0, 0.0, 0.0)
    assert report.n_renders == 2
    assert report.baseline_max >= report.baseline_min >= 0.0


def test_stability_sweep_pairs():
    report = stability_sweep(tiny_field(), ShadowParams(), n_views=2, n_suns=2, n_times=2, image_size=4, samples=4)
    assert not report.degenerate
    assert report.n_renders == 8
    assert all(len(v) == 6 for v in report.pair_emds.values())
    assert report.median <= report.q95 <= report.max


def test_evaluate_model_on_tiny_dataset(tiny_dataset, tmp_path):
    report = evaluate_model(tiny_field(), tiny_dataset, ShadowParams(), samples=8, n_align_times=3, shadow_stride=4)
    assert set(report.views) == {r.name for r in tiny_dataset.test_records()}
    for metrics in report.views.values():
        assert metrics["psnr_sa"] >= metrics["psnr"] - 1e-4
    assert report.height is not None and report.prior_height is not None
    assert report.prior_height.mae < report.height.mae
    assert 0.0 <= report.shadow.accuracy <= 1.0

    rows = report.rows("tiny", "A")
    path = write_report_csv(rows, tmp_path / "report.csv")
    with open(path, newline="", encoding="utf-8") as handle:
        read = list(csv.DictReader(handle))
    assert len(read) == len(rows)
    assert {"region", "case", "metric", "value"} == set(read[0])
    assert report.mean("ssim") == pytest.approx(np.mean([v["ssim"] for v in report.views.values()]))
    assert math.isnan(EvaluationReport().mean("ssim"))


def test_contact_sheet(tmp_path):
    images = [np.full((4, 4, 3), k / 5) for k in range(5)]
    path = contact_sheet(images, [str(k) for k in range(5)], tmp_path / "sheet.png", columns=3)
    assert path.exists() and path.stat().st_size > 0
    with pytest.raises(InvalidArgument):
        contact_sheet([], [], tmp_path / "empty.png")


ACCEPTANCE_SIZE = 64
STABILITY_SIZE = 32


@pytest.fixture(scope="module")
def acceptance_dataset(tmp_path_factory):
    """Town scene at full size: 20 training and 4 held-out views, one spurious bump in the prior."""
    root = tmp_path_factory.mktemp("acceptance")
    scene = make_scene("town", np.random.default_rng(7))
    emit_dataset(scene, root, n_views=24, noise=NoiseSpec(n_blobs=1), image_size=ACCEPTANCE_SIZE, seed=7)
    return load_dataset(root)


@pytest.fixture(scope="module")
def trained_case(acceptance_dataset):
    """Train each ablation case once with the default configuration, on first use."""
    cache = {}

    def get(case):
        if case not in cache:
            config = RunConfig().for_case(case)
            run = Trainer(config, acceptance_dataset)
            run.run()
            model = run.model.eval()
            report = evaluate_model(model, acceptance_dataset, config.shadow(), config.shading)
            cache[case] = (model, config, report)
        return cache[case]

    return get


@pytest.fixture(scope="module")
def stability_of(trained_case):
    cache = {}

    def get(case):
        if case not in cache:
            model, config, _ = trained_case(case)
            cache[case] = stability_sweep(model, config.shadow(), config.shading, image_size=STABILITY_SIZE)
        return cache[case]

    return get


@pytest.mark.slow
def test_full_model_reconstructs_held_out_views(trained_case):
    _, _, report = trained_case("A")
    assert report.mean("psnr_sa") >= 20.0
    assert report.mean("ssim_sa") >= 0.6


@pytest.mark.slow
def test_full_model_corrects_the_prior_height(trained_case):
    """Training pulls the height map away from the injected bump toward the truth."""
    _, _, report = trained_case("A")
    assert report.height.mae < report.prior_height.mae


@pytest.mark.slow
def test_full_model_predicts_shadows(trained_case):
    _, _, report = trained_case("A")
    assert report.shadow.accuracy >= 0.9


@pytest.mark.slow
def test_full_model_is_stable_across_views_and_suns(stability_of):
    """Renders that differ only in view and sun stay closer than renders of different seasons."""
    report = stability_of("A")
    assert report.n_renders == 11 * 5 * 12
    assert report.median < report.baseline_min


@pytest.mark.slow
def test_seasonal_classes_beat_a_single_class(trained_case):
    assert trained_case("A")[2].mean("ssim_sa") > trained_case("E")[2].mean("ssim_sa")


@pytest.mark.slow
def test_prior_phase_improves_height(trained_case):
    assert trained_case("A")[2].height.mae < trained_case("D")[2].height.mae


@pytest.mark.slow
def test_robust_loss_keeps_shadow_recall(trained_case):
    assert trained_case("A")[2].shadow.shadow_recall >= trained_case("C")[2].shadow.shadow_recall


@pytest.mark.slow
def test_shadow_mask_is_more_stable_than_solar_shading(stability_of):
    assert stability_of("A").median < stability_of("B").median


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
