"""
Two-phase training of the season field.

Phase 1 (the first ``phase1_fraction`` of the steps) blends the learned
density with a density derived from the prior height map and adds the prior
approximation loss; phase 2 trains on the learned density alone. Every step
draws a batch of image rays and a batch of solar rays. Gradients of the two
ray types are computed separately, each with its frozen partitions masked,
then summed into a single Adam update under a one-cycle learning rate.
"""

import csv
import json
import logging
import math
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
import torch
from pydantic import BaseModel, Field
from torch import nn
from tqdm import tqdm

from dataset import SCENE_BOUNDS, SceneDataset, camera_rays
from losses import RobustLossParams, log_partition, loss_image_ray, loss_prior, loss_solar_ray
from radiance_core import RaySamples, encode_time, transmittance_profile
from rendering import merged_density, render_rays
from siren_net import ParamStore, SeasonField, gradients, load_checkpoint, partition_freeze_sets, save_checkpoint
from utils import DatasetIOError, EmptyRayError, InvalidArgument, NumericFailure

if TYPE_CHECKING:
    from run_config import RunConfig

logger = logging.getLogger(__name__)

PRIOR_DENSITY_SCALE = 10.0
SOLAR_ELEVATION_RANGE = (20.0, 80.0)
METRIC_COLUMNS = ("step", "phase", "gamma", "lr", "L_IR", "L_SR", "L_p", "alpha", "c")
OPTIMIZER_SUFFIX = ".optim.pt"
SMOOTHING_WINDOW = 10


class PhaseSchedule(BaseModel):
    """Step counts of the two training phases and the density blend Γ."""

    total_steps: int = Field(5000, ge=2, description="Training steps (50000 at full scale)")
    phase1_fraction: float = Field(0.2, ge=0.0, le=1.0, description="Share of steps spent in phase 1")
    phase1_enabled: bool = Field(True, description="Run the depth-supervised phase")

    @property
    def phase1_steps(self) -> int:
        if not self.phase1_enabled:
            return 0
        return int(round(self.total_steps * self.phase1_fraction))

    def gamma(self, step: int) -> float:
        """Γ rises linearly from 0 at step 0 to 1 at the end of phase 1."""
        if self.phase1_steps == 0:
            return 1.0
        return min(step / self.phase1_steps, 1.0)

    def in_phase1(self, step: int) -> bool:
        return step < self.phase1_steps

    def phase(self, step: int) -> int:
        return 1 if self.in_phase1(step) else 2


class RayBatchSpec(BaseModel):
    image_rays_per_step: int = Field(512, gt=0)
    solar_rays_per_step: int = Field(1024, gt=0)
    samples_per_ray: int = Field(96, gt=0)
    solar_sun_groups: int = Field(8, gt=0, description="Distinct solar angles per step")


class PriorHeight:
    """Prior altitude raster over the scene footprint, sampled bilinearly."""

    def __init__(self, heights):
        grid = torch.as_tensor(np.asarray(heights, dtype=np.float64))
        if grid.dim() != 2 or min(grid.shape) < 1:
            raise InvalidArgument(f"prior height must be a non-empty 2-D grid, got shape {tuple(grid.shape)}")
        if not torch.isfinite(grid).all():
            raise InvalidArgument("prior height contains non-finite values")
        self.grid = grid

    @classmethod
    def from_dataset(cls, dataset: SceneDataset) -> "PriorHeight":
        if dataset.prior_height is None:
            raise InvalidArgument(f"dataset {dataset.root} has no prior height map")
        return cls(dataset.prior_height)

    def sample(self, xy: torch.Tensor) -> torch.Tensor:
        """Altitude under footprint points of shape (..., 2); edge values extend outward."""
        grid = self.grid.to(xy.dtype)[None, None]
        # grid_sample addresses rows from the top, which is +y
        coords = torch.stack([xy[..., 0], -xy[..., 1]], dim=-1).reshape(1, -1, 1, 2)
        out = nn.functional.grid_sample(grid, coords, mode="bilinear", padding_mode="border", align_corners=False)
        return out.reshape(xy.shape[:-1])


def rho_h(points: torch.Tensor, deltas: torch.Tensor, prior: PriorHeight) -> torch.Tensor:
    """Prior density: 10/δ at or below the prior surface, 0 above it."""
    below = points[..., 2] <= prior.sample(points[..., :2])
    return torch.where(below, PRIOR_DENSITY_SCALE / deltas, torch.zeros_like(deltas))


def ray_box_interval(origins: torch.Tensor, directions: torch.Tensor,
                     bounds: Tuple[float, float] = SCENE_BOUNDS) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """
    Slab intersection of rays with the cube ``bounds``³.

    Returns:
        tuple: (t_near, t_far, hit), t_near clipped to 0
    """
    lo, hi = bounds
    parallel = directions.abs() < 1e-12
    safe = torch.where(parallel, torch.ones_like(directions), directions)
    t1 = (lo - origins) / safe
    t2 = (hi - origins) / safe
    inside = (origins >= lo) & (origins <= hi)
    inf = torch.full_like(t1, math.inf)
    t_min = torch.where(parallel, torch.where(inside, -inf, inf), torch.minimum(t1, t2))
    t_max = torch.where(parallel, torch.where(inside, inf, -inf), torch.maximum(t1, t2))
    t_near = t_min.amax(dim=-1).clamp_min(0.0)
    t_far = t_max.amin(dim=-1)
    return t_near, t_far, t_far > t_near + 1e-9


def sample_rays(
    origins: torch.Tensor,
    directions: torch.Tensor,
    k: int = 96,
    generator: Optional[torch.Generator] = None,
    jitter: bool = True,
    bounds: Tuple[float, float] = SCENE_BOUNDS,
) -> RaySamples:
    """
    Stratified samples along a batch of rays inside the scene box.

    The in-bounds segment is cut into k equal strata with one uniform draw in
    each; with ``jitter=False`` the stratum midpoints are used.

    Raises:
        EmptyRayError: If any ray misses the box
    """
    if k < 1:
        raise InvalidArgument(f"samples per ray must be positive, got {k}")
    t_near, t_far, hit = ray_box_interval(origins, directions, bounds)
    if not hit.all():
        raise EmptyRayError(f"{int((~hit).sum())} of {hit.numel()} rays miss the scene box")

    width = (t_far - t_near) / k
    index = torch.arange(k, dtype=origins.dtype, device=origins.device)
    if jitter:
        u = torch.rand((*origins.shape[:-1], k), generator=generator, dtype=origins.dtype)
    else:
        u = torch.full((*origins.shape[:-1], k), 0.5, dtype=origins.dtype)
    t_values = t_near.unsqueeze(-1) + (index + u) * width.unsqueeze(-1)
    positions = (origins.unsqueeze(-2) + t_values.unsqueeze(-1) * directions.unsqueeze(-2)).clamp(*bounds)

    if k == 1:
        deltas = width.unsqueeze(-1)
    else:
        steps = torch.diff(t_values, dim=-1)
        deltas = torch.cat([steps, steps[..., -1:]], dim=-1).clamp_min(1e-12)
    return RaySamples(origins=origins, directions=directions, t_values=t_values, positions=positions, deltas=deltas)


def sample_ray(origin: torch.Tensor, direction: torch.Tensor, k: int = 96,
               generator: Optional[torch.Generator] = None, jitter: bool = True,
               bounds: Tuple[float, float] = SCENE_BOUNDS) -> RaySamples:
    """Stratified samples along one ray; see :func:`sample_rays`."""
    batch = sample_rays(origin.unsqueeze(0), direction.unsqueeze(0), k, generator, jitter, bounds)
    return RaySamples(
        origins=batch.origins[0], directions=batch.directions[0], t_values=batch.t_values[0],
        positions=batch.positions[0], deltas=batch.deltas[0],
    )


def make_solar_rays(
    count: int,
    sun: torch.Tensor,
    k: int = 96,
    generator: Optional[torch.Generator] = None,
    bounds: Tuple[float, float] = SCENE_BOUNDS,
    jitter: bool = True,
) -> RaySamples:
    """
    Rays travelling from the sky along -sun through the scene box.

    Origins are uniform over the top face, extended sideways by the sun's
    horizontal drift across the box height so the whole footprint is lit;
    draws that miss the box are rejected.

    Raises:
        InvalidArgument: If the sun is at or below the horizon
    """
    sun = torch.as_tensor(sun, dtype=torch.float64)
    if count < 1:
        raise InvalidArgument(f"solar ray count must be positive, got {count}")
    if float(sun[2]) <= 0.0:
        raise InvalidArgument(f"sun must be above the horizon, got direction {sun.tolist()}")
    sun = sun / sun.norm()
    lo, hi = bounds
    drift = (hi - lo) * sun[:2] / sun[2]
    low = lo + torch.clamp(drift, max=0.0)
    high = hi + torch.clamp(drift, min=0.0)
    direction = -sun

    kept: List[torch.Tensor] = []
    n_kept = 0
    for _ in range(64):
        u = torch.rand((2 * count, 2), generator=generator, dtype=torch.float64)
        xy = low + u * (high - low)
        origins = torch.cat([xy, torch.full((2 * count, 1), hi, dtype=torch.float64)], dim=-1)
        _, _, hit = ray_box_interval(origins, direction.expand_as(origins), bounds)
        kept.append(origins[hit])
        n_kept += int(hit.sum())
        if n_kept >= count:
            break
    else:
        raise InvalidArgument(f"could not place {count} solar rays for sun {sun.tolist()}")
    origins = torch.cat(kept)[:count]
    return sample_rays(origins, direction.expand_as(origins).clone(), k, generator, jitter, bounds)


@dataclass
class RayBatch:
    origins: torch.Tensor
    directions: torch.Tensor
    colors: torch.Tensor
    sun: torch.Tensor
    time_encoding: torch.Tensor


class TrainingRays:
    """Every pixel ray of the training split, flattened."""

    def __init__(self, dataset: SceneDataset, dtype: torch.dtype = torch.float32):
        records = dataset.train_records()
        if not records:
            raise InvalidArgument(f"dataset {dataset.root} has no training images")
        origins, directions, colors, suns, times = [], [], [], [], []
        for record in records:
            o, d = camera_rays(record.camera)
            n = o.shape[0]
            origins.append(o)
            directions.append(d)
            colors.append(dataset.images[record.name].reshape(-1, 3))
            suns.append(np.broadcast_to(record.sun(), (n, 3)))
            times.append(np.full(n, record.day_fraction))
        self.origins = torch.as_tensor(np.concatenate(origins), dtype=dtype)
        self.directions = torch.as_tensor(np.concatenate(directions), dtype=dtype)
        self.colors = torch.as_tensor(np.concatenate(colors), dtype=dtype)
        self.sun = torch.as_tensor(np.concatenate(suns), dtype=dtype)
        self.time_encoding = encode_time(torch.as_tensor(np.concatenate(times))).encoding.to(dtype)
        self.training_suns = torch.as_tensor(np.stack([r.sun() for r in records]), dtype=torch.float64)
        logger.info("training rays: %d from %d images", len(self), len(records))

    def __len__(self) -> int:
        return self.origins.shape[0]

    def sample(self, n: int, generator: torch.Generator) -> RayBatch:
        idx = torch.randint(0, len(self), (n,), generator=generator)
        return RayBatch(self.origins[idx], self.directions[idx], self.colors[idx], self.sun[idx], self.time_encoding[idx])


@dataclass
class StepMetrics:
    step: int
    phase: int
    gamma: float
    lr: float
    L_IR: float
    L_SR: float
    L_p: float
    alpha: float
    c: float
    L_IR_floor: float = 0.0  # L_IR of a perfect prediction, log(c·Z(α)) under the robust loss

    def row(self) -> Dict[str, float]:
        return {name: getattr(self, name) for name in METRIC_COLUMNS}


@contextmanager
def batch_stats_frozen(model: nn.Module) -> Iterator[None]:
    """Run batch-norm layers on their running statistics without updating them."""
    norms = [m for m in model.modules() if isinstance(m, nn.modules.batchnorm._BatchNorm)]
    modes = [m.training for m in norms]
    for m in norms:
        m.eval()
    try:
        yield
    finally:
        for m, mode in zip(norms, modes):
            m.train(mode)


class Trainer:
    """
    Owns the field, the optimizer state and the run directory.

    Args:
        config: Resolved run configuration
        dataset: Loaded scene dataset
        out_dir: Run directory; created if missing
        model: Field to continue from, a freshly seeded one if omitted
    """

    def __init__(self, config: "RunConfig", dataset: SceneDataset, out_dir=None,
                 model: Optional[SeasonField] = None):
        self.config = config
        self.dataset = dataset
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.schedule = config.schedule()
        self.batch_spec = config.batch_spec()
        self.thresholds = config.thresholds()
        self.shadow = config.shadow()
        self.freeze = partition_freeze_sets()

        if model is None:
            torch.manual_seed(config.seed)
            model = SeasonField(config.network())
        self.model = model
        self.store = ParamStore(model)
        self.rays = TrainingRays(dataset)
        self.prior = PriorHeight.from_dataset(dataset) if self.schedule.phase1_steps > 0 else None
        self.start_step = 0
        self._build_optimizer()

    def _build_optimizer(self) -> None:
        self.optimizer = torch.optim.Adam(self.model.parameters(), lr=self.config.learning_rate)
        self.lr_schedule = torch.optim.lr_scheduler.OneCycleLR(
            self.optimizer,
            max_lr=self.config.learning_rate,
            total_steps=self.schedule.total_steps,
            pct_start=self.config.pct_start,
        )

    def step_generator(self, step: int) -> torch.Generator:
        return torch.Generator().manual_seed((self.config.seed << 32) + step)

    def _solar_suns(self, generator: torch.Generator) -> torch.Tensor:
        """Half the groups reuse training suns, the rest point anywhere 20-80 degrees up."""
        groups = self.batch_spec.solar_sun_groups
        suns = []
        for g in range(groups):
            if g % 2 == 0:
                idx = int(torch.randint(0, len(self.rays.training_suns), (1,), generator=generator))
                suns.append(self.rays.training_suns[idx])
            else:
                u = torch.rand(2, generator=generator, dtype=torch.float64)
                az = 2.0 * math.pi * u[0]
                low, high = SOLAR_ELEVATION_RANGE
                el = math.radians(low) + u[1] * math.radians(high - low)
                suns.append(torch.stack([torch.cos(el) * torch.cos(az), torch.cos(el) * torch.sin(az), torch.sin(el)]))
        return torch.stack(suns)

    def _solar_batch(self, generator: torch.Generator) -> Tuple[RaySamples, torch.Tensor]:
        suns = self._solar_suns(generator)
        total = self.batch_spec.solar_rays_per_step
        groups = len(suns)
        counts = [total // groups + (1 if g < total % groups else 0) for g in range(groups)]
        parts, sun_rows = [], []
        for sun, count in zip(suns, counts):
            if count == 0:
                continue
            parts.append(make_solar_rays(count, sun, self.batch_spec.samples_per_ray, generator))
            sun_rows.append(sun.expand(count, 3))
        dtype = next(self.model.parameters()).dtype
        samples = RaySamples(*(torch.cat([getattr(p, f) for p in parts]).to(dtype)
                               for f in ("origins", "directions", "t_values", "positions", "deltas")))
        return samples, torch.cat(sun_rows).to(dtype)

    def train_step(self, step: int) -> StepMetrics:
        """One update at ``step``; returns the losses measured before the update."""
        generator = self.step_generator(step)
        batch_spec = self.batch_spec
        in_phase1 = self.schedule.in_phase1(step)
        gamma = self.schedule.gamma(step) if in_phase1 else 1.0
        prior_weight = self.thresholds.lambda_ds if in_phase1 else 0.0
        robust = self.config.robust_loss
        shading = self.config.shading
        lr = self.lr_schedule.get_last_lr()[0]
        self.model.train()

        batch = self.rays.sample(batch_spec.image_rays_per_step, generator)
        image_samples = sample_rays(batch.origins, batch.directions, batch_spec.samples_per_ray, generator)
        solar_samples, solar_sun = self._solar_batch(generator)

        image_prior = rho_h(image_samples.positions, image_samples.deltas, self.prior) if in_phase1 else None
        values: Dict[str, float] = {}

        def image_loss() -> torch.Tensor:
            params = self.model.robust_params()
            render = render_rays(self.model, image_samples, batch.sun, batch.time_encoding, self.shadow,
                                 shading, rho_prior=image_prior, gamma=gamma)
            l_ir = loss_image_ray(batch.colors, render.col_sa, render.col_t, render.sky, params,
                                  self.thresholds, robust).mean()
            total = l_ir
            l_p = torch.zeros((), dtype=l_ir.dtype)
            if prior_weight > 0.0:
                l_p = loss_prior(render.outputs.density, image_prior, image_samples.deltas, params, robust).mean()
                total = total + prior_weight * l_p
            values["L_IR"], values["L_p"] = l_ir.detach().item(), l_p.detach().item()
            values["L_IR_floor"] = robust_floor(params).item() if robust else 0.0
            return total

        with torch.no_grad(), batch_stats_frozen(self.model):
            features = self.model.trunk_features(solar_samples.positions)
            density = self.model.density_from_features(features)
            if in_phase1:
                density = merged_density(density, rho_h(solar_samples.positions, solar_samples.deltas, self.prior), gamma)
            target = transmittance_profile(density, solar_samples.deltas).p_visible

        def solar_loss() -> torch.Tensor:
            sun_code = self.model.encode_sun(solar_sun)
            s_vis = self.model.solar_visibility(features, sun_code)
            l_sr = loss_solar_ray(s_vis, target, self.model.sky(sun_code), self.thresholds).mean()
            values["L_SR"] = l_sr.detach().item()
            return l_sr

        grad = gradients(self.store, image_loss, self.freeze.image_ray_frozen)
        grad = grad + gradients(self.store, solar_loss, self.freeze.solar_ray_frozen)
        self._apply(grad)

        with torch.no_grad():
            robust_params = self.model.robust_params()
        return StepMetrics(
            step=step, phase=self.schedule.phase(step), gamma=gamma, lr=lr,
            L_IR=values["L_IR"], L_SR=values["L_SR"], L_p=values["L_p"],
            alpha=float(robust_params.alpha), c=float(robust_params.c), L_IR_floor=values["L_IR_floor"],
        )

    def _apply(self, grad: torch.Tensor) -> None:
        """Write the flat gradient into .grad and step; partitions frozen for every ray type get no update."""
        never_trained = self.freeze.image_ray_frozen & self.freeze.solar_ray_frozen
        slices = self.store.slices()
        for name in self.store.names:
            piece = grad[slices[name]]
            offset = 0
            for param in self.store.partitions[name]:
                n = param.numel()
                param.grad = None if name in never_trained else piece[offset:offset + n].reshape(param.shape).clone()
                offset += n
        self.optimizer.step()
        self.lr_schedule.step()

    def checkpoint_metadata(self, step: int) -> Dict:
        return {"step": step, "seed": self.config.seed, "case": self.config.case,
                "run_config": self.config.model_dump(mode="json")}

    def save(self, path, step: int) -> Path:
        """Write the checkpoint and, next to it, the Adam and one-cycle state it resumes with."""
        path = save_checkpoint(path, self.model, self.checkpoint_metadata(step))
        sidecar = optimizer_sidecar(path)
        try:
            torch.save({"step": step, "optimizer": self.optimizer.state_dict(),
                        "lr_schedule": self.lr_schedule.state_dict()}, sidecar)
        except OSError as exc:
            raise DatasetIOError(sidecar, exc.strerror or str(exc)) from exc
        return path

    def resume(self, checkpoint) -> int:
        """
        Load field weights and the optimizer sidecar of ``checkpoint``; returns the next step.

        Raises:
            DatasetIOError: If the sidecar is missing or was written at another step
        """
        model, meta = load_checkpoint(checkpoint)
        step = int(meta.get("step", 0))
        sidecar = optimizer_sidecar(checkpoint)
        if not sidecar.exists():
            raise DatasetIOError(sidecar, "no optimizer state next to the checkpoint, cannot resume exactly")
        state = torch.load(sidecar, weights_only=False)
        if state.get("step") != step:
            raise DatasetIOError(sidecar, f"optimizer state is from step {state.get('step')}, checkpoint from {step}")
        self.model = model
        self.store = ParamStore(model)
        self._build_optimizer()
        self.optimizer.load_state_dict(state["optimizer"])
        self.lr_schedule.load_state_dict(state["lr_schedule"])
        self.start_step = step
        logger.info("resumed from %s at step %d", checkpoint, step)
        return step

    def run(self, steps: Optional[int] = None) -> List[StepMetrics]:
        """
        Train from ``start_step`` up to ``steps`` (the schedule total by default).

        Writes metrics.csv, periodic checkpoints, final.snrf and run_meta.json
        when the trainer has a run directory.

        Raises:
            NumericFailure: On a non-finite loss, after dumping a checkpoint
        """
        end = self.schedule.total_steps if steps is None else min(steps, self.schedule.total_steps)
        history: List[StepMetrics] = []
        writer_file = None
        writer = None
        if self.out_dir is not None:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            (self.out_dir / "checkpoints").mkdir(exist_ok=True)
            metrics_path = self.out_dir / "metrics.csv"
            fresh = not metrics_path.exists() or self.start_step == 0
            writer_file = open(metrics_path, "w" if fresh else "a", newline="", encoding="utf-8")
            writer = csv.DictWriter(writer_file, fieldnames=METRIC_COLUMNS)
            if fresh:
                writer.writeheader()
        try:
            for step in tqdm(range(self.start_step, end), desc="training", unit="step", disable=None):
                try:
                    metrics = self.train_step(step)
                except NumericFailure:
                    if self.out_dir is not None:
                        dump = self.save(self.out_dir / "checkpoints" / f"failure_step_{step}.snrf", step)
                        logger.error("non-finite loss at step %d, state dumped to %s", step, dump)
                    raise
                history.append(metrics)
                if writer is not None and step % self.config.log_every == 0:
                    writer.writerow(metrics.row())
                    writer_file.flush()
                done = step + 1
                if self.out_dir is not None and done % self.config.checkpoint_every == 0 and done < end:
                    self.save(self.out_dir / "checkpoints" / f"step_{done}.snrf", done)
            self.start_step = end
        finally:
            if writer_file is not None:
                writer_file.close()

        if self.out_dir is not None:
            self.save(self.out_dir / "final.snrf", end)
            self._write_run_meta(end, history)
        return history

    def _write_run_meta(self, step: int, history: Sequence[StepMetrics]) -> None:
        meta = {
            "step": step,
            "optimizer": "adam",
            "lr_schedule": {"policy": "one_cycle", "max_lr": self.config.learning_rate,
                            "pct_start": self.config.pct_start},
            "channel_aggregation": "mean",
            "phase1_steps": self.schedule.phase1_steps,
            "case": self.config.case,
        }
        trend = image_loss_trend(history)
        if trend is not None:
            meta["image_loss_excess"] = {"first": trend[0], "last": trend[1], "window": SMOOTHING_WINDOW}
            logger.info("image loss above its floor: %.5f -> %.5f (%d-step average)", *trend, SMOOTHING_WINDOW)
        (self.out_dir / "run_meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def robust_floor(params: RobustLossParams) -> torch.Tensor:
    """log(c·Z(α)), the robust image loss of a perfect prediction."""
    with torch.no_grad():
        return torch.log(params.c) + log_partition(params.alpha)


def smoothed(values: Sequence[float], window: int = SMOOTHING_WINDOW) -> np.ndarray:
    """Trailing moving average, used when comparing losses of a noisy run."""
    values = np.asarray(values, dtype=np.float64)
    if window < 1:
        raise InvalidArgument(f"window must be positive, got {window}")
    kernel = np.ones(window) / window
    return np.convolve(values, kernel, mode="valid")


def image_loss_trend(history: Sequence[StepMetrics], window: int = SMOOTHING_WINDOW) -> Optional[Tuple[float, float]]:
    """
    Smoothed image loss above its floor at the start and end of a run.

    The robust loss carries the offset log(c·Z(α)) even for a perfect fit, so
    progress is measured on L_IR minus that floor.

    Returns:
        tuple: (first, last) window averages, or None for runs shorter than one window
    """
    if len(history) < window:
        return None
    trend = smoothed([m.L_IR - m.L_IR_floor for m in history], window)
    return float(trend[0]), float(trend[-1])


def optimizer_sidecar(checkpoint) -> Path:
    """``checkpoints/step_4.snrf`` -> ``checkpoints/step_4.optim.pt``."""
    path = Path(checkpoint)
    return path.with_name(path.stem + OPTIMIZER_SUFFIX)
