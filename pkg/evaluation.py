"""
Measurement suite for trained season fields.

Image quality (PSNR, SSIM, and both after seasonal alignment), height-map
accuracy, shadow-mask agreement with the exactly integrated solar
visibility, histogram EMD seasonal stability and the combined tuning score.
"""

import csv
import itertools
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np
import torch
from scipy.signal import convolve2d
from scipy.stats import wasserstein_distance

from dataset import CameraSpec, SceneDataset, camera_rays, height_grid_centers, sun_vector
from radiance_core import ShadowParams, encode_time, transmittance_profile
from rendering import ShadingMode, render_rays
from siren_net import SeasonField
from trainer import ray_box_interval, sample_rays
from utils import DatasetIOError, InvalidArgument, worker_count

logger = logging.getLogger(__name__)

PSNR_CAP = 99.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1, SSIM_K2 = 0.01, 0.03
HISTOGRAM_BINS = 256
SURFACE_MASS_FLOOR = 0.1
SCENE_FLOOR = -1.0
SHADOW_THRESHOLD = 0.5
SKY_BOUNDS = (1e-3, 1.0)
PROTOTYPE_TIMES = {"snow": 0.04, "green": 0.47, "brown": 0.8}
REPORT_COLUMNS = ("region", "case", "metric", "value")


@dataclass
class HeightMapMetrics:
    mae: float
    rmse: float
    median_error: float
    pct_within_1m: float


@dataclass
class ShadowMetrics:
    accuracy: float
    sun_f1: float
    shadow_precision: float
    shadow_recall: float
    sun_precision: float = 0.0
    sun_recall: float = 0.0


@dataclass
class StabilityReport:
    pair_emds: Dict[float, List[float]]
    median: float
    q95: float
    max: float
    baseline_min: float
    baseline_median: float
    baseline_max: float
    n_renders: int
    degenerate: bool = False


@dataclass
class ViewRender:
    col_sa: np.ndarray   # (H, W, 3)
    col_t: np.ndarray    # (H, W, 3)
    mask: np.ndarray     # (H, W)
    sky: np.ndarray      # (3,)


@dataclass
class HeightExtraction:
    heights: np.ndarray       # (H, W)
    surface_mass: np.ndarray  # (H, W) sum of surface probabilities
    p_surface: np.ndarray     # (H, W, S)
    altitudes: np.ndarray     # (S,) sample altitudes shared by every nadir ray


@dataclass
class AlignmentResult:
    day_fraction: float
    sky: np.ndarray
    image: np.ndarray
    mse: float


@dataclass
class TuneBaselines:
    ssim: float
    mae: float
    emd: float


@dataclass
class EvaluationReport:
    views: Dict[str, Dict[str, float]] = field(default_factory=dict)
    height: Optional[HeightMapMetrics] = None
    prior_height: Optional[HeightMapMetrics] = None
    shadow: Optional[ShadowMetrics] = None

    def mean(self, metric: str) -> float:
        values = [v[metric] for v in self.views.values()]
        return float(np.mean(values)) if values else float("nan")

    def rows(self, region: str, case: str) -> List[Dict]:
        rows = []
        for view, metrics in self.views.items():
            rows += [{"region": region, "case": case, "metric": f"{view}.{k}", "value": v} for k, v in metrics.items()]
        for prefix, block in (("height", self.height), ("prior_height", self.prior_height), ("shadow", self.shadow)):
            if block is not None:
                rows += [{"region": region, "case": case, "metric": f"{prefix}.{k}", "value": v}
                         for k, v in asdict(block).items()]
        return rows


def _check_pair(a: np.ndarray, b: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise InvalidArgument(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """PSNR in dB for images in [0, 1]; identical images report 99."""
    a, b = _check_pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(10.0 * math.log10(1.0 / mse), PSNR_CAP)


def _gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    ax = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(ax ** 2) / (2.0 * sigma ** 2))
    window = np.outer(g, g)
    return window / window.sum()


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """
    Mean structural similarity of the channel-mean grayscale images.

    Raises:
        InvalidArgument: On shape mismatch or images smaller than the 11x11 window
    """
    a, b = _check_pair(a, b)
    if a.ndim == 3:
        a, b = a.mean(axis=-1), b.mean(axis=-1)
    if min(a.shape) < SSIM_WINDOW:
        raise InvalidArgument(f"images of shape {a.shape} are smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    w = _gaussian_window()
    c1, c2 = SSIM_K1 ** 2, SSIM_K2 ** 2

    def filt(x):
        return convolve2d(x, w, mode="valid")

    mu_a, mu_b = filt(a), filt(b)
    var_a = filt(a * a) - mu_a ** 2
    var_b = filt(b * b) - mu_b ** 2
    cov = filt(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def _levels(image: np.ndarray) -> np.ndarray:
    return np.clip(np.round(np.asarray(image, dtype=np.float64) * 255.0), 0, 255).astype(np.int64)


def emd_histogram(a: np.ndarray, b: np.ndarray) -> float:
    """Mean over channels of the 1-D earth mover's distance between 256-bin intensity histograms."""
    a, b = _check_pair(a, b)
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    bins = np.arange(HISTOGRAM_BINS)
    distances = []
    for ch in range(a.shape[-1]):
        hist_a = np.bincount(_levels(a[..., ch]).ravel(), minlength=HISTOGRAM_BINS)
        hist_b = np.bincount(_levels(b[..., ch]).ravel(), minlength=HISTOGRAM_BINS)
        distances.append(wasserstein_distance(bins, bins, u_weights=hist_a, v_weights=hist_b))
    return float(np.mean(distances))


def height_metrics(predicted: np.ndarray, truth: np.ndarray, meters_per_unit: float = 1.0) -> HeightMapMetrics:
    """
    Errors of a height map against ground truth, in meters.

    Sums run left to right over the row-major cells.
    """
    predicted, truth = _check_pair(predicted, truth)
    errors = (np.abs(predicted - truth) * meters_per_unit).ravel()
    if errors.size == 0:
        raise InvalidArgument("height maps are empty")
    n = errors.size
    mae = float(np.cumsum(errors)[-1] / n)
    rmse = math.sqrt(float(np.cumsum(errors * errors)[-1] / n))
    return HeightMapMetrics(
        mae=mae,
        rmse=rmse,
        median_error=float(np.median(errors)),
        pct_within_1m=float(np.count_nonzero(errors <= 1.0) / n),
    )


def _model_dtype(model) -> torch.dtype:
    try:
        return next(model.parameters()).dtype
    except (AttributeError, StopIteration):
        return torch.float64


def height_from_field(model, width: int, height: int, samples: int = 96, chunk: int = 1024) -> HeightExtraction:
    """
    Height map by expected surface altitude along nadir rays.

    Each cell center casts a vertical ray sampled at stratum midpoints; the
    height is Σ P_S·z / Σ P_S, or the scene floor when Σ P_S < 0.1.

    Args:
        model: Anything with ``density(points)`` over (..., 3) points
    """
    dtype = _model_dtype(model)
    x, y = height_grid_centers(width, height)
    origins = torch.as_tensor(np.stack([x.ravel(), y.ravel(), np.ones(x.size)], axis=-1), dtype=dtype)
    directions = torch.zeros_like(origins)
    directions[:, 2] = -1.0
    if isinstance(model, torch.nn.Module):
        model.eval()
    masses, profiles = [], []
    with torch.no_grad():
        for start in range(0, len(origins), chunk):
            s = sample_rays(origins[start:start + chunk], directions[start:start + chunk], samples, jitter=False)
            profile = transmittance_profile(model.density(s.positions), s.deltas)
            profiles.append(profile.p_surface.double())
            altitudes = s.positions[0, :, 2].double()
    p_surface = torch.cat(profiles)
    mass = p_surface.sum(dim=-1)
    expected = (p_surface * altitudes).sum(dim=-1) / mass.clamp_min(1e-12)
    heights = torch.where(mass >= SURFACE_MASS_FLOOR, expected, torch.full_like(expected, SCENE_FLOOR))
    shape = (height, width)
    return HeightExtraction(
        heights=heights.numpy().reshape(shape),
        surface_mass=mass.numpy().reshape(shape),
        p_surface=p_surface.numpy().reshape(*shape, samples),
        altitudes=altitudes.numpy(),
    )


def _ray_inputs(camera: CameraSpec, sun: np.ndarray, day_fraction: float, dtype: torch.dtype):
    origins, directions = camera_rays(camera)
    n = len(origins)
    sun_t = torch.as_tensor(np.broadcast_to(np.asarray(sun, dtype=np.float64), (n, 3)).copy(), dtype=dtype)
    time_t = encode_time(float(day_fraction)).encoding.to(dtype).expand(n, 2)
    return torch.as_tensor(origins, dtype=dtype), torch.as_tensor(directions, dtype=dtype), sun_t, time_t


def render_view(
    model: SeasonField,
    camera: CameraSpec,
    sun: np.ndarray,
    day_fraction: float,
    shadow: ShadowParams,
    shading: ShadingMode = "shadow_mask",
    samples: int = 96,
    chunk: int = 2048,
) -> ViewRender:
    """Deterministic render of a full view at stratum midpoints."""
    dtype = _model_dtype(model)
    origins, directions, sun_t, time_t = _ray_inputs(camera, sun, day_fraction, dtype)
    model.eval()
    col_sa, col_t, mask, sky = [], [], [], None
    with torch.no_grad():
        for start in range(0, len(origins), chunk):
            part = slice(start, start + chunk)
            s = sample_rays(origins[part], directions[part], samples, jitter=False)
            out = render_rays(model, s, sun_t[part], time_t[part], shadow, shading)
            col_sa.append(out.col_sa)
            col_t.append(out.col_t)
            mask.append(out.mask)
            sky = out.sky[0]
    shape = (camera.height, camera.width)
    return ViewRender(
        col_sa=torch.cat(col_sa).double().numpy().reshape(*shape, 3),
        col_t=torch.cat(col_t).double().numpy().reshape(*shape, 3),
        mask=torch.cat(mask).double().numpy().reshape(shape),
        sky=sky.double().numpy(),
    )


def shadow_exact(
    model,
    positions: torch.Tensor,
    p_surface: torch.Tensor,
    sun: torch.Tensor,
    shadow: ShadowParams,
    solar_samples: int = 96,
    chunk: int = 2048,
) -> torch.Tensor:
    """
    Shadow mask with solar visibility integrated along a fresh solar ray per sample.

    Args:
        model: Anything with ``density(points)``
        positions: Image-ray sample points, (R, S, 3)
        p_surface: Surface probabilities of those samples, (R, S)
        sun: Unit sun direction per ray, (R, 3)
        solar_samples: Midpoint samples per solar ray

    Returns:
        torch.Tensor: σ(κ(μ + Σ P_S·P_V)) per ray, where P_V is the
        transmittance from each sample toward the sun
    """
    n_rays, n_samples = positions.shape[:2]
    points = positions.reshape(-1, 3)
    suns = sun.unsqueeze(1).expand(n_rays, n_samples, 3).reshape(-1, 3).to(points.dtype)
    _, t_far, _ = ray_box_interval(points, suns)
    t_far = t_far.clamp_min(0.0)
    step = t_far / solar_samples
    offsets = torch.arange(solar_samples, dtype=points.dtype) + 0.5
    optical = []
    with torch.no_grad():
        for start in range(0, len(points), chunk):
            part = slice(start, start + chunk)
            mids = offsets.unsqueeze(0) * step[part].unsqueeze(-1)
            path = (points[part].unsqueeze(1) + mids.unsqueeze(-1) * suns[part].unsqueeze(1)).clamp(-1.0, 1.0)
            optical.append((model.density(path) * step[part].unsqueeze(-1)).sum(dim=-1))
    visibility = torch.exp(-torch.cat(optical)).reshape(n_rays, n_samples)
    visible = (p_surface * visibility).sum(dim=-1)
    return torch.sigmoid(shadow.kappa * (shadow.mu + visible))


def shadow_masks(
    model: SeasonField,
    camera: CameraSpec,
    sun: np.ndarray,
    day_fraction: float,
    shadow: ShadowParams,
    stride: int = 4,
    samples: int = 96,
    solar_samples: int = 96,
) -> Tuple[np.ndarray, np.ndarray]:
    """Approximate and exact masks on every ``stride``-th pixel of a view."""
    dtype = _model_dtype(model)
    origins, directions, sun_t, time_t = _ray_inputs(camera, sun, day_fraction, dtype)
    grid = np.arange(camera.height * camera.width).reshape(camera.height, camera.width)[::stride, ::stride]
    idx = torch.as_tensor(grid.ravel())
    model.eval()
    with torch.no_grad():
        s = sample_rays(origins[idx], directions[idx], samples, jitter=False)
        out = render_rays(model, s, sun_t[idx], time_t[idx], shadow)
        exact = shadow_exact(model, s.positions, out.profile.p_surface, sun_t[idx], shadow, solar_samples)
    return out.mask.double().numpy().reshape(grid.shape), exact.double().numpy().reshape(grid.shape)


def _safe_ratio(num: int, den: int, empty: float) -> float:
    return num / den if den else empty


def shadow_metrics(predicted_mask: np.ndarray, true_lit: np.ndarray, threshold: float = SHADOW_THRESHOLD) -> ShadowMetrics:
    """
    Confusion-matrix scores with sunlit as the positive class.

    ``predicted_mask`` is binarized at ``threshold``; ``true_lit`` may be a
    boolean mask or a probability binarized the same way. Empty precision or
    recall denominators score 1; F1 of zero precision and recall scores 0.
    """
    pred = np.asarray(predicted_mask) > threshold
    truth = np.asarray(true_lit)
    truth = truth if truth.dtype == bool else truth > threshold
    if pred.shape != truth.shape:
        raise InvalidArgument(f"mask shapes differ: {pred.shape} vs {truth.shape}")
    tp = int(np.count_nonzero(pred & truth))
    tn = int(np.count_nonzero(~pred & ~truth))
    fp = int(np.count_nonzero(pred & ~truth))
    fn = int(np.count_nonzero(~pred & truth))
    sun_p = _safe_ratio(tp, tp + fp, 1.0)
    sun_r = _safe_ratio(tp, tp + fn, 1.0)
    f1 = 2 * sun_p * sun_r / (sun_p + sun_r) if sun_p + sun_r > 0 else 0.0
    return ShadowMetrics(
        accuracy=(tp + tn) / pred.size,
        sun_f1=f1,
        shadow_precision=_safe_ratio(tn, tn + fn, 1.0),
        shadow_recall=_safe_ratio(tn, tn + fp, 1.0),
        sun_precision=sun_p,
        sun_recall=sun_r,
    )


def _fit_sky(col_t: np.ndarray, mask: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Per-channel least-squares sky factor for col_t·(m + (1 - m)·sky) ≈ target."""
    lit = col_t * mask[..., None]
    shade = col_t * (1.0 - mask[..., None])
    residual = target - lit
    num = (shade * residual).reshape(-1, 3).sum(axis=0)
    den = (shade * shade).reshape(-1, 3).sum(axis=0)
    sky = np.where(den > 0, num / np.where(den > 0, den, 1.0), SKY_BOUNDS[1])
    return np.clip(sky, *SKY_BOUNDS)


def seasonal_align(
    render_fn: Callable[[float], ViewRender],
    target: np.ndarray,
    n_times: int = 90,
    identity: Optional[Tuple[float, np.ndarray]] = None,
) -> AlignmentResult:
    """
    Time of year and sky color that best reproduce ``target``.

    Searches ``n_times`` evenly spaced day fractions; for each the sky is the
    closed-form per-channel least-squares fit, clamped to [1e-3, 1]. The
    ``identity`` candidate (day fraction, sky) is always scored too.
    """
    target = np.asarray(target, dtype=np.float64)
    candidates: List[Tuple[float, Optional[np.ndarray]]] = [(k / n_times, None) for k in range(n_times)]
    if identity is not None:
        candidates.append((float(identity[0]), np.asarray(identity[1], dtype=np.float64)))
    best: Optional[AlignmentResult] = None
    for t, fixed_sky in candidates:
        dump = render_fn(t)
        sky = _fit_sky(dump.col_t, dump.mask, target) if fixed_sky is None else fixed_sky
        image = dump.col_t * (dump.mask[..., None] + (1.0 - dump.mask[..., None]) * sky)
        mse = float(np.mean((image - target) ** 2))
        if best is None or mse < best.mse:
            best = AlignmentResult(day_fraction=t, sky=sky, image=image, mse=mse)
    return best


def sweep_cameras(n_views: int = 11, size: int = 64) -> List[CameraSpec]:
    """Nadir plus views ringed at 20 degrees off nadir."""
    cams = [CameraSpec(off_nadir_deg=0.0, azimuth_deg=0.0, width=size, height=size)]
    ring = n_views - 1
    cams += [CameraSpec(off_nadir_deg=20.0, azimuth_deg=360.0 * k / ring, width=size, height=size) for k in range(ring)]
    return cams[:n_views]


def sweep_suns(n_suns: int = 5) -> List[np.ndarray]:
    if n_suns == 1:
        return [sun_vector(160.0, 50.0)]
    return [sun_vector(110.0 + 100.0 * k / (n_suns - 1), 30.0 + 40.0 * k / (n_suns - 1)) for k in range(n_suns)]


def _pairwise_emd(images: Sequence[np.ndarray]) -> List[float]:
    return [emd_histogram(a, b) for a, b in itertools.combinations(images, 2)]


def stability_sweep(
    model: SeasonField,
    shadow: ShadowParams,
    shading: ShadingMode = "shadow_mask",
    n_views: int = 11,
    n_suns: int = 5,
    n_times: int = 12,
    image_size: int = 64,
    samples: int = 96,
) -> StabilityReport:
    """
    Pairwise EMD between renders that differ only in view and sun, per time.

    The baseline compares prototypical-season renders of the nadir view
    under each sun.
    """
    cameras = sweep_cameras(n_views, image_size)
    suns = sweep_suns(n_suns)
    times = [(k + 0.5) / n_times for k in range(n_times)]
    grid = [(t, cam, sun) for t in times for cam in cameras for sun in suns]

    def render(job):
        t, cam, sun = job
        return render_view(model, cam, sun, t, shadow, shading, samples).col_sa

    with ThreadPoolExecutor(max_workers=worker_count()) as executor:
        images = list(executor.map(render, grid))
        baseline_jobs = [(t, cameras[0], sun) for sun in suns for t in PROTOTYPE_TIMES.values()]
        baseline_images = list(executor.map(render, baseline_jobs))

    per_t = len(cameras) * len(suns)
    pair_emds = {t: _pairwise_emd(images[i * per_t:(i + 1) * per_t]) for i, t in enumerate(times)}
    all_pairs = [v for values in pair_emds.values() for v in values]
    n_proto = len(PROTOTYPE_TIMES)
    baseline = [v for k in range(len(suns)) for v in _pairwise_emd(baseline_images[k * n_proto:(k + 1) * n_proto])]

    degenerate = not all_pairs
    if degenerate:
        logger.warning("stability sweep with %d view(s) and %d sun(s) has no pairs to compare", n_views, n_suns)
    stats = np.quantile(all_pairs, [0.5, 0.95, 1.0]) if all_pairs else np.zeros(3)
    return StabilityReport(
        pair_emds=pair_emds,
        median=float(stats[0]), q95=float(stats[1]), max=float(stats[2]),
        baseline_min=float(np.min(baseline)), baseline_median=float(np.median(baseline)),
        baseline_max=float(np.max(baseline)),
        n_renders=len(images), degenerate=degenerate,
    )


def tune_score(ssim_value: float, mae: float, em_max: float, baselines: TuneBaselines) -> float:
    """SSIM/SSIM_B - MAE/MAE_B plus 1 when the worst EMD beats the baseline strictly."""
    if min(baselines.ssim, baselines.mae, baselines.emd) <= 0:
        raise InvalidArgument(f"tuning baselines must be positive, got {baselines}")
    return ssim_value / baselines.ssim - mae / baselines.mae + (1.0 if em_max < baselines.emd else 0.0)


def evaluate_model(
    model: SeasonField,
    dataset: SceneDataset,
    shadow: ShadowParams,
    shading: ShadingMode = "shadow_mask",
    samples: int = 96,
    n_align_times: int = 90,
    shadow_stride: int = 4,
) -> EvaluationReport:
    """Score a field on the held-out views, the true height map and exact shadows."""
    report = EvaluationReport()
    masks_approx, masks_exact = [], []
    for record in dataset.test_records():
        target = dataset.images[record.name]
        sun = record.sun()
        rendered = render_view(model, record.camera, sun, record.day_fraction, shadow, shading, samples)
        aligned = seasonal_align(
            lambda t: render_view(model, record.camera, sun, t, shadow, shading, samples),
            target, n_align_times, identity=(record.day_fraction, rendered.sky),
        )
        report.views[record.name] = {
            "psnr": psnr(rendered.col_sa, target),
            "ssim": ssim(rendered.col_sa, target),
            "psnr_sa": psnr(np.clip(aligned.image, 0.0, 1.0), target),
            "ssim_sa": ssim(np.clip(aligned.image, 0.0, 1.0), target),
            "align_day_fraction": aligned.day_fraction,
        }
        approx, exact = shadow_masks(model, record.camera, sun, record.day_fraction, shadow, shadow_stride, samples)
        masks_approx.append(approx.ravel())
        masks_exact.append(exact.ravel())
    if masks_approx:
        report.shadow = shadow_metrics(np.concatenate(masks_approx), np.concatenate(masks_exact))

    if dataset.truth_height is not None:
        rows, cols = dataset.truth_height.shape
        mpu = dataset.manifest.meters_per_unit
        extracted = height_from_field(model, cols, rows, samples)
        report.height = height_metrics(extracted.heights, dataset.truth_height, mpu)
        if dataset.prior_height is not None:
            report.prior_height = height_metrics(dataset.prior_height, dataset.truth_height, mpu)
    return report


def season_grid(model: SeasonField, camera: CameraSpec, sun: np.ndarray, shadow: ShadowParams,
                n_times: int = 180, shading: ShadingMode = "shadow_mask", samples: int = 96) -> List[np.ndarray]:
    """Renders of one view at ``n_times`` evenly spaced days, in day order."""
    times = [k / n_times for k in range(n_times)]
    with ThreadPoolExecutor(max_workers=worker_count()) as executor:
        return list(executor.map(lambda t: render_view(model, camera, sun, t, shadow, shading, samples).col_sa, times))


def contact_sheet(images: Sequence[np.ndarray], labels: Sequence[str], path, columns: int = 15) -> Path:
    """Tile images into one matplotlib figure and save it as PNG."""
    path = Path(path)
    if not images:
        raise InvalidArgument("contact sheet needs at least one image")
    rows = math.ceil(len(images) / columns)
    fig, axes = plt.subplots(rows, columns, figsize=(columns * 1.2, rows * 1.3), squeeze=False)
    for ax in axes.ravel():
        ax.axis("off")
    for ax, image, label in zip(axes.ravel(), images, labels):
        ax.imshow(np.clip(image, 0.0, 1.0))
        ax.set_title(label, fontsize=6)
    fig.tight_layout()
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fig.savefig(path, dpi=100)
    except OSError as exc:
        raise DatasetIOError(path, exc.strerror or str(exc)) from exc
    finally:
        plt.close(fig)
    return path


def write_report_csv(rows: Sequence[Dict], path) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as handle:
            writer = csv.DictWriter(handle, fieldnames=REPORT_COLUMNS)
            writer.writeheader()
            writer.writerows(rows)
    except OSError as exc:
        raise DatasetIOError(path, exc.strerror or str(exc)) from exc
    return path
