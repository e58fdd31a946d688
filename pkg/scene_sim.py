"""
Synthetic ground-truth world with an exact renderer.

A scene is a heightfield over the [-1, 1]² footprint: smooth terrain with
rounded tree caps, plus flat-topped boxes (buildings) that reach down to the
box floor. Every footprint point carries a material whose albedo follows an
annual snow → green → brown cycle. ``render_exact`` ray-marches the
heightfield from an orthographic camera and decides sunlight by walking
from each hit toward the sun.
"""

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, Field

from dataset import (
    GROUND_ALTITUDE,
    CameraSpec,
    ImageRecord,
    SceneDataset,
    SceneManifest,
    camera_rays,
    height_grid_centers,
    save_dataset,
)
from utils import InvalidArgument

logger = logging.getLogger(__name__)

MATERIALS = ("roof", "road", "grass", "tree")
ROOF, ROAD, GRASS, TREE = range(len(MATERIALS))
SEASONS = ("snow", "green", "brown")
# (center, half width) of each season's raised-cosine weight over the year
SEASON_WINDOWS = {"snow": (0.04, 0.25), "green": (0.45, 0.30), "brown": (0.80, 0.25)}
ALBEDO_RANGE = (0.02, 0.98)
PRESETS = ("town", "field", "blocks")

# material x season x channel
PALETTE = np.array([
    [[0.55, 0.30, 0.25], [0.55, 0.30, 0.25], [0.55, 0.30, 0.25]],   # roof, constant
    [[0.80, 0.80, 0.82], [0.42, 0.42, 0.44], [0.45, 0.43, 0.42]],   # road
    [[0.92, 0.93, 0.95], [0.25, 0.55, 0.20], [0.60, 0.50, 0.28]],   # grass
    [[0.85, 0.87, 0.90], [0.10, 0.40, 0.12], [0.55, 0.30, 0.10]],   # tree
])

MARCH_STEP = 0.002
SHADOW_STEP = 0.004
BISECTION_STEPS = 40
HIT_NUDGE = 1e-6
CHUNK = 512


@dataclass
class Box:
    x0: float
    x1: float
    y0: float
    y1: float
    top: float


@dataclass
class Tree:
    cx: float
    cy: float
    radius: float
    height: float


@dataclass
class Road:
    axis: str      # "x": runs along x at y = center; "y": runs along y at x = center
    center: float
    half_width: float


@dataclass
class SyntheticScene:
    boxes: List[Box] = field(default_factory=list)
    trees: List[Tree] = field(default_factory=list)
    roads: List[Road] = field(default_factory=list)
    ground_level: float = GROUND_ALTITUDE
    terrain_amplitude: float = 0.0
    terrain_freq: Tuple[float, float] = (1.5, 1.1)
    terrain_phase: Tuple[float, float] = (0.0, 0.0)
    sky_base: float = 0.25
    sky_gain: float = 0.2
    name: str = "scene"

    def __post_init__(self):
        for box in self.boxes:
            if not (box.x0 < box.x1 and box.y0 < box.y1 and -1.0 < box.top < 1.0):
                raise InvalidArgument(f"malformed box {box}")
        if not -1.0 < self.ground_level - abs(self.terrain_amplitude):
            raise InvalidArgument("terrain dips below the scene floor")

    def _box_array(self) -> np.ndarray:
        return np.array([[b.x0, b.x1, b.y0, b.y1, b.top] for b in self.boxes]).reshape(-1, 5)

    def smooth_height(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Terrain plus tree caps, without the boxes."""
        x, y = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
        fx, fy = self.terrain_freq
        px, py = self.terrain_phase
        h = self.ground_level + self.terrain_amplitude * np.sin(fx * math.pi * x + px) * np.cos(fy * math.pi * y + py)
        for tree in self.trees:
            d2 = ((x - tree.cx) ** 2 + (y - tree.cy) ** 2) / tree.radius ** 2
            cap = h + tree.height * np.sqrt(np.clip(1.0 - d2, 0.0, None))
            h = np.where(d2 < 1.0, np.maximum(h, cap), h)
        return h

    def height(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        h = self.smooth_height(x, y)
        for b in self.boxes:
            inside = (x >= b.x0) & (x <= b.x1) & (y >= b.y0) & (y <= b.y1)
            h = np.where(inside, np.maximum(h, b.top), h)
        return h

    def material(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Material index per footprint point; roofs win over trees, trees over roads."""
        x, y = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
        out = np.full(np.broadcast(x, y).shape, GRASS, dtype=np.int64)
        for road in self.roads:
            coord = y if road.axis == "x" else x
            out = np.where(np.abs(coord - road.center) < road.half_width, ROAD, out)
        for tree in self.trees:
            out = np.where((x - tree.cx) ** 2 + (y - tree.cy) ** 2 < tree.radius ** 2, TREE, out)
        for b in self.boxes:
            out = np.where((x >= b.x0) & (x <= b.x1) & (y >= b.y0) & (y <= b.y1), ROOF, out)
        return out

    def albedo(self, material: np.ndarray, day_fraction: float) -> np.ndarray:
        """Ground-truth albedo (..., 3) of each material at a time of year."""
        # offsets from the snow color keep season-independent materials exact
        offsets = PALETTE - PALETTE[:, :1, :]
        colors = PALETTE[:, 0, :] + np.einsum("s,msc->mc", season_weights(day_fraction), offsets)
        colors = np.clip(colors, *ALBEDO_RANGE)
        return colors[np.asarray(material)]

    def sky_factor(self, sun: np.ndarray) -> np.ndarray:
        elevation = math.asin(float(np.clip(sun[2], -1.0, 1.0)))
        return np.array([0.9, 0.95, 1.0]) * (self.sky_base + self.sky_gain * math.sin(elevation))


def season_weights(day_fraction: float) -> np.ndarray:
    """
    Normalized weights of the snow, green and brown prototypes at a time of year.

    Each season contributes a raised cosine around its center on the annual
    circle; weights sum to one.
    """
    t = float(day_fraction) % 1.0
    weights = []
    for season in SEASONS:
        center, half = SEASON_WINDOWS[season]
        d = abs(t - center)
        d = min(d, 1.0 - d)
        weights.append(0.5 * (1.0 + math.cos(math.pi * d / half)) if d < half else 0.0)
    weights = np.array(weights)
    if weights.sum() <= 0.0:
        weights = np.ones(len(SEASONS))
    return weights / weights.sum()


def make_scene(preset: str = "town", rng: Optional[np.random.Generator] = None) -> SyntheticScene:
    """Build a randomized scene from a preset layout."""
    if preset not in PRESETS:
        raise InvalidArgument(f"unknown preset {preset!r}, expected one of {PRESETS}")
    rng = rng if rng is not None else np.random.default_rng(0)
    boxes: List[Box] = []
    trees: List[Tree] = []
    roads: List[Road] = []
    ground = GROUND_ALTITUDE

    if preset in ("town", "blocks"):
        n_boxes = 6 if preset == "town" else 9
        cells = rng.permutation(16)[:n_boxes]
        for cell in cells:
            cx = -0.75 + 0.5 * (cell % 4) + rng.uniform(-0.05, 0.05)
            cy = -0.75 + 0.5 * (cell // 4) + rng.uniform(-0.05, 0.05)
            hx, hy = rng.uniform(0.08, 0.16, size=2)
            boxes.append(Box(cx - hx, cx + hx, cy - hy, cy + hy, top=ground + rng.uniform(0.25, 0.9)))
    if preset in ("town", "field"):
        roads.append(Road("x", center=float(rng.uniform(-0.1, 0.1)), half_width=0.06))
        if preset == "town":
            roads.append(Road("y", center=float(rng.uniform(-0.1, 0.1)), half_width=0.05))
        n_trees = 8 if preset == "town" else 14
        while len(trees) < n_trees:
            cx, cy = rng.uniform(-0.9, 0.9, size=2)
            if any(b.x0 - 0.1 < cx < b.x1 + 0.1 and b.y0 - 0.1 < cy < b.y1 + 0.1 for b in boxes):
                continue
            trees.append(Tree(float(cx), float(cy), radius=float(rng.uniform(0.05, 0.1)), height=float(rng.uniform(0.1, 0.3))))

    amplitude = {"town": 0.03, "field": 0.08, "blocks": 0.0}[preset]
    phase = tuple(float(p) for p in rng.uniform(0, 2 * math.pi, size=2))
    return SyntheticScene(boxes=boxes, trees=trees, roads=roads, ground_level=ground,
                          terrain_amplitude=amplitude, terrain_phase=phase, name=preset)


def _slab(origins: np.ndarray, directions: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Entry and exit parameters of rays (P, 3) against boxes lo/hi (K, 3); shapes (P, K)."""
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / directions[:, None, :]
        t1 = (lo[None] - origins[:, None, :]) * inv
        t2 = (hi[None] - origins[:, None, :]) * inv
    parallel = directions[:, None, :] == 0.0
    inside = (origins[:, None, :] >= lo[None]) & (origins[:, None, :] <= hi[None])
    t_min = np.where(parallel, np.where(inside, -np.inf, np.inf), np.minimum(t1, t2))
    t_max = np.where(parallel, np.where(inside, np.inf, -np.inf), np.maximum(t1, t2))
    return t_min.max(axis=-1), t_max.min(axis=-1)


def _box_bounds(scene: SyntheticScene) -> Tuple[np.ndarray, np.ndarray]:
    arr = scene._box_array()
    lo = np.stack([arr[:, 0], arr[:, 2], np.full(len(arr), -1.0)], axis=-1)
    hi = np.stack([arr[:, 1], arr[:, 3], arr[:, 4]], axis=-1)
    return lo, hi


def _over_footprint(points: np.ndarray) -> np.ndarray:
    return (np.abs(points[..., 0]) <= 1.0) & (np.abs(points[..., 1]) <= 1.0)


def _first_hit(scene: SyntheticScene, origins: np.ndarray, directions: np.ndarray) -> np.ndarray:
    """
    Ray parameter of the first surface hit inside the scene box.

    The heightfield is only solid over the [-1, 1]² footprint; a ray that
    finds no surface there stops where it leaves the box.
    """
    _, t_exit = _slab(origins, directions, np.full((1, 3), -1.0), np.ones((1, 3)))
    t_exit = np.maximum(t_exit[:, 0], 0.0)
    # smooth part: march to the first sample below the surface, then bisect
    n_steps = int(math.ceil(float(t_exit.max()) / MARCH_STEP)) + 1
    ts = np.arange(n_steps) * MARCH_STEP
    t_smooth = t_exit.copy()
    for start in range(0, len(origins), CHUNK):
        o, d = origins[start:start + CHUNK], directions[start:start + CHUNK]
        pts = o[:, None, :] + ts[None, :, None] * d[:, None, :]
        below = (pts[..., 2] <= scene.smooth_height(pts[..., 0], pts[..., 1])) & _over_footprint(pts)
        found = below.any(axis=1)
        k = np.argmax(below, axis=1)
        lo_t = ts[np.maximum(k - 1, 0)]
        hi_t = ts[k]
        for _ in range(BISECTION_STEPS):
            mid = 0.5 * (lo_t + hi_t)
            p = o + mid[:, None] * d
            under = (p[:, 2] <= scene.smooth_height(p[:, 0], p[:, 1])) & _over_footprint(p)
            hi_t = np.where(under, mid, hi_t)
            lo_t = np.where(under, lo_t, mid)
        t_smooth[start:start + CHUNK] = np.where(found, lo_t, t_exit[start:start + CHUNK])

    if not scene.boxes:
        return t_smooth
    lo, hi = _box_bounds(scene)
    t_in, t_out = _slab(origins, directions, lo, hi)
    valid = (t_in <= t_out) & (t_in >= 0.0)
    t_box = np.where(valid, t_in, np.inf).min(axis=1)
    return np.minimum(t_smooth, t_box)


def sunlit(scene: SyntheticScene, points: np.ndarray, sun: np.ndarray) -> np.ndarray:
    """
    Horizon walk from each point toward the sun.

    A point is lit unless the walk passes through a box or below the smooth
    surface before leaving the top of the scene or its footprint.
    """
    sun = np.asarray(sun, dtype=np.float64)
    if sun[2] <= 0.0:
        raise InvalidArgument(f"sun must be above the horizon, got {sun.tolist()}")
    points = np.asarray(points, dtype=np.float64)
    lit = np.ones(len(points), dtype=bool)
    if scene.boxes:
        lo, hi = _box_bounds(scene)
        t_in, t_out = _slab(points, np.broadcast_to(sun, points.shape), lo, hi)
        lit &= ~((t_in < t_out) & (t_out > 0.0)).any(axis=1)

    s_max = float(((1.0 - points[:, 2]) / sun[2]).max())
    steps = np.arange(1, int(math.ceil(s_max / SHADOW_STEP)) + 1) * SHADOW_STEP
    for start in range(0, len(points), CHUNK):
        p = points[start:start + CHUNK]
        walk = p[:, None, :] + steps[None, :, None] * sun
        active = (walk[..., 2] <= 1.0) & _over_footprint(walk)
        under = walk[..., 2] < scene.smooth_height(walk[..., 0], walk[..., 1])
        lit[start:start + CHUNK] &= ~(under & active).any(axis=1)
    return lit


@dataclass
class ExactRender:
    image: np.ndarray      # (H, W, 3)
    sunlit: np.ndarray     # (H, W) bool
    altitude: np.ndarray   # (H, W)
    material: np.ndarray   # (H, W)


def render_exact(scene: SyntheticScene, camera: CameraSpec, sun: Sequence[float], day_fraction: float) -> ExactRender:
    """
    Render the scene with hard shadows.

    Color is the seasonal albedo where lit and albedo times the sky factor in shadow.

    Raises:
        InvalidArgument: If the sun is at or below the horizon
    """
    sun = np.asarray(sun, dtype=np.float64)
    if sun[2] <= 0.0:
        raise InvalidArgument(f"sun must be above the horizon, got {sun.tolist()}")
    sun = sun / np.linalg.norm(sun)
    origins, directions = camera_rays(camera)
    t_hit = _first_hit(scene, origins, directions)
    points = origins + t_hit[:, None] * directions
    lifted = origins + (t_hit - HIT_NUDGE)[:, None] * directions
    lit = sunlit(scene, lifted, sun)
    material = scene.material(points[:, 0], points[:, 1])
    albedo = scene.albedo(material, day_fraction)
    shade = np.where(lit[:, None], 1.0, scene.sky_factor(sun)[None, :])
    shape = (camera.height, camera.width)
    return ExactRender(
        image=(albedo * shade).reshape(*shape, 3),
        sunlit=lit.reshape(shape),
        altitude=points[:, 2].reshape(shape),
        material=material.reshape(shape),
    )


def height_truth(scene: SyntheticScene, width: int, height: int) -> np.ndarray:
    x, y = height_grid_centers(width, height)
    return scene.height(x, y)


class NoiseSpec(BaseModel):
    """Errors injected into the prior height map."""

    sigma: float = Field(0.02, ge=0.0, description="Gaussian noise standard deviation, scene units")
    n_blobs: int = Field(0, ge=0, description="Spurious Gaussian bumps")
    blob_height: float = Field(0.3, description="Peak height of each bump")
    blob_radius: float = Field(0.15, gt=0.0, description="Standard deviation of each bump")


def prior_from_truth(truth: np.ndarray, noise: NoiseSpec, rng: np.random.Generator) -> np.ndarray:
    prior = truth + (rng.normal(0.0, noise.sigma, size=truth.shape) if noise.sigma > 0 else 0.0)
    x, y = height_grid_centers(truth.shape[1], truth.shape[0])
    for _ in range(noise.n_blobs):
        cx, cy = rng.uniform(-0.7, 0.7, size=2)
        prior = prior + noise.blob_height * np.exp(-((x - cx) ** 2 + (y - cy) ** 2) / (2 * noise.blob_radius ** 2))
    return np.clip(prior, -1.0, 1.0)


DEFAULT_SUNS = ((135.0, 35.0), (150.0, 50.0), (165.0, 65.0), (120.0, 45.0), (180.0, 55.0))
PROTOTYPE_TIMES = (("snow", 0.04), ("green", 0.47), ("brown", 0.8))


def emit_dataset(
    scene: SyntheticScene,
    out_dir,
    n_views: int = 24,
    n_times: int = 8,
    sun_angles: Sequence[Tuple[float, float]] = DEFAULT_SUNS,
    noise: Optional[NoiseSpec] = None,
    rng: Optional[np.random.Generator] = None,
    image_size: int = 64,
    seed: int = 0,
) -> SceneDataset:
    """
    Render a dataset of the scene and write it to ``out_dir``.

    Four views are held out: one per prototypical season (snow, green,
    brown) and one at an unusual view and sun angle. The rest are training
    views spread over ``n_times`` days of the year and cycling through
    ``sun_angles``.

    Raises:
        InvalidArgument: If fewer than 5 views are requested
        DatasetIOError: If the directory cannot be written
    """
    if n_views < 5:
        raise InvalidArgument(f"need at least 5 views (4 are held out), got {n_views}")
    if n_times < 1 or not sun_angles:
        raise InvalidArgument("need at least one time of year and one sun angle")
    noise = noise or NoiseSpec()
    rng = rng if rng is not None else np.random.default_rng(seed)
    camera_fields = dict(width=image_size, height=image_size, ref_altitude=scene.ground_level)

    records: List[ImageRecord] = []
    times = [(k + 0.5) / n_times for k in range(n_times)]
    for i in range(n_views - 4):
        az, el = sun_angles[i % len(sun_angles)]
        camera = CameraSpec(off_nadir_deg=float(rng.uniform(0.0, 25.0)), azimuth_deg=float(rng.uniform(0.0, 360.0)),
                            **camera_fields)
        t = (times[i % n_times] + float(rng.uniform(-0.02, 0.02))) % 1.0
        records.append(ImageRecord(name=f"train_{i:03d}", camera=camera, sun_azimuth_deg=az,
                                   sun_elevation_deg=el, day_fraction=t, split="train"))
    for tag, t in PROTOTYPE_TIMES:
        az, el = sun_angles[int(rng.integers(len(sun_angles)))]
        camera = CameraSpec(off_nadir_deg=float(rng.uniform(5.0, 20.0)), azimuth_deg=float(rng.uniform(0.0, 360.0)),
                            **camera_fields)
        records.append(ImageRecord(name=f"test_{tag}", camera=camera, sun_azimuth_deg=az, sun_elevation_deg=el,
                                   day_fraction=t, split="test", tag=tag))
    records.append(ImageRecord(
        name="test_diverse",
        camera=CameraSpec(off_nadir_deg=30.0, azimuth_deg=float(rng.uniform(0.0, 360.0)), **camera_fields),
        sun_azimuth_deg=250.0, sun_elevation_deg=25.0, day_fraction=0.3, split="test", tag="diverse",
    ))

    images = {}
    for record in records:
        images[record.name] = render_exact(scene, record.camera, record.sun(), record.day_fraction).image
    truth = height_truth(scene, image_size, image_size)
    prior = prior_from_truth(truth, noise, rng)
    manifest = SceneManifest(name=scene.name, preset=scene.name, seed=seed, height_grid=(image_size, image_size),
                             images=records)
    dataset = SceneDataset(root=Path(out_dir), manifest=manifest, images=images, prior_height=prior, truth_height=truth)
    save_dataset(dataset)
    logger.info("emitted %d views (%d train, 4 test) of %s", len(records), len(records) - 4, scene.name)
    return dataset
