"""
Scene dataset directory format.

A dataset directory holds:

    scene.json           bounds, scale, one record per image (camera, sun, day fraction, split)
    images/<name>.png    8-bit RGB images
    prior_height.hgt     prior height raster (HGT0)
    height_truth.hgt     ground-truth height raster (HGT0), optional

HGT0 rasters are a 16-byte header (b"HGT0", u32 width, u32 height, u32 zero)
followed by little-endian float32 values, row-major, row 0 at +y.
"""

import json
import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Literal, Optional, Tuple

import numpy as np
from PIL import Image
from pydantic import BaseModel, Field, ValidationError

from utils import DatasetIOError, InvalidArgument

logger = logging.getLogger(__name__)

SCENE_BOUNDS = (-1.0, 1.0)
GROUND_ALTITUDE = -0.6
HEIGHT_MAGIC = b"HGT0"
SCENE_FILE = "scene.json"
PRIOR_FILE = "prior_height.hgt"
TRUTH_FILE = "height_truth.hgt"
IMAGE_DIR = "images"


class CameraSpec(BaseModel):
    """Orthographic camera looking at the scene footprint."""

    off_nadir_deg: float = Field(0.0, ge=0.0, lt=45.0, description="Angle between view ray and nadir")
    azimuth_deg: float = Field(0.0, description="Azimuth of the camera position, counter-clockwise from +x")
    width: int = Field(64, gt=0)
    height: int = Field(64, gt=0)
    footprint: float = Field(1.0, gt=0.0, le=1.0, description="Half-size of the imaged ground square")
    ref_altitude: float = Field(GROUND_ALTITUDE, ge=-1.0, le=1.0,
                                description="Altitude of the plane the footprint lies on, ground level by default")

    def view_direction(self) -> np.ndarray:
        """Unit direction of travel of every pixel ray (camera toward scene)."""
        theta = math.radians(self.off_nadir_deg)
        phi = math.radians(self.azimuth_deg)
        to_camera = np.array([math.sin(theta) * math.cos(phi), math.sin(theta) * math.sin(phi), math.cos(theta)])
        return -to_camera


class ImageRecord(BaseModel):
    name: str
    camera: CameraSpec
    sun_azimuth_deg: float
    sun_elevation_deg: float = Field(..., gt=0.0, le=90.0)
    day_fraction: float = Field(..., ge=0.0, lt=1.0)
    split: Literal["train", "test"] = "train"
    tag: str = ""

    def sun(self) -> np.ndarray:
        return sun_vector(self.sun_azimuth_deg, self.sun_elevation_deg)


class SceneManifest(BaseModel):
    name: str
    preset: str = ""
    seed: int = 0
    bounds: Tuple[float, float] = SCENE_BOUNDS
    meters_per_unit: float = Field(50.0, gt=0.0)
    height_grid: Tuple[int, int] = (64, 64)
    images: List[ImageRecord] = []


@dataclass
class SceneDataset:
    root: Path
    manifest: SceneManifest
    images: Dict[str, np.ndarray] = field(default_factory=dict)
    prior_height: Optional[np.ndarray] = None
    truth_height: Optional[np.ndarray] = None

    @property
    def records(self) -> List[ImageRecord]:
        return self.manifest.images

    def split(self, name: str) -> List[ImageRecord]:
        return [r for r in self.manifest.images if r.split == name]

    def train_records(self) -> List[ImageRecord]:
        return self.split("train")

    def test_records(self) -> List[ImageRecord]:
        return self.split("test")


def sun_vector(azimuth_deg: float, elevation_deg: float) -> np.ndarray:
    """Unit vector pointing from the scene toward the sun."""
    az, el = math.radians(azimuth_deg), math.radians(elevation_deg)
    return np.array([math.cos(el) * math.cos(az), math.cos(el) * math.sin(az), math.sin(el)])


def parse_angle_pair(text: str) -> Tuple[float, float]:
    """Parse ``"az,el"`` into two floats."""
    parts = [p.strip() for p in text.split(",")]
    if len(parts) == 2:
        try:
            return float(parts[0]), float(parts[1])
        except ValueError:
            pass
    raise InvalidArgument(f"expected 'azimuth,elevation' in degrees, got {text!r}")


def camera_rays(camera: CameraSpec) -> Tuple[np.ndarray, np.ndarray]:
    """
    Pixel rays of an orthographic camera, row-major from the +y edge.

    Each ray passes through the center of its footprint cell on the
    reference plane and starts where it crosses the top of the scene box.

    Returns:
        tuple: (origins, directions), each of shape (height·width, 3)
    """
    d = camera.view_direction()
    fp = camera.footprint
    xs = -fp + (np.arange(camera.width) + 0.5) * (2.0 * fp / camera.width)
    ys = fp - (np.arange(camera.height) + 0.5) * (2.0 * fp / camera.height)
    gx, gy = np.meshgrid(xs, ys)
    ground = np.stack([gx.ravel(), gy.ravel(), np.full(gx.size, camera.ref_altitude)], axis=-1)
    back = (SCENE_BOUNDS[1] - camera.ref_altitude) / -d[2]
    origins = ground - back * d
    return origins, np.broadcast_to(d, origins.shape).copy()


def height_grid_centers(width: int, height: int) -> Tuple[np.ndarray, np.ndarray]:
    """Cell-center coordinates (x, y) of a footprint raster, each of shape (height, width)."""
    xs = -1.0 + (np.arange(width) + 0.5) * (2.0 / width)
    ys = 1.0 - (np.arange(height) + 0.5) * (2.0 / height)
    return np.meshgrid(xs, ys)


def write_height_raster(path, heights: np.ndarray) -> Path:
    path = Path(path)
    heights = np.asarray(heights)
    if heights.ndim != 2:
        raise ValueError(f"height raster must be 2-D, got shape {heights.shape}")
    rows, cols = heights.shape
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(HEIGHT_MAGIC + struct.pack("<III", cols, rows, 0) + heights.astype("<f4").tobytes())
    except OSError as exc:
        raise DatasetIOError(path, exc.strerror or str(exc)) from exc
    return path


def read_height_raster(path) -> np.ndarray:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise DatasetIOError(path, exc.strerror or str(exc)) from exc
    if len(data) < 16 or data[:4] != HEIGHT_MAGIC:
        raise DatasetIOError(path, "not an HGT0 height raster")
    cols, rows, _ = struct.unpack("<III", data[4:16])
    if len(data) != 16 + 4 * cols * rows:
        raise DatasetIOError(path, f"expected {cols}x{rows} float32 values, file size is {len(data)} bytes")
    return np.frombuffer(data[16:], dtype="<f4").reshape(rows, cols).astype(np.float64)


def write_png(path, image: np.ndarray) -> Path:
    """Write an (H, W, 3) float image in [0, 1] as 8-bit PNG."""
    path = Path(path)
    pixels = np.clip(np.round(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        Image.fromarray(pixels).save(path, format="PNG")
    except OSError as exc:
        raise DatasetIOError(path, exc.strerror or str(exc)) from exc
    return path


def read_png(path) -> np.ndarray:
    """Read an 8-bit RGB PNG as float64 in [0, 1]."""
    path = Path(path)
    try:
        with Image.open(path) as img:
            pixels = np.asarray(img.convert("RGB"), dtype=np.float64)
    except OSError as exc:
        raise DatasetIOError(path, str(exc)) from exc
    return pixels / 255.0


def save_dataset(dataset: SceneDataset) -> Path:
    """Write every part of a dataset under ``dataset.root``."""
    root = dataset.root
    try:
        root.mkdir(parents=True, exist_ok=True)
        (root / SCENE_FILE).write_text(
            json.dumps(dataset.manifest.model_dump(mode="json"), indent=2, sort_keys=True) + "\n",
            encoding="utf-8",
        )
    except OSError as exc:
        raise DatasetIOError(root / SCENE_FILE, exc.strerror or str(exc)) from exc
    for name, image in dataset.images.items():
        write_png(root / IMAGE_DIR / f"{name}.png", image)
    if dataset.prior_height is not None:
        write_height_raster(root / PRIOR_FILE, dataset.prior_height)
    if dataset.truth_height is not None:
        write_height_raster(root / TRUTH_FILE, dataset.truth_height)
    logger.info("wrote dataset %s (%d images) to %s", dataset.manifest.name, len(dataset.images), root)
    return root


def load_dataset(root) -> SceneDataset:
    """
    Load a dataset directory.

    Raises:
        DatasetIOError: If scene.json, an image or the prior raster is missing or malformed
    """
    root = Path(root)
    scene_path = root / SCENE_FILE
    try:
        manifest = SceneManifest(**json.loads(scene_path.read_text(encoding="utf-8")))
    except OSError as exc:
        raise DatasetIOError(scene_path, exc.strerror or str(exc)) from exc
    except (json.JSONDecodeError, ValidationError) as exc:
        raise DatasetIOError(scene_path, f"malformed scene description: {exc}") from exc

    images = {r.name: read_png(root / IMAGE_DIR / f"{r.name}.png") for r in manifest.images}
    prior = read_height_raster(root / PRIOR_FILE)
    truth = read_height_raster(root / TRUTH_FILE) if (root / TRUTH_FILE).exists() else None
    return SceneDataset(root=root, manifest=manifest, images=images, prior_height=prior, truth_height=truth)
