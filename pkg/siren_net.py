"""
The learnable season field.

A sinusoidal-activation MLP over positional-encoded scene points. The trunk
feeds the density, albedo and temporal-adjustment heads; the encoded time
drives a small class network; trunk features plus the encoded solar angle
drive the solar-visibility branch; the encoded solar angle alone drives the
sky network. Parameters are grouped into named partitions so image-ray and
solar-ray updates can freeze the groups they must not touch.

Checkpoint layout (little endian):

    b"SNRF" | u16 version | u32 n + n bytes JSON config block
    | u32 partitions | (u16 n + name, u32 offset, u32 length) per partition
    | u32 n params + float32 params | u32 n buffers + float32 buffers
    | u32 n counters + int64 BN batch counters
"""

import json
import logging
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Dict, FrozenSet, Iterable, List, Optional, Tuple

import numpy as np
import torch
from pydantic import BaseModel, Field
from torch import nn

from losses import AdaptiveRobustParams, RobustLossParams
from radiance_core import N_CHANNELS, positional_encode
from utils import DatasetIOError, InvalidArgument, NumericFailure

logger = logging.getLogger(__name__)

PARTITIONS = (
    "trunk",
    "density_head",
    "albedo_head",
    "season_head",
    "season_class_net",
    "solar_vis_branch",
    "sky_net",
    "robust_loss",
)

CHECKPOINT_MAGIC = b"SNRF"
CHECKPOINT_VERSION = 1
BOUNDS_TOLERANCE = 1e-6


class NetworkConfig(BaseModel):
    """Shape of the field network."""

    trunk_width: int = Field(128, gt=0, description="Width of the SIREN trunk (512 at full scale)")
    trunk_depth: int = Field(8, gt=0, description="Number of trunk layers")
    n_season_classes: int = Field(4, ge=1, description="Number of seasonal classes N")
    pe_levels_pos: int = Field(10, gt=0, description="Positional-encoding levels for scene points")
    pe_levels_sun: int = Field(4, gt=0, description="Positional-encoding levels for the solar angle")
    batch_norm: bool = Field(True, description="Batch normalization inside trunk layers")
    omega0: float = Field(30.0, gt=0, description="SIREN frequency scale of the trunk")
    branch_width: int = Field(64, gt=0, description="Width of the class, solar-visibility and sky networks")
    branch_omega0: float = Field(1.0, gt=0, description="Frequency scale of the small branch networks")
    density_scale: float = Field(10.0, gt=0, description="Multiplier on the softplus density head")


@dataclass
class FieldOutputs:
    density: torch.Tensor        # (..., S)
    albedo_pre: torch.Tensor     # (..., S, 3)
    season_adjust: torch.Tensor  # (..., S, 3, N)
    class_probs: torch.Tensor    # (..., N)
    solar_vis: torch.Tensor      # (..., S)
    sky: torch.Tensor            # (..., 3)


@dataclass(frozen=True)
class FreezeSets:
    image_ray_frozen: FrozenSet[str]
    solar_ray_frozen: FrozenSet[str]


class SirenLayer(nn.Module):
    """Linear map, optional batch normalization, then sin(ω0·z)."""

    def __init__(self, in_size: int, out_size: int, omega0: float, first_layer: bool = False,
                 batch_norm: bool = False):
        super().__init__()
        self.omega0 = omega0
        self.linear = nn.Linear(in_size, out_size)
        bound = 1.0 / in_size if first_layer else math.sqrt(6.0 / in_size) / omega0
        with torch.no_grad():
            self.linear.weight.uniform_(-bound, bound)
        self.norm = nn.BatchNorm1d(out_size) if batch_norm else None
        if self.norm is not None:
            # normalized pre-activations enter the sine with unit spread
            nn.init.constant_(self.norm.weight, 1.0 / omega0)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        z = self.linear(x)
        if self.norm is not None:
            shape = z.shape
            z = self.norm(z.reshape(-1, shape[-1])).reshape(shape)
        return torch.sin(self.omega0 * z)


class SeasonField(nn.Module):
    """
    Density, seasonal albedo, solar visibility and sky color of a bounded scene.

    Time reaches only the class network, the solar angle only the
    solar-visibility branch and the sky network; density, albedo and the
    temporal adjustment depend on position alone.
    """

    def __init__(self, cfg: Optional[NetworkConfig] = None):
        super().__init__()
        self.cfg = cfg or NetworkConfig()
        cfg = self.cfg
        pos_dim = 3 * 2 * cfg.pe_levels_pos
        sun_dim = 3 * 2 * cfg.pe_levels_sun
        width = cfg.trunk_width

        layers = [SirenLayer(pos_dim, width, cfg.omega0, first_layer=True, batch_norm=cfg.batch_norm)]
        layers += [SirenLayer(width, width, cfg.omega0, batch_norm=cfg.batch_norm) for _ in range(cfg.trunk_depth - 1)]
        self.trunk = nn.Sequential(*layers)
        self.density_head = nn.Linear(width, 1)
        self.albedo_head = nn.Linear(width, N_CHANNELS)
        self.season_head = nn.Linear(width, N_CHANNELS * cfg.n_season_classes)
        self.season_class_net = nn.Sequential(
            SirenLayer(2, cfg.branch_width, cfg.branch_omega0),
            nn.Linear(cfg.branch_width, cfg.n_season_classes),
        )
        self.solar_vis_branch = nn.Sequential(
            SirenLayer(width + sun_dim, cfg.branch_width, cfg.branch_omega0),
            nn.Linear(cfg.branch_width, 1),
        )
        self.sky_net = nn.Sequential(
            SirenLayer(sun_dim, cfg.branch_width, cfg.branch_omega0),
            nn.Linear(cfg.branch_width, N_CHANNELS),
        )
        self.robust_loss = AdaptiveRobustParams()

    def check_bounds(self, points: torch.Tensor) -> None:
        if (points.abs() > 1.0 + BOUNDS_TOLERANCE).any():
            worst = float(points.abs().max())
            raise InvalidArgument(f"points must lie in [-1, 1]^3, found |coordinate| = {worst:.6g}")

    def trunk_features(self, points: torch.Tensor) -> torch.Tensor:
        self.check_bounds(points)
        return self.trunk(positional_encode(points.clamp(-1.0, 1.0), self.cfg.pe_levels_pos))

    def density_from_features(self, features: torch.Tensor) -> torch.Tensor:
        return self.cfg.density_scale * nn.functional.softplus(self.density_head(features)).squeeze(-1)

    def density(self, points: torch.Tensor) -> torch.Tensor:
        """Density ρ ≥ 0 at points of shape (..., 3)."""
        return self.density_from_features(self.trunk_features(points))

    def encode_sun(self, sun: torch.Tensor) -> torch.Tensor:
        return positional_encode(sun, self.cfg.pe_levels_sun)

    def temporal_class(self, time_encoding: torch.Tensor) -> torch.Tensor:
        """Softmax distribution over the seasonal classes, shape (..., N)."""
        return torch.softmax(self.season_class_net(time_encoding), dim=-1)

    def solar_visibility(self, features: torch.Tensor, sun_code: torch.Tensor) -> torch.Tensor:
        """S_vis in (0, 1) for features (..., S, W) and encoded suns (..., D)."""
        sun_code = sun_code.unsqueeze(-2).expand(*features.shape[:-1], sun_code.shape[-1])
        return torch.sigmoid(self.solar_vis_branch(torch.cat([features, sun_code], dim=-1))).squeeze(-1)

    def sky(self, sun_code: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.sky_net(sun_code))

    def robust_params(self) -> RobustLossParams:
        return self.robust_loss()

    def forward(self, points: torch.Tensor, sun: torch.Tensor, time_encoding: torch.Tensor) -> FieldOutputs:
        """
        Evaluate the field.

        Args:
            points: Sample points, shape (..., S, 3), inside [-1, 1]^3
            sun: Unit solar direction per ray, shape (..., 3)
            time_encoding: Encoded time of year per ray, shape (..., 2)

        Returns:
            FieldOutputs: All heads for every point

        Raises:
            InvalidArgument: If a point lies outside the scene box
        """
        features = self.trunk_features(points)
        sun_code = self.encode_sun(sun)
        n_classes = self.cfg.n_season_classes
        return FieldOutputs(
            density=self.density_from_features(features),
            albedo_pre=self.albedo_head(features),
            season_adjust=self.season_head(features).unflatten(-1, (N_CHANNELS, n_classes)),
            class_probs=self.temporal_class(time_encoding),
            solar_vis=self.solar_visibility(features, sun_code),
            sky=self.sky(sun_code),
        )


class ParamStore:
    """
    Named, disjoint parameter partitions of a SeasonField with a flat-vector view.

    The flat order is partition order, then module parameter order.
    """

    def __init__(self, model: SeasonField):
        self.model = model
        self.partitions: Dict[str, List[nn.Parameter]] = {
            name: list(getattr(model, name).parameters()) for name in PARTITIONS
        }
        self._validate_partitions()

    def _validate_partitions(self) -> None:
        seen = set()
        for name, params in self.partitions.items():
            for param in params:
                if id(param) in seen:
                    raise InvalidArgument(f"parameter shared between partitions (found again in {name!r})")
                seen.add(id(param))
        uncovered = [n for n, p in self.model.named_parameters() if id(p) not in seen]
        if uncovered:
            raise InvalidArgument(f"parameters outside every partition: {uncovered}")

    @property
    def names(self) -> Tuple[str, ...]:
        return PARTITIONS

    def parameters(self, partitions: Optional[Iterable[str]] = None) -> List[nn.Parameter]:
        names = PARTITIONS if partitions is None else tuple(partitions)
        unknown = set(names) - set(PARTITIONS)
        if unknown:
            raise InvalidArgument(f"unknown partitions: {sorted(unknown)}")
        return [p for name in PARTITIONS if name in names for p in self.partitions[name]]

    def slices(self) -> Dict[str, slice]:
        out, offset = {}, 0
        for name in PARTITIONS:
            size = sum(p.numel() for p in self.partitions[name])
            out[name] = slice(offset, offset + size)
            offset += size
        return out

    def flat(self) -> torch.Tensor:
        return torch.cat([p.detach().reshape(-1) for p in self.parameters()])

    def assign(self, vector: torch.Tensor) -> None:
        expected = sum(p.numel() for p in self.parameters())
        if vector.numel() != expected:
            raise InvalidArgument(f"flat vector has {vector.numel()} entries, store holds {expected}")
        offset = 0
        with torch.no_grad():
            for param in self.parameters():
                n = param.numel()
                param.copy_(vector[offset:offset + n].reshape(param.shape))
                offset += n

    def mask(self, frozen: Iterable[str]) -> torch.Tensor:
        """Boolean mask over the flat vector, True where the partition is frozen."""
        frozen = set(frozen)
        out = torch.zeros(sum(p.numel() for p in self.parameters()), dtype=torch.bool)
        for name, part in self.slices().items():
            if name in frozen:
                out[part] = True
        return out


def partition_freeze_sets() -> FreezeSets:
    """
    Partitions frozen per ray type.

    Image rays freeze what only computes solar visibility; solar rays freeze
    everything not used exclusively for sky color or solar visibility.
    """
    return FreezeSets(
        image_ray_frozen=frozenset({"solar_vis_branch"}),
        solar_ray_frozen=frozenset(set(PARTITIONS) - {"solar_vis_branch", "sky_net"}),
    )


def gradients(store: ParamStore, loss_fn: Callable[[], torch.Tensor],
              frozen: Iterable[str] = ()) -> torch.Tensor:
    """
    Reverse-mode gradient of a scalar loss as a flat vector aligned with the store.

    Args:
        store: Parameter store of the field
        loss_fn: Closure returning a scalar loss tensor
        frozen: Partition names whose gradient is forced to zero

    Returns:
        torch.Tensor: Flat gradient

    Raises:
        NumericFailure: If the loss is not finite
    """
    loss = loss_fn()
    if loss.numel() != 1:
        raise InvalidArgument(f"loss must be a scalar, got shape {tuple(loss.shape)}")
    if not torch.isfinite(loss):
        raise NumericFailure(f"non-finite loss {float(loss)}; robust params {_robust_summary(store)}")

    params = store.parameters()
    if not loss.requires_grad:
        return torch.zeros(sum(p.numel() for p in params), dtype=params[0].dtype)
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    frozen_ids = {id(p) for p in store.parameters(frozen)} if frozen else set()
    pieces = []
    for param, grad in zip(params, grads):
        if grad is None or id(param) in frozen_ids:
            pieces.append(torch.zeros_like(param).reshape(-1))
        else:
            pieces.append(grad.reshape(-1))
    return torch.cat(pieces)


def _robust_summary(store: ParamStore) -> str:
    with torch.no_grad():
        params = store.model.robust_params()
        return f"alpha={float(params.alpha):.4g} c={float(params.c):.4g}"


def save_checkpoint(path, model: SeasonField, metadata: Optional[Dict[str, Any]] = None) -> Path:
    """
    Write the field to an SNRF checkpoint.

    Parameters and floating BN statistics are stored as float32, BN batch
    counters as int64, so a save/load/save cycle reproduces the bytes.
    """
    path = Path(path)
    store = ParamStore(model)
    config_block = json.dumps({"network": model.cfg.model_dump(), "meta": metadata or {}}, sort_keys=True).encode("utf-8")
    params = store.flat().cpu().numpy().astype("<f4")
    buffer_data = _pack_buffers(_float_buffers(model), "<f4")
    counter_data = _pack_buffers(_integer_buffers(model), "<i8")

    chunks = [CHECKPOINT_MAGIC, struct.pack("<H", CHECKPOINT_VERSION),
              struct.pack("<I", len(config_block)), config_block,
              struct.pack("<I", len(PARTITIONS))]
    for name, part in store.slices().items():
        encoded = name.encode("utf-8")
        chunks += [struct.pack("<H", len(encoded)), encoded, struct.pack("<II", part.start, part.stop - part.start)]
    chunks += [struct.pack("<I", params.size), params.tobytes(),
               struct.pack("<I", buffer_data.size), buffer_data.tobytes(),
               struct.pack("<I", counter_data.size), counter_data.tobytes()]
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(b"".join(chunks))
    except OSError as exc:
        raise DatasetIOError(path, exc.strerror or str(exc)) from exc
    return path


def load_checkpoint(path) -> Tuple[SeasonField, Dict[str, Any]]:
    """
    Read an SNRF checkpoint.

    Returns:
        tuple: (SeasonField in float32, metadata dictionary)

    Raises:
        DatasetIOError: If the file is missing, truncated or not an SNRF checkpoint
    """
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise DatasetIOError(path, exc.strerror or str(exc)) from exc

    reader = _Reader(data, path)
    if reader.take(4) != CHECKPOINT_MAGIC:
        raise DatasetIOError(path, "not an SNRF checkpoint (bad magic)")
    (version,) = reader.unpack("<H")
    if version != CHECKPOINT_VERSION:
        raise DatasetIOError(path, f"unsupported checkpoint version {version}")
    (config_len,) = reader.unpack("<I")
    block = json.loads(reader.take(config_len).decode("utf-8"))
    model = SeasonField(NetworkConfig(**block["network"]))
    store = ParamStore(model)

    (n_partitions,) = reader.unpack("<I")
    table = {}
    for _ in range(n_partitions):
        (name_len,) = reader.unpack("<H")
        name = reader.take(name_len).decode("utf-8")
        table[name] = reader.unpack("<II")
    expected = {name: (part.start, part.stop - part.start) for name, part in store.slices().items()}
    if table != expected:
        raise DatasetIOError(path, "partition table does not match the configured network")

    (n_params,) = reader.unpack("<I")
    params = np.frombuffer(reader.take(4 * n_params), dtype="<f4")
    store.assign(torch.from_numpy(params.astype(np.float32)))
    _restore_buffers(reader, path, _float_buffers(model), "<f4", "buffer")
    _restore_buffers(reader, path, _integer_buffers(model), "<i8", "counter")
    return model, block.get("meta", {})


def _float_buffers(model: nn.Module) -> List[torch.Tensor]:
    return [b for _, b in model.named_buffers() if b.is_floating_point()]


def _integer_buffers(model: nn.Module) -> List[torch.Tensor]:
    return [b for _, b in model.named_buffers() if not b.is_floating_point()]


def _pack_buffers(buffers: List[torch.Tensor], dtype: str) -> np.ndarray:
    if not buffers:
        return np.zeros(0, dtype=dtype)
    return np.concatenate([b.detach().cpu().numpy().astype(dtype).ravel() for b in buffers])


def _restore_buffers(reader: "_Reader", path: Path, buffers: List[torch.Tensor], dtype: str, label: str) -> None:
    (count,) = reader.unpack("<I")
    data = np.frombuffer(reader.take(np.dtype(dtype).itemsize * count), dtype=dtype)
    needed = sum(b.numel() for b in buffers)
    if needed != count:
        raise DatasetIOError(path, f"{label} block holds {count} values, network needs {needed}")
    offset = 0
    with torch.no_grad():
        for buf in buffers:
            n = buf.numel()
            chunk = torch.from_numpy(data[offset:offset + n].astype(np.float32 if buf.is_floating_point() else np.int64))
            buf.copy_(chunk.reshape(buf.shape))
            offset += n


class _Reader:
    def __init__(self, data: bytes, path: Path):
        self.data, self.path, self.offset = data, path, 0

    def take(self, n: int) -> bytes:
        if self.offset + n > len(self.data):
            raise DatasetIOError(self.path, "checkpoint is truncated")
        chunk = self.data[self.offset:self.offset + n]
        self.offset += n
        return chunk

    def unpack(self, fmt: str) -> tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))
