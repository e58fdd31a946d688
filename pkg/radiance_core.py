"""
Closed-form rendering math for the season field.

Everything here is stateless tensor math: ray compositing from densities,
the seasonal albedo merge, the shadow mask and both shading rules, and the
time/positional encodings. Functions accept arbitrary leading batch
dimensions; the sample axis is always the last (or second to last for
per-sample color vectors).
"""

import logging
import math
from dataclasses import dataclass
from typing import Union

import torch
from pydantic import BaseModel, Field

from utils import InvalidArgument

logger = logging.getLogger(__name__)

N_CHANNELS = 3

Scalar = Union[float, torch.Tensor]


@dataclass
class RaySamples:
    """Ordered sample points along rays; the last delta repeats the previous one."""

    origins: torch.Tensor      # (..., 3)
    directions: torch.Tensor   # (..., 3) unit
    t_values: torch.Tensor     # (..., n) ray parameter of each sample
    positions: torch.Tensor    # (..., n, 3)
    deltas: torch.Tensor       # (..., n)

    @property
    def n_samples(self) -> int:
        return self.t_values.shape[-1]


@dataclass
class TransmittanceProfile:
    """Per-sample existence, visibility and surface probabilities."""

    p_exist: torch.Tensor
    p_visible: torch.Tensor
    p_surface: torch.Tensor


@dataclass
class TimeCode:
    day_fraction: torch.Tensor
    encoding: torch.Tensor     # (..., 2)


class ShadowParams(BaseModel):
    """Sharpness and threshold of the shadow-mask sigmoid."""

    kappa: float = Field(30.0, gt=0, description="Rapidity of the lit/shadow transition")
    mu: float = Field(-0.2, description="Shift placing the transition at -mu")


@dataclass
class SeasonBlend:
    """Temporal class distribution and per-point temporal adjustment matrix."""

    class_probs: torch.Tensor  # (..., N), broadcastable to adjustment[..., 0, :]
    adjustment: torch.Tensor   # (..., C, N)


def _as_tensor(value: Scalar) -> torch.Tensor:
    if torch.is_tensor(value):
        return value
    return torch.as_tensor(value, dtype=torch.float64)


def encode_time(day_fraction: Scalar) -> TimeCode:
    """
    Encode the fraction of the year on the unit circle.

    Args:
        day_fraction: Fraction of the year completed, scalar or tensor

    Returns:
        TimeCode: The input with its (cos 2πt, sin 2πt) encoding

    Raises:
        InvalidArgument: If any input value is not finite

    Examples:
        >>> encode_time(0.25).encoding
        tensor([6.1232e-17, 1.0000e+00], dtype=torch.float64)
    """
    t = _as_tensor(day_fraction)
    if not torch.isfinite(t).all():
        raise InvalidArgument(f"day fraction must be finite, got {t}")
    angle = 2.0 * math.pi * t
    return TimeCode(day_fraction=t, encoding=torch.stack([torch.cos(angle), torch.sin(angle)], dim=-1))


def positional_encode(v: torch.Tensor, levels: int) -> torch.Tensor:
    """
    Frequency encoding of coordinates in [-1, 1].

    For every component v_j and every level k the pair
    (sin 2^k π v_j, cos 2^k π v_j) is emitted, components outermost.

    Args:
        v: Tensor of shape (..., d)
        levels: Number of frequency levels L

    Returns:
        torch.Tensor: Tensor of shape (..., 2·d·L)
    """
    if levels < 1:
        raise InvalidArgument(f"positional encoding needs at least one level, got {levels}")
    v = _as_tensor(v)
    if (v.abs() > 1.0).any():
        logger.warning("positional_encode: clamping %d components outside [-1, 1]", int((v.abs() > 1.0).sum()))
        v = v.clamp(-1.0, 1.0)
    freqs = math.pi * torch.pow(2.0, torch.arange(levels, dtype=v.dtype, device=v.device))
    scaled = v.unsqueeze(-1) * freqs                      # (..., d, L)
    pairs = torch.stack([torch.sin(scaled), torch.cos(scaled)], dim=-1)  # (..., d, L, 2)
    return pairs.flatten(start_dim=-3)


def transmittance_profile(densities: torch.Tensor, deltas: torch.Tensor) -> TransmittanceProfile:
    """
    Existence, visibility and surface probabilities along rays.

    Args:
        densities: Non-negative densities ρ, shape (..., n)
        deltas: Positive inter-sample distances δ, same shape

    Returns:
        TransmittanceProfile: p_exist = 1 - exp(-ρδ), p_visible the exclusive
        transmittance, p_surface their product

    Raises:
        InvalidArgument: On shape mismatch, non-finite input or negative density
    """
    densities = _as_tensor(densities)
    deltas = _as_tensor(deltas)
    if densities.shape != deltas.shape:
        raise InvalidArgument(f"densities {tuple(densities.shape)} and deltas {tuple(deltas.shape)} differ in shape")
    if not (torch.isfinite(densities).all() and torch.isfinite(deltas).all()):
        raise InvalidArgument("densities and deltas must be finite")
    if (densities < 0).any():
        raise InvalidArgument(f"densities must be non-negative, min was {float(densities.min())}")

    optical = densities * deltas
    p_exist = -torch.expm1(-optical)
    accumulated = torch.cumsum(optical, dim=-1)
    exclusive = torch.cat([torch.zeros_like(accumulated[..., :1]), accumulated[..., :-1]], dim=-1)
    p_visible = torch.exp(-exclusive)
    return TransmittanceProfile(p_exist=p_exist, p_visible=p_visible, p_surface=p_exist * p_visible)


def composite(values: torch.Tensor, profile: TransmittanceProfile) -> torch.Tensor:
    """
    Surface-probability weighted sum of per-sample values; no background term.

    Args:
        values: Per-sample vectors, shape (..., n, C)
        profile: Transmittance profile with p_surface of shape (..., n)

    Returns:
        torch.Tensor: Shape (..., C)
    """
    values = _as_tensor(values)
    if values.dim() < 2 or values.shape[-2] != profile.p_surface.shape[-1]:
        raise InvalidArgument(
            f"values {tuple(values.shape)} do not match {profile.p_surface.shape[-1]} profile samples"
        )
    return (values * profile.p_surface.unsqueeze(-1)).sum(dim=-2)


def seasonal_albedo(a_star: torch.Tensor, blend: SeasonBlend) -> torch.Tensor:
    """σ(A* + T_A·T_C): the expected seasonal adjustment merged before the sigmoid."""
    adjustment = (blend.adjustment * blend.class_probs.unsqueeze(-2)).sum(dim=-1)
    return torch.sigmoid(_as_tensor(a_star) + adjustment)


def shadow_mask(profile: TransmittanceProfile, s_vis: torch.Tensor, params: ShadowParams) -> torch.Tensor:
    """
    Probability that the rendered surface is sunlit.

    Args:
        profile: Transmittance profile of the image ray
        s_vis: Solar visibility per sample, same shape as p_surface
        params: Shadow sigmoid parameters

    Returns:
        torch.Tensor: σ(κ(μ + Σ p_surface·s_vis)), one value per ray
    """
    s_vis = _as_tensor(s_vis)
    if s_vis.shape != profile.p_surface.shape:
        raise InvalidArgument(f"s_vis {tuple(s_vis.shape)} does not match profile {tuple(profile.p_surface.shape)}")
    visible = (profile.p_surface * s_vis).sum(dim=-1)
    return torch.sigmoid(params.kappa * (params.mu + visible))


def shade_shadow(col_t: torch.Tensor, mask: Scalar, sky: torch.Tensor) -> torch.Tensor:
    """Darken the seasonal color by the sky factor where the mask says shadow."""
    mask = _as_tensor(mask).unsqueeze(-1)
    return col_t * (mask + (1.0 - mask) * sky)


def snerf_point_color(albedo: torch.Tensor, s_vis: Scalar, sky: torch.Tensor) -> torch.Tensor:
    """Per-point shading (s_vis + (1 - s_vis)·sky) ⊙ albedo, applied before compositing."""
    s_vis = _as_tensor(s_vis).unsqueeze(-1)
    return (s_vis + (1.0 - s_vis) * sky) * albedo
