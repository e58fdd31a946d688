"""
Ray rendering through a SeasonField.

Turns sample points along image rays into the rendered shadow-aware color,
the unshadowed seasonal color, the shadow mask and the sky color. Two
shading rules are supported: ``shadow_mask`` composites albedo and shades
the ray once with the mask; ``snerf`` shades every sample before
compositing.
"""

import logging
from dataclasses import dataclass
from typing import Literal, Optional

import torch

from radiance_core import (
    RaySamples,
    SeasonBlend,
    ShadowParams,
    TransmittanceProfile,
    composite,
    seasonal_albedo,
    shade_shadow,
    shadow_mask,
    snerf_point_color,
    transmittance_profile,
)
from siren_net import FieldOutputs, SeasonField
from utils import InvalidArgument

logger = logging.getLogger(__name__)

ShadingMode = Literal["shadow_mask", "snerf"]
SHADING_MODES = ("shadow_mask", "snerf")


@dataclass
class RayRender:
    col_sa: torch.Tensor       # (R, 3) rendered color
    col_t: torch.Tensor        # (R, 3) seasonal color without shadows
    mask: torch.Tensor         # (R,) sunlit probability
    sky: torch.Tensor          # (R, 3)
    density: torch.Tensor      # (R, S) density used for compositing
    profile: TransmittanceProfile
    outputs: FieldOutputs


def merged_density(rho: torch.Tensor, rho_prior: torch.Tensor, gamma: float) -> torch.Tensor:
    """Γ·ρ + (1 - Γ)·ρ_H; Γ = 1 leaves the learned density untouched."""
    if not 0.0 <= gamma <= 1.0:
        raise InvalidArgument(f"gamma must lie in [0, 1], got {gamma}")
    if gamma == 1.0:
        return rho
    return gamma * rho + (1.0 - gamma) * rho_prior


def render_rays(
    model: SeasonField,
    samples: RaySamples,
    sun: torch.Tensor,
    time_encoding: torch.Tensor,
    shadow: ShadowParams,
    shading: ShadingMode = "shadow_mask",
    rho_prior: Optional[torch.Tensor] = None,
    gamma: float = 1.0,
) -> RayRender:
    """
    Render a batch of rays.

    Args:
        model: The season field
        samples: Sample points, positions of shape (R, S, 3)
        sun: Unit solar direction per ray, (R, 3)
        time_encoding: Encoded day fraction per ray, (R, 2)
        shadow: Shadow-mask sigmoid parameters
        shading: ``shadow_mask`` or ``snerf``
        rho_prior: Prior-height density per sample, merged with weight 1 - gamma
        gamma: Share of the learned density

    Returns:
        RayRender: Colors, mask, sky and the transmittance profile
    """
    if shading not in SHADING_MODES:
        raise InvalidArgument(f"unknown shading mode {shading!r}, expected one of {SHADING_MODES}")
    out = model(samples.positions, sun, time_encoding)
    density = out.density if rho_prior is None else merged_density(out.density, rho_prior, gamma)
    profile = transmittance_profile(density, samples.deltas)

    blend = SeasonBlend(class_probs=out.class_probs.unsqueeze(-2), adjustment=out.season_adjust)
    albedo = seasonal_albedo(out.albedo_pre, blend)         # (R, S, 3)
    col_t = composite(albedo, profile)
    mask = shadow_mask(profile, out.solar_vis, shadow)
    sky = out.sky

    if shading == "snerf":
        col_sa = composite(snerf_point_color(albedo, out.solar_vis, sky.unsqueeze(-2)), profile)
    else:
        col_sa = shade_shadow(col_t, mask, sky)
    return RayRender(col_sa=col_sa, col_t=col_t, mask=mask, sky=sky, density=density, profile=profile, outputs=out)
