"""
Training objectives for the season field.

The robust residual loss is the negative log-likelihood of the general
adaptive distribution: the shape function f(x, α, c) plus log(c·Z(α)), with
Z(α) integrated numerically once, cached on an α grid and interpolated with
a monotone cubic so gradients can flow into α.
"""

import functools
import logging
import math
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch
from pydantic import BaseModel, Field
from scipy.integrate import IntegrationWarning, quad
from scipy.interpolate import PchipInterpolator
from torch import nn

from utils import InvalidArgument, NumericFailure

logger = logging.getLogger(__name__)

PARTITION_AT_ZERO = math.pi * math.sqrt(2.0)
PARTITION_AT_TWO = math.sqrt(2.0 * math.pi)
PARTITION_REL_TOL = 1e-6


@dataclass
class RobustLossParams:
    alpha: torch.Tensor
    c: torch.Tensor


class LossThresholds(BaseModel):
    """Thresholds and weights of the albedo, sky, solar-correction and depth terms."""

    a_min: float = Field(0.2, gt=0, le=1, description="Minimum brightest channel outside shadow")
    s_max: float = Field(0.5, gt=0, le=1, description="Maximum sky color")
    lambda_sc: float = Field(0.03, ge=0, description="Weight of the albedo and sky penalties on image rays")
    lambda_ds: float = Field(1.0, ge=0, description="Weight of the prior approximation loss in phase 1")


class AdaptiveRobustParams(nn.Module):
    """Learnable (α, c) squashed into (0, 2) and (0, 1); both start at their range midpoints."""

    def __init__(self):
        super().__init__()
        self.alpha_raw = nn.Parameter(torch.zeros(()))
        self.c_raw = nn.Parameter(torch.zeros(()))

    def forward(self) -> RobustLossParams:
        return RobustLossParams(alpha=2.0 * torch.sigmoid(self.alpha_raw), c=torch.sigmoid(self.c_raw))


def _shape_scalar(x: float, alpha: float, c: float = 1.0) -> float:
    squared = (x / c) ** 2
    if alpha == 2.0:
        return 0.5 * squared
    if alpha == 0.0:
        return math.log1p(0.5 * squared)
    beta = abs(alpha - 2.0)
    return beta / alpha * math.expm1(0.5 * alpha * math.log1p(squared / beta))


def barron_f(x, alpha, c) -> torch.Tensor:
    """
    Shape function of the general robust loss.

    Args:
        x: Residuals, any shape
        alpha: Shape parameter in (0, 2), broadcastable to x
        c: Positive scale, broadcastable to x

    Returns:
        torch.Tensor: f(x, α, c) elementwise; quadratic as α → 2, Cauchy-like as α → 0
    """
    x = torch.as_tensor(x, dtype=torch.float64) if not torch.is_tensor(x) else x
    alpha = torch.as_tensor(alpha, dtype=x.dtype, device=x.device)
    c = torch.as_tensor(c, dtype=x.dtype, device=x.device)
    squared = (x / c) ** 2
    eps = torch.finfo(x.dtype).eps
    beta = torch.clamp(torch.abs(alpha - 2.0), min=eps)
    alpha_safe = torch.clamp(alpha, min=eps)
    general = (beta / alpha_safe) * torch.expm1(0.5 * alpha_safe * torch.log1p(squared / beta))
    return torch.where(
        alpha == 2.0, 0.5 * squared,
        torch.where(alpha == 0.0, torch.log1p(0.5 * squared), general),
    )


@functools.lru_cache(maxsize=4096)
def barron_partition(alpha: float) -> float:
    """
    Partition function Z(α) = ∫ exp(-f(x, α, 1)) dx by adaptive quadrature.

    Args:
        alpha: Shape parameter strictly inside (0, 2)

    Returns:
        float: Z(α) to relative error ≤ 1e-6

    Raises:
        InvalidArgument: If alpha is outside (0, 2)
        NumericFailure: If the quadrature does not converge
    """
    alpha = float(alpha)
    if not 0.0 < alpha < 2.0:
        raise InvalidArgument(f"alpha must lie in (0, 2), got {alpha}")

    def integrand(x: float) -> float:
        return math.exp(-_shape_scalar(x, alpha))

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", IntegrationWarning)
        core, core_err = quad(integrand, 0.0, 8.0, epsabs=0.0, epsrel=1e-11, limit=400)
        tail, tail_err = quad(integrand, 8.0, math.inf, epsabs=0.0, epsrel=1e-11, limit=400)
    value = 2.0 * (core + tail)
    error = 2.0 * (core_err + tail_err)
    if not math.isfinite(value) or error > PARTITION_REL_TOL * value:
        raise NumericFailure(f"partition quadrature at alpha={alpha} did not converge (value={value}, error={error})")
    return value


class PartitionTable:
    """
    Cached log Z(α) on a uniform grid over [0, 2] with monotone cubic interpolation.

    The grid endpoints use the closed forms π√2 (α → 0) and √(2π) (α → 2).
    """

    def __init__(self, n_grid: int = 201):
        if n_grid < 3:
            raise InvalidArgument(f"partition grid needs at least 3 points, got {n_grid}")
        alphas = np.linspace(0.0, 2.0, n_grid)
        values = [PARTITION_AT_ZERO] + [barron_partition(a) for a in alphas[1:-1]] + [PARTITION_AT_TWO]
        self.alphas = alphas
        self._log_z = PchipInterpolator(alphas, np.log(values))
        self._dlog_z = self._log_z.derivative()
        logger.debug("built partition table with %d grid points", n_grid)

    def log_z(self, alpha: np.ndarray) -> np.ndarray:
        return self._log_z(np.clip(alpha, 0.0, 2.0))

    def dlog_z(self, alpha: np.ndarray) -> np.ndarray:
        return self._dlog_z(np.clip(alpha, 0.0, 2.0))


@functools.lru_cache(maxsize=1)
def partition_table() -> PartitionTable:
    """The process-wide partition table, built on first use and read-only afterwards."""
    return PartitionTable()


class _LogPartition(torch.autograd.Function):
    @staticmethod
    def forward(ctx, alpha: torch.Tensor) -> torch.Tensor:
        ctx.save_for_backward(alpha)
        values = partition_table().log_z(alpha.detach().cpu().double().numpy())
        return torch.as_tensor(values, dtype=alpha.dtype, device=alpha.device)

    @staticmethod
    def backward(ctx, grad_output: torch.Tensor) -> torch.Tensor:
        (alpha,) = ctx.saved_tensors
        slope = partition_table().dlog_z(alpha.detach().cpu().double().numpy())
        return grad_output * torch.as_tensor(slope, dtype=alpha.dtype, device=alpha.device)


def log_partition(alpha: torch.Tensor) -> torch.Tensor:
    """Differentiable log Z(α) read from the cached table."""
    return _LogPartition.apply(alpha)


def barron_loss(x, params: RobustLossParams) -> torch.Tensor:
    """Negative log-likelihood f(x, α, c) + log(c·Z(α)), elementwise in x."""
    return barron_f(x, params.alpha, params.c) + torch.log(params.c) + log_partition(params.alpha)


def residual_loss(x: torch.Tensor, params: Optional[RobustLossParams], robust: bool = True) -> torch.Tensor:
    """Barron loss, or plain squared error when the robust loss is disabled."""
    if robust:
        if params is None:
            raise InvalidArgument("robust residual loss needs (alpha, c)")
        return barron_loss(x, params)
    return x ** 2


def loss_albedo(col_t: torch.Tensor, a_min: float) -> torch.Tensor:
    """Penalty pushing every channel of the unshadowed color up to ``a_min``; mean over 3 channels."""
    shortfall = 1.0 - torch.clamp(col_t, max=a_min) / a_min
    return (shortfall ** 2).sum(dim=-1) / col_t.shape[-1]


def loss_sky(sky: torch.Tensor, s_max: float) -> torch.Tensor:
    """Zero while every sky channel stays at or below ``s_max``, quadratic above it."""
    excess = torch.relu(sky / s_max - 1.0)
    return (excess ** 2).sum(dim=-1)


def loss_image_ray(
    gt_color: torch.Tensor,
    col_sa: torch.Tensor,
    col_t: torch.Tensor,
    sky: torch.Tensor,
    params: Optional[RobustLossParams],
    thresholds: LossThresholds,
    robust: bool = True,
) -> torch.Tensor:
    """
    Per-ray image loss.

    The residual term is the mean over channels of the per-channel robust
    loss; the albedo and sky penalties are scaled by ``lambda_sc``.

    Returns:
        torch.Tensor: One loss value per ray
    """
    residual = residual_loss(gt_color - col_sa, params, robust).mean(dim=-1)
    penalties = loss_albedo(col_t, thresholds.a_min) + loss_sky(sky, thresholds.s_max)
    return residual + thresholds.lambda_sc * penalties


def loss_solar_ray(
    s_vis: torch.Tensor,
    p_visible_exact: torch.Tensor,
    sky: torch.Tensor,
    thresholds: LossThresholds,
) -> torch.Tensor:
    """Sky penalty plus MSE between predicted and exact solar visibility; the exact target is detached."""
    if s_vis.shape != p_visible_exact.shape:
        raise InvalidArgument(f"s_vis {tuple(s_vis.shape)} and target {tuple(p_visible_exact.shape)} differ")
    mse = ((s_vis - p_visible_exact.detach()) ** 2).mean(dim=-1)
    return loss_sky(sky, thresholds.s_max) + mse


def loss_prior(
    rho: torch.Tensor,
    rho_h: torch.Tensor,
    delta: torch.Tensor,
    params: Optional[RobustLossParams],
    robust: bool = True,
) -> torch.Tensor:
    """Robust loss on the gap between learned and prior-height transmittance of one step."""
    residual = torch.exp(-rho * delta) - torch.exp(-rho_h * delta)
    return residual_loss(residual, params, robust)
