"""
Run configuration: every tunable hyperparameter in one validated model.

Config files are flat ``key = value`` text (see README) or a ``config.json``
snapshot of an earlier run; the ablation case is applied on top of the file
values with :meth:`RunConfig.for_case`.
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field

from losses import LossThresholds
from radiance_core import ShadowParams
from siren_net import NetworkConfig
from trainer import PhaseSchedule, RayBatchSpec
from utils import ConfigConflict, DatasetIOError, InvalidArgument, format_config_text, parse_config_text

logger = logging.getLogger(__name__)

CASES = ("A", "B", "C", "D", "E")
CASE_DESCRIPTIONS = {
    "A": "full model",
    "B": "per-point solar shading instead of the shadow mask",
    "C": "squared error instead of the robust loss",
    "D": "no depth-supervised phase",
    "E": "a single seasonal class",
}


class RunConfig(BaseModel):
    """Hyperparameters of one training run; unknown keys are rejected."""

    model_config = ConfigDict(extra="forbid")

    case: Literal["A", "B", "C", "D", "E"] = "A"
    seed: int = Field(0, ge=0)

    learning_rate: float = Field(1.5e-4, gt=0, description="Maximum learning rate of the one-cycle policy")
    pct_start: float = Field(0.3, gt=0, lt=1, description="Share of steps spent warming up")
    lambda_sc: float = Field(0.03, ge=0)
    lambda_ds: float = Field(1.0, ge=0)
    a_min: float = Field(0.2, gt=0, le=1)
    s_max: float = Field(0.5, gt=0, le=1)
    kappa: float = Field(30.0, gt=0)
    mu: float = -0.2
    n_season_classes: int = Field(4, ge=1)

    trunk_width: int = Field(128, gt=0)
    trunk_depth: int = Field(8, gt=0)
    pe_levels_pos: int = Field(10, gt=0)
    pe_levels_sun: int = Field(4, gt=0)
    batch_norm: bool = True
    omega0: float = Field(30.0, gt=0)

    total_steps: int = Field(5000, ge=2)
    phase1_fraction: float = Field(0.2, ge=0, le=1)
    phase1_enabled: bool = True
    image_rays_per_step: int = Field(512, gt=0)
    solar_rays_per_step: int = Field(1024, gt=0)
    samples_per_ray: int = Field(96, gt=0)
    solar_sun_groups: int = Field(8, gt=0)

    shading: Literal["shadow_mask", "snerf"] = "shadow_mask"
    robust_loss: bool = True

    log_every: int = Field(50, gt=0)
    checkpoint_every: int = Field(1000, gt=0)
    data_dir: Optional[str] = None
    out_dir: Optional[str] = None

    def network(self) -> NetworkConfig:
        return NetworkConfig(
            trunk_width=self.trunk_width, trunk_depth=self.trunk_depth,
            n_season_classes=self.n_season_classes, pe_levels_pos=self.pe_levels_pos,
            pe_levels_sun=self.pe_levels_sun, batch_norm=self.batch_norm, omega0=self.omega0,
        )

    def thresholds(self) -> LossThresholds:
        return LossThresholds(a_min=self.a_min, s_max=self.s_max, lambda_sc=self.lambda_sc, lambda_ds=self.lambda_ds)

    def shadow(self) -> ShadowParams:
        return ShadowParams(kappa=self.kappa, mu=self.mu)

    def schedule(self) -> PhaseSchedule:
        return PhaseSchedule(total_steps=self.total_steps, phase1_fraction=self.phase1_fraction,
                             phase1_enabled=self.phase1_enabled)

    def batch_spec(self) -> RayBatchSpec:
        return RayBatchSpec(
            image_rays_per_step=self.image_rays_per_step, solar_rays_per_step=self.solar_rays_per_step,
            samples_per_ray=self.samples_per_ray, solar_sun_groups=self.solar_sun_groups,
        )

    def for_case(self, case: str) -> "RunConfig":
        """
        Apply an ablation case on top of this configuration.

        Raises:
            InvalidArgument: For an unknown case letter
            ConfigConflict: Case E with an explicit class count other than 1
        """
        case = str(case).upper()
        if case not in CASES:
            raise InvalidArgument(f"unknown case {case!r}, expected one of {', '.join(CASES)}")
        changes: Dict[str, Any] = {"case": case}
        if case == "B":
            changes["shading"] = "snerf"
        elif case == "C":
            changes["robust_loss"] = False
        elif case == "D":
            changes.update(phase1_enabled=False, lambda_ds=0.0)
        elif case == "E":
            if "n_season_classes" in self.model_fields_set and self.n_season_classes != 1:
                raise ConfigConflict(
                    f"case E uses a single seasonal class but n_season_classes={self.n_season_classes} was set"
                )
            changes["n_season_classes"] = 1
        resolved = self.model_copy(update=changes)
        logger.info("case %s: %s", case, CASE_DESCRIPTIONS[case])
        return resolved

    def snapshot(self, path) -> Path:
        """Write the resolved configuration as config.json."""
        path = Path(path)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(json.dumps(self.model_dump(mode="json"), indent=2, sort_keys=True) + "\n",
                            encoding="utf-8")
        except OSError as exc:
            raise DatasetIOError(path, exc.strerror or str(exc)) from exc
        return path

    def save_text(self, path, header: Optional[str] = None) -> Path:
        """Write the configuration as key = value text that ``load_config_file`` reads back."""
        path = Path(path)
        body = format_config_text(self.model_dump(mode="json", exclude_none=True))
        if header:
            body = "".join(f"# {line}\n" for line in header.splitlines()) + body
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(body, encoding="utf-8")
        except OSError as exc:
            raise DatasetIOError(path, exc.strerror or str(exc)) from exc
        return path


def load_config_file(path, **overrides) -> RunConfig:
    """
    Read a key = value config file, or a ``config.json`` snapshot, into a RunConfig.

    Args:
        path: Config file, or None for defaults; a ``.json`` suffix selects the snapshot format
        **overrides: Values taking precedence over the file (None entries ignored)

    Raises:
        DatasetIOError: If the file cannot be read or a snapshot is malformed
        InvalidArgument: On malformed lines or duplicate keys
        pydantic.ValidationError: On unknown keys or out-of-range values
    """
    values: Dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise DatasetIOError(path, exc.strerror or str(exc)) from exc
        values = _snapshot_values(path, text) if path.suffix.lower() == ".json" else parse_config_text(text)
    values.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig(**values)


def _snapshot_values(path: Path, text: str) -> Dict[str, Any]:
    try:
        values = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DatasetIOError(path, f"malformed config snapshot: {exc}") from exc
    if not isinstance(values, dict):
        raise DatasetIOError(path, "config snapshot is not a JSON object")
    return values
