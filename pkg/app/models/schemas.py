"""
Pydantic models for configuration files, records and JSON reports
"""

from typing import Any, Dict, List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from ..core.config import settings


class FlowParams(BaseModel):
    """Time-integration parameters"""
    model_config = ConfigDict(frozen=True)

    cfl: float = Field(default_factory=lambda: settings.CFL, gt=0.0, le=0.5)
    blowup_threshold: Optional[float] = None
    blowup_factor: float = Field(default_factory=lambda: settings.BLOWUP_FACTOR, gt=10.0)
    max_steps: int = Field(default_factory=lambda: settings.MAX_STEPS, ge=1)
    redistribution_period: int = Field(default_factory=lambda: settings.REDISTRIBUTION_PERIOD, ge=1)
    scheme: Literal["bdf", "semi-implicit"] = "bdf"
    adapt_weight: float = Field(default_factory=lambda: settings.ADAPT_WEIGHT, ge=0.0, lt=1.0)
    rtol: float = Field(default_factory=lambda: settings.RTOL, gt=0.0)
    tracked_points: int = Field(default_factory=lambda: settings.TRACKED_POINTS, ge=1)
    dump_every: int = Field(default=0, ge=0)


class BaseSurfaceSpec(BaseModel):
    """Initial surface of a scenario"""
    kind: Literal["sphere", "cylinder", "dumbbell", "torus_in_dumbbell"] = "sphere"
    radius: float = Field(default=1.0, gt=0.0)
    resolution: int = Field(default_factory=lambda: settings.RESOLUTION, ge=8)
    period: float = Field(default=6.283185307179586, gt=0.0)

    # dumbbell
    half_length: float = Field(default=3.0, gt=0.0)
    neck_radius: float = Field(default=0.3, gt=0.0)
    neck_width: float = Field(default=0.8, gt=0.0)
    lobe_radius: float = Field(default=1.0, gt=0.0)

    # torus threaded through the neck disk
    torus_tube_fraction: float = Field(default=0.2, gt=0.0, lt=1.0)
    torus_n_major: int = Field(default=48, ge=8)
    torus_n_minor: int = Field(default=12, ge=6)
    torus_blowup_factor: float = Field(default=20.0, gt=10.0)


class PerturbationSpec(BaseModel):
    """Graph perturbations f_n = amplitude * 2^-n * shape"""
    mode: Literal["constant", "bump", "cosine"] = "constant"
    amplitude: float = -0.5
    n_min: int = Field(default=0, ge=0)
    n_max: int = -1
    bump_center: float = 1.5
    bump_width: float = 0.5
    wavenumber: float = 2.0
    time_slide_steps: int = Field(default=10, ge=1)
    reference_gap: float = Field(default=1e-3, gt=0.0)

    @field_validator("amplitude")
    @classmethod
    def _nonzero(cls, value: float) -> float:
        if value == 0.0:
            raise ValueError("amplitude schedule must decrease strictly to 0")
        return value

    @property
    def levels(self) -> List[int]:
        return list(range(self.n_min, self.n_max + 1))

    def amplitude_at(self, n: int) -> float:
        return self.amplitude * 2.0 ** (-n)


class NeckSpec(BaseModel):
    eps: float = Field(default_factory=lambda: settings.NECK_EPS, gt=0.0, lt=1.0)
    half_length: float = Field(default_factory=lambda: settings.WINDOW_HALF_LENGTH, gt=0.0)
    radius: float = Field(default_factory=lambda: settings.WINDOW_RADIUS, gt=1.0)


class Tolerances(BaseModel):
    classify_residual: float = 0.2
    radius_tolerance: float = 0.1
    monotone: float = 0.01
    alpha_ratio: float = 0.5


class ScenarioConfig(BaseModel):
    """A full scenario: base surface, perturbation schedule, flow and tolerances"""
    name: str = "scenario"
    base: BaseSurfaceSpec = Field(default_factory=BaseSurfaceSpec)
    perturbation: PerturbationSpec = Field(default_factory=PerturbationSpec)
    flow: FlowParams = Field(default_factory=FlowParams)
    neck: NeckSpec = Field(default_factory=NeckSpec)
    tolerances: Tolerances = Field(default_factory=Tolerances)
    output_dir: str = Field(default_factory=lambda: settings.OUTPUT_DIR)
    seed: int = Field(default_factory=lambda: settings.SEED)

    @model_validator(mode="after")
    def _schedule(self) -> "ScenarioConfig":
        if self.base.kind == "sphere" and self.perturbation.mode == "constant":
            if -self.perturbation.amplitude_at(self.perturbation.n_min) >= self.base.radius:
                raise ValueError("inward offset would swallow the sphere")
        return self


class ExperimentRecord(BaseModel):
    """One row of the continuity table"""
    n: int
    amplitude: float
    c2_norm: float
    T_n: Optional[float] = None
    T_gap: Optional[float] = None
    limit_distance: Optional[float] = None
    cor_bound: Optional[float] = None
    bound_holds: Optional[bool] = None
    contained: Optional[bool] = None
    neck_certified: bool = False
    spheres_placed: bool = False
    link_preserved: bool = False
    status: Literal["ok", "failed"] = "ok"
    error: Optional[str] = None


class Envelope(BaseModel):
    """Versioned JSON wrapper for every report written to disk"""
    schema_version: str = settings.SCHEMA_VERSION
    kind: str
    payload: Dict[str, Any]
