"""
Schema of the JSON run configuration.

Every section is a pydantic dataclass with `extra="forbid"`, so unknown
keys are rejected; physical bounds are field constraints or validators.
"""

from typing import Annotated, Literal, Optional, Union

from pydantic import ConfigDict, Field, model_validator
from pydantic.dataclasses import dataclass

from shared.models.material import CoefficientSpec
from shared.models.state import CoefficientUpdate, Scheme, TimeDiscretization

Strict = ConfigDict(extra="forbid")

Selector = Literal[
    "run", "sweep-eps", "refine", "twins", "picard", "blowup", "materials"
]
Diagnostic = Literal["energy", "identity", "riccati", "hessian", "blowup"]


@dataclass(config=Strict)
class DomainConfig:
    length: float = Field(default=1.0, gt=0)


@dataclass(config=Strict)
class GridConfig:
    n: int = Field(default=128, ge=8)


@dataclass(config=Strict)
class ZenerConfig:
    """Material given by its Zener parameters."""

    kind: Literal["zener"]
    tau_rel: float = Field(gt=0)
    tau_ret: float = Field(gt=0)
    stiffness: CoefficientSpec
    density: float = Field(gt=0)
    diffusivity: float = Field(gt=0)
    theta_max: float = Field(default=10.0, gt=0)

    @model_validator(mode="after")
    def _check_times(self):
        if self.tau_rel > self.tau_ret:
            raise ValueError("tau_rel < tau_ret required")
        return self


@dataclass(config=Strict)
class CoefficientsConfig:
    """System coefficients given directly."""

    kind: Literal["coefficients"]
    alpha: float = Field(default=1.0, ge=0)
    diffusivity: float = Field(default=1.0, gt=0)
    gamma: CoefficientSpec = Field(
        default_factory=lambda: CoefficientSpec(kind="constant", parameters=[1.0])
    )
    ghat: CoefficientSpec = Field(
        default_factory=lambda: CoefficientSpec(kind="constant", parameters=[1.0])
    )
    heating: CoefficientSpec = Field(
        default_factory=lambda: CoefficientSpec(kind="constant", parameters=[0.0])
    )


MaterialConfig = Annotated[
    Union[ZenerConfig, CoefficientsConfig], Field(discriminator="kind")
]


@dataclass(config=Strict)
class InitialFieldSpec:
    """
    Closed-form or tabulated initial profile on [0, L].

    * constant: `value`
    * cosine:   sum_k coefficients[k] * cos(k pi x / L)
    * tabulated: cubic spline through (abscissae, values), x in [0, L]
    """

    kind: Literal["constant", "cosine", "tabulated"] = "constant"
    value: float = 0.0
    coefficients: list[float] = Field(default_factory=list)
    abscissae: Optional[list[float]] = None
    values: Optional[list[float]] = None

    @model_validator(mode="after")
    def _check_table(self):
        if self.kind == "tabulated":
            if not self.abscissae or not self.values:
                raise ValueError("tabulated profile needs abscissae and values")
            if len(self.abscissae) != len(self.values) or len(self.values) < 2:
                raise ValueError("tabulated profile needs matching lengths >= 2")
            if any(b <= a for a, b in zip(self.abscissae, self.abscissae[1:])):
                raise ValueError("tabulated abscissae must be strictly increasing")
        return self


@dataclass(config=Strict)
class InitialDataConfig:
    u0: InitialFieldSpec = Field(default_factory=InitialFieldSpec)
    u0t: InitialFieldSpec = Field(default_factory=InitialFieldSpec)
    u0tt: InitialFieldSpec = Field(default_factory=InitialFieldSpec)
    theta0: InitialFieldSpec = Field(default_factory=InitialFieldSpec)
    remove_means: bool = True
    project_boundary: bool = True


@dataclass(config=Strict)
class EvolutionConfig:
    eps: float = Field(default=0.0, ge=0)
    dt: float = Field(default=1e-3, gt=0)
    t_end: float = Field(default=1.0, ge=0)
    scheme: Scheme = "semi_implicit"
    safety: float = Field(default=0.9, gt=0, le=1)
    time_discretization: TimeDiscretization = "crank_nicolson"
    coefficient_update: CoefficientUpdate = "midpoint"


@dataclass(config=Strict)
class MonitorConfig:
    """
    Diagnostics evaluated along a run.

    Thresholds left as None fall back to the process configuration
    (MGT_BLOWUP_THRESHOLD, MGT_BLOWUP_GROWTH, MGT_UNDERSHOOT_TOL).
    """

    cadence: int = Field(default=10, ge=1)
    blowup_threshold: Optional[float] = Field(default=None, gt=0)
    blowup_growth: Optional[float] = Field(default=None, gt=1)
    undershoot_tol: Optional[float] = Field(default=None, gt=0)
    diagnostics: list[Diagnostic] = Field(
        default_factory=lambda: ["energy", "identity", "riccati", "hessian", "blowup"]
    )
    theta_margin: float = Field(default=1.0, ge=0)
    b2: float = Field(default=1.0, gt=0)


@dataclass(config=Strict)
class SweepEpsConfig:
    eps_list: list[float] = Field(default_factory=lambda: [1e-1, 1e-2, 1e-3, 1e-4])

    @model_validator(mode="after")
    def _check_order(self):
        if any(e < 0 for e in self.eps_list):
            raise ValueError("eps values must be nonnegative")
        if any(b >= a for a, b in zip(self.eps_list, self.eps_list[1:])):
            raise ValueError("eps_list must be strictly decreasing")
        return self


@dataclass(config=Strict)
class RefineConfig:
    n_list: list[int] = Field(default_factory=lambda: [33, 65, 129])
    dt_list: list[float] = Field(default_factory=list)
    reference: Literal["finest", "manufactured", "modal"] = "finest"
    mode: int = Field(default=1, ge=1)


@dataclass(config=Strict)
class TwinsConfig:
    pairing: Literal["grids", "schemes", "dt"] = "grids"
    perturbation: float = 0.0
    start_tol: float = Field(default=1e-10, gt=0)


@dataclass(config=Strict)
class PicardRunConfig:
    n_time: int = Field(default=65, ge=2)
    max_iter: int = Field(default=50, ge=1)
    tol: float = Field(default=1e-12, gt=0)
    horizon_fraction: float = Field(default=0.5, gt=0, le=1)


@dataclass(config=Strict)
class BlowupConfig:
    growth: CoefficientSpec = Field(
        default_factory=lambda: CoefficientSpec(
            kind="exponential", parameters=[1.0, 1.0]
        )
    )
    amplitudes: list[float] = Field(default_factory=lambda: [10.0])
    control_amplitude: float = Field(default=0.1, ge=0)


@dataclass(config=Strict)
class MaterialsConfig:
    omega: float = Field(default=1.0, gt=0)
    amplitude: float = Field(default=1.0, gt=0)


@dataclass(config=Strict)
class ExperimentConfig:
    selector: Selector = "run"
    sweep_eps: SweepEpsConfig = Field(default_factory=SweepEpsConfig)
    refine: RefineConfig = Field(default_factory=RefineConfig)
    twins: TwinsConfig = Field(default_factory=TwinsConfig)
    picard: PicardRunConfig = Field(default_factory=PicardRunConfig)
    blowup: BlowupConfig = Field(default_factory=BlowupConfig)
    materials: MaterialsConfig = Field(default_factory=MaterialsConfig)


@dataclass(config=Strict)
class OutputConfig:
    directory: Optional[str] = None
    formats: list[Literal["csv", "json"]] = Field(
        default_factory=lambda: ["csv", "json"]
    )
    snapshot_cadence: int = Field(default=100, ge=1)
    snapshots: bool = True


@dataclass(config=Strict)
class RunConfig:
    """Complete, validated description of one CLI invocation."""

    material: MaterialConfig
    domain: DomainConfig = Field(default_factory=DomainConfig)
    grid: GridConfig = Field(default_factory=GridConfig)
    initial: InitialDataConfig = Field(default_factory=InitialDataConfig)
    evolution: EvolutionConfig = Field(default_factory=EvolutionConfig)
    monitors: MonitorConfig = Field(default_factory=MonitorConfig)
    experiment: ExperimentConfig = Field(default_factory=ExperimentConfig)
    output: OutputConfig = Field(default_factory=OutputConfig)
    seed: int = Field(default=0, ge=0, lt=2**64)
