"""Pydantic models for parameters, reports, configs and manifests.

Array-bearing domain objects (grids, fields, profiles, solver states) live next
to the code that builds them; everything here is plain data that round-trips
through JSON.
"""

from typing import Annotated, Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, BeforeValidator, ConfigDict, Field, model_validator

from .config import settings

# Type aliases for strict field validation
Convexity = Literal["convex", "concave", "linear", "indefinite"]
FitStatus = Literal["pass", "fail", "fit-unavailable"]
CommandName = Literal["profile-check", "scan", "lin-evolve", "nonlinear", "threshold", "selftest"]
ForcingKind = Literal["none", "decaying-sine"]


class ProblemParams(BaseModel):
    """The scalar dials every solver consumes."""

    nu: float = Field(..., description="Viscosity, positive")
    k: int = Field(..., description="Streamwise wavenumber")
    lam: float = Field(0.0, description="Real spectral parameter lambda")
    o_term: complex = Field(0j, description="Complex shift o(nu, k)")
    eps1: float = Field(settings.EPS1, description="Smallness constant bounding |o_term|")
    eps_rate: float = Field(0.0, description="Exponential weight rate epsilon")

    @model_validator(mode="after")
    def validate_physics(self) -> "ProblemParams":
        if self.nu <= 0:
            raise ValueError("nu must be positive")
        if self.eps_rate < 0:
            raise ValueError("eps_rate must be nonnegative")
        cap = self.eps1 * (self.nu * self.k * self.k) ** (1.0 / 3.0)
        if abs(self.o_term) > cap * (1.0 + 1e-12):
            raise ValueError(f"|o_term| = {abs(self.o_term):g} exceeds eps1 (nu k^2)^(1/3) = {cap:g}")
        return self

    @property
    def layer_scale(self) -> float:
        """L = nu^(-1/3) |k|^(1/3)."""
        return self.nu ** (-1.0 / 3.0) * abs(self.k) ** (1.0 / 3.0)


class ConditionReport(BaseModel):
    """Outcome of checking a profile against the monotone single-convexity class."""

    profile: str
    passed: bool
    violated: List[str] = Field(default_factory=list, description="Human-readable violated clauses")
    c0: float
    C0: float
    convexity: Convexity
    h4norm: float


class RegularityReport(BaseModel):
    """Time-regularity of the heat-evolved profile between two times."""

    t: float
    s: float
    linf_diff: float = Field(..., description="max |U(t) - U(s)| over the nodes")
    d2_l2_diff: float = Field(..., description="L2 norm of U''(t) - U''(s)")
    bound_scale: float = Field(..., description="nu |t - s| times the H4 norm of the initial profile")
    linf_ratio: float
    d2_ratio: float


class HeatCertificate(BaseModel):
    """Structural bounds of U(t) at one time."""

    t: float
    c0: float
    C0: float
    convexity: Convexity
    d2_l2: float


class ScanRow(BaseModel):
    nu: float
    k: int
    bound_id: str
    sup_ratio: float
    argmax_lambda: float
    n_grid: int


class ScanFailure(BaseModel):
    nu: float
    k: int
    lam: float
    message: str


class FitRecord(BaseModel):
    """Power-law fit of one bound family at fixed k over the viscosity sweep."""

    bound_id: str
    k: int
    fitted_exponent: Optional[float] = None
    predicted_exponent: float = 0.0
    residual_exponent: Optional[float] = None
    r2: Optional[float] = None
    admissible_range: Tuple[float, float]
    n_points: int
    constant_spread: Optional[float] = Field(
        None, description="max/min of the measured constants across the sweep"
    )
    status: FitStatus

    @property
    def passed(self) -> bool:
        return self.status == "pass"


class ScanReport(BaseModel):
    profile_id: str
    nu_grid: List[float]
    k_grid: List[int]
    bound_ids: List[str]
    lambda_policy: str
    rows: List[ScanRow] = Field(default_factory=list)
    fits: List[FitRecord] = Field(default_factory=list)
    failures: List[ScanFailure] = Field(default_factory=list)
    spikes: List[str] = Field(default_factory=list, description="(nu, k) pairs with lambda spikes")


class TrajectorySample(BaseModel):
    t: float
    norm_om_L2: float
    norm_u_inf: float
    weighted_om: float
    norm_u_L2: float


class DecayFit(BaseModel):
    rate: float
    r2: float
    decaying: bool
    window: Tuple[float, float]


class SplitSample(BaseModel):
    t: float
    discrepancy: float
    damping: float


class ModeLedger(BaseModel):
    """The four terms of E_k for one wavenumber (k = 0 uses only ``sup_om``)."""

    k: int
    inviscid_damping: float = 0.0
    sup_u_inf: float = 0.0
    sup_weighted_om: float = 0.0
    enhanced_dissipation: float = 0.0
    sup_om: float = 0.0

    @property
    def total(self) -> float:
        if self.k == 0:
            return self.sup_om
        return self.inviscid_damping + self.sup_u_inf + self.sup_weighted_om + self.enhanced_dissipation


class EnergyLedger(BaseModel):
    modes: List[ModeLedger] = Field(default_factory=list)
    zero_forcing_L2L2: float = Field(0.0, description="Squared L2L2 norm of the zero-mode forcing")

    @property
    def total(self) -> float:
        """E_0 + 2 sum_{k >= 1} E_k (the conjugate modes contribute equally)."""
        return sum(m.total if m.k == 0 else 2.0 * m.total for m in self.modes)


class PerturbationSpec(BaseModel):
    """Initial perturbation pattern: clamped envelopes y^p (1 - y)^p times random cubics."""

    modes: List[int] = Field(default_factory=lambda: [1], description="Excited wavenumbers k >= 1")
    seed: int = 0
    envelope_power: int = Field(2, description="Power p of the wall envelope; p >= 2 keeps no-slip")


class ThresholdRun(BaseModel):
    amplitude: float
    stable: bool
    resolved: bool
    max_growth: float
    final_decay: float


class ThresholdRecord(BaseModel):
    nu: float
    A_star: float
    runs: List[ThresholdRun] = Field(default_factory=list)
    flags: List[str] = Field(default_factory=list)


class BetaFit(BaseModel):
    slope: float
    stderr: float
    r2: float
    flags: List[str] = Field(default_factory=list)


class ThresholdResult(BaseModel):
    nu_list: List[float]
    records: List[ThresholdRecord] = Field(default_factory=list)
    beta_fit: Optional[BetaFit] = None


class ProfileSpec(BaseModel):
    """A named preset with its parameters."""

    name: str = Field("couette", description="Preset name, e.g. 'sinus-concave'")
    params: Dict[str, float] = Field(default_factory=dict)


def _coerce_profile_spec(v):
    """Accept a bare preset name."""
    if isinstance(v, str):
        return {"name": v, "params": {}}
    return v


ProfileField = Annotated[ProfileSpec, BeforeValidator(_coerce_profile_spec)]


class ExperimentConfig(BaseModel):
    """Validated experiment description; defaults come from the settings."""

    model_config = ConfigDict(extra="forbid")

    command: CommandName = "scan"
    profile: ProfileField = Field(default_factory=ProfileSpec)
    nu_list: List[float] = Field(default_factory=lambda: [1e-4])
    k_list: List[int] = Field(default_factory=lambda: [1])
    nodes: Optional[int] = Field(None, description="Chebyshev nodes; None applies the resolution policy")
    bounds: List[str] = Field(default_factory=lambda: ["noslip_FH-1"])
    horizon: Optional[float] = Field(None, description="None means horizon_factor * nu^(-1/3)")
    horizon_factor: float = 5.0
    forcing: ForcingKind = "none"
    amplitude: Optional[float] = None
    c_bracket: Tuple[float, float] = (0.01, 1.0)
    modes: List[int] = Field(default_factory=lambda: [1])
    seed: int = 0
    eps_rate: Optional[float] = Field(None, description="None calibrates epsilon_0 on Couette")
    o_fraction: float = Field(0.0, description="|o| as a fraction of eps1 (nu k^2)^(1/3)")
    eps1: float = settings.EPS1
    jobs: int = settings.JOBS
    checkpoint_every: int = 0
    exponent_tolerance: float = settings.EXPONENT_TOLERANCE

    @model_validator(mode="before")
    @classmethod
    def accept_scalar_nu(cls, data):
        """``nu = 1e-4`` is shorthand for ``nu_list = [1e-4]``."""
        if isinstance(data, dict) and "nu" in data:
            data = dict(data)
            nu = data.pop("nu")
            data.setdefault("nu_list", [nu])
        return data


class RunManifest(BaseModel):
    command_line: List[str]
    config_hash: str
    profile: ProfileSpec
    grid_sizes: Dict[str, int] = Field(default_factory=dict)
    tolerances: Dict[str, float] = Field(default_factory=dict)
    seed: int = 0
    artifact_version: int = settings.ARTIFACT_VERSION
    wall_clock_seconds: float = 0.0
    outputs: List[str] = Field(default_factory=list)


class Table(BaseModel):
    columns: List[str]
    rows: List[List[float | int | str]] = Field(default_factory=list)


class ReportBundle(BaseModel):
    """What an experiment hands to the report writer."""

    tables: Dict[str, Table] = Field(default_factory=dict)
    summary: Dict[str, object] = Field(default_factory=dict)
    checks: Dict[str, bool] = Field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(self.checks.values())
