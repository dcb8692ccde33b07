"""Background shear flows U(t, y) and the structural checks they must pass.

A profile carries its values and first four y-derivatives at the grid nodes,
plus certified bounds c0 <= dU/dy <= C0. Presets are evaluated from closed
forms, so they need no differentiation matrices and can live on very fine
grids. Tabulated profiles are differentiated spectrally.

Time evolution solves dU/dt = nu d^2U/dy^2 with the wall values of U fixed.
The linear interpolant of the wall values is steady; the remainder is
expanded in sin(m pi y) and each mode is damped exactly by
exp(-nu m^2 pi^2 t), so downstream solvers see no time-integration error.
"""

import hashlib
import logging
import math
from typing import Callable, Dict, Iterable, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy.fft import dst

from .config import settings
from .errors import InvalidArgumentError
from .grid_spectral import ChebGrid
from .models import ConditionReport, Convexity, HeatCertificate, RegularityReport

logger = logging.getLogger(__name__)

# Relative tolerance of the sign checks on d2U.
SIGN_TOLERANCE = 1e-10
# Relative tolerance of the wall condition d2U(0) = d2U(1) = 0 (scaled by the H4 norm).
WALL_CURVATURE_TOLERANCE = 1e-8

Derivatives = Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]


class ShearProfile(BaseModel):
    """Background flow with derivatives and certified slope bounds."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    name: str
    grid: ChebGrid
    u: np.ndarray
    du: np.ndarray
    d2u: np.ndarray
    d3u: np.ndarray
    d4u: np.ndarray
    c0: float = Field(..., description="Certified lower bound of dU/dy")
    C0: float = Field(..., description="Certified upper bound of dU/dy")
    convexity: Convexity
    h4norm: float
    time: float = 0.0
    params: Dict[str, float] = Field(default_factory=dict)
    roundoff: float = Field(0.0, description="Absolute noise floor of the tabulated d2u")

    @property
    def wall_values(self) -> Tuple[float, float]:
        return float(self.u[0]), float(self.u[-1])

    @property
    def speed(self) -> float:
        """Advection speed used in the CFL checks."""
        return max(self.C0, float(np.max(np.abs(self.u))))

    def fingerprint(self) -> str:
        digest = hashlib.sha256()
        digest.update(self.name.encode())
        digest.update(str(self.grid.n).encode())
        digest.update(np.ascontiguousarray(self.u, dtype=float).tobytes())
        digest.update(repr(self.time).encode())
        return digest.hexdigest()[:16]


# --- Presets ---------------------------------------------------------------------


def _couette(y: np.ndarray) -> Derivatives:
    zero = np.zeros_like(y)
    return y.copy(), np.ones_like(y), zero, zero.copy(), zero.copy()


def _sinus(sign: float) -> Callable[..., Derivatives]:
    def evaluate(y: np.ndarray, eps: float) -> Derivatives:
        e = sign * eps
        s = np.sin(math.pi * y)
        c = np.cos(math.pi * y)
        pi = math.pi
        return y + e * s, 1.0 + e * pi * c, -e * pi**2 * s, -e * pi**3 * c, e * pi**4 * s

    return evaluate


def _quartic_concave(y: np.ndarray, eps: float) -> Derivatives:
    return (
        y - eps * (y**3 - y**4 / 2.0),
        1.0 - eps * (3.0 * y**2 - 2.0 * y**3),
        -6.0 * eps * y * (1.0 - y),
        -eps * (6.0 - 12.0 * y),
        np.full_like(y, 12.0 * eps),
    )


def _log_cosh(z: np.ndarray) -> np.ndarray:
    return np.logaddexp(z, -z) - math.log(2.0)


def _tanh_monotone(y: np.ndarray, a: float, beta: float) -> Derivatives:
    z = beta * (y - 0.5)
    sech2 = 1.0 / np.cosh(z) ** 2
    tanh = np.tanh(z)
    s = 1.0 / math.cosh(beta / 2.0) ** 2
    lc_wall = float(_log_cosh(np.array(beta / 2.0)))
    u = y + a * ((_log_cosh(z) - lc_wall) / beta**2 - s * ((y - 0.5) ** 2 - 0.25) / 2.0)
    du = 1.0 + a * (tanh / beta - s * (y - 0.5))
    d2u = a * (sech2 - s)
    d3u = -2.0 * a * beta * sech2 * tanh
    d4u = -2.0 * a * beta**2 * sech2 * (sech2 - 2.0 * tanh**2)
    return u, du, d2u, d3u, d4u


# name -> (evaluator, default parameters)
PRESETS: Dict[str, Tuple[Callable[..., Derivatives], Dict[str, float]]] = {
    "couette": (_couette, {}),
    "sinus-concave": (_sinus(1.0), {"eps": 0.1}),
    "sinus-convex": (_sinus(-1.0), {"eps": 0.1}),
    "quartic-concave": (_quartic_concave, {"eps": 0.3}),
    "tanh-monotone": (_tanh_monotone, {"a": 1.0, "beta": 4.0}),
}


def preset_names() -> List[str]:
    return sorted(PRESETS)


# --- Assembly --------------------------------------------------------------------


def _certify_slope_bounds(
    grid: ChebGrid,
    du: np.ndarray,
    d2u: np.ndarray,
    d3u: np.ndarray,
    du_at: Callable[[np.ndarray], np.ndarray],
) -> Tuple[float, float]:
    """Node min/max of du, refined by one Newton step at interior extrema."""
    c0 = float(np.min(du))
    C0 = float(np.max(du))
    y = grid.nodes
    inner = np.arange(1, grid.n - 1)
    is_min = (du[inner] <= du[inner - 1]) & (du[inner] <= du[inner + 1])
    is_max = (du[inner] >= du[inner - 1]) & (du[inner] >= du[inner + 1])
    candidates = inner[(is_min | is_max) & (d3u[inner] != 0.0)]
    if candidates.size == 0:
        return c0, C0
    y_star = y[candidates] - d2u[candidates] / d3u[candidates]
    keep = (y_star >= y[candidates - 1]) & (y_star <= y[candidates + 1])
    if np.any(keep):
        refined = np.real(du_at(y_star[keep]))
        c0 = min(c0, float(np.min(refined)))
        C0 = max(C0, float(np.max(refined)))
    return c0, C0


def _classify_convexity(du: np.ndarray, d2u: np.ndarray, roundoff: float) -> Convexity:
    scale = max(float(np.max(np.abs(du))), float(np.max(np.abs(d2u))))
    tol = SIGN_TOLERANCE * scale + roundoff
    if float(np.max(np.abs(d2u))) <= tol:
        return "linear"
    interior = d2u[1:-1]
    if np.all(interior >= -tol):
        return "convex"
    if np.all(interior <= tol):
        return "concave"
    return "indefinite"


def _assemble(
    grid: ChebGrid,
    name: str,
    derivatives: Derivatives,
    du_at: Callable[[np.ndarray], np.ndarray],
    params: Optional[Dict[str, float]] = None,
    time: float = 0.0,
    roundoff: float = 0.0,
) -> ShearProfile:
    u, du, d2u, d3u, d4u = (np.asarray(a, dtype=float) for a in derivatives)
    c0, C0 = _certify_slope_bounds(grid, du, d2u, d3u, du_at)
    h4 = math.sqrt(sum(float(grid.quad @ (a * a)) for a in (u, du, d2u, d3u, d4u)))
    return ShearProfile(
        name=name,
        grid=grid,
        u=u,
        du=du,
        d2u=d2u,
        d3u=d3u,
        d4u=d4u,
        c0=c0,
        C0=C0,
        convexity=_classify_convexity(du, d2u, roundoff),
        h4norm=h4,
        time=time,
        params=dict(params or {}),
        roundoff=roundoff,
    )


def make_profile(name: str, grid: ChebGrid, **params: float) -> ShearProfile:
    """Evaluate a named preset on ``grid``."""
    if name not in PRESETS:
        raise InvalidArgumentError(f"Unknown profile preset '{name}'. Known: {', '.join(preset_names())}")
    evaluator, defaults = PRESETS[name]
    unknown = set(params) - set(defaults)
    if unknown:
        raise InvalidArgumentError(f"Preset '{name}' has no parameter(s) {sorted(unknown)}")
    merged = {**defaults, **params}
    derivatives = evaluator(grid.nodes, **merged)

    def du_at(ys: np.ndarray) -> np.ndarray:
        return evaluator(np.asarray(ys, dtype=float), **merged)[1]

    return _assemble(grid, name, derivatives, du_at, params=merged)


def profile_from_values(grid: ChebGrid, u: np.ndarray, name: str = "tabulated") -> ShearProfile:
    """Build a profile from node values, differentiating spectrally."""
    u = np.asarray(u, dtype=float)
    if u.shape != (grid.n,):
        raise InvalidArgumentError(f"Profile has {u.shape[0]} values, grid has {grid.n} nodes")
    du = grid.d1 @ u
    derivatives = (u, du, grid.d2 @ u, grid.d3 @ u, grid.d4 @ u)
    # d2 amplifies rounding by roughly n^4
    roundoff = np.finfo(float).eps * grid.n**4 * max(1.0, float(np.max(np.abs(u))))

    def du_at(ys: np.ndarray) -> np.ndarray:
        return np.real(grid.interpolate(du, ys))

    return _assemble(grid, name, derivatives, du_at, roundoff=roundoff)


def profile_on_grid(profile: ShearProfile, grid: ChebGrid) -> ShearProfile:
    """The same flow on another grid: presets are re-evaluated, others interpolated."""
    if profile.grid.n == grid.n:
        return profile
    if profile.name in PRESETS and profile.time == 0:
        return make_profile(profile.name, grid, **profile.params)
    values = np.real(profile.grid.interpolate(profile.u, grid.nodes))
    return profile_from_values(grid, values, name=profile.name)


def validate_condition_M(profile: ShearProfile) -> ConditionReport:
    """Check monotonicity, single-signed curvature and flat curvature at the walls."""
    violated = []
    if not math.isfinite(profile.h4norm):
        violated.append("H4 norm must be finite")
    if not profile.c0 > 0.0:
        violated.append(f"dU/dy must be bounded below by c0 > 0 (found c0 = {profile.c0:.6g})")
    if profile.convexity == "indefinite":
        violated.append("d2U/dy2 must have a single sign (profile is neither convex nor concave)")
    wall_tol = WALL_CURVATURE_TOLERANCE * profile.h4norm + profile.roundoff
    for label, value in (("y=0", profile.d2u[0]), ("y=1", profile.d2u[-1])):
        if abs(value) > wall_tol:
            violated.append(f"d2U/dy2 must vanish at {label} (found {value:.3g})")
    return ConditionReport(
        profile=profile.name,
        passed=not violated,
        violated=violated,
        c0=profile.c0,
        C0=profile.C0,
        convexity=profile.convexity,
        h4norm=profile.h4norm,
    )


# --- Heat evolution --------------------------------------------------------------


class HeatFlow:
    """Exact-in-time heat evolution of a profile with fixed wall values.

    The sine coefficients are computed once, so evaluating U(t) at many times
    (as the time steppers do every step) costs a few matrix-vector products.
    A frozen flow always returns the initial profile.
    """

    def __init__(self, profile: ShearProfile, nu: float, modes: Optional[int] = None, frozen: bool = False):
        if nu < 0:
            raise InvalidArgumentError(f"nu must be nonnegative, got {nu}")
        self.profile = profile
        self.nu = nu
        self.frozen = frozen
        modes = modes or settings.HEAT_MODES
        grid = profile.grid
        y = grid.nodes
        u_left, u_right = profile.wall_values
        self._offset = u_left
        self._slope = u_right - u_left
        remainder = profile.u - (u_left + self._slope * y)

        # sample on a uniform grid and take DST-I coefficients b_m
        samples = 4 * modes
        y_uniform = np.arange(1, samples) / samples
        interior = np.real(grid.interpolate(remainder, y_uniform))
        self.coeffs = dst(interior, type=1)[:modes] / samples
        self.wavenumbers = math.pi * np.arange(1, modes + 1)
        phase = np.outer(y, self.wavenumbers)
        self._sin = np.sin(phase)
        self._cos = np.cos(phase)

    def damped(self, t: float) -> np.ndarray:
        return self.coeffs * np.exp(-self.nu * self.wavenumbers**2 * t)

    def fields(self, t: float) -> Tuple[np.ndarray, np.ndarray]:
        """U(t) and d2U/dy2(t) at the nodes, without re-certifying the profile."""
        if t == 0 or self.nu == 0 or self.frozen:
            return self.profile.u, self.profile.d2u
        b = self.damped(t)
        y = self.profile.grid.nodes
        u = self._offset + self._slope * y + self._sin @ b
        return u, -(self._sin @ (b * self.wavenumbers**2))

    def at(self, t: float) -> ShearProfile:
        if t < 0:
            raise InvalidArgumentError(f"Time must be nonnegative, got {t}")
        if t == 0 or self.nu == 0 or self.frozen:
            return self.profile
        b = self.damped(t)
        kk = self.wavenumbers
        y = self.profile.grid.nodes
        derivatives = (
            self._offset + self._slope * y + self._sin @ b,
            self._slope + self._cos @ (b * kk),
            -(self._sin @ (b * kk**2)),
            -(self._cos @ (b * kk**3)),
            self._sin @ (b * kk**4),
        )
        slope = self._slope

        def du_at(ys: np.ndarray) -> np.ndarray:
            return slope + np.cos(np.outer(np.atleast_1d(ys), kk)) @ (b * kk)

        return _assemble(
            self.profile.grid,
            self.profile.name,
            derivatives,
            du_at,
            params=self.profile.params,
            time=self.profile.time + t,
        )


def heat_evolve(profile: ShearProfile, nu: float, t: float) -> ShearProfile:
    """Evolve ``profile`` by the heat equation for time ``t`` (fixed wall values)."""
    if nu < 0 or t < 0:
        raise InvalidArgumentError(f"heat_evolve needs nu >= 0 and t >= 0 (got nu={nu}, t={t})")
    if t == 0:
        return profile
    return HeatFlow(profile, nu).at(t)


def regularity_check(profile: ShearProfile, nu: float, t: float, s: float) -> RegularityReport:
    """Measure |U(t) - U(s)| and |U''(t) - U''(s)| against nu |t - s| ||U^in||_H4."""
    if t < 0 or s < 0:
        raise InvalidArgumentError(f"Times must be nonnegative (got t={t}, s={s})")
    flow = HeatFlow(profile, nu)
    u_t, u_s = flow.at(t), flow.at(s)
    grid = profile.grid
    linf = float(np.max(np.abs(u_t.u - u_s.u)))
    d2 = grid.l2(u_t.d2u - u_s.d2u)
    scale = nu * abs(t - s) * profile.h4norm
    return RegularityReport(
        t=t,
        s=s,
        linf_diff=linf,
        d2_l2_diff=d2,
        bound_scale=scale,
        linf_ratio=linf / scale if scale > 0 else 0.0,
        d2_ratio=d2 / scale if scale > 0 else 0.0,
    )


def certify_heat_flow(profile: ShearProfile, nu: float, times: Iterable[float]) -> List[HeatCertificate]:
    """Re-certify c0, C0, convexity and ||U''|| of U(t) at each requested time."""
    flow = HeatFlow(profile, nu)
    certificates = []
    for t in times:
        current = flow.at(t)
        certificates.append(
            HeatCertificate(
                t=t,
                c0=current.c0,
                C0=current.C0,
                convexity=current.convexity,
                d2_l2=profile.grid.l2(current.d2u),
            )
        )
    return certificates
