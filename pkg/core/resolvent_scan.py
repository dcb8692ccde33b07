"""Sweeps of resolvent norm ratios over (nu, k, lambda) and power-law fits.

Every catalogued bound is evaluated as a ratio LHS / RHS in which all powers
of nu and k predicted for the estimate are already included. A correct
scaling therefore shows up as a ratio that is flat in nu, and the fitted
log-log slope of the sup over lambda is directly the residual exponent.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from functools import cached_property
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict
from scipy.stats import linregress

from .config import settings
from .errors import FitUnavailableError, InvalidArgumentError, SolverFailureError
from .grid_spectral import build_grid
from .models import FitRecord, ProblemParams, ScanFailure, ScanReport, ScanRow
from .os_resolvent import ResolventSolver, kernel_coefficients, make_weight, required_nodes
from .persistence import OperatorCache
from .shear_profile import ShearProfile, profile_on_grid

logger = logging.getLogger(__name__)

# Points of the uniform part of the lambda grid and of each wall cluster.
UNIFORM_LAMBDAS = 48
WALL_LAMBDAS = 16
# A lambda sample is a spike when it exceeds both neighbours by this factor.
SPIKE_FACTOR = 1e3


class Forcing(BaseModel):
    """A named right-hand side F(y), possibly depending on lambda via the critical layer."""

    name: str
    evaluate: Callable[[ShearProfile, float, float], np.ndarray]


def _critical_point(profile: ShearProfile, lam: float) -> float:
    # U is increasing, so V(y) = lambda is found by monotone interpolation
    return float(np.interp(lam, profile.u, profile.grid.nodes))


def default_forcing_family() -> List[Forcing]:
    """sin(pi y), a smoothed sign across the centre and a bump at the critical layer."""
    return [
        Forcing(name="sine", evaluate=lambda p, lam, d0: np.sin(math.pi * p.grid.nodes)),
        Forcing(name="smoothed-sign", evaluate=lambda p, lam, d0: np.tanh((p.grid.nodes - 0.5) / d0)),
        Forcing(
            name="critical-bump",
            evaluate=lambda p, lam, d0: np.exp(-(((p.grid.nodes - _critical_point(p, lam)) / d0) ** 2)),
        ),
    ]


def zero_forcing_family() -> List[Forcing]:
    return [Forcing(name="zero", evaluate=lambda p, lam, d0: np.zeros(p.grid.n))]


class BoundContext:
    """Lazily solved quantities for one (nu, k, lambda, F)."""

    def __init__(self, solver: ResolventSolver, F: np.ndarray):
        self.solver = solver
        self.grid = solver.grid
        self.params = solver.params
        self.F = F
        self.nu = self.params.nu
        self.k = abs(self.params.k)
        self.lam = self.params.lam
        self.V0, self.V1 = solver.profile.wall_values

    @cached_property
    def F_L2(self) -> float:
        return self.grid.l2(self.F)

    @cached_property
    def F_H1(self) -> float:
        return self.grid.h1k(self.F, self.k)

    @cached_property
    def F_Hm1(self) -> float:
        return self.grid.h1k_dual(self.F, self.k)

    @cached_property
    def navier(self) -> Tuple[np.ndarray, np.ndarray]:
        return self.solver.solve_navier_slip(self.F)

    @cached_property
    def noslip_w(self) -> np.ndarray:
        return self.solver.solve_noslip(self.F)[0]

    @cached_property
    def coefficients(self) -> Tuple[complex, complex]:
        return kernel_coefficients(self.grid, self.navier[0], self.params.k)

    @cached_property
    def rho(self) -> np.ndarray:
        return make_weight(self.params, self.grid).values

    def weighted_l2(self, f: np.ndarray) -> float:
        return self.grid.l2(np.sqrt(self.rho) * f)

    def wall_factor(self, wall: int, power: float) -> float:
        V = self.V0 if wall == 0 else self.V1
        return (1.0 + self.k * abs(self.lam - V)) ** power


def _ratio(lhs: float, rhs: float) -> float:
    return lhs / rhs if rhs > 0 else 0.0


def _w_l2_navier(c: BoundContext) -> float:
    w_na, phi_na = c.navier
    g = c.grid
    lhs = (
        c.nu ** (1 / 6) * c.k ** (4 / 3) * g.h1k(phi_na, c.k)
        + c.nu ** (1 / 3) * c.k ** (2 / 3) * g.l2(w_na)
        + c.nu ** (2 / 3) * c.k ** (1 / 3) * g.h1k(w_na, c.k)
    )
    return _ratio(lhs, c.F_L2)


def _w_h1_navier(c: BoundContext) -> float:
    w_na, _ = c.navier
    g = c.grid
    shift = c.solver.profile.u - c.lam
    lhs = (
        c.nu ** (1 / 6) * c.k ** (4 / 3) * g.l2(w_na)
        + c.nu ** (1 / 12) * c.k ** (5 / 3) * float(g.quad @ np.abs(w_na))
        + c.k**2 * g.l2(shift * w_na)
    )
    return _ratio(lhs, c.F_H1)


def _w_hm1_navier(c: BoundContext) -> float:
    w_na, phi_na = c.navier
    g = c.grid
    lhs = (
        c.nu ** (1 / 2) * c.k * g.h1k(phi_na, c.k)
        + c.nu ** (2 / 3) * c.k ** (1 / 3) * g.l2(w_na)
        + c.nu * g.h1k(w_na, c.k)
    )
    return _ratio(lhs, c.F_Hm1)


def _corrector(which: int) -> Callable[[BoundContext], float]:
    def evaluate(c: BoundContext) -> float:
        w_j, _ = c.solver.corrector(which)
        rhs = c.nu ** (-1 / 4) * c.wall_factor(which - 1, 0.25)
        return c.grid.l2(w_j) / rhs

    return evaluate


def _corrector_weighted(c: BoundContext) -> float:
    w1, _ = c.solver.corrector(1)
    w2, _ = c.solver.corrector(2)
    return (c.weighted_l2(w1) + c.weighted_l2(w2)) / math.sqrt(c.params.layer_scale)


def _coeff(norm_name: str, nu_power: float, k_power: float) -> Callable[[BoundContext], float]:
    def evaluate(c: BoundContext) -> float:
        c1, c2 = c.coefficients
        rhs = c.nu**nu_power * c.k**k_power * getattr(c, norm_name)
        return _ratio(abs(c1) + abs(c2), rhs)

    return evaluate


def _coeff_weighted(power: float, norm_name: str, nu_power: float, k_power: float) -> Callable[[BoundContext], float]:
    def evaluate(c: BoundContext) -> float:
        c1, c2 = c.coefficients
        lhs = c.wall_factor(0, power) * abs(c1) + c.wall_factor(1, power) * abs(c2)
        return _ratio(lhs, c.nu**nu_power * c.k**k_power * getattr(c, norm_name))

    return evaluate


def _noslip(norm_name: str, nu_power: float, k_power: float) -> Callable[[BoundContext], float]:
    def evaluate(c: BoundContext) -> float:
        w = c.noslip_w
        lhs = c.nu ** (1 / 4) * c.k ** (1 / 2) * c.grid.l2(w) + c.nu ** (1 / 6) * c.k ** (1 / 3) * c.weighted_l2(w)
        return _ratio(lhs, c.nu**nu_power * c.k**k_power * getattr(c, norm_name))

    return evaluate


class BoundSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    bound_id: str
    description: str
    uses_forcing: bool = True
    evaluate: Callable[[BoundContext], float]


BOUNDS: Dict[str, BoundSpec] = {
    spec.bound_id: spec
    for spec in [
        BoundSpec(
            bound_id="wL2_navier",
            description="nu^1/6|k|^4/3||u_Na|| + nu^1/3|k|^2/3||w_Na|| + nu^2/3|k|^1/3||(d,k)w_Na|| <~ ||F||_L2",
            evaluate=_w_l2_navier,
        ),
        BoundSpec(
            bound_id="wH1_navier",
            description="nu^1/6|k|^4/3||w_Na|| + nu^1/12|k|^5/3||w_Na||_L1 + k^2||(V-lambda)w_Na|| <~ ||F||_H1k",
            evaluate=_w_h1_navier,
        ),
        BoundSpec(
            bound_id="wH-1_navier",
            description="nu^1/2|k|||u_Na|| + nu^2/3|k|^1/3||w_Na|| + nu||(d,k)w_Na|| <~ ||F||_H-1k",
            evaluate=_w_hm1_navier,
        ),
        BoundSpec(
            bound_id="corrector_w1",
            description="||w1|| <~ nu^-1/4 (1+|k(V(0)-lambda)|)^1/4",
            uses_forcing=False,
            evaluate=_corrector(1),
        ),
        BoundSpec(
            bound_id="corrector_w2",
            description="||w2|| <~ nu^-1/4 (1+|k(V(1)-lambda)|)^1/4",
            uses_forcing=False,
            evaluate=_corrector(2),
        ),
        BoundSpec(
            bound_id="corrector_weighted",
            description="||rho^1/2 w1|| + ||rho^1/2 w2|| <~ L^1/2",
            uses_forcing=False,
            evaluate=_corrector_weighted,
        ),
        BoundSpec(
            bound_id="coeff_L2",
            description="|c1| + |c2| <~ nu^-1/4|k|^-1 ||F||_L2",
            evaluate=_coeff("F_L2", -1 / 4, -1.0),
        ),
        BoundSpec(
            bound_id="coeff_H1",
            description="|c1| + |c2| <~ nu^-1/12|k|^-5/3 ||F||_H1k",
            evaluate=_coeff("F_H1", -1 / 12, -5 / 3),
        ),
        BoundSpec(
            bound_id="coeff_H-1",
            description="|c1| + |c2| <~ nu^-7/12|k|^-2/3 ||F||_H-1k",
            evaluate=_coeff("F_Hm1", -7 / 12, -2 / 3),
        ),
        BoundSpec(
            bound_id="noslip_FL2",
            description="nu^1/4|k|^1/2||w|| + nu^1/6|k|^1/3||rho^1/2 w|| <~ nu^-1/6|k|^-1/3 ||F||_L2",
            evaluate=_noslip("F_L2", -1 / 6, -1 / 3),
        ),
        BoundSpec(
            bound_id="noslip_FH1",
            description="nu^1/4|k|^1/2||w|| + nu^1/6|k|^1/3||rho^1/2 w|| <~ nu^-1/12|k|^-7/6 ||F||_H1k",
            evaluate=_noslip("F_H1", -1 / 12, -7 / 6),
        ),
        BoundSpec(
            bound_id="noslip_FH-1",
            description="nu^1/4|k|^1/2||w|| + nu^1/6|k|^1/3||rho^1/2 w|| <~ nu^-1/2 ||F||_H-1k",
            evaluate=_noslip("F_Hm1", -1 / 2, 0.0),
        ),
        BoundSpec(
            bound_id="coeff_weighted_34",
            description="sum_j (1+|k(lambda-V(j))|)^3/4 |c_j| <~ nu^-1/2|k|^-1/2 ||F||_H-1k",
            evaluate=_coeff_weighted(0.75, "F_Hm1", -1 / 2, -1 / 2),
        ),
        BoundSpec(
            bound_id="coeff_weighted_34_L2",
            description="sum_j (1+|k(lambda-V(j))|)^3/4 |c_j| <~ nu^-1/6|k|^-5/6 ||F||_L2",
            evaluate=_coeff_weighted(0.75, "F_L2", -1 / 6, -5 / 6),
        ),
        BoundSpec(
            bound_id="coeff_weighted_H1",
            description="sum_j (1+|k(lambda-V(j))|) |c_j| <~ nu^-1/12|k|^-5/3 ||F||_H1k",
            evaluate=_coeff_weighted(1.0, "F_H1", -1 / 12, -5 / 3),
        ),
    ]
}


def bound_ids() -> List[str]:
    return list(BOUNDS)


def layer_width(nu: float, k: float) -> float:
    """delta_0 = nu^(1/3) |k|^(-1/3)."""
    return nu ** (1.0 / 3.0) * abs(k) ** (-1.0 / 3.0)


def lambda_grid(profile: ShearProfile, nu: float, k: float) -> np.ndarray:
    """Uniform over [V(0) - 2/|k|, V(1) + 2/|k|] plus clusters within 5 delta_0 of each wall value."""
    V0, V1 = profile.wall_values
    lo, hi = V0 - 2.0 / abs(k), V1 + 2.0 / abs(k)
    d0 = layer_width(nu, k)
    parts = [np.linspace(lo, hi, UNIFORM_LAMBDAS), np.array([V0, V1])]
    for V in (V0, V1):
        parts.append(np.clip(V + np.linspace(-5.0 * d0, 5.0 * d0, WALL_LAMBDAS), lo, hi))
    return np.unique(np.concatenate(parts))


LAMBDA_POLICY = (
    f"{UNIFORM_LAMBDAS} uniform points on [V(0)-2/|k|, V(1)+2/|k|], "
    f"{WALL_LAMBDAS} points within 5 delta_0 of V(0) and of V(1), plus V(0) and V(1)"
)


def fit_exponent(points: Sequence[Tuple[float, float]]) -> Tuple[float, float, float]:
    """Least-squares line through (log x, log y); returns (slope, intercept, r^2)."""
    pts = [(x, y) for x, y in points if x > 0 and y > 0 and math.isfinite(x) and math.isfinite(y)]
    if len(pts) < 3:
        raise FitUnavailableError(f"Need at least 3 positive points, got {len(pts)}")
    logx = np.log([p[0] for p in pts])
    logy = np.log([p[1] for p in pts])
    if np.ptp(logx) == 0:
        raise FitUnavailableError("All x values coincide")
    fit = linregress(logx, logy)
    r2 = 1.0 if np.ptp(logy) == 0 else float(fit.rvalue**2)
    return float(fit.slope), float(fit.intercept), r2


class _PairResult(BaseModel):
    rows: List[ScanRow]
    failures: List[ScanFailure]
    spike: Optional[str] = None


def _find_spikes(values: List[float]) -> bool:
    for i in range(1, len(values) - 1):
        neighbours = max(values[i - 1], values[i + 1])
        if values[i] > SPIKE_FACTOR * neighbours:
            return True
    return False


def _scan_pair(
    specs: List[BoundSpec],
    profile: ShearProfile,
    nu: float,
    k: int,
    family: List[Forcing],
    lambdas: np.ndarray,
    o_fraction: float,
    cache: Optional[OperatorCache],
) -> _PairResult:
    n = max(profile.grid.n, required_nodes(nu, k))
    local = profile_on_grid(profile, build_grid(n))
    d0 = layer_width(nu, k)
    o_term = o_fraction * settings.EPS1 * (nu * k * k) ** (1.0 / 3.0)
    best = {spec.bound_id: (0.0, float(lambdas[0])) for spec in specs}
    failures = []
    navier_norms = []
    for lam in lambdas:
        lam = float(lam)
        params = ProblemParams(nu=nu, k=k, lam=lam, o_term=o_term)
        try:
            solver = ResolventSolver(params, local, cache)
            first = None
            for forcing in family:
                ctx = BoundContext(solver, np.asarray(forcing.evaluate(local, lam, d0), dtype=complex))
                first = first or ctx
                for spec in specs:
                    if not spec.uses_forcing and ctx is not first:
                        continue
                    ratio = float(spec.evaluate(ctx))
                    if ratio > best[spec.bound_id][0]:
                        best[spec.bound_id] = (ratio, lam)
            if first is not None and first.F_L2 > 0:
                navier_norms.append(local.grid.l2(first.navier[0]))
        except SolverFailureError as e:
            logger.warning(str(e))
            failures.append(ScanFailure(nu=nu, k=k, lam=lam, message=str(e)))

    rows = [
        ScanRow(nu=nu, k=k, bound_id=spec.bound_id, sup_ratio=best[spec.bound_id][0],
                argmax_lambda=best[spec.bound_id][1], n_grid=n)
        for spec in specs
    ]
    spike = f"nu={nu:g},k={k}" if _find_spikes(navier_norms) else None
    logger.info(f"✓ Scanned nu={nu:g}, k={k} on {n} nodes ({len(lambdas)} lambdas)")
    return _PairResult(rows=rows, failures=failures, spike=spike)


def _fit_bound(bound_id: str, k: int, rows: List[ScanRow], failed_nus: set, tolerance: float) -> FitRecord:
    valid = [r for r in rows if r.bound_id == bound_id and r.k == k and r.nu not in failed_nus and r.sup_ratio > 0]
    admissible = (-tolerance, tolerance)
    try:
        slope, _, r2 = fit_exponent([(r.nu, r.sup_ratio) for r in valid])
    except FitUnavailableError:
        return FitRecord(
            bound_id=bound_id, k=k, admissible_range=admissible, n_points=len(valid), status="fit-unavailable"
        )
    ratios = [r.sup_ratio for r in valid]
    spread = max(ratios) / min(ratios)
    passed = abs(slope) <= tolerance and spread <= settings.CONSTANT_STABILITY_FACTOR
    if r2 < settings.MIN_FIT_R2:
        logger.warning(f"Fit of {bound_id} at k={k} has r^2 = {r2:.3f}")
    return FitRecord(
        bound_id=bound_id,
        k=k,
        fitted_exponent=slope,
        predicted_exponent=0.0,
        residual_exponent=slope,
        r2=r2,
        admissible_range=admissible,
        n_points=len(valid),
        constant_spread=spread,
        status="pass" if passed else "fail",
    )


def scan(
    bound_id: Union[str, Sequence[str]],
    profile: ShearProfile,
    nu_grid: Sequence[float],
    k_grid: Sequence[int],
    F_family: Optional[List[Forcing]] = None,
    lambda_grid_fn: Optional[Callable[[ShearProfile, float, float], np.ndarray]] = None,
    o_fraction: float = 0.0,
    jobs: int = 1,
    tolerance: Optional[float] = None,
    cache: Optional[OperatorCache] = None,
) -> ScanReport:
    """Sup over lambda and F of each bound ratio on the (nu, k) grid, with exponent fits."""
    ids = [bound_id] if isinstance(bound_id, str) else list(bound_id)
    unknown = [b for b in ids if b not in BOUNDS]
    if unknown:
        raise InvalidArgumentError(f"Unknown bound id(s) {unknown}. Known: {', '.join(BOUNDS)}")
    if any(k == 0 for k in k_grid):
        raise InvalidArgumentError("Resolvent scans need k != 0")
    if any(nu <= 0 for nu in nu_grid):
        raise InvalidArgumentError("nu must be positive")
    specs = [BOUNDS[b] for b in ids]
    family = F_family if F_family is not None else default_forcing_family()
    grid_fn = lambda_grid_fn or lambda_grid
    tolerance = settings.EXPONENT_TOLERANCE if tolerance is None else tolerance

    pairs = [(nu, k) for k in k_grid for nu in nu_grid]
    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        futures = [
            pool.submit(_scan_pair, specs, profile, nu, k, family, grid_fn(profile, nu, k), o_fraction, cache)
            for nu, k in pairs
        ]
        results = [f.result() for f in futures]

    report = ScanReport(
        profile_id=profile.name,
        nu_grid=list(nu_grid),
        k_grid=list(k_grid),
        bound_ids=ids,
        lambda_policy=LAMBDA_POLICY,
    )
    for result in results:
        report.rows.extend(result.rows)
        report.failures.extend(result.failures)
        if result.spike:
            report.spikes.append(result.spike)

    for k in k_grid:
        failed_nus = {f.nu for f in report.failures if f.k == k}
        for b in ids:
            report.fits.append(_fit_bound(b, k, report.rows, failed_nus, tolerance))
    return report


def coefficient_decay(
    profile: ShearProfile, nu: float, k: int, forcing: Optional[Forcing] = None, points: int = 12
) -> FitRecord:
    """Slope of log|c1| against log(1 + |k(lambda - V(0))|) for lambda below the range."""
    n = max(profile.grid.n, required_nodes(nu, k))
    local = profile_on_grid(profile, build_grid(n))
    forcing = forcing or default_forcing_family()[0]
    V0, _ = local.wall_values
    d0 = layer_width(nu, k)
    samples = []
    for distance in np.geomspace(2.5, 250.0, points) / abs(k):
        lam = V0 - float(distance)
        solver = ResolventSolver(ProblemParams(nu=nu, k=k, lam=lam), local)
        w_na, _ = solver.solve_navier_slip(np.asarray(forcing.evaluate(local, lam, d0), dtype=complex))
        c1, _ = kernel_coefficients(local.grid, w_na, k)
        samples.append((1.0 + abs(k) * distance, abs(c1)))
    admissible = (-2.0, -0.70)
    try:
        slope, _, r2 = fit_exponent(samples)
    except FitUnavailableError:
        return FitRecord(bound_id="coeff_decay_c1", k=k, admissible_range=admissible, n_points=len(samples),
                         status="fit-unavailable")
    return FitRecord(
        bound_id="coeff_decay_c1",
        k=k,
        fitted_exponent=slope,
        predicted_exponent=-0.75,
        residual_exponent=slope + 0.75,
        r2=r2,
        admissible_range=admissible,
        n_points=len(samples),
        status="pass" if slope <= admissible[1] else "fail",
    )
