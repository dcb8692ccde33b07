"""Time stepping of the linearized vorticity equation for one Fourier mode.

    d_t w - nu (d^2 - k^2) w + ik U w - ik U'' psi = -ik f1 - d_y f2,
    (d^2 - k^2) psi = w,   psi = d_y psi = 0 at both walls.

Diffusion is Crank–Nicolson, everything else Adams–Bashforth 2 (Euler on the
first step). The clamped stream function needs four wall conditions while the
vorticity update is second order, so the update is solved with Dirichlet
vorticity data and two precomputed homogeneous solutions are added to make
d_y psi vanish at both walls (influence-matrix method).

U(t, y) follows the heat flow of the initial profile unless the state is
frozen. The space-time ledger accumulates the exponentially weighted norms
of the trajectory with trapezoidal quadrature in time.
"""

import logging
import math
from functools import lru_cache
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy.linalg import lu_factor, lu_solve
from scipy.stats import linregress

from .config import settings
from .errors import BlowUpError, InvalidArgumentError
from .grid_spectral import ChebGrid, ScalarField, build_grid
from .models import DecayFit, ProblemParams, SplitSample, TrajectorySample
from .shear_profile import HeatFlow, ShearProfile, make_profile

logger = logging.getLogger(__name__)

FieldLike = Union[ScalarField, np.ndarray, None]
ForcingSchedule = Callable[[float], Tuple[FieldLike, FieldLike]]

TRAJECTORY_SAMPLES = 100


def _values(field: FieldLike, n: int) -> np.ndarray:
    if field is None:
        return np.zeros(n, dtype=complex)
    values = field.values if isinstance(field, ScalarField) else np.asarray(field, dtype=complex)
    if values.shape != (n,):
        raise InvalidArgumentError(f"Forcing has shape {values.shape}, grid has {n} nodes")
    if not np.all(np.isfinite(values)):
        raise InvalidArgumentError("Forcing must be finite")
    return values


class ModeOperator:
    """Crank–Nicolson factors and influence-matrix data for one (n, nu, k, dt)."""

    def __init__(self, grid: ChebGrid, nu: float, k: float, dt: float):
        self.grid = grid
        self.k = k
        n = grid.n
        eye = np.eye(n)
        lap = grid.d2 - k * k * eye
        self.explicit = eye + 0.5 * dt * nu * lap
        implicit = eye - 0.5 * dt * nu * lap
        implicit[0, :] = 0.0
        implicit[0, 0] = 1.0
        implicit[-1, :] = 0.0
        implicit[-1, -1] = 1.0
        self.factor = lu_factor(implicit)

        # homogeneous updates carrying unit wall vorticity at y = 0 and y = 1
        unit = np.zeros((n, 2))
        unit[0, 0] = 1.0
        unit[-1, 1] = 1.0
        self.omega_walls = lu_solve(self.factor, unit)
        self.psi_walls = np.column_stack([grid.solve_helmholtz(k, self.omega_walls[:, j]) for j in range(2)])
        self.slope_rows = np.vstack([grid.d1[0, :], grid.d1[-1, :]])
        influence = self.slope_rows @ self.psi_walls
        self.influence_inv = np.linalg.inv(influence)

    def advance(self, omega: np.ndarray, increment: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Solve the CN system with explicit ``increment`` and restore d_y psi = 0."""
        rhs = self.explicit @ omega + increment
        rhs[0] = 0.0
        rhs[-1] = 0.0
        omega_p = lu_solve(self.factor, rhs)
        psi_p = self.grid.solve_helmholtz(self.k, omega_p)
        walls = -self.influence_inv @ (self.slope_rows @ psi_p)
        return omega_p + self.omega_walls @ walls, psi_p + self.psi_walls @ walls


@lru_cache(maxsize=64)
def mode_operator(n: int, nu: float, k: float, dt: float) -> ModeOperator:
    return ModeOperator(build_grid(n), nu, k, dt)


class LinState(BaseModel):
    """Vorticity and clamped stream function of one mode at one time."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    params: ProblemParams
    grid: ChebGrid
    omega: np.ndarray
    psi: np.ndarray
    time: float = 0.0
    heat: HeatFlow
    prev_explicit: Optional[np.ndarray] = Field(None, description="Explicit term of the previous step")

    @property
    def profile_t(self) -> ShearProfile:
        return self.heat.at(self.time)

    @property
    def u1(self) -> np.ndarray:
        return self.grid.d1 @ self.psi

    @property
    def u2(self) -> np.ndarray:
        return -1j * self.params.k * self.psi


def initial_state(params: ProblemParams, profile: ShearProfile, psi: FieldLike = None, frozen: bool = False) -> LinState:
    """State with vorticity (d^2 - k^2) psi of a clamped stream function ``psi``."""
    grid = profile.grid
    psi_values = _values(psi, grid.n)
    scale = max(1.0, float(np.max(np.abs(psi_values))))
    slopes = grid.d1[[0, -1], :] @ psi_values
    if abs(psi_values[0]) + abs(psi_values[-1]) > 1e-10 * scale or np.max(np.abs(slopes)) > 1e-6 * scale * grid.n:
        raise InvalidArgumentError("Initial stream function must satisfy psi = d_y psi = 0 at both walls")
    omega = grid.d2 @ psi_values - params.k**2 * psi_values
    return LinState(
        params=params,
        grid=grid,
        omega=omega,
        psi=psi_values,
        heat=HeatFlow(profile, params.nu, frozen=frozen),
    )


def clamped_bump(grid: ChebGrid, center: float = 0.5, width: float = 0.15) -> np.ndarray:
    """A Gaussian stream function times y^2 (1 - y)^2, normalized to unit maximum."""
    y = grid.nodes
    values = y**2 * (1.0 - y) ** 2 * np.exp(-(((y - center) / width) ** 2))
    return (values / np.max(np.abs(values))).astype(complex)


def default_time_step(nu: float, k: float, profile: ShearProfile) -> float:
    """min(0.1 nu^(1/3), CFL bound for the explicit transport)."""
    dt = 0.1 * nu ** (1.0 / 3.0)
    if k != 0:
        dt = min(dt, settings.ADVECTION_CFL / (abs(k) * profile.speed))
    return dt


def transport_term(k: float, u: np.ndarray, d2u: np.ndarray, omega: np.ndarray, psi: np.ndarray) -> np.ndarray:
    """-ik U w + ik U'' psi."""
    return -1j * k * u * omega + 1j * k * d2u * psi


def explicit_term(state: LinState, f1: FieldLike = None, f2: FieldLike = None) -> np.ndarray:
    """-ik U w + ik U'' psi - ik f1 - d_y f2 at the state's time."""
    k = state.params.k
    n = state.grid.n
    u, d2u = state.heat.fields(state.time)
    term = transport_term(k, u, d2u, state.omega, state.psi)
    if f1 is not None:
        term = term - 1j * k * _values(f1, n)
    if f2 is not None:
        term = term - state.grid.d1 @ _values(f2, n)
    return term


def _check_cfl(state: LinState, dt: float) -> None:
    if dt <= 0:
        raise InvalidArgumentError(f"Time step must be positive, got {dt}")
    courant = abs(state.params.k) * state.heat.profile.speed * dt
    if courant > settings.ADVECTION_CFL * (1.0 + 1e-12):
        raise InvalidArgumentError(
            f"CFL violated: |k| max(C0, max|U|) dt = {courant:.3g} > {settings.ADVECTION_CFL}"
        )


def step(state: LinState, dt: float, f1: FieldLike = None, f2: FieldLike = None) -> LinState:
    """One CN/AB2 step with influence-matrix no-slip enforcement."""
    _check_cfl(state, dt)
    params = state.params
    current = explicit_term(state, f1, f2)
    if state.prev_explicit is None:
        increment = dt * current
    else:
        increment = dt * (1.5 * current - 0.5 * state.prev_explicit)
    op = mode_operator(state.grid.n, params.nu, float(params.k), dt)
    omega, psi = op.advance(state.omega, increment)
    t_new = state.time + dt
    if not (np.all(np.isfinite(omega)) and np.all(np.isfinite(psi))):
        raise BlowUpError(t_new, params.k)
    return state.model_copy(update={"omega": omega, "psi": psi, "time": t_new, "prev_explicit": current})


# --- Space-time ledger -------------------------------------------------------------


class SpaceTimeLedger(BaseModel):
    """Running weighted space-time norms of a trajectory.

    The history keeps the unweighted per-sample norms so the ledger can be
    recomputed for another rate or a coarser sampling.
    """

    eps_rate: float = 0.0
    nu: float
    k: float
    E_in: float = 0.0
    T_L2L2_u: float = 0.0
    T_L2L2_om: float = 0.0
    T_forcing: float = 0.0
    sup_weighted_om: float = 0.0
    sup_uinf: float = 0.0
    sup_om: float = 0.0
    times: List[float] = Field(default_factory=list)
    u_sq: List[float] = Field(default_factory=list)
    om_sq: List[float] = Field(default_factory=list)
    weighted_om: List[float] = Field(default_factory=list)
    uinf: List[float] = Field(default_factory=list)
    forcing_sq: List[float] = Field(default_factory=list)

    @property
    def rate(self) -> float:
        return self.eps_rate * self.nu ** (1.0 / 3.0)

    def record(self, t: float, u_sq: float, om_sq: float, weighted_om: float, uinf: float, forcing_sq: float = 0.0):
        r = self.rate
        if self.times:
            t0 = self.times[-1]
            h = 0.5 * (t - t0)
            w0, w1 = math.exp(2 * r * t0), math.exp(2 * r * t)
            self.T_L2L2_u += h * (w0 * self.u_sq[-1] + w1 * u_sq)
            self.T_L2L2_om += h * (w0 * self.om_sq[-1] + w1 * om_sq)
            self.T_forcing += h * (w0 * self.forcing_sq[-1] + w1 * forcing_sq)
        grow = math.exp(r * t)
        self.sup_weighted_om = max(self.sup_weighted_om, grow * weighted_om)
        self.sup_uinf = max(self.sup_uinf, grow * uinf)
        self.sup_om = max(self.sup_om, grow * math.sqrt(om_sq))
        self.times.append(t)
        self.u_sq.append(u_sq)
        self.om_sq.append(om_sq)
        self.weighted_om.append(weighted_om)
        self.uinf.append(uinf)
        self.forcing_sq.append(forcing_sq)

    def forcing_scale(self) -> float:
        return self.E_in + self.T_forcing / self.nu

    def space_time_ratio(self) -> float:
        """(k^2 T_u + nu^(1/2)|k| T_om + sup_w^2 + sup_uinf^2) / (E_in + T_f / nu)."""
        k = abs(self.k)
        lhs = k * k * self.T_L2L2_u + math.sqrt(self.nu) * k * self.T_L2L2_om
        lhs += self.sup_weighted_om**2 + self.sup_uinf**2
        denom = self.forcing_scale()
        return lhs / denom if denom > 0 else 0.0

    def high_frequency_ratio(self) -> float:
        """Ratio of the high-frequency estimate, meaningful when nu k^2 >= C0."""
        k = abs(self.k)
        lhs = k * k * self.T_L2L2_u + self.nu * k * k * self.T_L2L2_om + self.sup_om**2 + k * self.sup_uinf**2
        denom = self.forcing_scale()
        return lhs / denom if denom > 0 else 0.0

    def inviscid_damping_ratio(self) -> float:
        """k^2 T_u / E_in."""
        return self.k**2 * self.T_L2L2_u / self.E_in if self.E_in > 0 else 0.0


def ledger_from_samples(ledger: SpaceTimeLedger, stride: int = 1, eps_rate: Optional[float] = None) -> SpaceTimeLedger:
    """Rebuild a ledger from every ``stride``-th stored sample (the last one always kept)."""
    if stride < 1:
        raise InvalidArgumentError(f"Stride must be >= 1, got {stride}")
    count = len(ledger.times)
    picks = list(range(0, count, stride))
    if count and picks[-1] != count - 1:
        picks.append(count - 1)
    rebuilt = SpaceTimeLedger(
        eps_rate=ledger.eps_rate if eps_rate is None else eps_rate, nu=ledger.nu, k=ledger.k, E_in=ledger.E_in
    )
    for i in picks:
        rebuilt.record(
            ledger.times[i], ledger.u_sq[i], ledger.om_sq[i], ledger.weighted_om[i], ledger.uinf[i], ledger.forcing_sq[i]
        )
    return rebuilt


def state_norms(state: LinState) -> Dict[str, float]:
    """||u||^2, ||w||^2, the weighted vorticity norm and ||u||_Linf of a state."""
    grid = state.grid
    u1, u2 = state.u1, state.u2
    return {
        "u_sq": float(grid.quad @ (np.abs(u1) ** 2 + np.abs(u2) ** 2)),
        "om_sq": float(grid.quad @ np.abs(state.omega) ** 2),
        "weighted_om": grid.l2(np.sqrt(grid.wall_weight) * state.omega),
        "uinf": float(np.max(np.sqrt(np.abs(u1) ** 2 + np.abs(u2) ** 2))),
    }


def initial_energy(state: LinState) -> float:
    """|k|^-2 ||d_y w||^2 + ||u||_H1^2."""
    grid = state.grid
    k = state.params.k
    psi = state.psi
    dpsi = grid.d1 @ psi
    d2psi = grid.d2 @ psi
    u_sq = float(grid.quad @ (np.abs(dpsi) ** 2 + k * k * np.abs(psi) ** 2))
    du_sq = float(grid.quad @ (np.abs(d2psi) ** 2 + k * k * np.abs(dpsi) ** 2))
    dom_sq = float(grid.quad @ np.abs(grid.d1 @ state.omega) ** 2)
    return dom_sq / (k * k) + (1.0 + k * k) * u_sq + du_sq


def decaying_sine(grid: ChebGrid) -> ForcingSchedule:
    """f1 = e^-t sin(pi y), f2 = 0."""
    shape = np.sin(math.pi * grid.nodes).astype(complex)

    def schedule(t: float) -> Tuple[FieldLike, FieldLike]:
        return math.exp(-t) * shape, None

    return schedule


def forcing_preset(name: str, grid: ChebGrid) -> Optional[ForcingSchedule]:
    """Named forcing schedules: ``none`` or ``decaying-sine``."""
    if name == "none":
        return None
    if name == "decaying-sine":
        return decaying_sine(grid)
    raise InvalidArgumentError(f"Unknown forcing preset '{name}'")


class Trajectory(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    samples: List[TrajectorySample] = Field(default_factory=list)
    final: LinState


def _sample(state: LinState, norms: Dict[str, float]) -> TrajectorySample:
    return TrajectorySample(
        t=state.time,
        norm_om_L2=math.sqrt(norms["om_sq"]),
        norm_u_inf=norms["uinf"],
        weighted_om=norms["weighted_om"],
        norm_u_L2=math.sqrt(norms["u_sq"]),
    )


def run(
    init: LinState,
    horizon: float,
    forcing: Optional[ForcingSchedule] = None,
    dt: Optional[float] = None,
    eps_rate: float = 0.0,
    samples: int = TRAJECTORY_SAMPLES,
) -> Tuple[Trajectory, SpaceTimeLedger]:
    """Integrate to ``horizon`` with fixed dt, accumulating the ledger every step."""
    if horizon <= 0:
        raise InvalidArgumentError(f"Horizon must be positive, got {horizon}")
    params = init.params
    dt = dt or default_time_step(params.nu, params.k, init.heat.profile)
    steps = max(1, math.ceil(horizon / dt - 1e-9))
    dt = horizon / steps
    sample_every = max(1, steps // max(1, samples))

    ledger = SpaceTimeLedger(eps_rate=eps_rate, nu=params.nu, k=params.k, E_in=initial_energy(init))
    grid = init.grid

    def forcing_at(t: float) -> Tuple[FieldLike, FieldLike]:
        return forcing(t) if forcing is not None else (None, None)

    def forcing_sq(f1: FieldLike, f2: FieldLike) -> float:
        return grid.l2(_values(f1, grid.n)) ** 2 + grid.l2(_values(f2, grid.n)) ** 2

    state = init
    f1, f2 = forcing_at(state.time)
    norms = state_norms(state)
    ledger.record(state.time, norms["u_sq"], norms["om_sq"], norms["weighted_om"], norms["uinf"], forcing_sq(f1, f2))
    trajectory = Trajectory(samples=[_sample(state, norms)], final=state)

    for i in range(1, steps + 1):
        state = step(state, dt, f1, f2)
        f1, f2 = forcing_at(state.time)
        norms = state_norms(state)
        ledger.record(state.time, norms["u_sq"], norms["om_sq"], norms["weighted_om"], norms["uinf"], forcing_sq(f1, f2))
        if i % sample_every == 0 or i == steps:
            trajectory.samples.append(_sample(state, norms))

    trajectory.final = state
    logger.debug(f"Linear run nu={params.nu:g} k={params.k}: {steps} steps of dt={dt:.3g}")
    return trajectory, ledger


def decay_rate(trajectory: Union[Trajectory, Sequence[TrajectorySample]], window: Optional[Tuple[float, float]] = None) -> DecayFit:
    """Exponential decay rate of ||w(t)|| fitted on the tail window [T/2, T]."""
    samples = trajectory.samples if isinstance(trajectory, Trajectory) else list(trajectory)
    if not samples:
        raise InvalidArgumentError("Empty trajectory")
    end = samples[-1].t
    window = window or (0.5 * end, end)
    picked = [s for s in samples if window[0] <= s.t <= window[1] and s.norm_om_L2 > 0]
    if len(picked) < 3:
        return DecayFit(rate=0.0, r2=0.0, decaying=False, window=window)
    fit = linregress([s.t for s in picked], np.log([s.norm_om_L2 for s in picked]))
    rate = -float(fit.slope)
    return DecayFit(rate=rate, r2=float(fit.rvalue**2), decaying=rate > 0, window=window)


# --- Diagnostics -------------------------------------------------------------------


def damping_factor(du: np.ndarray, nu: float, k: float, t: float) -> np.ndarray:
    """exp(-nu k^2 ((V')^2 t^3 / 3 + t))."""
    return np.exp(-nu * k * k * (du**2 * t**3 / 3.0 + t))


def _euler_rhs(grid: ChebGrid, k: float, V: np.ndarray, d2V: np.ndarray, omega: np.ndarray) -> np.ndarray:
    psi = grid.solve_helmholtz(k, omega)
    return -1j * k * V * omega + 1j * k * d2V * psi


def homogeneous_split_diag(init: LinState, horizon: float, samples: int = 20, dt: Optional[float] = None) -> List[SplitSample]:
    """Compare the viscous evolution with the damped inviscid solution.

    The profile is frozen; the inviscid linearized Euler equation is integrated
    with RK4 and Dirichlet psi, then multiplied by the damping factor.
    """
    params = init.params
    profile = init.heat.profile
    grid = init.grid
    frozen = init.model_copy(update={"heat": HeatFlow(profile, params.nu, frozen=True), "prev_explicit": None})
    dt = dt or default_time_step(params.nu, params.k, profile)
    steps = max(1, math.ceil(horizon / dt - 1e-9))
    dt = horizon / steps
    sample_every = max(1, steps // max(1, samples))
    k = float(params.k)
    V, d2V = profile.u, profile.d2u
    scale = grid.l2(init.omega)

    def compare(state: LinState, inviscid: np.ndarray) -> SplitSample:
        factor = damping_factor(profile.du, params.nu, k, state.time)
        gap = grid.l2(state.omega - factor * inviscid)
        return SplitSample(
            t=state.time, discrepancy=gap / scale if scale > 0 else 0.0, damping=float(np.max(factor))
        )

    state, inviscid = frozen, init.omega.astype(complex)
    records = [compare(state, inviscid)]
    for i in range(1, steps + 1):
        s1 = _euler_rhs(grid, k, V, d2V, inviscid)
        s2 = _euler_rhs(grid, k, V, d2V, inviscid + 0.5 * dt * s1)
        s3 = _euler_rhs(grid, k, V, d2V, inviscid + 0.5 * dt * s2)
        s4 = _euler_rhs(grid, k, V, d2V, inviscid + dt * s3)
        inviscid = inviscid + dt / 6.0 * (s1 + 2 * s2 + 2 * s3 + s4)
        state = step(state, dt)
        if not np.all(np.isfinite(inviscid)):
            raise BlowUpError(state.time, params.k)
        if i % sample_every == 0 or i == steps:
            records.append(compare(state, inviscid))
    return records


@lru_cache(maxsize=32)
def _zero_mode_factor(n: int, nu: float, dt: float) -> Tuple[tuple, np.ndarray]:
    grid = build_grid(n)
    eye = np.eye(n)
    implicit = eye - 0.5 * dt * nu * grid.d2
    implicit[0, :] = 0.0
    implicit[0, 0] = 1.0
    implicit[-1, :] = 0.0
    implicit[-1, -1] = 1.0
    return lu_factor(implicit), eye + 0.5 * dt * nu * grid.d2


def zero_mode_step(u10: np.ndarray, dt: float, f021: np.ndarray, nu: float) -> np.ndarray:
    """Crank–Nicolson step of (d_t - nu d^2) u = -f021 with u = 0 at the walls.

    ``f021`` should be centred at t + dt/2 for second order.
    """
    if dt <= 0:
        raise InvalidArgumentError(f"Time step must be positive, got {dt}")
    u10 = np.asarray(u10, dtype=float)
    factor, explicit = _zero_mode_factor(u10.shape[0], nu, dt)
    rhs = explicit @ u10 - dt * np.asarray(f021, dtype=float)
    rhs[0] = 0.0
    rhs[-1] = 0.0
    result = lu_solve(factor, rhs)
    if not np.all(np.isfinite(result)):
        raise BlowUpError(dt, 0)
    return result


def weighted_inequality_gap(grid: ChebGrid, psi: np.ndarray, k: float) -> float:
    """||sqrt(rho) w|| - ||sqrt(rho) d_y u|| with rho = 4y(1 - y) and d_y u = (psi'', -ik psi').

    Nonnegative whenever psi vanishes at both walls:
    ||sqrt(rho) w||^2 = ||sqrt(rho) psi''||^2 + 2k^2 ||sqrt(rho) psi'||^2 + 8k^2 ||psi||^2 + k^4 ||sqrt(rho) psi||^2.
    """
    root = np.sqrt(grid.wall_weight)
    d2psi = grid.d2 @ psi
    omega = d2psi - k * k * psi
    du = math.hypot(grid.l2(root * d2psi), abs(k) * grid.l2(root * (grid.d1 @ psi)))
    return grid.l2(root * omega) - du


def energy_budget(state: LinState, f1: FieldLike = None, f2: FieldLike = None) -> Dict[str, float]:
    """Contributions to d/dt ||u||^2 = -2 Re <d_t w, psi>: dissipation, production, forcing."""
    grid = state.grid
    k = state.params.k
    u, d2u = state.heat.fields(state.time)
    transport = transport_term(k, u, d2u, state.omega, state.psi)
    forcing = explicit_term(state, f1, f2) - transport
    dissipation = -2.0 * state.params.nu * float(grid.quad @ np.abs(state.omega) ** 2)
    production = -2.0 * grid.inner(transport, state.psi).real
    transfer = -2.0 * grid.inner(forcing, state.psi).real
    return {
        "dissipation": dissipation,
        "production": production,
        "forcing": transfer,
        "rate": dissipation + production + transfer,
    }


def calibrate_eps_rate(
    profile: Optional[ShearProfile] = None,
    nu: float = 1e-4,
    k: int = 1,
    candidates: Optional[Sequence[float]] = None,
    horizon_factor: float = 5.0,
) -> float:
    """Largest rate whose unforced ledger ratio stays within LEDGER_GROWTH_FACTOR of the unweighted one."""
    profile = profile or make_profile("couette", build_grid(settings.DEFAULT_NODES))
    candidates = list(candidates) if candidates is not None else list(np.geomspace(0.01, 0.2, 8))
    params = ProblemParams(nu=nu, k=k)
    init = initial_state(params, profile, clamped_bump(profile.grid))
    _, ledger = run(init, horizon_factor * nu ** (-1.0 / 3.0))
    base = ledger_from_samples(ledger, eps_rate=0.0).space_time_ratio()
    chosen = 0.0
    for eps in sorted(candidates):
        ratio = ledger_from_samples(ledger, eps_rate=eps).space_time_ratio()
        if ratio <= settings.LEDGER_GROWTH_FACTOR * base:
            chosen = eps
    logger.info(f"✓ Calibrated eps_0 = {chosen:.4g} on {profile.name} at nu={nu:g}")
    return chosen
