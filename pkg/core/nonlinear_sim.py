"""Pseudospectral simulation of the full perturbation system in a channel.

Fourier in x (period 2 pi) times Chebyshev in y. Only modes k = 0..k_max are
stored; negative modes are their complex conjugates, so the reality
condition holds by construction. Products are formed on 3 k_max + 1
physical x points, which removes quadratic aliasing (2/3 rule).

The nonlinearity is taken in divergence form. With the advective products

    g1 = FFT[u1 d_x u1 + u2 d_y u1],   g2 = FFT[u1 d_x u2 + u2 d_y u2],

the vorticity right-hand side is -(u . grad w)_k = -d_y g1_k + ik g2_k, and
the mean flow correction obeys (d_t - nu d_y^2) u1_0 = -g1_0. Each k >= 1 mode
uses the linear stepper's Crank–Nicolson/influence-matrix update with the
nonlinear term added to the explicit part.
"""

import logging
import math
import pathlib
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy.fft import irfft, rfft
from scipy.stats import linregress

from .config import settings
from .errors import BlowUpError, InvalidArgumentError
from .grid_spectral import ChebGrid
from .lin_evolution import SpaceTimeLedger, mode_operator, transport_term, zero_mode_step
from .models import (
    BetaFit,
    EnergyLedger,
    ModeLedger,
    PerturbationSpec,
    ThresholdRecord,
    ThresholdResult,
    ThresholdRun,
)
from .persistence import Checkpoint, load_checkpoint, save_checkpoint
from .shear_profile import HeatFlow, ShearProfile

logger = logging.getLogger(__name__)

# Below this viscosity the default grid no longer resolves the boundary layer.
NU_FLOOR = 3e-4


def default_k_max() -> int:
    return (settings.X_POINTS - 1) // 3


class SpectralState(BaseModel):
    """Modes k = 0..k_max of the perturbation at one time.

    Row 0 of ``omega`` holds w_0 = d_y u1_0; row 0 of ``psi`` is unused.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    nu: float
    eps_rate: float = 0.0
    k_max: int
    grid: ChebGrid
    heat: HeatFlow
    omega: np.ndarray
    psi: np.ndarray
    u10: np.ndarray
    time: float = 0.0
    prev_explicit: Optional[np.ndarray] = None
    prev_zero_forcing: Optional[np.ndarray] = None

    @property
    def wavenumbers(self) -> np.ndarray:
        return np.arange(self.k_max + 1)

    @property
    def x_points(self) -> int:
        return 3 * self.k_max + 1

    @property
    def profile_t(self) -> ShearProfile:
        return self.heat.at(self.time)

    @property
    def u1(self) -> np.ndarray:
        u1 = self.psi @ self.grid.d1.T
        u1[0] = self.u10
        return u1

    @property
    def u2(self) -> np.ndarray:
        u2 = -1j * self.wavenumbers[:, None] * self.psi
        u2[0] = 0.0
        return u2


def to_physical(coeffs: np.ndarray, x_points: int) -> np.ndarray:
    """Values on the x grid of a real field given by its k >= 0 coefficients (axis 0)."""
    return irfft(coeffs * x_points, n=x_points, axis=0)


def to_modes(values: np.ndarray, k_max: int) -> np.ndarray:
    x_points = values.shape[0]
    return rfft(values, axis=0)[: k_max + 1] / x_points


def zero_state(profile: ShearProfile, nu: float, k_max: Optional[int] = None, eps_rate: float = 0.0) -> SpectralState:
    k_max = k_max or default_k_max()
    n = profile.grid.n
    return SpectralState(
        nu=nu,
        eps_rate=eps_rate,
        k_max=k_max,
        grid=profile.grid,
        heat=HeatFlow(profile, nu),
        omega=np.zeros((k_max + 1, n), dtype=complex),
        psi=np.zeros((k_max + 1, n), dtype=complex),
        u10=np.zeros(n),
    )


def _with_stream(state: SpectralState, psi: np.ndarray, u10: np.ndarray) -> SpectralState:
    grid = state.grid
    k2 = (state.wavenumbers**2)[:, None]
    omega = psi @ grid.d2.T - k2 * psi
    omega[0] = grid.d1 @ u10
    psi = psi.copy()
    psi[0] = 0.0
    return state.model_copy(update={"omega": omega, "psi": psi, "u10": u10})


def h2_norm(state: SpectralState) -> float:
    """||u||_H2 over one x period, summing the +k and -k modes."""
    grid = state.grid
    total = 0.0
    u10 = state.u10
    for f in (u10, grid.d1 @ u10, grid.d2 @ u10):
        total += float(grid.quad @ f**2)
    for k in range(1, state.k_max + 1):
        psi = state.psi[k]
        d = [psi, grid.d1 @ psi, grid.d2 @ psi, grid.d3 @ psi]
        sq = [float(grid.quad @ np.abs(f) ** 2) for f in d]
        u_sq = sq[1] + k * k * sq[0]
        du_sq = sq[2] + k * k * sq[1]
        d2u_sq = sq[3] + k * k * sq[2]
        total += 2.0 * ((1 + k**2 + k**4) * u_sq + (1 + k**2) * du_sq + d2u_sq)
    return math.sqrt(total)


def init_perturbation(
    spec: PerturbationSpec,
    amplitude: float,
    profile: ShearProfile,
    nu: float,
    k_max: Optional[int] = None,
    eps_rate: float = 0.0,
) -> SpectralState:
    """Clamped random cubics times y^p (1 - y)^p in the requested modes, scaled to ||u||_H2 = A."""
    if amplitude < 0:
        raise InvalidArgumentError(f"Amplitude must be nonnegative, got {amplitude}")
    if spec.envelope_power < 2:
        raise InvalidArgumentError(
            f"Envelope power {spec.envelope_power} < 2 does not satisfy psi = d_y psi = 0 at the walls"
        )
    state = zero_state(profile, nu, k_max, eps_rate)
    bad = [k for k in spec.modes if k < 1 or 3 * k > state.k_max]
    if bad:
        raise InvalidArgumentError(f"Modes {bad} outside 1 <= k <= k_max/3 = {state.k_max / 3:g}")
    if amplitude == 0 or not spec.modes:
        return state

    rng = np.random.default_rng(spec.seed)
    y = profile.grid.nodes
    envelope = (y * (1.0 - y)) ** spec.envelope_power
    psi = np.zeros_like(state.psi)
    for k in sorted(set(spec.modes)):
        real, imag = rng.standard_normal(4), rng.standard_normal(4)
        cubic = np.polynomial.polynomial.polyval(y, real + 1j * imag)
        psi[k] = envelope * cubic
    shaped = _with_stream(state, psi, state.u10)
    scale = amplitude / h2_norm(shaped)
    return _with_stream(state, psi * scale, state.u10)


def nonlinear_terms(state: SpectralState) -> Tuple[np.ndarray, np.ndarray]:
    """Advective products (g1_k, g2_k), k = 0..k_max, dealiased in x."""
    grid = state.grid
    m = state.x_points
    ik = 1j * state.wavenumbers[:, None]
    u1, u2 = state.u1, state.u2
    du1_dy, du2_dy = u1 @ grid.d1.T, u2 @ grid.d1.T
    p_u1, p_u2 = to_physical(u1, m), to_physical(u2, m)
    p_u1x, p_u2x = to_physical(ik * u1, m), to_physical(ik * u2, m)
    p_u1y, p_u2y = to_physical(du1_dy, m), to_physical(du2_dy, m)
    g1 = to_modes(p_u1 * p_u1x + p_u2 * p_u1y, state.k_max)
    g2 = to_modes(p_u1 * p_u2x + p_u2 * p_u2y, state.k_max)
    return g1, g2


def vorticity_forcing(state: SpectralState, g1: np.ndarray, g2: np.ndarray) -> np.ndarray:
    """-d_y g1_k + ik g2_k."""
    return -(g1 @ state.grid.d1.T) + 1j * state.wavenumbers[:, None] * g2


def energy_transfer(state: SpectralState) -> np.ndarray:
    """Nonlinear contribution to d/dt ||u_k||^2 per k; row 0 is the mean flow."""
    grid = state.grid
    g1, g2 = nonlinear_terms(state)
    rhs = vorticity_forcing(state, g1, g2)
    transfer = np.array([-2.0 * grid.inner(rhs[k], state.psi[k]).real for k in range(state.k_max + 1)])
    transfer[0] = -2.0 * float(grid.quad @ (state.u10 * g1[0].real))
    return transfer


def default_time_step(state: SpectralState) -> float:
    speed = state.heat.profile.speed
    return min(0.1 * state.nu ** (1.0 / 3.0), 0.5 * settings.NONLINEAR_CFL / (max(1, state.k_max) * speed))


def courant_number(state: SpectralState, dt: float) -> float:
    """dt max(k_max max|U + u1|, max |u2| / dy)."""
    u, _ = state.heat.fields(state.time)
    m = state.x_points
    p_u1 = to_physical(state.u1, m) + u[None, :]
    p_u2 = to_physical(state.u2, m)
    along = state.k_max * float(np.max(np.abs(p_u1)))
    across = float(np.max(np.abs(p_u2) / state.grid.spacing[None, :]))
    return dt * max(along, across)


def step_nonlinear(state: SpectralState, dt: float) -> SpectralState:
    """One IMEX step of every mode; the mean flow uses the Crank–Nicolson heat step."""
    if dt <= 0:
        raise InvalidArgumentError(f"Time step must be positive, got {dt}")
    courant = courant_number(state, dt)
    if courant > settings.NONLINEAR_CFL * (1.0 + 1e-12):
        raise InvalidArgumentError(f"Nonlinear CFL violated: {courant:.3g} > {settings.NONLINEAR_CFL}")

    grid = state.grid
    u, d2u = state.heat.fields(state.time)
    g1, g2 = nonlinear_terms(state)
    rhs = vorticity_forcing(state, g1, g2)
    explicit = np.zeros_like(state.omega)
    omega = np.zeros_like(state.omega)
    psi = np.zeros_like(state.psi)
    for k in range(1, state.k_max + 1):
        explicit[k] = transport_term(k, u, d2u, state.omega[k], state.psi[k]) + rhs[k]
        if state.prev_explicit is None:
            increment = dt * explicit[k]
        else:
            increment = dt * (1.5 * explicit[k] - 0.5 * state.prev_explicit[k])
        omega[k], psi[k] = mode_operator(grid.n, state.nu, float(k), dt).advance(state.omega[k], increment)
        if not (np.all(np.isfinite(omega[k])) and np.all(np.isfinite(psi[k]))):
            raise BlowUpError(state.time + dt, k)

    f021 = g1[0].real
    centred = f021 if state.prev_zero_forcing is None else 1.5 * f021 - 0.5 * state.prev_zero_forcing
    u10 = zero_mode_step(state.u10, dt, centred, state.nu)
    if not np.all(np.isfinite(u10)):
        raise BlowUpError(state.time + dt, 0)
    omega[0] = grid.d1 @ u10
    return state.model_copy(
        update={
            "omega": omega,
            "psi": psi,
            "u10": u10,
            "time": state.time + dt,
            "prev_explicit": explicit,
            "prev_zero_forcing": f021,
        }
    )


def vorticity_norm(state: SpectralState) -> float:
    """||w||_L2 over one period, both signs of k."""
    sq = state.grid.quad @ (np.abs(state.omega) ** 2).T
    return math.sqrt(float(sq[0] + 2.0 * np.sum(sq[1:])))


def spectral_tail(state: SpectralState) -> float:
    """Fraction of the perturbation energy in modes k > 2 k_max / 3."""
    grid = state.grid
    u1, u2 = state.u1, state.u2
    energy = grid.quad @ (np.abs(u1) ** 2 + np.abs(u2) ** 2).T
    energy[1:] *= 2.0
    total = float(np.sum(energy))
    cutoff = 2 * state.k_max // 3
    return float(np.sum(energy[cutoff + 1 :])) / total if total > 0 else 0.0


class LedgerTracker:
    """Per-mode space-time ledgers of a nonlinear run."""

    def __init__(self, nu: float, eps_rate: float, k_max: int):
        self.nu = nu
        self.ledgers = [SpaceTimeLedger(eps_rate=0.0 if k == 0 else eps_rate, nu=nu, k=k) for k in range(k_max + 1)]

    def record(self, state: SpectralState, zero_forcing: Optional[np.ndarray] = None) -> None:
        grid = state.grid
        root = np.sqrt(grid.wall_weight)
        u1, u2 = state.u1, state.u2
        for k, ledger in enumerate(self.ledgers):
            speed = np.sqrt(np.abs(u1[k]) ** 2 + np.abs(u2[k]) ** 2)
            forcing_sq = float(grid.quad @ zero_forcing**2) if k == 0 and zero_forcing is not None else 0.0
            ledger.record(
                state.time,
                float(grid.quad @ speed**2),
                float(grid.quad @ np.abs(state.omega[k]) ** 2),
                grid.l2(root * state.omega[k]),
                float(np.max(speed)),
                forcing_sq,
            )

    def energy_ledger(self) -> EnergyLedger:
        modes = [ModeLedger(k=0, sup_om=self.ledgers[0].sup_om)]
        for k, ledger in enumerate(self.ledgers[1:], start=1):
            modes.append(
                ModeLedger(
                    k=k,
                    inviscid_damping=k * math.sqrt(ledger.T_L2L2_u),
                    sup_u_inf=ledger.sup_uinf,
                    sup_weighted_om=ledger.sup_weighted_om,
                    enhanced_dissipation=self.nu**0.25 * math.sqrt(k) * math.sqrt(ledger.T_L2L2_om),
                )
            )
        return EnergyLedger(modes=modes, zero_forcing_L2L2=self.ledgers[0].T_forcing)


class NonlinearRun(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    final: SpectralState
    ledger: EnergyLedger
    totals: List[Tuple[float, float]] = Field(default_factory=list, description="(t, sum_k E_k(t))")
    max_growth: float
    final_decay: float
    max_tail: float
    checkpoints: List[str] = Field(default_factory=list)

    @property
    def resolved(self) -> bool:
        return self.max_tail <= settings.SPECTRAL_TAIL_LIMIT

    @property
    def stable(self) -> bool:
        return self.max_growth <= settings.LEDGER_GROWTH_FACTOR and self.final_decay < 1.0


def _checkpoint_of(state: SpectralState) -> Checkpoint:
    slots = state.omega.copy()
    slots[0] = state.u10
    return Checkpoint(k_max=state.k_max, n=state.grid.n, nu=state.nu, time=state.time, slots=slots)


def state_from_checkpoint(checkpoint: Checkpoint, profile: ShearProfile, eps_rate: float = 0.0) -> SpectralState:
    """Rebuild a state; psi_k is the Dirichlet inverse of w_k and w_0 = d_y u1_0."""
    if checkpoint.n != profile.grid.n:
        raise InvalidArgumentError(f"Checkpoint has {checkpoint.n} nodes, profile grid has {profile.grid.n}")
    state = zero_state(profile, checkpoint.nu, checkpoint.k_max, eps_rate)
    grid = profile.grid
    psi = np.zeros_like(state.psi)
    for k in range(1, checkpoint.k_max + 1):
        psi[k] = grid.solve_helmholtz(k, checkpoint.slots[k])
    restored = _with_stream(state, psi, checkpoint.slots[0].real.copy())
    return restored.model_copy(update={"time": checkpoint.time})


class NonlinearSimulation:
    """Fixed-step integration of a spectral state with online ledgers."""

    def __init__(
        self,
        state: SpectralState,
        dt: Optional[float] = None,
        checkpoint_dir: Optional[pathlib.Path] = None,
        checkpoint_every: int = 0,
    ):
        self.state = state
        self.dt = dt or default_time_step(state)
        self.checkpoint_dir = pathlib.Path(checkpoint_dir) if checkpoint_dir else None
        self.checkpoint_every = checkpoint_every

    def _save(self, index: int) -> str:
        path = self.checkpoint_dir / f"step{index:08d}.ckpt"
        save_checkpoint(path, _checkpoint_of(self.state))
        return str(path)

    def run(self, horizon: float) -> NonlinearRun:
        if horizon <= 0:
            raise InvalidArgumentError(f"Horizon must be positive, got {horizon}")
        steps = max(1, math.ceil(horizon / self.dt - 1e-9))
        dt = horizon / steps
        tracker = LedgerTracker(self.state.nu, self.state.eps_rate, self.state.k_max)
        state = self.state
        tracker.record(state, nonlinear_terms(state)[0][0].real)
        initial_total = tracker.energy_ledger().total
        initial_vorticity = vorticity_norm(state)
        totals = [(state.time, initial_total)]
        max_tail = spectral_tail(state)
        saved = []
        if self.checkpoint_dir and self.checkpoint_every:
            saved.append(self._save(0))

        for i in range(1, steps + 1):
            state = step_nonlinear(state, dt)
            self.state = state
            tracker.record(state, state.prev_zero_forcing)
            totals.append((state.time, tracker.energy_ledger().total))
            max_tail = max(max_tail, spectral_tail(state))
            if self.checkpoint_dir and self.checkpoint_every and i % self.checkpoint_every == 0:
                saved.append(self._save(i))

        max_growth = max(t for _, t in totals) / initial_total if initial_total > 0 else 0.0
        final_decay = vorticity_norm(state) / initial_vorticity if initial_vorticity > 0 else 0.0
        if max_tail > settings.SPECTRAL_TAIL_LIMIT:
            logger.warning(f"Run at nu={state.nu:g} is unresolved: spectral tail {max_tail:.2e}")
        return NonlinearRun(
            final=state,
            ledger=tracker.energy_ledger(),
            totals=totals,
            max_growth=max_growth,
            final_decay=final_decay,
            max_tail=max_tail,
            checkpoints=saved,
        )


def ledger_from_checkpoints(
    paths: Sequence[pathlib.Path], profile: ShearProfile, eps_rate: float = 0.0
) -> EnergyLedger:
    """Recompute the energy ledger from saved checkpoints (trapezoid between them)."""
    tracker = None
    for path in paths:
        state = state_from_checkpoint(load_checkpoint(path), profile, eps_rate)
        if tracker is None:
            tracker = LedgerTracker(state.nu, eps_rate, state.k_max)
        tracker.record(state, nonlinear_terms(state)[0][0].real)
    if tracker is None:
        raise InvalidArgumentError("No checkpoints given")
    return tracker.energy_ledger()


# --- Threshold probe -----------------------------------------------------------


def _probe_amplitude(
    profile: ShearProfile, nu: float, amplitude: float, spec: PerturbationSpec, horizon: float, k_max: Optional[int]
) -> ThresholdRun:
    state = init_perturbation(spec, amplitude, profile, nu, k_max)
    try:
        result = NonlinearSimulation(state).run(horizon)
    except (BlowUpError, InvalidArgumentError) as e:
        # a growing state can also outrun the fixed step
        logger.warning(f"Amplitude {amplitude:.3g} at nu={nu:g} blew up: {e}")
        return ThresholdRun(amplitude=amplitude, stable=False, resolved=True, max_growth=math.inf, final_decay=math.inf)
    return ThresholdRun(
        amplitude=amplitude,
        stable=result.stable and result.resolved,
        resolved=result.resolved,
        max_growth=result.max_growth,
        final_decay=result.final_decay,
    )


def _probe_viscosity(
    profile: ShearProfile,
    nu: float,
    c_bracket: Tuple[float, float],
    horizon_factor: float,
    spec: PerturbationSpec,
    k_max: Optional[int],
) -> ThresholdRecord:
    horizon = horizon_factor * nu ** (-1.0 / 3.0)
    lo = c_bracket[0] * nu**0.5
    hi = c_bracket[1] * nu**0.5 * nu ** (-0.3)
    runs = []
    flags = []

    def probe(amplitude: float) -> ThresholdRun:
        run = _probe_amplitude(profile, nu, amplitude, spec, horizon, k_max)
        runs.append(run)
        if not run.resolved and "unresolved" not in flags:
            flags.append("unresolved")
        return run

    if probe(hi).stable:
        flags.append("no-transition-observed")
        return ThresholdRecord(nu=nu, A_star=hi, runs=runs, flags=flags)
    if not probe(lo).stable:
        flags.append("unstable-at-bracket-bottom")
        return ThresholdRecord(nu=nu, A_star=lo, runs=runs, flags=flags)
    for _ in range(settings.BISECTION_STEPS):
        mid = math.sqrt(lo * hi)
        if probe(mid).stable:
            lo = mid
        else:
            hi = mid
    logger.info(f"✓ Threshold at nu={nu:g}: A* = {math.sqrt(lo * hi):.4g}")
    return ThresholdRecord(nu=nu, A_star=math.sqrt(lo * hi), runs=runs, flags=flags)


def fit_beta(records: Sequence[ThresholdRecord]) -> Optional[BetaFit]:
    """Slope of log A* against log nu over the resolved records."""
    usable = [r for r in records if "unresolved" not in r.flags]
    if len(usable) < 3:
        return None
    x = np.log([r.nu for r in usable])
    if np.ptp(x) == 0:
        return None
    fit = linregress(x, np.log([r.A_star for r in usable]))
    flags = []
    r2 = float(fit.rvalue**2)
    if r2 < settings.MIN_FIT_R2:
        flags.append("low-r2")
    if any("no-transition-observed" in r.flags for r in usable):
        flags.append("no-transition-observed")
    return BetaFit(slope=float(fit.slope), stderr=float(fit.stderr), r2=r2, flags=flags)


def run_threshold_probe(
    profile: ShearProfile,
    nu_list: Sequence[float],
    c_bracket: Tuple[float, float] = (0.01, 1.0),
    horizon_factor: float = 5.0,
    spec: Optional[PerturbationSpec] = None,
    k_max: Optional[int] = None,
    jobs: int = 1,
) -> ThresholdResult:
    """Bisect the critical amplitude at each viscosity and fit its power of nu."""
    if any(nu <= 0 for nu in nu_list):
        raise InvalidArgumentError("nu must be positive")
    if not 0 < c_bracket[0] < c_bracket[1]:
        raise InvalidArgumentError(f"Bracket must satisfy 0 < c_lo < c_hi, got {c_bracket}")
    for nu in nu_list:
        if nu < NU_FLOOR:
            logger.warning(f"nu={nu:g} is below the resolution floor {NU_FLOOR:g} of the default grid")
    spec = spec or PerturbationSpec()
    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        futures = [
            pool.submit(_probe_viscosity, profile, nu, tuple(c_bracket), horizon_factor, spec, k_max) for nu in nu_list
        ]
        records = [f.result() for f in futures]
    return ThresholdResult(nu_list=list(nu_list), records=records, beta_fit=fit_beta(records))
