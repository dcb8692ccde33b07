"""Orr–Sommerfeld resolvent problems for one Fourier mode.

For a wavenumber k, spectral parameter lambda and small shift o the operator is

    -nu (d^2 - k^2) w + (ik (V - lambda) + o) w - ik V'' phi = F,
    (d^2 - k^2) phi = w.

Both equations are collocated together as one 2n x 2n block system in
(w, phi). The fourth-order clamped problem never forms a fourth derivative:
the four wall conditions replace the wall rows of the two blocks.

    no-slip:       phi(0) = phi(1) = 0,  phi'(0) = phi'(1) = 0
    Navier-slip:   phi(0) = phi(1) = 0,  w(0) = w(1) = 0
    correctors:    no-slip rows with phi'(0) = 1 (w1) or phi'(1) = 1 (w2)

Since the correctors share the no-slip matrix, one LU factorization serves
the no-slip solve and both correctors. The wall-layer corrector w1 carries
the unit slope at y = 0, which is the wall its coefficient
c1 = int sinh k(1-y)/sinh k w_Na dy measures; with that pairing
w = w_Na + c1 w1 + c2 w2 holds exactly.
"""

import hashlib
import logging
import math
from typing import Dict, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict
from scipy.linalg import lu_factor, lu_solve

from .config import settings
from .errors import InvalidArgumentError, SolverFailureError
from .grid_spectral import ChebGrid, ScalarField
from .models import ProblemParams
from .persistence import OperatorCache
from .shear_profile import ShearProfile

logger = logging.getLogger(__name__)


class ResolventSolution(BaseModel):
    """No-slip solution and its Navier-slip plus corrector decomposition."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    params: ProblemParams
    grid: ChebGrid
    w: Optional[np.ndarray] = None
    phi: Optional[np.ndarray] = None
    w_na: Optional[np.ndarray] = None
    phi_na: Optional[np.ndarray] = None
    w1: Optional[np.ndarray] = None
    phi1: Optional[np.ndarray] = None
    w2: Optional[np.ndarray] = None
    phi2: Optional[np.ndarray] = None
    c1: Optional[complex] = None
    c2: Optional[complex] = None
    residual: Optional[float] = None

    def recomposition_error(self) -> float:
        """Relative L2 distance between w and w_Na + c1 w1 + c2 w2."""
        rebuilt = self.w_na + self.c1 * self.w1 + self.c2 * self.w2
        scale = self.grid.l2(self.w)
        diff = self.grid.l2(self.w - rebuilt)
        return diff / scale if scale > 0 else diff


class WeightFn(BaseModel):
    """The boundary-layer weight rho_k: a tent of slope L capped at 1."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    L: float
    values: np.ndarray


class CutoffFn(BaseModel):
    """C^1 cutoff around the critical layer V(y) = lambda."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    delta: float
    grid: ChebGrid
    values: np.ndarray
    complement: np.ndarray
    e_delta_mask: np.ndarray
    over_shift: np.ndarray
    d_over_shift: np.ndarray


def required_nodes(nu: float, k: float) -> int:
    """Resolution policy: at least NODES_PER_LAYER nodes per boundary-layer length."""
    layer = nu ** (-1.0 / 3.0) * abs(k) ** (1.0 / 3.0)
    return max(settings.DEFAULT_NODES, settings.NODES_PER_LAYER * math.ceil(layer))


def _operator_key(profile: ShearProfile, nu: float, k: int) -> str:
    text = f"{profile.fingerprint()}|{nu!r}|{k}|{profile.grid.n}"
    return hashlib.sha256(text.encode()).hexdigest()


def assemble_blocks(profile: ShearProfile, nu: float, k: int, cache: Optional[OperatorCache] = None) -> np.ndarray:
    """The lambda- and o-independent 2n x 2n block matrix, before wall rows."""
    key = _operator_key(profile, nu, k)
    if cache is not None:
        stored = cache.load(key)
        if stored is not None:
            return stored["blocks"]

    grid = profile.grid
    n = grid.n
    eye = np.eye(n)
    lap = grid.d2 - k * k * eye
    blocks = np.zeros((2 * n, 2 * n), dtype=complex)
    blocks[:n, :n] = -nu * lap + np.diag(1j * k * profile.u)
    blocks[:n, n:] = np.diag(-1j * k * profile.d2u)
    blocks[n:, :n] = -eye
    blocks[n:, n:] = lap

    if cache is not None:
        cache.store(key, blocks=blocks)
    return blocks


class ResolventSolver:
    """Factorized resolvent systems for one (nu, k, lambda, o) and profile.

    Factorizations are built on first use and reused for every right-hand side.
    """

    def __init__(self, params: ProblemParams, profile: ShearProfile, cache: Optional[OperatorCache] = None):
        if params.k == 0:
            raise InvalidArgumentError("Resolvent problems need k != 0")
        self.params = params
        self.profile = profile
        self.grid = profile.grid
        if params.nu * params.k**2 > profile.C0:
            logger.warning(
                f"nu k^2 = {params.nu * params.k**2:.3g} exceeds C0 = {profile.C0:.3g}; "
                "resolvent bounds are stated for nu k^2 <= C0"
            )
        n = self.grid.n
        matrix = assemble_blocks(profile, params.nu, params.k, cache).copy()
        shift = params.o_term - 1j * params.k * params.lam
        idx = np.arange(n)
        matrix[idx, idx] += shift
        # phi(0) = phi(1) = 0 on the phi block
        matrix[n, :] = 0.0
        matrix[n, n] = 1.0
        matrix[2 * n - 1, :] = 0.0
        matrix[2 * n - 1, 2 * n - 1] = 1.0
        self._interior = matrix
        self._factors: Dict[str, tuple] = {}

    def _system(self, kind: str) -> np.ndarray:
        n = self.grid.n
        matrix = self._interior.copy()
        matrix[0, :] = 0.0
        matrix[n - 1, :] = 0.0
        if kind == "noslip":
            matrix[0, n:] = self.grid.d1[0, :]
            matrix[n - 1, n:] = self.grid.d1[-1, :]
        else:
            matrix[0, 0] = 1.0
            matrix[n - 1, n - 1] = 1.0
        return matrix

    def _factor(self, kind: str) -> tuple:
        factor = self._factors.get(kind)
        if factor is None:
            matrix = self._system(kind)
            lu, piv = lu_factor(matrix, check_finite=False)
            pivots = np.abs(np.diag(lu))
            if not np.all(np.isfinite(pivots)) or pivots.min() <= np.finfo(float).eps * pivots.max():
                raise SolverFailureError(
                    f"{kind} collocation matrix is numerically singular",
                    self.params.nu,
                    self.params.k,
                    self.params.lam,
                )
            factor = (lu, piv)
            self._factors[kind] = factor
        return factor

    def _solve(self, kind: str, rhs: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        n = self.grid.n
        solution = lu_solve(self._factor(kind), rhs, check_finite=False)
        if not np.all(np.isfinite(solution)):
            raise SolverFailureError(
                f"{kind} solve produced non-finite values", self.params.nu, self.params.k, self.params.lam
            )
        return solution[:n], solution[n:]

    def _forcing(self, F: np.ndarray) -> np.ndarray:
        n = self.grid.n
        rhs = np.zeros(2 * n, dtype=complex)
        rhs[:n] = F
        rhs[0] = 0.0
        rhs[n - 1] = 0.0
        return rhs

    def solve_noslip(self, F: np.ndarray) -> Tuple[np.ndarray, np.ndarray, float]:
        rhs = self._forcing(F)
        w, phi = self._solve("noslip", rhs)
        residual_vec = self._system("noslip") @ np.concatenate([w, phi]) - rhs
        scale = np.linalg.norm(rhs)
        residual = float(np.linalg.norm(residual_vec) / scale) if scale > 0 else float(np.linalg.norm(residual_vec))
        return w, phi, residual

    def solve_navier_slip(self, F: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        return self._solve("navier", self._forcing(F))

    def corrector(self, which: int) -> Tuple[np.ndarray, np.ndarray]:
        """Corrector j: homogeneous no-slip problem with unit inward-normal slope at wall j.

        phi_1'(0) = 1 and phi_2'(1) = -1, so w_Na + c1 w1 + c2 w2 has zero slope at both walls
        with c1 = -phi_Na'(0) and c2 = phi_Na'(1).
        """
        if which not in (1, 2):
            raise InvalidArgumentError(f"Corrector index must be 1 or 2, got {which}")
        n = self.grid.n
        rhs = np.zeros(2 * n, dtype=complex)
        if which == 1:
            rhs[0] = 1.0
        else:
            rhs[n - 1] = -1.0
        return self._solve("noslip", rhs)

    def decompose(self, F: np.ndarray) -> ResolventSolution:
        """No-slip solve plus the independent Navier-slip/corrector decomposition."""
        w, phi, residual = self.solve_noslip(F)
        w_na, phi_na = self.solve_navier_slip(F)
        w1, phi1 = self.corrector(1)
        w2, phi2 = self.corrector(2)
        c1, c2 = kernel_coefficients(self.grid, w_na, self.params.k)
        return ResolventSolution(
            params=self.params,
            grid=self.grid,
            w=w,
            phi=phi,
            w_na=w_na,
            phi_na=phi_na,
            w1=w1,
            phi1=phi1,
            w2=w2,
            phi2=phi2,
            c1=c1,
            c2=c2,
            residual=residual,
        )


# --- Module-level operations -----------------------------------------------------


def solve_noslip(params: ProblemParams, profile: ShearProfile, F: ScalarField) -> ResolventSolution:
    w, phi, residual = ResolventSolver(params, profile).solve_noslip(F.values)
    return ResolventSolution(params=params, grid=profile.grid, w=w, phi=phi, residual=residual)


def solve_navier_slip(params: ProblemParams, profile: ShearProfile, F: ScalarField) -> ResolventSolution:
    w_na, phi_na = ResolventSolver(params, profile).solve_navier_slip(F.values)
    return ResolventSolution(params=params, grid=profile.grid, w_na=w_na, phi_na=phi_na)


def solve_corrector(params: ProblemParams, profile: ShearProfile, which: int) -> Tuple[np.ndarray, np.ndarray]:
    return ResolventSolver(params, profile).corrector(which)


def resolve(params: ProblemParams, profile: ShearProfile, F: ScalarField) -> ResolventSolution:
    """Full solution with decomposition, sharing one solver."""
    return ResolventSolver(params, profile).decompose(F.values)


def sinh_kernels(y: np.ndarray, k: float) -> Tuple[np.ndarray, np.ndarray]:
    """sinh k(1-y)/sinh k and sinh(ky)/sinh k in overflow-safe form."""
    a = abs(k)
    denom = -np.expm1(-2.0 * a)
    left = np.exp(-a * y) * (-np.expm1(-2.0 * a * (1.0 - y))) / denom
    right = np.exp(-a * (1.0 - y)) * (-np.expm1(-2.0 * a * y)) / denom
    return left, right


def cosh_kernels(y: np.ndarray, k: float) -> Tuple[np.ndarray, np.ndarray]:
    """cosh k(1-y)/sinh k and cosh(ky)/sinh k in overflow-safe form (odd in k)."""
    a = abs(k)
    sign = 1.0 if k > 0 else -1.0
    denom = -np.expm1(-2.0 * a)
    left = np.exp(-a * y) * (1.0 + np.exp(-2.0 * a * (1.0 - y))) / denom
    right = np.exp(-a * (1.0 - y)) * (1.0 + np.exp(-2.0 * a * y)) / denom
    return sign * left, sign * right


def kernel_coefficients(grid: ChebGrid, w_na: np.ndarray, k: float) -> Tuple[complex, complex]:
    left, right = sinh_kernels(grid.nodes, k)
    return complex(grid.quad @ (left * w_na)), complex(grid.quad @ (right * w_na))


def coefficients(w_na: ScalarField, k: float) -> Tuple[complex, complex]:
    """Decomposition coefficients (c1, c2) of a Navier-slip vorticity."""
    if k == 0:
        raise InvalidArgumentError("Coefficients need k != 0")
    return kernel_coefficients(w_na.grid, w_na.values, k)


def kernel_norms(grid: ChebGrid, k: float) -> Dict[str, float]:
    """L2 norms of the sinh and cosh wall kernels."""
    s_left, s_right = sinh_kernels(grid.nodes, k)
    c_left, c_right = cosh_kernels(grid.nodes, k)
    return {
        "sinh_left": grid.l2(s_left),
        "sinh_right": grid.l2(s_right),
        "cosh_left": grid.l2(c_left),
        "cosh_right": grid.l2(c_right),
    }


def make_weight(params: ProblemParams, grid: ChebGrid) -> WeightFn:
    L = params.layer_scale
    values = np.minimum(1.0, np.minimum(L * grid.nodes, L * (1.0 - grid.nodes)))
    return WeightFn(L=L, values=values)


def make_cutoff(params: ProblemParams, profile: ShearProfile, delta: float) -> CutoffFn:
    if delta <= 0:
        raise InvalidArgumentError(f"Cutoff width must be positive, got {delta}")
    s = profile.u - params.lam
    mask = np.abs(s) < delta
    chi = np.where(mask, 2.0 * s**2 / delta**2 - s**4 / delta**4, 1.0)
    # chi/(V - lambda) factored so that it vanishes with V - lambda
    safe = np.where(mask, 1.0, s)
    over_shift = np.where(mask, 2.0 * s / delta**2 - s**3 / delta**4, 1.0 / safe)
    d_over_shift = profile.du * np.where(mask, 2.0 / delta**2 - 3.0 * s**2 / delta**4, -1.0 / safe**2)
    return CutoffFn(
        delta=delta,
        grid=profile.grid,
        values=chi,
        complement=1.0 - chi,
        e_delta_mask=mask,
        over_shift=over_shift,
        d_over_shift=d_over_shift,
    )


def cutoff_norms(cutoff: CutoffFn) -> Dict[str, float]:
    """Norms of chi/(V - lambda) with their predicted powers of delta."""
    grid = cutoff.grid
    return {
        "L2": grid.l2(cutoff.over_shift),
        "Linf": float(np.max(np.abs(cutoff.over_shift))),
        "dL2": grid.l2(cutoff.d_over_shift),
        "L2_scaled": grid.l2(cutoff.over_shift) * cutoff.delta**0.5,
        "Linf_scaled": float(np.max(np.abs(cutoff.over_shift))) * cutoff.delta,
        "dL2_scaled": grid.l2(cutoff.d_over_shift) * cutoff.delta**1.5,
    }


def weak_pairing(solution: ResolventSolution, f: ScalarField) -> complex:
    """<w_Na, f> = int w_Na conj(f) dy."""
    return solution.grid.inner(solution.w_na, f.values)
