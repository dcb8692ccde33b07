"""Chebyshev collocation on the channel [0, 1].

Nodes are the Chebyshev–Gauss–Lobatto points x_j = cos(j pi / (n - 1)) mapped
by y = (1 - x) / 2, so they increase from exactly 0 to exactly 1. The
differentiation matrices come from the Weideman–Reddy recursion
(trigonometric node differences plus the flipping trick) and are built lazily:
large grids used only for quadrature never pay for the O(n^2) matrices.

Boundary conditions are imposed by replacing the first and last collocation
rows. Every other module builds on the Dirichlet Helmholtz solve defined here.
"""

import logging
import math
import threading
from functools import cached_property, lru_cache
from typing import Callable, Dict, List, Literal, Optional, Tuple

import numpy as np
from numpy.polynomial import chebyshev
from pydantic import BaseModel, ConfigDict, model_validator
from scipy.fft import dct
from scipy.linalg import lu_factor, lu_solve, toeplitz

from .errors import InvalidArgumentError

logger = logging.getLogger(__name__)

NormKind = Literal["L2", "H1k", "H1k_dual", "Linf"]

MIN_NODES = 8


def chebdiff(n: int, m: int) -> Tuple[np.ndarray, List[np.ndarray]]:
    """Chebyshev points on [-1, 1] and the first ``m`` differentiation matrices.

    Points are returned in decreasing order, x_0 = 1 and x_{n-1} = -1.
    """
    n1 = n // 2
    n2 = (n + 1) // 2
    k = np.arange(n).reshape(n, 1)
    th = k * math.pi / (n - 1)

    # cos(th) written as sin(pi/2 - th) keeps the points exactly symmetric
    x = np.sin(math.pi * np.arange(n - 1, -1 - n, -2) / (2.0 * (n - 1)))

    t = np.tile(th / 2.0, n)
    dx = 2.0 * np.sin(t.T + t) * np.sin(t.T - t)
    dx[n1:, :] = -np.flipud(np.fliplr(dx[:n2, :]))
    np.fill_diagonal(dx, 1.0)
    z = 1.0 / dx
    np.fill_diagonal(z, 0.0)

    c = toeplitz((-1.0) ** np.arange(n))
    c[0, :] *= 2.0
    c[-1, :] *= 2.0
    c[:, 0] /= 2.0
    c[:, -1] /= 2.0

    matrices = []
    d = np.eye(n)
    for ell in range(m):
        diag = np.diag(d).reshape(n, 1)
        d = (ell + 1) * z * (c * np.tile(diag, n) - d)
        np.fill_diagonal(d, -np.sum(d, axis=1))
        matrices.append(d)

    return x, matrices


def clenshaw_curtis_weights(n: int) -> np.ndarray:
    """Clenshaw–Curtis weights for the ``n`` Lobatto nodes, scaled to [0, 1]."""
    big_n = n - 1
    theta = math.pi * np.arange(n) / big_n
    weights = np.zeros(n)
    interior = np.arange(1, big_n)
    v = np.ones(big_n - 1)
    if big_n % 2 == 0:
        weights[0] = weights[big_n] = 1.0 / (big_n**2 - 1)
        for j in range(1, big_n // 2):
            v -= 2.0 * np.cos(2 * j * theta[interior]) / (4 * j * j - 1)
        v -= np.cos(big_n * theta[interior]) / (big_n**2 - 1)
    else:
        weights[0] = weights[big_n] = 1.0 / big_n**2
        for j in range(1, (big_n - 1) // 2 + 1):
            v -= 2.0 * np.cos(2 * j * theta[interior]) / (4 * j * j - 1)
    weights[interior] = 2.0 * v / big_n
    return 0.5 * weights


class ChebGrid:
    """Chebyshev–Gauss–Lobatto grid on [0, 1].

    Treat instances as immutable: the node and weight arrays are read-only,
    and the lazily built operators never change once computed, so a grid can
    be shared freely between threads.
    """

    def __init__(self, n: int):
        if n < MIN_NODES:
            raise InvalidArgumentError(f"Node count must be >= {MIN_NODES}, got {n}")
        self.n = n
        j = np.arange(n)
        x = np.sin(math.pi * (n - 1 - 2 * j) / (2.0 * (n - 1)))
        nodes = (1.0 - x) / 2.0
        nodes.setflags(write=False)
        self.nodes = nodes
        quad = clenshaw_curtis_weights(n)
        quad.setflags(write=False)
        self.quad = quad
        self._helmholtz: Dict[float, tuple] = {}
        self._lock = threading.Lock()

    def __repr__(self) -> str:
        return f"ChebGrid(n={self.n})"

    @cached_property
    def _derivatives(self) -> List[np.ndarray]:
        _, matrices = chebdiff(self.n, 4)
        # d/dy = -2 d/dx under y = (1 - x) / 2
        scaled = [(-2.0) ** (order + 1) * d for order, d in enumerate(matrices)]
        for d in scaled:
            d.setflags(write=False)
        return scaled

    @property
    def d1(self) -> np.ndarray:
        return self._derivatives[0]

    @property
    def d2(self) -> np.ndarray:
        return self._derivatives[1]

    @property
    def d3(self) -> np.ndarray:
        return self._derivatives[2]

    @property
    def d4(self) -> np.ndarray:
        return self._derivatives[3]

    @cached_property
    def wall_weight(self) -> np.ndarray:
        """The weight 1 - (2y - 1)^2 = 4y(1 - y) of the stability norm."""
        return 1.0 - (2.0 * self.nodes - 1.0) ** 2

    @cached_property
    def spacing(self) -> np.ndarray:
        """Local node spacing, the larger of the two neighbouring gaps."""
        gaps = np.diff(self.nodes)
        return np.maximum(np.concatenate([[gaps[0]], gaps]), np.concatenate([gaps, [gaps[-1]]]))

    def diff(self, values: np.ndarray, order: int = 1) -> np.ndarray:
        return self._derivatives[order - 1] @ values

    def integrate(self, values: np.ndarray):
        return self.quad @ values

    def inner(self, f: np.ndarray, g: np.ndarray) -> complex:
        """Quadrature of f * conj(g) over [0, 1]."""
        return complex(self.quad @ (f * np.conj(g)))

    def l2(self, f: np.ndarray) -> float:
        return float(np.sqrt(self.quad @ np.abs(f) ** 2))

    def h1k(self, f: np.ndarray, k: float) -> float:
        df = self.d1 @ f
        return float(np.sqrt(self.quad @ (np.abs(df) ** 2 + k * k * np.abs(f) ** 2)))

    def h1k_dual(self, f: np.ndarray, k: float) -> float:
        # Riesz representative: -(d^2 - k^2) g = f with g = 0 at both walls
        g = -self.solve_helmholtz(k, f)
        return self.h1k(g, k)

    def chebyshev_coefficients(self, values: np.ndarray) -> np.ndarray:
        values = np.asarray(values)
        if np.iscomplexobj(values):
            return self.chebyshev_coefficients(values.real) + 1j * self.chebyshev_coefficients(values.imag)
        coeffs = dct(values.astype(float), type=1) / (self.n - 1)
        coeffs[0] /= 2.0
        coeffs[-1] /= 2.0
        return coeffs

    def interpolate(self, values: np.ndarray, y) -> np.ndarray:
        """Evaluate the degree n-1 interpolant of ``values`` at points ``y``."""
        return chebyshev.chebval(1.0 - 2.0 * np.asarray(y, dtype=float), self.chebyshev_coefficients(values))

    def helmholtz_factor(self, k: float) -> tuple:
        """LU factors of d2 - k^2 with Dirichlet rows, cached per k^2."""
        key = float(k) ** 2
        with self._lock:
            factor = self._helmholtz.get(key)
            if factor is None:
                matrix = self.d2 - key * np.eye(self.n)
                matrix[0, :] = 0.0
                matrix[0, 0] = 1.0
                matrix[-1, :] = 0.0
                matrix[-1, -1] = 1.0
                factor = lu_factor(matrix)
                self._helmholtz[key] = factor
        return factor

    def solve_helmholtz(self, k: float, rhs: np.ndarray) -> np.ndarray:
        """(d^2 - k^2) psi = rhs at interior nodes, psi = 0 at both walls."""
        b = np.array(rhs, dtype=np.result_type(rhs, float))
        b[0] = 0.0
        b[-1] = 0.0
        return lu_solve(self.helmholtz_factor(k), b)


@lru_cache(maxsize=32)
def build_grid(n: int) -> ChebGrid:
    """Return the (cached) Chebyshev grid with ``n`` nodes."""
    if n < MIN_NODES:
        raise InvalidArgumentError(f"Node count must be >= {MIN_NODES}, got {n}")
    logger.debug(f"Building Chebyshev grid with {n} nodes")
    return ChebGrid(n)


class ScalarField(BaseModel):
    """Point values of a complex function at the nodes of a grid."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    grid: ChebGrid
    values: np.ndarray

    @model_validator(mode="after")
    def validate_values(self) -> "ScalarField":
        if self.values.shape != (self.grid.n,):
            raise ValueError(
                f"field has shape {self.values.shape}, grid has {self.grid.n} nodes"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field values must be finite")
        return self

    @classmethod
    def from_values(cls, grid: ChebGrid, values) -> "ScalarField":
        return cls(grid=grid, values=np.asarray(values, dtype=complex))

    @classmethod
    def from_function(cls, grid: ChebGrid, fn: Callable[[np.ndarray], np.ndarray]) -> "ScalarField":
        return cls.from_values(grid, fn(grid.nodes))


def norm(field: ScalarField, kind: NormKind, k: Optional[float] = None) -> float:
    """Norm of a field: L2, H1k, H1k_dual (the H^{-1}_k dual norm) or Linf."""
    grid, values = field.grid, field.values
    if kind in ("H1k", "H1k_dual") and not k:
        raise InvalidArgumentError(f"Norm {kind} needs a nonzero wavenumber")
    if kind == "L2":
        return grid.l2(values)
    if kind == "Linf":
        return float(np.max(np.abs(values)))
    if kind == "H1k":
        return grid.h1k(values, k)
    if kind == "H1k_dual":
        return grid.h1k_dual(values, k)
    raise InvalidArgumentError(f"Unknown norm kind: {kind}")


def solve_helmholtz_dirichlet(grid: ChebGrid, k: float, rhs: ScalarField) -> ScalarField:
    """Solve (d^2 - k^2) psi = rhs with psi(0) = psi(1) = 0 (k = 0 allowed)."""
    if rhs.grid.n != grid.n:
        raise InvalidArgumentError(f"Field lives on {rhs.grid.n} nodes, grid has {grid.n}")
    return ScalarField.from_values(grid, grid.solve_helmholtz(k, rhs.values))
