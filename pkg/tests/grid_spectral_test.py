"""Tests for the Chebyshev grid, its norms and the Dirichlet Helmholtz solve."""

import math

import numpy as np
import pytest
from pydantic import ValidationError

from core.errors import InvalidArgumentError
from core.grid_spectral import ScalarField, build_grid, chebdiff, norm, solve_helmholtz_dirichlet


def test_nodes_run_from_zero_to_one():
    """Test that the nodes increase strictly and hit both walls exactly."""
    grid = build_grid(33)

    assert grid.nodes[0] == 0.0
    assert grid.nodes[-1] == 1.0
    assert np.all(np.diff(grid.nodes) > 0)


def test_nodes_are_symmetric():
    """Test that the node set is symmetric about the channel centre."""
    grid = build_grid(64)

    assert np.allclose(grid.nodes + grid.nodes[::-1], 1.0, atol=1e-15)


def test_build_grid_rejects_tiny_grids():
    """Test that fewer than eight nodes are refused."""
    with pytest.raises(InvalidArgumentError):
        build_grid(4)


def test_build_grid_is_cached():
    """Test that repeated requests share one grid object."""
    assert build_grid(41) is build_grid(41)


def test_quadrature_integrates_polynomials():
    """Test that Clenshaw-Curtis weights integrate low-degree polynomials exactly."""
    grid = build_grid(17)
    y = grid.nodes

    assert grid.integrate(np.ones_like(y)) == pytest.approx(1.0, abs=1e-14)
    assert grid.integrate(y**2) == pytest.approx(1.0 / 3.0, abs=1e-14)
    assert grid.integrate(y**7) == pytest.approx(1.0 / 8.0, abs=1e-13)


def test_first_derivative_of_polynomial():
    """Test that d1 differentiates a cubic to rounding accuracy."""
    grid = build_grid(33)
    y = grid.nodes

    assert np.max(np.abs(grid.d1 @ y**3 - 3.0 * y**2)) < 1e-10


def test_higher_derivatives_of_sine():
    """Test that d2 and d4 reproduce the derivatives of sin(pi y)."""
    grid = build_grid(21)
    y = grid.nodes
    f = np.sin(math.pi * y)

    assert np.max(np.abs(grid.d2 @ f + math.pi**2 * f)) < 1e-8
    assert np.max(np.abs(grid.d4 @ f - math.pi**4 * f)) < 1e-3


def test_chebdiff_returns_decreasing_points():
    """Test that the raw differentiation routine orders points from 1 to -1."""
    x, matrices = chebdiff(9, 2)

    assert x[0] == 1.0
    assert x[-1] == -1.0
    assert len(matrices) == 2
    assert np.allclose(matrices[0] @ x, 1.0)


def test_chebyshev_coefficients_pick_out_t2():
    """Test that T_2 in the mapped variable has a single unit coefficient."""
    grid = build_grid(17)
    x = 1.0 - 2.0 * grid.nodes
    coeffs = grid.chebyshev_coefficients(2.0 * x**2 - 1.0)

    expected = np.zeros(17)
    expected[2] = 1.0
    assert np.allclose(coeffs, expected, atol=1e-14)


def test_interpolate_off_grid():
    """Test that the interpolant reproduces a smooth function between nodes."""
    grid = build_grid(33)
    values = np.sin(math.pi * grid.nodes)
    points = np.array([0.1, 0.3, 0.77])

    assert np.allclose(grid.interpolate(values, points), np.sin(math.pi * points), atol=1e-10)


def test_helmholtz_closed_form():
    """Test that (d^2 - 1) psi = -1 with Dirichlet walls gives 1 - cosh(y - 1/2)/cosh(1/2)."""
    grid = build_grid(65)
    rhs = ScalarField.from_values(grid, -np.ones(grid.n))

    psi = solve_helmholtz_dirichlet(grid, 1.0, rhs).values

    exact = 1.0 - np.cosh(grid.nodes - 0.5) / np.cosh(0.5)
    assert np.max(np.abs(psi - exact)) < 1e-10
    assert abs(psi[0]) < 1e-12 and abs(psi[-1]) < 1e-12


def test_helmholtz_allows_zero_wavenumber():
    """Test that k = 0 solves the Poisson problem psi'' = 2."""
    grid = build_grid(17)
    rhs = ScalarField.from_values(grid, 2.0 * np.ones(grid.n))

    psi = solve_helmholtz_dirichlet(grid, 0.0, rhs).values

    y = grid.nodes
    assert np.max(np.abs(psi - (y**2 - y))) < 1e-12


def test_helmholtz_rejects_mismatched_grid():
    """Test that a field from another grid is refused."""
    rhs = ScalarField.from_values(build_grid(17), np.zeros(17))

    with pytest.raises(InvalidArgumentError):
        solve_helmholtz_dirichlet(build_grid(33), 1.0, rhs)


def test_norms_of_sine():
    """Test the L2, H1_k, dual and sup norms of sin(pi y) against closed forms."""
    grid = build_grid(65)
    field = ScalarField.from_function(grid, lambda y: np.sin(math.pi * y))
    k = 2.0

    assert norm(field, "L2") == pytest.approx(math.sqrt(0.5), rel=1e-12)
    assert norm(field, "Linf") == pytest.approx(1.0, rel=1e-12)
    assert norm(field, "H1k", k) == pytest.approx(math.sqrt(0.5 * (math.pi**2 + k**2)), rel=1e-10)
    assert norm(field, "H1k_dual", k) == pytest.approx(math.sqrt(0.5 / (math.pi**2 + k**2)), rel=1e-9)


def test_wavenumber_norms_need_k():
    """Test that the k-weighted norms refuse a missing wavenumber."""
    field = ScalarField.from_values(build_grid(17), np.ones(17))

    with pytest.raises(InvalidArgumentError):
        norm(field, "H1k")


def test_scalar_field_validates_shape():
    """Test that a field with the wrong number of values is rejected."""
    with pytest.raises(ValidationError):
        ScalarField.from_values(build_grid(17), np.zeros(16))


def test_scalar_field_rejects_nan():
    """Test that non-finite field values are rejected."""
    values = np.zeros(17)
    values[3] = np.nan

    with pytest.raises(ValidationError):
        ScalarField.from_values(build_grid(17), values)


def test_wall_weight_vanishes_at_walls():
    """Test that the stability weight is 4y(1 - y)."""
    grid = build_grid(17)
    y = grid.nodes

    assert np.allclose(grid.wall_weight, 4.0 * y * (1.0 - y))
    assert grid.wall_weight[0] == 0.0
