"""Tests for the Orr-Sommerfeld resolvent solves and their decomposition."""

import math

import numpy as np
import pytest

from core.errors import InvalidArgumentError
from core.grid_spectral import ScalarField, build_grid
from core.models import ProblemParams
from core.os_resolvent import (
    ResolventSolver,
    assemble_blocks,
    coefficients,
    cosh_kernels,
    cutoff_norms,
    kernel_norms,
    make_cutoff,
    make_weight,
    required_nodes,
    resolve,
    sinh_kernels,
    solve_corrector,
    solve_navier_slip,
    solve_noslip,
    weak_pairing,
)
from core.persistence import OperatorCache
from core.shear_profile import make_profile


def _forcing(profile, params, phi, d2phi, d4phi):
    """F = L w for w = phi'' - k^2 phi, given phi and its even derivatives at the nodes."""
    k, nu = params.k, params.nu
    w = d2phi - k * k * phi
    d2w = d4phi - k * k * d2phi
    F = -nu * (d2w - k * k * w) + (1j * k * (profile.u - params.lam) + params.o_term) * w
    F = F - 1j * k * profile.d2u * phi
    return w, F


def test_noslip_recovers_clamped_polynomial():
    """Test that the no-slip solve reproduces phi = y^2 (1 - y)^2 from its forcing."""
    profile = make_profile("sinus-concave", build_grid(65))
    params = ProblemParams(nu=1e-2, k=2, lam=0.4)
    y = profile.grid.nodes
    phi = y**2 * (1 - y) ** 2
    w_exact, F = _forcing(profile, params, phi, 2 - 12 * y + 12 * y**2, np.full_like(y, 24.0))

    solution = solve_noslip(params, profile, ScalarField.from_values(profile.grid, F))

    scale = np.max(np.abs(w_exact))
    assert np.max(np.abs(solution.w - w_exact)) < 1e-7 * scale
    assert np.max(np.abs(solution.phi - phi)) < 1e-8
    assert solution.residual < 1e-10


def test_navier_slip_recovers_polynomial():
    """Test that the Navier-slip solve reproduces phi = y - 2y^3 + y^4, whose w vanishes at the walls."""
    profile = make_profile("tanh-monotone", build_grid(65))
    params = ProblemParams(nu=1e-2, k=1, lam=0.7)
    y = profile.grid.nodes
    phi = y - 2 * y**3 + y**4
    w_exact, F = _forcing(profile, params, phi, -12 * y + 12 * y**2, np.full_like(y, 24.0))

    solution = solve_navier_slip(params, profile, ScalarField.from_values(profile.grid, F))

    assert np.max(np.abs(solution.w_na - w_exact)) < 1e-7 * np.max(np.abs(w_exact))
    assert abs(solution.w_na[0]) < 1e-12
    assert abs(solution.w_na[-1]) < 1e-12


def test_noslip_solution_satisfies_wall_conditions():
    """Test that phi and its slope vanish at both walls."""
    profile = make_profile("couette", build_grid(65))
    params = ProblemParams(nu=1e-3, k=1, lam=0.3)
    grid = profile.grid
    F = ScalarField.from_function(grid, lambda y: np.sin(math.pi * y) + 0.5)

    solution = solve_noslip(params, profile, F)

    slope = grid.d1 @ solution.phi
    assert abs(solution.phi[0]) < 1e-12 and abs(solution.phi[-1]) < 1e-12
    assert abs(slope[0]) < 1e-10 and abs(slope[-1]) < 1e-10


def test_correctors_carry_unit_wall_slope():
    """Test that corrector 1 has slope 1 at y = 0 and corrector 2 has slope -1 at y = 1."""
    profile = make_profile("sinus-convex", build_grid(65))
    params = ProblemParams(nu=1e-2, k=2, lam=0.5)
    d1 = profile.grid.d1

    _, phi1 = solve_corrector(params, profile, 1)
    _, phi2 = solve_corrector(params, profile, 2)

    assert (d1 @ phi1)[0] == pytest.approx(1.0, abs=1e-10)
    assert abs((d1 @ phi1)[-1]) < 1e-10
    assert abs((d1 @ phi2)[0]) < 1e-10
    assert (d1 @ phi2)[-1] == pytest.approx(-1.0, abs=1e-10)


@pytest.mark.parametrize("name", ["couette", "sinus-concave", "tanh-monotone"])
def test_decomposition_recomposes_noslip_solution(name):
    """Test that w = w_Na + c1 w1 + c2 w2 holds on a resolved grid."""
    profile = make_profile(name, build_grid(129))
    params = ProblemParams(nu=1e-2, k=2, lam=0.45, o_term=0.002)
    F = ScalarField.from_function(profile.grid, lambda y: np.exp(y) * np.cos(3 * y))

    solution = resolve(params, profile, F)

    assert solution.recomposition_error() < 1e-7


@pytest.mark.parametrize("seed", range(6))
def test_decomposition_holds_for_random_parameters(seed):
    """Test that w = w_Na + c1 w1 + c2 w2 for random (nu, k, lambda, o) and forcings."""
    rng = np.random.default_rng(seed)
    nu = float(10 ** rng.uniform(-3, -2))
    k = int(rng.choice([1, 2, 3, 4]))
    lam = float(rng.uniform(-0.2, 1.2))
    cap = 0.01 * (nu * k * k) ** (1.0 / 3.0)
    o_term = complex(*(0.5 * cap * rng.uniform(-1, 1, 2) / math.sqrt(2)))
    name = ["couette", "sinus-concave", "sinus-convex", "quartic-concave", "tanh-monotone"][seed % 5]
    profile = make_profile(name, build_grid(required_nodes(nu, k)))
    a = rng.standard_normal(4) + 1j * rng.standard_normal(4)
    F = ScalarField.from_function(
        profile.grid,
        lambda y: a[0] + a[1] * y + a[2] * np.sin(3 * math.pi * y) + a[3] * np.exp(-((y - 0.3) ** 2) / 0.02),
    )

    solution = resolve(ProblemParams(nu=nu, k=k, lam=lam, o_term=o_term), profile, F)

    assert solution.recomposition_error() < 1e-7
    slope = profile.grid.d1 @ (solution.phi_na + solution.c1 * solution.phi1 + solution.c2 * solution.phi2)
    assert abs(slope[0]) < 1e-6 * np.max(np.abs(slope)) + 1e-9
    assert abs(slope[-1]) < 1e-6 * np.max(np.abs(slope)) + 1e-9


def test_first_coefficient_measures_navier_wall_slope():
    """Test that c1 = -phi_Na'(0) and c2 = phi_Na'(1)."""
    profile = make_profile("quartic-concave", build_grid(129))
    params = ProblemParams(nu=1e-2, k=3, lam=0.2)
    grid = profile.grid
    F = ScalarField.from_function(grid, lambda y: 1.0 + y**2)

    solution = solve_navier_slip(params, profile, F)
    c1, c2 = coefficients(ScalarField.from_values(grid, solution.w_na), params.k)

    slope = grid.d1 @ solution.phi_na
    assert c1 == pytest.approx(-slope[0], rel=1e-7)
    assert c2 == pytest.approx(slope[-1], rel=1e-7)


def test_solver_rejects_zero_wavenumber():
    """Test that resolvent problems refuse k = 0."""
    profile = make_profile("couette", build_grid(17))

    with pytest.raises(InvalidArgumentError):
        ResolventSolver(ProblemParams(nu=1e-2, k=0), profile)


def test_corrector_index_is_validated():
    """Test that only correctors 1 and 2 exist."""
    profile = make_profile("couette", build_grid(17))
    solver = ResolventSolver(ProblemParams(nu=1e-2, k=1), profile)

    with pytest.raises(InvalidArgumentError):
        solver.corrector(3)


def test_factorization_is_reused():
    """Test that the no-slip factorization serves later solves and both correctors."""
    profile = make_profile("couette", build_grid(33))
    solver = ResolventSolver(ProblemParams(nu=1e-2, k=1), profile)

    solver.corrector(1)
    factor = solver._factor("noslip")
    solver.corrector(2)
    solver.solve_noslip(np.ones(33))

    assert solver._factor("noslip") is factor


def test_operator_cache_round_trip(tmp_path):
    """Test that cached blocks are reused and equal the freshly assembled ones."""
    profile = make_profile("sinus-concave", build_grid(17))
    cache = OperatorCache(tmp_path, version=1)

    first = assemble_blocks(profile, 1e-3, 2, cache)
    second = assemble_blocks(profile, 1e-3, 2, cache)

    assert len(list((tmp_path / "v1").glob("*.npz"))) == 1
    assert np.array_equal(first, second)


def test_sinh_kernels_wall_values():
    """Test that the sinh kernels match the closed form and take the values 1 and 0 at the walls."""
    y = build_grid(33).nodes
    k = 2.0

    left, right = sinh_kernels(y, k)

    assert np.allclose(left, np.sinh(k * (1 - y)) / np.sinh(k))
    assert np.allclose(right, np.sinh(k * y) / np.sinh(k))
    assert left[0] == pytest.approx(1.0) and left[-1] == pytest.approx(0.0, abs=1e-15)


def test_sinh_kernels_do_not_overflow():
    """Test that very large wavenumbers give finite kernels."""
    left, right = sinh_kernels(build_grid(33).nodes, 5000.0)

    assert np.all(np.isfinite(left)) and np.all(np.isfinite(right))


def test_cosh_kernels_are_odd_in_k():
    """Test that cosh k(1-y)/sinh k changes sign with k."""
    y = build_grid(17).nodes

    plus, _ = cosh_kernels(y, 1.5)
    minus, _ = cosh_kernels(y, -1.5)

    assert np.allclose(plus, np.cosh(1.5 * (1 - y)) / np.sinh(1.5))
    assert np.allclose(minus, -plus)


def test_kernel_norms_closed_form_and_scaling():
    """Test the L2 norm of the sinh kernel at k = 1 and its k^(-1/2) decay."""
    grid = build_grid(257)

    exact = math.sqrt(math.sinh(2.0) / 4.0 - 0.5) / math.sinh(1.0)
    assert kernel_norms(grid, 1)["sinh_left"] == pytest.approx(exact, rel=1e-10)
    assert kernel_norms(grid, 64)["sinh_left"] * math.sqrt(64) == pytest.approx(math.sqrt(0.5), rel=1e-2)


def test_weight_is_capped_tent():
    """Test that rho vanishes at the walls, has slope L and is capped at 1."""
    params = ProblemParams(nu=1e-3, k=1)
    grid = build_grid(65)

    weight = make_weight(params, grid)

    assert weight.L == pytest.approx(10.0)
    assert weight.values[0] == 0.0 and weight.values[-1] == 0.0
    assert np.max(weight.values) == 1.0
    assert weight.values[1] == pytest.approx(10.0 * grid.nodes[1])


def test_cutoff_vanishes_on_critical_layer():
    """Test that chi is zero where V = lambda and one away from the critical layer."""
    profile = make_profile("couette", build_grid(65))
    params = ProblemParams(nu=1e-3, k=1, lam=0.5)

    cutoff = make_cutoff(params, profile, 0.1)

    middle = 32
    assert profile.u[middle] == pytest.approx(0.5)
    assert cutoff.values[middle] == pytest.approx(0.0, abs=1e-15)
    assert cutoff.values[0] == 1.0
    assert np.allclose(cutoff.values + cutoff.complement, 1.0)


def test_cutoff_norm_scaling():
    """Test that delta * sup |chi / (V - lambda)| stays of order one."""
    profile = make_profile("couette", build_grid(257))
    params = ProblemParams(nu=1e-3, k=1, lam=0.5)

    for delta in (0.2, 0.05):
        norms = cutoff_norms(make_cutoff(params, profile, delta))
        assert 0.8 <= norms["Linf_scaled"] <= 1.1


def test_cutoff_rejects_nonpositive_width():
    """Test that a zero cutoff width is refused."""
    profile = make_profile("couette", build_grid(17))

    with pytest.raises(InvalidArgumentError):
        make_cutoff(ProblemParams(nu=1e-3, k=1), profile, 0.0)


def test_weak_pairing_is_quadrature_inner_product():
    """Test that <w_Na, f> uses the grid inner product."""
    profile = make_profile("couette", build_grid(33))
    params = ProblemParams(nu=1e-2, k=1, lam=0.5)
    grid = profile.grid
    F = ScalarField.from_function(grid, lambda y: np.sin(math.pi * y))
    solution = resolve(params, profile, F)
    f = ScalarField.from_function(grid, lambda y: y * (1 - y))

    assert weak_pairing(solution, f) == pytest.approx(grid.inner(solution.w_na, f.values))


def test_required_nodes_policy():
    """Test that the node count follows the boundary-layer length with a floor."""
    assert required_nodes(1e-2, 1) == 129
    assert required_nodes(2e-6, 1) == 640
