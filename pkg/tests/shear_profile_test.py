"""Tests for the shear profile presets, condition (M) and the heat evolution."""

import math

import numpy as np
import pytest

from core.errors import InvalidArgumentError
from core.grid_spectral import build_grid
from core.shear_profile import (
    HeatFlow,
    certify_heat_flow,
    heat_evolve,
    make_profile,
    preset_names,
    profile_from_values,
    profile_on_grid,
    regularity_check,
    validate_condition_M,
)


@pytest.mark.parametrize("name", preset_names())
def test_presets_satisfy_condition_m(name):
    """Test that every shipped preset passes the monotone single-convexity check."""
    profile = make_profile(name, build_grid(65))

    report = validate_condition_M(profile)

    assert report.passed, report.violated
    assert report.c0 > 0


def test_preset_convexity_labels():
    """Test that the presets are classified with the expected curvature sign."""
    grid = build_grid(65)

    assert make_profile("couette", grid).convexity == "linear"
    assert make_profile("sinus-concave", grid).convexity == "concave"
    assert make_profile("sinus-convex", grid).convexity == "convex"
    assert make_profile("quartic-concave", grid).convexity == "concave"
    assert make_profile("tanh-monotone", grid).convexity == "convex"


def test_certified_slope_bounds_of_sinus():
    """Test that c0 and C0 of y + eps sin(pi y) are 1 -/+ eps pi."""
    profile = make_profile("sinus-concave", build_grid(65), eps=0.1)

    assert profile.c0 == pytest.approx(1.0 - 0.1 * math.pi, abs=1e-12)
    assert profile.C0 == pytest.approx(1.0 + 0.1 * math.pi, abs=1e-12)


def test_unknown_preset_is_rejected():
    """Test that an unknown preset name raises with the list of known ones."""
    with pytest.raises(InvalidArgumentError) as exc_info:
        make_profile("poiseuille", build_grid(17))

    assert "couette" in str(exc_info.value)


def test_unknown_preset_parameter_is_rejected():
    """Test that presets refuse parameters they do not define."""
    with pytest.raises(InvalidArgumentError):
        make_profile("couette", build_grid(17), eps=0.1)


def test_non_monotone_profile_fails():
    """Test that a profile with a negative slope somewhere violates (M)."""
    profile = make_profile("sinus-concave", build_grid(65), eps=0.5)

    report = validate_condition_M(profile)

    assert not report.passed
    assert any("c0 > 0" in clause for clause in report.violated)


def test_inflection_point_fails():
    """Test that curvature changing sign is reported as indefinite."""
    grid = build_grid(65)
    y = grid.nodes
    profile = profile_from_values(grid, y + 0.02 * np.sin(2.0 * math.pi * y))

    report = validate_condition_M(profile)

    assert profile.convexity == "indefinite"
    assert not report.passed


def test_wall_curvature_fails():
    """Test that nonzero curvature at the walls violates (M)."""
    grid = build_grid(33)
    y = grid.nodes
    profile = profile_from_values(grid, y + 0.1 * y**2)

    report = validate_condition_M(profile)

    assert not report.passed
    assert any("vanish at y=0" in clause for clause in report.violated)


def test_tabulated_profile_matches_preset():
    """Test that spectral differentiation of preset values reproduces its closed-form slope."""
    grid = build_grid(65)
    preset = make_profile("sinus-concave", grid)

    tabulated = profile_from_values(grid, preset.u)

    assert np.max(np.abs(tabulated.du - preset.du)) < 1e-10
    assert tabulated.c0 == pytest.approx(preset.c0, abs=1e-9)


def test_profile_on_grid_reevaluates_presets():
    """Test that moving a preset to another grid evaluates it there."""
    profile = make_profile("tanh-monotone", build_grid(33))
    fine = build_grid(129)

    moved = profile_on_grid(profile, fine)

    assert moved.grid is fine
    assert np.allclose(moved.u, make_profile("tanh-monotone", fine).u)
    assert profile_on_grid(profile, build_grid(33)) is profile


def test_profile_on_grid_interpolates_tabulated():
    """Test that a tabulated profile is interpolated onto the new nodes."""
    grid = build_grid(33)
    profile = profile_from_values(grid, grid.nodes + 0.05 * np.sin(math.pi * grid.nodes), name="custom")
    fine = build_grid(65)

    moved = profile_on_grid(profile, fine)

    expected = fine.nodes + 0.05 * np.sin(math.pi * fine.nodes)
    assert np.max(np.abs(moved.u - expected)) < 1e-10
    assert moved.name == "custom"


def test_fingerprint_distinguishes_profiles():
    """Test that different flows hash differently and equal flows identically."""
    grid = build_grid(33)

    assert make_profile("couette", grid).fingerprint() == make_profile("couette", grid).fingerprint()
    assert make_profile("couette", grid).fingerprint() != make_profile("sinus-convex", grid).fingerprint()


def test_heat_flow_damps_sine_mode_exactly():
    """Test that y + eps sin(pi y) evolves to y + eps exp(-nu pi^2 t) sin(pi y)."""
    grid = build_grid(129)
    profile = make_profile("sinus-concave", grid, eps=0.1)
    nu, t = 1e-2, 3.0

    evolved = heat_evolve(profile, nu, t)

    damping = math.exp(-nu * math.pi**2 * t)
    y = grid.nodes
    assert np.max(np.abs(evolved.u - (y + 0.1 * damping * np.sin(math.pi * y)))) < 1e-10
    assert np.max(np.abs(evolved.d2u + 0.1 * damping * math.pi**2 * np.sin(math.pi * y))) < 1e-8
    assert evolved.time == pytest.approx(t)


def test_heat_flow_keeps_wall_values():
    """Test that the evolution leaves U(0) and U(1) unchanged."""
    profile = make_profile("tanh-monotone", build_grid(65))

    evolved = heat_evolve(profile, 1e-2, 5.0)

    assert evolved.wall_values == pytest.approx(profile.wall_values, abs=1e-12)


def test_heat_fields_agree_with_full_profile():
    """Test that the light field evaluator matches the certified profile."""
    profile = make_profile("quartic-concave", build_grid(65))
    flow = HeatFlow(profile, 1e-3)

    u, d2u = flow.fields(10.0)
    full = flow.at(10.0)

    assert np.allclose(u, full.u)
    assert np.allclose(d2u, full.d2u)


def test_frozen_flow_returns_initial_profile():
    """Test that a frozen flow ignores time."""
    profile = make_profile("sinus-convex", build_grid(33))
    flow = HeatFlow(profile, 1e-2, frozen=True)

    assert flow.at(100.0) is profile
    assert flow.fields(100.0)[0] is profile.u


def test_heat_evolve_rejects_negative_time():
    """Test that negative times and viscosities are refused."""
    profile = make_profile("couette", build_grid(17))

    with pytest.raises(InvalidArgumentError):
        heat_evolve(profile, 1e-3, -1.0)
    with pytest.raises(InvalidArgumentError):
        HeatFlow(profile, -1e-3)


def test_heat_evolve_at_zero_is_identity():
    """Test that evolving for zero time returns the same profile."""
    profile = make_profile("sinus-concave", build_grid(33))

    assert heat_evolve(profile, 1e-3, 0.0) is profile


def test_regularity_within_bound():
    """Test that |U(t) - U(s)| and |U''(t) - U''(s)| stay below nu |t - s| ||U||_H4."""
    profile = make_profile("sinus-concave", build_grid(129))

    report = regularity_check(profile, 1e-3, 20.0, 5.0)

    assert report.linf_diff > 0
    assert report.linf_ratio <= 1.0
    assert report.d2_ratio <= 1.0


def test_certify_heat_flow_keeps_structure():
    """Test that the slope bounds and convexity survive the evolution of a concave profile."""
    profile = make_profile("sinus-concave", build_grid(129))
    nu = 1e-3
    times = [j * nu ** (-1.0 / 3.0) for j in range(6)]

    certificates = certify_heat_flow(profile, nu, times)

    assert len(certificates) == len(times)
    for cert in certificates:
        assert cert.c0 >= profile.c0 - 1e-12
        assert cert.C0 <= profile.C0 + 1e-12
        assert cert.convexity == "concave"
    assert certificates[-1].d2_l2 < certificates[0].d2_l2
