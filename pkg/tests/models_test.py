"""Tests for the plain-data models."""

import pytest
from pydantic import ValidationError

from core.models import (
    EnergyLedger,
    ExperimentConfig,
    FitRecord,
    ModeLedger,
    ProblemParams,
    ReportBundle,
)


def test_problem_params_require_positive_viscosity():
    """Test that zero or negative viscosity is rejected."""
    with pytest.raises(ValidationError):
        ProblemParams(nu=0.0, k=1)
    with pytest.raises(ValidationError):
        ProblemParams(nu=-1e-3, k=1)


def test_problem_params_cap_the_complex_shift():
    """Test that |o_term| may not exceed eps1 (nu k^2)^(1/3)."""
    cap = 0.01 * (1e-3) ** (1.0 / 3.0)

    ok = ProblemParams(nu=1e-3, k=1, o_term=complex(0.0, 0.9 * cap))

    assert ok.o_term.imag == pytest.approx(0.9 * cap)
    with pytest.raises(ValidationError):
        ProblemParams(nu=1e-3, k=1, o_term=2 * cap)


def test_layer_scale():
    """Test that the layer scale is nu^(-1/3) k^(1/3)."""
    params = ProblemParams(nu=1e-3, k=8)

    assert params.layer_scale == pytest.approx(20.0)


def test_experiment_config_accepts_scalar_nu_and_profile_name():
    """Test that 'nu' and a bare profile name are accepted as shorthands."""
    config = ExperimentConfig(nu=1e-3, profile="tanh-monotone")

    assert config.nu_list == [1e-3]
    assert config.profile.name == "tanh-monotone"
    assert config.profile.params == {}


def test_experiment_config_forbids_unknown_keys():
    """Test that misspelled keys are reported instead of ignored."""
    with pytest.raises(ValidationError):
        ExperimentConfig(nu_lst=[1e-3])


def test_experiment_config_rejects_unknown_command():
    """Test that the command must be one of the subcommands."""
    with pytest.raises(ValidationError):
        ExperimentConfig(command="dance")


def test_fit_record_passed():
    """Test that only a 'pass' status counts as passed."""
    common = dict(bound_id="noslip_FH-1", k=1, admissible_range=(-0.1, 0.1), n_points=4)

    assert FitRecord(status="pass", **common).passed
    assert not FitRecord(status="fail", **common).passed
    assert not FitRecord(status="fit-unavailable", **common).passed


def test_energy_ledger_total_counts_conjugate_modes_twice():
    """Test that the total is E_0 + 2 sum_k E_k."""
    ledger = EnergyLedger(
        modes=[
            ModeLedger(k=0, sup_om=1.0, inviscid_damping=100.0),
            ModeLedger(k=1, inviscid_damping=1.0, sup_u_inf=2.0, sup_weighted_om=3.0, enhanced_dissipation=4.0),
        ]
    )

    assert ledger.modes[0].total == 1.0
    assert ledger.total == pytest.approx(21.0)


def test_report_bundle_passed():
    """Test that a bundle passes exactly when every check passes."""
    assert ReportBundle().passed
    assert ReportBundle(checks={"a": True}).passed
    assert not ReportBundle(checks={"a": True, "b": False}).passed
