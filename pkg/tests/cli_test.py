"""Tests for config loading, validation, exit codes and the CLI entry point."""

import json

import pytest

from cli.main import build_parser, main, merge_config
from cli.services import experiments
from cli.utils import EXIT_CHECKS_FAILED, EXIT_INVALID_INPUT, EXIT_OK, report_checks
from cli.utils.error_handlers import EXIT_NUMERICAL_FAILURE, exit_code_for
from core.errors import BlowUpError, ConfigParseError, ConfigValidationError, SolverFailureError


def test_load_toml_and_json(tmp_path):
    """Test that TOML and JSON experiment files load into dicts."""
    toml_file = tmp_path / "exp.toml"
    toml_file.write_text('command = "scan"\nnu_list = [1e-3, 1e-4]\n')
    json_file = tmp_path / "exp.json"
    json_file.write_text('{"command": "scan", "k_list": [1, 2]}')

    assert experiments.load_config_data(toml_file)["nu_list"] == [1e-3, 1e-4]
    assert experiments.load_config_data(json_file)["k_list"] == [1, 2]


def test_toml_parse_error_reports_line(tmp_path):
    """Test that a malformed TOML file reports the offending line."""
    path = tmp_path / "bad.toml"
    path.write_text('command = "scan"\nnu_list = \n')

    with pytest.raises(ConfigParseError) as info:
        experiments.load_config_data(path)

    assert info.value.line == 2


def test_json_parse_error_reports_line(tmp_path):
    """Test that a malformed JSON file reports the offending line."""
    path = tmp_path / "bad.json"
    path.write_text('{\n"command": "scan",\n"nu" 1e-3\n}\n')

    with pytest.raises(ConfigParseError) as info:
        experiments.load_config_data(path)

    assert info.value.line == 3


def test_json_top_level_must_be_object(tmp_path):
    """Test that a JSON list is not an experiment description."""
    path = tmp_path / "list.json"
    path.write_text("[1, 2]")

    with pytest.raises(ConfigParseError):
        experiments.load_config_data(path)


def test_validate_config_collects_physics_clauses():
    """Test that every violated physical constraint is reported together."""
    with pytest.raises(ConfigValidationError) as info:
        experiments.validate_config({"command": "scan", "nu_list": [-1e-3], "k_list": [0], "bounds": ["nope"]})

    clauses = info.value.clauses
    assert "nu must be positive" in clauses
    assert "k must be nonzero" in clauses
    assert any("unknown bound ids" in c for c in clauses)


def test_validate_config_reports_schema_errors_by_key():
    """Test that schema errors name the offending key."""
    with pytest.raises(ConfigValidationError) as info:
        experiments.validate_config({"bogus": 1})

    assert any(c.startswith("bogus") for c in info.value.clauses)


def test_validate_config_rejects_unknown_profile():
    """Test that an unknown preset is an invalid input."""
    with pytest.raises(ConfigValidationError) as info:
        experiments.validate_config({"profile": "no-such-profile"})

    assert any("no-such-profile" in c for c in info.value.clauses)


def test_zero_wavenumber_allowed_for_nonlinear():
    """Test that k = 0 is only rejected for resolvent commands."""
    config = experiments.validate_config({"command": "nonlinear", "k_list": [0], "nu_list": [1e-2]})

    assert config.k_list == [0]


def test_config_hash_is_stable():
    """Test that equal configs hash equally and different ones do not."""
    a = experiments.validate_config({"nu_list": [1e-3]})
    b = experiments.validate_config({"nu": 1e-3})
    c = experiments.validate_config({"nu_list": [1e-2]})

    assert experiments.config_hash(a) == experiments.config_hash(b)
    assert experiments.config_hash(a) != experiments.config_hash(c)


def test_flags_override_file_values(tmp_path):
    """Test that command-line flags win over experiment file values."""
    path = tmp_path / "exp.toml"
    path.write_text('nu = 1e-4\nk_list = [1]\nprofile = "sinus-concave"\nseed = 3\n')
    args = build_parser().parse_args(["scan", "--config", str(path), "--nu", "1e-3,1e-2", "--k", "2"])

    config = merge_config(args)

    assert config.command == "scan"
    assert config.nu_list == [1e-3, 1e-2]
    assert config.k_list == [2]
    assert config.profile.name == "sinus-concave"
    assert config.seed == 3


def test_exit_code_mapping():
    """Test that input errors map to 2, numerical failures to 3 and others propagate."""
    assert exit_code_for(ConfigParseError("x.toml", 1, "bad")) == EXIT_INVALID_INPUT
    assert exit_code_for(ConfigValidationError(["nu must be positive"])) == EXIT_INVALID_INPUT
    assert exit_code_for(BlowUpError(1.0, 2)) == EXIT_NUMERICAL_FAILURE
    assert exit_code_for(SolverFailureError("singular", 1e-3, 1, 0.5)) == EXIT_NUMERICAL_FAILURE
    with pytest.raises(KeyError):
        exit_code_for(KeyError("unexpected"))


def test_report_checks():
    """Test that any failed check gives exit code 1."""
    assert report_checks({"a": True}) == EXIT_OK
    assert report_checks({"a": True, "b": False}) == EXIT_CHECKS_FAILED


def test_main_help_and_usage_errors():
    """Test that --help exits cleanly and an unknown subcommand is invalid input."""
    assert main(["--help"]) == EXIT_OK
    assert main(["dance"]) == EXIT_INVALID_INPUT


def test_main_invalid_profile_writes_nothing(tmp_path):
    """Test that an invalid profile exits with 2 before any output is written."""
    out = tmp_path / "out"

    code = main(["profile-check", "--profile", "no-such-profile", "--out", str(out)])

    assert code == EXIT_INVALID_INPUT
    assert not (out / "manifest.json").exists()


def test_main_profile_check(tmp_path):
    """Test that profile-check on Couette passes and writes its tables and manifest."""
    code = main(["profile-check", "--profile", "couette", "--nu", "1e-2", "--nodes", "33", "--out", str(tmp_path)])

    assert code == EXIT_OK
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["outputs"] == ["heat_flow.csv", "profile.csv", "summary.json", "manifest.json"]
    assert manifest["grid_sizes"] == {"nodes": 33}
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["checks"] == {"condition_M": True, "heat_flow_certified": True}


@pytest.mark.slow
def test_main_selftest_exit_code_matches_summary(tmp_path):
    """Test that selftest writes a summary whose verdict matches the exit code."""
    code = main(["selftest", "--out", str(tmp_path)])

    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["checks_run"] == len(summary["checks"])
    assert code == (EXIT_OK if summary["passed"] else EXIT_CHECKS_FAILED)


def test_selftest_covers_the_invariant_suite():
    """Test that selftest reports every invariant family and that the decomposition identity holds."""
    bundle = experiments.run_selftest(experiments.validate_config({"command": "selftest"}))

    expected = {
        "quadrature_length",
        "helmholtz_closed_form",
        "dual_norm_eigenfunction",
        "condition_M_presets",
        "heat_flow_wall_values",
        "heat_flow_sign_preserved",
        "heat_flow_regularity",
        "cutoff_norm_scaling",
        "decomposition_identity",
        "sinh_kernel_window",
        "weighted_inequality",
        "zero_mode_heat_step",
    }
    assert set(bundle.checks) == expected
    assert bundle.summary["checks_run"] == len(expected)
    assert bundle.checks["decomposition_identity"]
    assert bundle.checks["condition_M_presets"]
    assert bundle.checks["cutoff_norm_scaling"]
    assert bundle.checks["heat_flow_wall_values"]


def test_scan_reports_coefficient_decay():
    """Test that scan tabulates the c1 decay away from the wall value and checks its slope."""
    config = experiments.validate_config(
        {"command": "scan", "profile": "couette", "nu_list": [1e-3], "k_list": [1], "bounds": ["coeff_L2"], "nodes": 65}
    )

    bundle = experiments.run_scan(config)

    table = bundle.tables["coefficient_decay"]
    assert table.columns == ["nu", "k", "fitted_exponent", "r2", "n_points", "status"]
    assert len(table.rows) == 1
    assert table.rows[0][-1] == "pass"
    assert bundle.checks["coeff_decay_c1_nu0.001_k1"]
