"""Service layer turning validated experiment descriptions into report bundles.

Purpose:
- Parse and validate experiment files (TOML or JSON) into ExperimentConfig.
- Provide one run function per CLI subcommand; each returns a ReportBundle
  that core.persistence.emit_report writes to disk.
- Build the run manifest.
"""

from __future__ import annotations

import hashlib
import json
import math
import pathlib
import re
import time
import tomllib
from typing import Any, Dict, List, Optional

import numpy as np
from pydantic import ValidationError

from core import lin_evolution, nonlinear_sim, os_resolvent, resolvent_scan, shear_profile
from core.config import settings
from core.errors import ConfigParseError, ConfigValidationError, InvalidArgumentError
from core.grid_spectral import ScalarField, build_grid, norm, solve_helmholtz_dirichlet
from core.models import ExperimentConfig, PerturbationSpec, ProblemParams, ReportBundle, RunManifest, Table
from core.persistence import OperatorCache

# Commands whose wavenumbers must be nonzero.
RESOLVENT_COMMANDS = {"scan", "lin-evolve"}

# --- Configuration ----------------------------------------------------------------


def load_config_data(path: pathlib.Path) -> Dict[str, Any]:
    """Read a TOML or JSON experiment file into a plain dict."""
    path = pathlib.Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigParseError(str(path), None, str(e)) from e

    if path.suffix.lower() == ".json":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigParseError(str(path), e.lineno, e.msg) from e
    else:
        try:
            data = tomllib.loads(text)
        except tomllib.TOMLDecodeError as e:
            line = getattr(e, "lineno", None)
            if line is None:
                match = re.search(r"line (\d+)", str(e))
                line = int(match.group(1)) if match else None
            raise ConfigParseError(str(path), line, str(e)) from e

    if not isinstance(data, dict):
        raise ConfigParseError(str(path), None, "top level must be a table/object")
    return data


def _physics_clauses(config: ExperimentConfig) -> List[str]:
    clauses = []
    if any(nu <= 0 for nu in config.nu_list):
        clauses.append("nu must be positive")
    if config.command in RESOLVENT_COMMANDS and any(k == 0 for k in config.k_list):
        clauses.append("k must be nonzero")
    if config.horizon is not None and config.horizon <= 0:
        clauses.append("horizon must be positive")
    if config.horizon_factor <= 0:
        clauses.append("horizon_factor must be positive")
    if config.amplitude is not None and config.amplitude < 0:
        clauses.append("amplitude must be nonnegative")
    if config.nodes is not None and config.nodes < 8:
        clauses.append("nodes must be >= 8")
    if not 0 < config.c_bracket[0] < config.c_bracket[1]:
        clauses.append("c_bracket must satisfy 0 < c_lo < c_hi")
    if not 0 <= config.o_fraction <= 1:
        clauses.append("o_fraction must lie in [0, 1]")
    unknown = [b for b in config.bounds if b not in resolvent_scan.BOUNDS]
    if unknown:
        clauses.append(f"unknown bound ids {unknown}")
    if config.profile.name not in shear_profile.PRESETS:
        clauses.append(f"unknown profile preset '{config.profile.name}'")
        return clauses
    try:
        profile = shear_profile.make_profile(
            config.profile.name, build_grid(settings.DEFAULT_NODES), **config.profile.params
        )
    except InvalidArgumentError as e:
        clauses.append(str(e))
        return clauses
    report = shear_profile.validate_condition_M(profile)
    clauses.extend(f"profile violates condition (M): {v}" for v in report.violated)
    return clauses


def validate_config(data: Dict[str, Any]) -> ExperimentConfig:
    """Validate raw config data, collecting every violated clause."""
    try:
        config = ExperimentConfig.model_validate(data)
    except ValidationError as e:
        clauses = [f"{'.'.join(str(p) for p in err['loc']) or 'config'}: {err['msg']}" for err in e.errors()]
        raise ConfigValidationError(clauses) from e
    clauses = _physics_clauses(config)
    if clauses:
        raise ConfigValidationError(clauses)
    return config


def parse_config(path: pathlib.Path) -> ExperimentConfig:
    """Read and validate an experiment file; defaults come from the settings."""
    return validate_config(load_config_data(path))


def config_hash(config: ExperimentConfig) -> str:
    canonical = json.dumps(config.model_dump(mode="json"), sort_keys=True)
    return hashlib.sha256(canonical.encode()).hexdigest()


def build_manifest(
    command_line: List[str], config: ExperimentConfig, grid_sizes: Dict[str, int], started: float
) -> RunManifest:
    return RunManifest(
        command_line=list(command_line),
        config_hash=config_hash(config),
        profile=config.profile,
        grid_sizes=grid_sizes,
        tolerances={
            "exponent_tolerance": config.exponent_tolerance,
            "constant_stability_factor": settings.CONSTANT_STABILITY_FACTOR,
            "ledger_growth_factor": settings.LEDGER_GROWTH_FACTOR,
            "spectral_tail_limit": settings.SPECTRAL_TAIL_LIMIT,
            "eps1": config.eps1,
        },
        seed=config.seed,
        wall_clock_seconds=time.monotonic() - started,
    )


def grid_sizes(config: ExperimentConfig) -> Dict[str, int]:
    sizes = {"nodes": config.nodes or settings.DEFAULT_NODES}
    if config.command in ("nonlinear", "threshold"):
        sizes["x_points"] = settings.X_POINTS
    return sizes


def _profile(config: ExperimentConfig, n: Optional[int] = None) -> shear_profile.ShearProfile:
    grid = build_grid(n or config.nodes or settings.DEFAULT_NODES)
    return shear_profile.make_profile(config.profile.name, grid, **config.profile.params)


# --- Subcommands ------------------------------------------------------------------


def run_profile_check(config: ExperimentConfig) -> ReportBundle:
    profile = _profile(config)
    report = shear_profile.validate_condition_M(profile)
    bundle = ReportBundle(summary={"condition_M": report.model_dump(mode="json")})
    bundle.tables["profile"] = Table(
        columns=["profile", "passed", "c0", "C0", "convexity", "h4norm"],
        rows=[[report.profile, str(report.passed).lower(), report.c0, report.C0, report.convexity, report.h4norm]],
    )
    bundle.checks["condition_M"] = report.passed

    rows = []
    certified = True
    for nu in config.nu_list:
        interval = nu ** (-1.0 / 3.0)
        times = [j * interval for j in range(11)]
        for cert in shear_profile.certify_heat_flow(profile, nu, times):
            rows.append([nu, cert.t, cert.c0, cert.C0, cert.convexity, cert.d2_l2])
            certified = certified and cert.c0 > 0 and cert.convexity in (profile.convexity, "linear")
    bundle.tables["heat_flow"] = Table(columns=["nu", "t", "c0", "C0", "convexity", "d2_l2"], rows=rows)
    bundle.checks["heat_flow_certified"] = certified
    return bundle


def run_scan(config: ExperimentConfig, cache: Optional[OperatorCache] = None) -> ReportBundle:
    profile = _profile(config)
    report = resolvent_scan.scan(
        config.bounds,
        profile,
        config.nu_list,
        config.k_list,
        o_fraction=config.o_fraction,
        jobs=config.jobs,
        tolerance=config.exponent_tolerance,
        cache=cache,
    )
    bundle = ReportBundle(
        summary={
            "profile_id": report.profile_id,
            "lambda_policy": report.lambda_policy,
            "fits": [f.model_dump(mode="json") for f in report.fits],
            "failures": [f.model_dump(mode="json") for f in report.failures],
            "spikes": report.spikes,
        }
    )
    bundle.tables["scan"] = Table(
        columns=["nu", "k", "bound_id", "sup_ratio", "argmax_lambda", "n_grid"],
        rows=[[r.nu, r.k, r.bound_id, r.sup_ratio, r.argmax_lambda, r.n_grid] for r in report.rows],
    )
    bundle.tables["fits"] = Table(
        columns=["bound_id", "k", "fitted_exponent", "r2", "n_points", "constant_spread", "status"],
        rows=[
            [f.bound_id, f.k, _cell(f.fitted_exponent), _cell(f.r2), f.n_points, _cell(f.constant_spread), f.status]
            for f in report.fits
        ],
    )
    for fit in report.fits:
        if fit.status != "fit-unavailable":
            bundle.checks[f"{fit.bound_id}_k{fit.k}"] = fit.passed
    decay_rows = []
    for k in config.k_list:
        for nu in config.nu_list:
            decay = resolvent_scan.coefficient_decay(profile, nu, k)
            decay_rows.append([nu, k, _cell(decay.fitted_exponent), _cell(decay.r2), decay.n_points, decay.status])
            if decay.status != "fit-unavailable":
                bundle.checks[f"coeff_decay_c1_nu{nu:g}_k{k}"] = decay.passed
    bundle.tables["coefficient_decay"] = Table(
        columns=["nu", "k", "fitted_exponent", "r2", "n_points", "status"], rows=decay_rows
    )
    bundle.checks["no_lambda_spikes"] = not report.spikes
    return bundle


def _cell(value: Optional[float]):
    return "" if value is None else value


def run_lin_evolve(config: ExperimentConfig) -> ReportBundle:
    profile = _profile(config)
    eps_rate = config.eps_rate
    if eps_rate is None:
        eps_rate = lin_evolution.calibrate_eps_rate()
    bundle = ReportBundle(summary={"eps_rate": eps_rate})
    ledger_rows = []
    rates: Dict[int, List[tuple]] = {}
    damping: Dict[int, List[float]] = {}
    certified = True
    for k in config.k_list:
        for nu in config.nu_list:
            params = ProblemParams(nu=nu, k=k, eps_rate=eps_rate, eps1=config.eps1)
            horizon = config.horizon or config.horizon_factor * nu ** (-1.0 / 3.0)
            init = lin_evolution.initial_state(params, profile, lin_evolution.clamped_bump(profile.grid))
            forcing = lin_evolution.forcing_preset(config.forcing, profile.grid)
            trajectory, ledger = lin_evolution.run(init, horizon, forcing=forcing, eps_rate=eps_rate)
            fit = lin_evolution.decay_rate(trajectory)
            rates.setdefault(k, []).append((nu, fit.rate))
            damping.setdefault(k, []).append(ledger.inviscid_damping_ratio())

            interval = nu ** (-1.0 / 3.0)
            times = [j * interval for j in range(int(horizon / interval) + 1)]
            for cert in shear_profile.certify_heat_flow(profile, nu, times):
                certified = certified and cert.c0 > 0

            bundle.tables[f"trajectory_nu{nu:g}_k{k}"] = Table(
                columns=["t", "norm_om_L2", "norm_u_inf", "weighted_om"],
                rows=[[s.t, s.norm_om_L2, s.norm_u_inf, s.weighted_om] for s in trajectory.samples],
            )
            ledger_rows.append(
                [
                    nu,
                    k,
                    eps_rate,
                    ledger.T_L2L2_u,
                    ledger.T_L2L2_om,
                    ledger.sup_weighted_om,
                    ledger.sup_uinf,
                    ledger.E_in,
                    ledger.T_forcing,
                    ledger.space_time_ratio(),
                    fit.rate,
                ]
            )
    bundle.tables["ledger"] = Table(
        columns=[
            "nu", "k", "eps_rate", "T_u", "T_om", "sup_weighted_om", "sup_uinf", "E_in", "T_forcing",
            "space_time_ratio", "decay_rate",
        ],
        rows=ledger_rows,
    )
    bundle.checks["profile_recertified"] = certified
    for k, points in rates.items():
        if len(points) >= 3 and all(rate > 0 for _, rate in points):
            slope, _, _ = resolvent_scan.fit_exponent(points)
            bundle.summary[f"decay_exponent_k{k}"] = slope
            bundle.checks[f"decay_exponent_k{k}"] = 0.25 <= slope <= 0.41
        ratios = damping[k]
        if len(ratios) >= 2 and min(ratios) > 0:
            bundle.checks[f"inviscid_damping_stable_k{k}"] = (
                max(ratios) / min(ratios) <= settings.CONSTANT_STABILITY_FACTOR
            )
    return bundle


def run_nonlinear(config: ExperimentConfig, out_dir: Optional[pathlib.Path] = None) -> ReportBundle:
    profile = _profile(config)
    nu = config.nu_list[0]
    eps_rate = config.eps_rate or 0.0
    amplitude = config.amplitude if config.amplitude is not None else 0.01 * math.sqrt(nu)
    spec = PerturbationSpec(modes=config.modes, seed=config.seed)
    state = nonlinear_sim.init_perturbation(spec, amplitude, profile, nu, eps_rate=eps_rate)
    horizon = config.horizon or config.horizon_factor * nu ** (-1.0 / 3.0)
    checkpoint_dir = pathlib.Path(out_dir) / "checkpoints" if out_dir and config.checkpoint_every else None
    result = nonlinear_sim.NonlinearSimulation(
        state, checkpoint_dir=checkpoint_dir, checkpoint_every=config.checkpoint_every
    ).run(horizon)

    bundle = ReportBundle(
        summary={
            "nu": nu,
            "amplitude": amplitude,
            "horizon": horizon,
            "total_E": result.ledger.total,
            "max_growth": result.max_growth,
            "final_decay": result.final_decay,
            "spectral_tail": result.max_tail,
            "zero_forcing_L2L2": result.ledger.zero_forcing_L2L2,
        }
    )
    stride = max(1, len(result.totals) // 200)
    bundle.tables["energy"] = Table(
        columns=["t", "sum_E_k"], rows=[[t, total] for t, total in result.totals[::stride]]
    )
    bundle.tables["modes"] = Table(
        columns=["k", "inviscid_damping", "sup_u_inf", "sup_weighted_om", "enhanced_dissipation", "sup_om", "E_k"],
        rows=[
            [m.k, m.inviscid_damping, m.sup_u_inf, m.sup_weighted_om, m.enhanced_dissipation, m.sup_om, m.total]
            for m in result.ledger.modes
        ],
    )
    bundle.checks["stable"] = result.stable
    bundle.checks["resolved"] = result.resolved
    return bundle


def run_threshold(config: ExperimentConfig) -> ReportBundle:
    profile = _profile(config)
    spec = PerturbationSpec(modes=config.modes, seed=config.seed)
    result = nonlinear_sim.run_threshold_probe(
        profile, config.nu_list, tuple(config.c_bracket), config.horizon_factor, spec=spec, jobs=config.jobs
    )
    bundle = ReportBundle(summary={"result": result.model_dump(mode="json")})
    bundle.tables["threshold"] = Table(
        columns=["nu", "A_star", "flags"],
        rows=[[r.nu, r.A_star, ";".join(r.flags)] for r in result.records],
    )
    bundle.tables["runs"] = Table(
        columns=["nu", "amplitude", "stable", "resolved", "max_growth", "final_decay"],
        rows=[
            [r.nu, run.amplitude, str(run.stable).lower(), str(run.resolved).lower(), run.max_growth, run.final_decay]
            for r in result.records
            for run in r.runs
        ],
    )
    bundle.checks["bracket_bottom_stable"] = all("unstable-at-bracket-bottom" not in r.flags for r in result.records)
    if result.beta_fit is not None:
        beta = result.beta_fit
        bundle.checks["beta_window"] = 0.35 <= beta.slope <= 0.65 or "no-transition-observed" in beta.flags
    return bundle


# --- Self test --------------------------------------------------------------------


def _selftest_checks() -> Dict[str, bool]:
    checks: Dict[str, bool] = {}
    grid = build_grid(65)
    y = grid.nodes

    checks["quadrature_length"] = abs(float(np.sum(grid.quad)) - 1.0) < 1e-13
    rhs = ScalarField.from_values(grid, -np.ones(grid.n))
    psi = solve_helmholtz_dirichlet(grid, 1.0, rhs).values
    exact = 1.0 - np.cosh(y - 0.5) / np.cosh(0.5)
    checks["helmholtz_closed_form"] = float(np.max(np.abs(psi - exact))) < 1e-10
    sine = ScalarField.from_function(grid, lambda t: np.sin(np.pi * t))
    checks["dual_norm_eigenfunction"] = (
        abs(norm(sine, "H1k_dual", 1.0) - math.sqrt(0.5) / math.sqrt(math.pi**2 + 1)) < 1e-9
    )

    presets = {name: shear_profile.make_profile(name, grid) for name in shear_profile.preset_names()}
    checks["condition_M_presets"] = all(
        shear_profile.validate_condition_M(p).passed and p.c0 > 0 for p in presets.values()
    )

    nu = 1e-2
    walls_kept = True
    signs_kept = True
    for profile in presets.values():
        evolved = shear_profile.heat_evolve(profile, nu, 10.0)
        walls_kept = walls_kept and np.allclose(evolved.wall_values, profile.wall_values, rtol=0.0, atol=1e-12)
        times = [j * nu ** (-1.0 / 3.0) for j in range(11)]
        for cert in shear_profile.certify_heat_flow(profile, nu, times):
            signs_kept = signs_kept and cert.c0 > 0 and cert.convexity in (profile.convexity, "linear")
    checks["heat_flow_wall_values"] = walls_kept
    checks["heat_flow_sign_preserved"] = signs_kept
    smooth = shear_profile.make_profile("sinus-concave", build_grid(129))
    regularity = shear_profile.regularity_check(smooth, 1e-3, 20.0, 5.0)
    checks["heat_flow_regularity"] = regularity.linf_ratio <= 1.0 and regularity.d2_ratio <= 1.0

    cutoff_profile = shear_profile.make_profile("couette", build_grid(257))
    cutoff_params = ProblemParams(nu=1e-3, k=1, lam=0.5)
    scaled = [
        os_resolvent.cutoff_norms(os_resolvent.make_cutoff(cutoff_params, cutoff_profile, delta))
        for delta in (0.2, 0.1, 0.05)
    ]
    cutoff_ok = all(0.8 <= s["Linf_scaled"] <= 1.1 for s in scaled)
    for key in ("L2_scaled", "dL2_scaled"):
        values = [s[key] for s in scaled]
        cutoff_ok = cutoff_ok and min(values) > 0 and max(values) / min(values) <= settings.CONSTANT_STABILITY_FACTOR
    checks["cutoff_norm_scaling"] = cutoff_ok

    # randomized (nu, k, lambda, o) triples and forcings over every preset
    rng = np.random.default_rng(0)
    worst = 0.0
    for name in sorted(presets):
        nu = float(10 ** rng.uniform(-3, -2))
        k = int(rng.choice([1, 2, 4]))
        cap = settings.EPS1 * (nu * k * k) ** (1.0 / 3.0)
        params = ProblemParams(
            nu=nu, k=k, lam=float(rng.uniform(-0.2, 1.2)), o_term=complex(0.5 * cap * rng.uniform(-1, 1), 0.0)
        )
        fine = shear_profile.make_profile(name, build_grid(os_resolvent.required_nodes(nu, k)))
        a = rng.standard_normal(3) + 1j * rng.standard_normal(3)
        nodes = fine.grid.nodes
        F = ScalarField.from_values(fine.grid, a[0] + a[1] * nodes + a[2] * np.sin(3 * np.pi * nodes))
        solution = os_resolvent.resolve(params, fine, F)
        worst = max(worst, solution.recomposition_error())
    checks["decomposition_identity"] = worst <= 1e-7

    kernel_grid = build_grid(257)
    kernel_ok = True
    for k in (1, 4, 16, 64):
        scaled_norm = os_resolvent.kernel_norms(kernel_grid, k)["sinh_left"] * math.sqrt(k)
        kernel_ok = kernel_ok and 0.4 <= scaled_norm <= 1.1
    checks["sinh_kernel_window"] = kernel_ok

    gaps = []
    for _ in range(10):
        coeffs = rng.standard_normal(4)
        field = (y * (1 - y)) ** 2 * np.polynomial.polynomial.polyval(y, coeffs)
        gaps.append(lin_evolution.weighted_inequality_gap(grid, field, 2.0))
    checks["weighted_inequality"] = min(gaps) >= -1e-8

    u = np.sin(np.pi * y)
    stepped = lin_evolution.zero_mode_step(u, 1e-3, np.zeros_like(u), 1e-2)
    checks["zero_mode_heat_step"] = float(np.max(np.abs(stepped - math.exp(-1e-2 * math.pi**2 * 1e-3) * u))) < 1e-9
    return checks


def run_selftest(config: ExperimentConfig) -> ReportBundle:
    checks = _selftest_checks()
    return ReportBundle(summary={"checks_run": len(checks)}, checks=checks)


def run_command(config: ExperimentConfig, out_dir: Optional[pathlib.Path] = None) -> ReportBundle:
    """Dispatch a validated config to its subcommand."""
    if config.command == "profile-check":
        return run_profile_check(config)
    if config.command == "scan":
        cache = OperatorCache() if settings.CACHE_ENABLED else None
        return run_scan(config, cache)
    if config.command == "lin-evolve":
        return run_lin_evolve(config)
    if config.command == "nonlinear":
        return run_nonlinear(config, out_dir)
    if config.command == "threshold":
        return run_threshold(config)
    return run_selftest(config)
