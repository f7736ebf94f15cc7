import argparse
import logging
import time
from dataclasses import replace
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np

from ..geometry.theta import SectionData, build_section
from ..geometry.torus import TorusGrid
from ..model.positivity import curvature_coeffs, det_identity_check, positivity_check
from ..model.vortex import (
    MetricState,
    RhsData,
    VortexParams,
    compute_rhs_t0,
    residual_sys1,
    residual_sys2,
)
from ..solver.continuation import (
    PathResult,
    base_params,
    calibrated_t0,
    pointwise_root_oracle,
    run_summary,
    solve_path,
)
from ..solver.monitor import check_bounds, psi_equation_residual
from ..utils.config import RunConfig, config_from_dict, load_config
from ..utils.errors import ConfigError, StudyError, VerificationFailed
from ..utils.failures import EXIT_OK, record_failures
from ..utils.io import (
    SCHEMA_VERSION,
    export_comparison,
    read_json,
    read_snapshot,
    write_json,
    write_snapshot,
    write_trace,
)

logger = logging.getLogger(__name__)

STUDIES = ("epsilon", "refinement")
VERIFY_RESIDUAL_FACTOR = 10.0
ORACLE_MEAN_TOL = 1e-7
ORACLE_SUP_TOL = 1e-8
FACTORIZATION_TOL = 1e-12


def system_dir(config: RunConfig, system: str) -> Path:
    root = Path(config.output_dir)
    return root / system if config.system == "both" else root


def build_config_section(config: RunConfig) -> SectionData:
    return build_section(config.section, TorusGrid(config.n, config.deg_l))


def identity_and_oracle(
    state: MetricState, params: VortexParams, rhs: RhsData
) -> Dict[str, Any]:
    identity = det_identity_check(curvature_coeffs(state, params), rhs)
    oracle = pointwise_root_oracle(state.psi, state.section, params, rhs)
    return {
        "factorization_gap": identity.factorization,
        "lhs_minus_a0": identity.rhs_residual,
        "root_oracle": {
            "mean": oracle.mean,
            "sup_diff_lap_f": float(np.max(np.abs(oracle.u.values - state.lap_f.values))),
        },
    }


def endpoint_failures(checks: Dict[str, Any], newton_tol: float) -> List[str]:
    """Names of the t = 1 checks whose value exceeds its acceptance threshold."""
    failures = []
    if abs(checks["root_oracle"]["mean"]) > ORACLE_MEAN_TOL:
        failures.append("root_oracle_mean")
    if checks["root_oracle"]["sup_diff_lap_f"] > ORACLE_SUP_TOL:
        failures.append("root_oracle_sup")
    if checks["factorization_gap"] > FACTORIZATION_TOL:
        failures.append("factorization_gap")
    if checks["lhs_minus_a0"] > VERIFY_RESIDUAL_FACTOR * newton_tol:
        failures.append("lhs_minus_a0")
    return failures


def endpoint_checks(result: PathResult, config: RunConfig) -> Dict[str, Any]:
    """Positivity, factorization and root-oracle checks at t = 1."""
    state = result.trace.state
    params = result.params.at(1.0)
    coeffs = curvature_coeffs(state, params, shift=0.0)
    positivity = positivity_check(coeffs, config.n_samples, config.seed)
    checks = {"positivity": positivity.to_dict()}
    checks.update(identity_and_oracle(state, params, result.rhs))
    checks["failures"] = endpoint_failures(checks, config.solver.newton_tol)
    return checks


def solve_system(config: RunConfig, system: str) -> Dict[str, Any]:
    """Full pipeline for one system; writes trace, snapshots and summary."""
    started = time.perf_counter()
    out = system_dir(config, system)
    section = build_config_section(config)
    result = solve_path(system, section, config)

    write_trace(out / "trace.csv", result.trace.rows, config.record_timings)
    for t, state in sorted(result.trace.snapshots.items()):
        write_snapshot(out, t, state.f, state.psi)

    summary: Dict[str, Any] = {
        "schema_version": SCHEMA_VERSION,
        "command": "solve",
        "config": config.to_dict(),
        "run": run_summary(result),
        "final_report": result.trace.reports[-1].to_dict(),
    }
    try:
        summary["endpoint_checks"] = endpoint_checks(result, config)
    finally:
        if config.record_timings:
            summary["timings"] = {"total_wall_time": time.perf_counter() - started}
        write_json(out / "summary.json", summary)
    logger.info(f"{system} results written to {out}")
    failed = summary["endpoint_checks"]["failures"]
    if failed:
        raise VerificationFailed(
            f"{system} endpoint checks failed: {', '.join(failed)}",
            {"system": system, "failures": failed},
        )
    return summary


@record_failures(lambda config: config.output_dir)
def run(config: RunConfig) -> int:
    """Solve every configured system; exit status 0 only if all endpoint checks pass."""
    for system in config.systems:
        solve_system(config, system)
    if config.system == "both":
        write_json(
            Path(config.output_dir) / "summary.json",
            {
                "schema_version": SCHEMA_VERSION,
                "command": "solve",
                "config": config.to_dict(),
                "systems": config.systems,
            },
        )
    return EXIT_OK


def initialize(config: RunConfig) -> Dict[str, Any]:
    """t = 0 solve, calibration and a0 for each configured system."""
    results = {}
    for system in config.systems:
        out = system_dir(config, system)
        section = build_config_section(config)
        params = base_params(config, system)
        params, state0 = calibrated_t0(system, params, section, config)
        rhs = compute_rhs_t0(state0, params)
        write_snapshot(out, 0.0, state0.f, state0.psi)
        results[system] = {
            "alpha": params.alpha,
            "epsilon": params.epsilon,
            "psi_min": state0.psi.min(),
            "psi_max": state0.psi.max(),
            "phig2_max": state0.phig2.max(),
            "lap_psi_min": state0.lap_psi.min(),
            "a0_min": rhs.a0.min(),
            "a0_max": rhs.a0.max(),
        }
        write_json(
            out / "summary.json",
            {
                "schema_version": SCHEMA_VERSION,
                "command": "init",
                "config": config.to_dict(),
                "t0": results[system],
            },
        )
    return results


def verify_system(run_dir: Path) -> Dict[str, Any]:
    """Rebuild the stored t = 0 and t = 1 states and re-run every endpoint check."""
    summary = read_json(run_dir / "summary.json")
    if "run" not in summary:
        raise VerificationFailed(
            f"{run_dir} holds no finished path", {"command": summary.get("command")}
        )
    config = config_from_dict(summary["config"])
    stored = summary["run"]
    system = stored["system"]
    cfg = config.solver
    grid = TorusGrid(config.n, config.deg_l)
    section = build_section(config.section, grid)
    params = VortexParams(
        r1=config.r1,
        r2=config.r2,
        alpha=stored["alpha"],
        epsilon=stored["epsilon"],
        deg_l=config.deg_l,
    )

    f0, psi0 = read_snapshot(run_dir, 0.0, grid)
    rhs = compute_rhs_t0(MetricState.build(f0, psi0, section), params)
    f1, psi1 = read_snapshot(run_dir, 1.0, grid)
    state = MetricState.build(f1, psi1, section)
    end_params = params.at(1.0)

    if system == "sys1":
        first = residual_sys1(state, end_params, rhs, which="f_eq")
    else:
        first = residual_sys2(state, end_params, rhs)[0]
    second = psi_equation_residual(state, end_params, rhs, system)
    residual = max(first.sup(), second.sup())
    report = check_bounds(
        state,
        end_params,
        rhs,
        system,
        report_tol=cfg.report_tol,
        newton_tol=cfg.newton_tol,
        grad_tol=cfg.grad_tol,
    )
    a0_gap = abs(rhs.a0.min() - stored["t0"]["a0_min"])

    failures: List[str] = list(report.failures())
    if residual > VERIFY_RESIDUAL_FACTOR * cfg.newton_tol:
        failures.append("residual")
    if a0_gap > 1e-9 * max(1.0, abs(rhs.a0.min())):
        failures.append("a0_reproduction")

    result = {
        "system": system,
        "residual": residual,
        "a0_min": rhs.a0.min(),
        "a0_gap": a0_gap,
        "bounds": report.to_dict(),
        "failures": failures,
    }
    endpoint = identity_and_oracle(state, end_params, rhs)
    failures.extend(endpoint_failures(endpoint, cfg.newton_tol))
    result.update(endpoint)
    coeffs = curvature_coeffs(state, end_params, shift=0.0)
    result["positivity"] = positivity_check(coeffs, config.n_samples, config.seed).to_dict()
    return result


def verify_run(run_dir: Path) -> Dict[str, Any]:
    run_dir = Path(run_dir)
    summary = read_json(run_dir / "summary.json")
    systems = summary.get("systems") or [None]
    payload: Dict[str, Any] = {"schema_version": SCHEMA_VERSION, "run": str(run_dir)}
    checked = {}
    try:
        for system in systems:
            directory = run_dir / system if system else run_dir
            outcome = verify_system(directory)
            checked[outcome["system"]] = outcome
    finally:
        payload["systems"] = checked
        write_json(run_dir / "verify.json", payload)
    failed = {name: out["failures"] for name, out in checked.items() if out["failures"]}
    if failed:
        raise VerificationFailed(f"stored run fails checks: {failed}", {"failures": failed})
    return payload


def study_configs(base: RunConfig, study: str) -> Dict[str, RunConfig]:
    """Two configurations differing only in the studied key."""
    root = Path(base.output_dir)
    if study == "epsilon":
        if base.system == "sys1":
            raise ConfigError("epsilon study needs system sys2 or both", key="system")
        epsilon = base.epsilon or 2.0 * base.solver.epsilon_min
        variants = {"run_a": {"epsilon": epsilon}, "run_b": {"epsilon": 2.0 * epsilon}}
    elif study == "refinement":
        variants = {"run_a": {"n": base.n}, "run_b": {"n": 2 * base.n}}
    else:
        raise ConfigError(f"unknown study {study}", key="study")
    return {
        label: replace(base, output_dir=str(root / label), **changes)
        for label, changes in variants.items()
    }


def compare_dirs(run_a: Path, run_b: Path) -> Dict[str, Any]:
    summary = read_json(Path(run_a) / "summary.json")
    systems = summary.get("systems")
    if not systems:
        return export_comparison(run_a, run_b)
    return {
        "schema_version": SCHEMA_VERSION,
        "systems": {
            system: export_comparison(Path(run_a) / system, Path(run_b) / system)
            for system in systems
        },
    }


class CommandHandlers:
    """Handles the init, solve, verify and compare commands."""

    def __init__(self, app):
        """Initialize command handlers with the application instance."""
        self.app = app
        self.job_manager = app.job_manager
        self.output_dir: Optional[str] = None

    def register_handlers(self, subparsers, parents: List[argparse.ArgumentParser]):
        """Register all subcommands with the argument parser."""
        logger.debug("Registering command handlers")

        init = subparsers.add_parser("init", parents=parents, help="solve t = 0 only")
        init.set_defaults(handler=self.init_command)

        solve = subparsers.add_parser("solve", parents=parents, help="follow the full path")
        solve.set_defaults(handler=self.solve_command)

        verify = subparsers.add_parser(
            "verify", parents=parents, help="re-check a stored endpoint"
        )
        verify.add_argument("--run", help="run directory (defaults to --out)")
        verify.set_defaults(handler=self.verify_command)

        compare = subparsers.add_parser(
            "compare", parents=parents, help="epsilon or refinement comparison"
        )
        compare.add_argument("--run-a", dest="run_a")
        compare.add_argument("--run-b", dest="run_b")
        compare.add_argument("--study", choices=STUDIES)
        compare.set_defaults(handler=self.compare_command)

    def _failure_dir(self, args) -> str:
        return self.output_dir or getattr(args, "out", None) or RunConfig.output_dir

    def _load(self, args) -> RunConfig:
        config = load_config(getattr(args, "config", None))
        overrides = {}
        if getattr(args, "out", None):
            overrides["output_dir"] = args.out
        if getattr(args, "seed", None) is not None:
            overrides["seed"] = args.seed
        if overrides:
            config = replace(config, **overrides)
        self.output_dir = config.output_dir
        return config

    @record_failures(lambda self, args: self._failure_dir(args))
    def init_command(self, args) -> int:
        """Handle the init command."""
        config = self._load(args)
        results = initialize(config)
        for system, data in results.items():
            logger.info(
                f"{system}: alpha={data['alpha']:g}, epsilon={data['epsilon']:g}, "
                f"psi in [{data['psi_min']:.6g}, {data['psi_max']:.6g}]"
            )
        return EXIT_OK

    @record_failures(lambda self, args: self._failure_dir(args))
    def solve_command(self, args) -> int:
        """Handle the solve command."""
        return run(self._load(args))

    @record_failures(lambda self, args: self._failure_dir(args))
    def verify_command(self, args) -> int:
        """Handle the verify command."""
        config = self._load(args)
        run_dir = Path(args.run or config.output_dir)
        self.output_dir = str(run_dir)
        verify_run(run_dir)
        logger.info(f"Verification of {run_dir} passed")
        return EXIT_OK

    @record_failures(lambda self, args: self._failure_dir(args))
    def compare_command(self, args) -> int:
        """Handle the compare command."""
        config = self._load(args)
        out = Path(config.output_dir)
        if args.study:
            configs = study_configs(config, args.study)
            for label, member in configs.items():
                self.job_manager.create_job(label, member)
            jobs = self.job_manager.run_all(run)
            failed = [job.label for job in jobs if job.status != "completed"]
            if failed:
                raise StudyError(
                    f"study runs failed: {', '.join(failed)}", {"failed": failed}
                )
            run_a = Path(configs["run_a"].output_dir)
            run_b = Path(configs["run_b"].output_dir)
        elif args.run_a and args.run_b:
            run_a, run_b = Path(args.run_a), Path(args.run_b)
        else:
            raise ConfigError("compare needs --study or both --run-a and --run-b")
        report = compare_dirs(run_a, run_b)
        write_json(out / "comparison.json", report)
        logger.info(f"Comparison written to {out / 'comparison.json'}")
        return EXIT_OK
