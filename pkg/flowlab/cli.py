"""Command-line entry point: ``python -m flowlab {simulate,spectrum,verify,report}``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from flowlab import __version__
from flowlab.errors import ConfigError, FlowLabError, NonSPDError, NumericalFailure
from flowlab.estimates import (
    metric_monitor_values,
    monitor_gradient_decay,
    monitor_sandwich,
    warped_monitor_values,
)
from flowlab.flows import WarpedState, run_flow
from flowlab.geometry import SyntheticCurvature, build_metric_state
from flowlab.grid_core import SymTensor2Field
from flowlab.outputs import RunDirectory
from flowlab.report import generate_lab_report, write_bundle
from flowlab.scenario import (
    ScenarioConfig,
    build_grid,
    build_initial_state,
    build_params,
    build_stepper,
    default_scenario,
    load_scenario,
    load_settings,
)
from flowlab.stability import assemble_operator, spectrum
from flowlab.verify import SUITES, run_suite

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def _scenario(args) -> ScenarioConfig:
    cfg = load_scenario(args.config) if args.config else default_scenario()
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def run_bound_monitors(cfg: ScenarioConfig, traj):
    """Sandwich and gradient-decay monitors of an un-normalized warped trajectory."""
    if cfg.system != "warped":
        return []
    if cfg["flow"]["normalized"]:
        logger.warning("bound monitors describe the un-normalized warped flow; skipped for a normalized run")
        return []
    mon = cfg["monitors"]
    margin = None if mon["margin"] == "auto" else float(mon["margin"])
    mu = cfg["flow"]["mu"]
    builders = {"sandwich": monitor_sandwich, "gradient_decay": monitor_gradient_decay}
    return [builders[name](traj, mu, margin, mon["c1"]) for name in mon["names"]]


def simulate_scenario(cfg: ScenarioConfig, out_dir: str | Path):
    """Run a scenario and write trajectory, monitors, final state and manifest into ``out_dir``."""
    out = RunDirectory(out_dir)
    state = build_initial_state(cfg)
    params = build_params(cfg, state)
    stepper = build_stepper(cfg, state)
    monitors = (metric_monitor_values,)
    if isinstance(state, WarpedState):
        monitors += (warped_monitor_values,)

    try:
        traj = run_flow(state, params, stepper, monitors)
    except (NumericalFailure, NonSPDError) as exc:
        failure = exc if isinstance(exc, NumericalFailure) else NumericalFailure(str(exc), 0.0, None)
        out.write_failure(failure)
        out.write_manifest(cfg, "simulate", extra={"status": "failed"})
        raise

    out.write_trajectory(traj)
    bounds = run_bound_monitors(cfg, traj)
    out.write_monitors(bounds)
    out.write_final_state(traj.states[-1])
    out.write_manifest(cfg, "simulate", extra={
        "status": "ok",
        "t_final": traj.states[-1].t,
        "records": len(traj),
        "dt": stepper.dt,
        "monitors_passed": all(b.passed for b in bounds),
    })
    for b in bounds:
        logger.info("monitor %s: %s", b.name, "held" if b.passed else f"{b.violations} violations")
    return traj, bounds


def cmd_simulate(args) -> int:
    cfg = _scenario(args)
    simulate_scenario(cfg, args.out or cfg.output)
    return EXIT_OK


def scenario_spectrum(cfg: ScenarioConfig):
    """Spectrum of the scenario's operator block at the flat base metric of its grid."""
    grid = build_grid(cfg)
    flow, spec, ini = cfg["flow"], cfg["spectrum"], cfg["initial"]
    synth = None if flow["synth_K"] == "none" else SyntheticCurvature.space_form(flow["synth_K"], grid.dim)
    m = build_metric_state(SymTensor2Field.identity(grid))
    N = ini["fiber_rank"]
    op = assemble_operator(
        spec["block"], m, synth=synth, lam=None if synth is not None else flow["lam"],
        system=cfg.system, target_rank=ini["target_rank"], fiber_rank=N,
        trace_free=spec["trace_free"], G0=np.eye(N), dense_limit=spec["dense_limit"],
    )
    return spectrum(op, k=spec["k"], seed=cfg.seed)


def cmd_spectrum(args) -> int:
    cfg = _scenario(args)
    out = RunDirectory(args.out or cfg.output)
    report = scenario_spectrum(cfg)
    out.write_spectrum(report)
    out.write_manifest(cfg, "spectrum", extra={"verdict": report.verdict, "top": report.top})
    print(report.to_text(), end="")
    return EXIT_OK


def cmd_verify(args) -> int:
    settings = load_settings()
    suite = args.suite or "all"
    report = run_suite(suite, seed=args.seed, settings=settings)
    out = RunDirectory(args.out or Path(settings["output_dir"]) / "verify")
    out.write_json("verify.json", report.to_json())
    out.write_frame("verify.csv", report.to_frame())
    out.write_manifest(None, "verify", seed=args.seed if args.seed is not None else settings["verify_seed"],
                       extra={"suite": suite, "passed": report.passed})
    for failure in report.failures:
        logger.warning("failed: %s/%s (%s)", failure.suite, failure.name, failure.detail)
    return EXIT_OK if report.passed else EXIT_CHECK_FAILED


def cmd_report(args) -> int:
    run_dir = Path(args.out) if args.out else Path(_scenario(args).output)
    pdf_path = generate_lab_report(run_dir)
    zip_path = write_bundle(run_dir, pdf_path)
    print(f"{pdf_path}\n{zip_path}")
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "spectrum": cmd_spectrum,
    "verify": cmd_verify,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="scenario file (INI format)")
    common.add_argument("--out", help="output directory; for report, the run directory")
    common.add_argument("--seed", type=int, help="override the scenario or verify seed")
    common.add_argument("--verbose", "-v", action="store_true", help="log at DEBUG level")

    parser = argparse.ArgumentParser(prog="flowlab", description="Numerical lab for extended Ricci flows.")
    parser.add_argument("--version", action="version", version=f"flowlab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="integrate a scenario and write trajectory and monitors")
    sub.add_parser("spectrum", parents=[common], help="spectrum of a linearized operator block")
    verify = sub.add_parser("verify", parents=[common], help="run verification suites")
    verify.add_argument("--suite", default="all", help=f"one of {', '.join(SUITES)} or all")
    sub.add_parser("report", parents=[common], help="PDF lab report and ZIP bundle of a run directory")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format=LOG_FORMAT)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as e:
        logger.error("configuration error: %s", e)
        return EXIT_CONFIG
    except (NumericalFailure, NonSPDError) as e:
        logger.error("numerical failure: %s", e)
        return EXIT_NUMERICAL
    except FlowLabError as e:
        logger.error("%s: %s", type(e).__name__, e)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
