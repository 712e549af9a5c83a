"""``chks`` command-line entry point.

Exit codes: 0 success, 1 failed check, 2 configuration or input error,
3 solver failure.
"""
from __future__ import annotations

import argparse
import sys
import warnings
from pathlib import Path

import numpy as np

from . import verify
from .config import (
    PRESETS,
    ConfigError,
    RunConfig,
    build_config,
    control_from_config,
    control_problem,
    describe,
    initial_data,
    load_config,
)
from .control import optimize
from .io import OptimizationLog, report_rows, write_adjoint, write_control, write_report, write_trajectory
from .operators import SolverError
from .state import PositivityWarning, mass_balance_report, solve_state

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2, 3
CHECKS = ("gradient", "duality", "transpose", "mass", "convergence")


def _err(msg: str) -> None:
    print(f"chks: {msg}", file=sys.stderr)


def resolve_config(args) -> RunConfig:
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    if args.stride is not None:
        overrides["output.stride"] = str(args.stride)
    if args.out is not None:
        overrides["output.dir"] = args.out
    if args.strict_positivity:
        overrides["model.strict_positivity"] = "true"
    if args.config is None:
        return build_config(overrides)
    return load_config(args.config, overrides)


def _out_dir(cfg: RunConfig) -> Path:
    return Path(cfg.output.dir)


def cmd_simulate(cfg: RunConfig) -> int:
    model = cfg.build_model()
    init = initial_data(cfg)
    u = control_from_config(cfg)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", PositivityWarning)
        traj = solve_state(model, init, u, cfg.init.delta)
    for w in caught[:5]:
        _err(f"warning: {w.message}")
    d = write_trajectory(_out_dir(cfg) / "traj" / cfg.name, traj, describe(cfg), cfg.output.stride)
    mb = mass_balance_report(model, traj, u)
    print(f"wrote {d}")
    print(f"steps={len(traj) - 1} separation_margin={traj.separation_margin:.6g} "
          f"min_sigma={traj.min_sigma:.6g} mass_balance={mb.max_rel:.3e}")
    return EXIT_OK


def cmd_optimize(cfg: RunConfig) -> int:
    model = cfg.build_model()
    init = initial_data(cfg)
    prob, _ = control_problem(cfg, model, init)
    try:
        prob.validate(model)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    out = _out_dir(cfg)
    out.mkdir(parents=True, exist_ok=True)
    log_path = out / f"opt_{cfg.name}.csv"
    with OptimizationLog(log_path) as log:
        rep = optimize(model, init, prob, control_from_config(cfg), cfg.optimizer, log=log)
    write_control(out / "ctrl" / cfg.name, cfg.grid, rep.u)
    write_trajectory(out / "traj" / cfg.name, rep.trajectory, describe(cfg), cfg.output.stride)
    write_adjoint(out / "adj" / cfg.name, cfg.grid, rep.adjoint, cfg.output.stride)
    J = rep.J_history
    print(f"wrote {log_path}")
    print(f"iterations={len(J) - 1} reason={rep.reason} J0={J[0]:.6e} J={J[-1]:.6e} "
          f"ratio={J[-1] / J[0] if J[0] else 0.0:.3e} stationarity={rep.final_stationarity:.3e}")
    return EXIT_OK


def cmd_check(cfg: RunConfig, which: str) -> int:
    model = cfg.build_model()
    init = initial_data(cfg)
    if which != "convergence":
        try:
            verify.check_guard(model)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    u = control_from_config(cfg)
    if which in ("gradient", "duality"):
        prob, _ = control_problem(cfg, model, init)
        fn = verify.gradient_check if which == "gradient" else verify.duality_check
        results = fn(model, init, prob, u=u, seed=cfg.seed)
    elif which == "transpose":
        results = verify.transpose_check(model, init, u=u, seed=cfg.seed)
    elif which == "mass":
        results = verify.mass_check(model, init, u=u)
    else:
        results = verify.convergence_check()
    print(verify.format_table(results))
    return EXIT_OK if all(r.passed for r in results) else EXIT_CHECK


def cmd_report(traj_dir) -> int:
    d = Path(traj_dir)
    if not (d / "meta.txt").is_file():
        raise ConfigError(f"not a trajectory directory (no meta.txt): {d}")
    try:
        rows = report_rows(d)
        path = write_report(d)
    except (KeyError, ValueError, OSError) as exc:
        raise ConfigError(f"malformed trajectory directory {d}: {exc}") from None
    if not rows:
        raise ConfigError(f"no saved states in {d}")
    e = np.array([r[2] for r in rows])
    print(f"wrote {path}")
    print(f"states={len(rows)} t_end={rows[-1][1]:.6g} energy {e[0]:.6e} -> {e[-1]:.6e} "
          f"min_separation_margin={min(r[11] for r in rows):.6g} "
          f"min_sigma={min(r[9] for r in rows):.6g}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value config file")
    common.add_argument("--out", help="output directory (overrides output.dir)")
    common.add_argument("--stride", type=int, help="save every k-th state")
    common.add_argument("--seed", type=int, help="RNG seed for presets and checks")
    common.add_argument("--strict-positivity", action="store_true",
                        help="treat negative nutrient values as fatal")

    p = argparse.ArgumentParser(prog="chks", description="Viscous Cahn-Hilliard-Keller-Segel "
                                "tumor model with adjoint-based optimal control.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="run the state solver")
    sub.add_parser("optimize", parents=[common], help="projected-gradient optimal control")
    c = sub.add_parser("check", parents=[common], help="run a verification suite")
    c.add_argument("which", choices=CHECKS)
    r = sub.add_parser("report", help="diagnostics CSV for a saved trajectory")
    r.add_argument("traj_dir")
    sub.add_parser("presets", help="list built-in config presets")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        if args.command == "presets":
            print("\n".join(PRESETS))
            return EXIT_OK
        if args.command == "report":
            return cmd_report(args.traj_dir)
        cfg = resolve_config(args)
        if args.command == "simulate":
            return cmd_simulate(cfg)
        if args.command == "optimize":
            return cmd_optimize(cfg)
        return cmd_check(cfg, args.which)
    except ConfigError as exc:
        _err(f"config error: {exc}")
        return EXIT_CONFIG
    except SolverError as exc:
        _err(f"solver failure: {exc}")
        return EXIT_SOLVER
    except (ValueError, MemoryError) as exc:
        _err(f"invalid input: {exc}")
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
