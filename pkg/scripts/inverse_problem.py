"""Recover a known control from its own state trajectory.

Targets are generated by simulating a smooth reference control; the
optimizer starts from u = 0 and should drive J below 1% of its initial value.

    python3 scripts/inverse_problem.py [--rule bb|warm] [--out results/inverse]
"""
import argparse
import time
from pathlib import Path

import numpy as np

from chks_control.config import build_config, control_problem, describe, initial_data
from chks_control.control import OptimizerConfig, optimize, q_norm
from chks_control.io import OptimizationLog, write_control, write_trajectory


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rule", default="bb", choices=["bb", "warm"])
    ap.add_argument("--iters", type=int, default=200)
    ap.add_argument("--out", default="results/inverse")
    args = ap.parse_args()

    cfg = build_config({"preset": "inverse-problem"})
    model = cfg.build_model()
    init = initial_data(cfg)
    prob, u_true = control_problem(cfg, model, init)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    opt = OptimizerConfig(max_outer_iters=args.iters, step_rule=args.rule)

    def show(rec):
        if rec.iter % 10 == 0:
            print(f"{rec.iter:4d}  J={rec.J:.4e}  stat={rec.stationarity:.3e}  step={rec.step:.3g}")

    t0 = time.perf_counter()
    with OptimizationLog(out / f"opt_{args.rule}.csv") as log:
        rep = optimize(model, init, prob, opt=opt, log=lambda r: (log(r), show(r)))
    J = rep.J_history
    print(f"{rep.reason} after {len(J) - 1} iterations in {time.perf_counter() - t0:.1f}s")
    print(f"J/J0 = {J[-1] / J[0]:.3e}, stationarity = {rep.final_stationarity:.3e}")
    rel = q_norm(model, rep.u - u_true) / q_norm(model, u_true)
    print(f"relative control error ||u - u_ref||/||u_ref|| = {rel:.3e}")
    print(f"max |u| = {np.max(np.abs(rep.u)):.3f}")
    write_control(out / "ctrl", cfg.grid, rep.u)
    write_trajectory(out / "traj", rep.trajectory, describe(cfg), stride=10)


if __name__ == "__main__":
    main()
