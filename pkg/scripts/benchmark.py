"""Time the forward solver on the default benchmark and print diagnostics.

    python3 scripts/benchmark.py [--n 64] [--nt 200] [--init bump]
"""
import argparse
import time

from chks_control.config import build_config, initial_data
from chks_control.state import mass_balance_report, solve_state


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=64)
    ap.add_argument("--nt", type=int, default=200)
    ap.add_argument("--init", default="bump", choices=["uniform", "bump", "seeded-noise"])
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    cfg = build_config({"grid.nx": str(args.n), "grid.ny": str(args.n), "model.nt": str(args.nt),
                        "init.preset": args.init, "seed": str(args.seed)})
    model = cfg.build_model()
    init = initial_data(cfg)
    t0 = time.perf_counter()
    traj = solve_state(model, init)
    elapsed = time.perf_counter() - t0
    mon = traj.monitors
    mb = mass_balance_report(model, traj)
    print(f"grid {args.n}x{args.n}, nt={args.nt}, init={args.init}: {elapsed:.2f}s")
    print(f"  newton iters/step  mean {mon['newton_iters'][1:].mean():.2f}  "
          f"max {mon['newton_iters'].max()}")
    print(f"  cg iters/step      mean {mon['cg_iters'][1:].mean():.2f}  max {mon['cg_iters'].max()}")
    print(f"  separation margin  {traj.separation_margin:.6f}")
    print(f"  min sigma          {traj.min_sigma:.6f}")
    print(f"  mass balance       {mb.max_rel:.3e}")
    print(f"  energy             {mon['energy_total'][0]:.6e} -> {mon['energy_total'][-1]:.6e}")


if __name__ == "__main__":
    main()
