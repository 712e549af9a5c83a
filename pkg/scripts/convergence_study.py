"""Observed orders: time step on the uniform logistic problem, mesh on the Laplacian.

    python3 scripts/convergence_study.py
"""
from chks_control.verify import laplacian_errors, logistic_errors, observed_orders


def main():
    nts = (250, 500, 1000, 2000, 4000)
    errs = logistic_errors(nts)
    print("logistic sigma(1), uniform data")
    print(f"{'nt':>6} {'error':>12} {'order':>7}")
    for k, (nt, e) in enumerate(zip(nts, errs)):
        order = "" if k == 0 else f"{observed_orders(errs)[k - 1]:7.3f}"
        print(f"{nt:6d} {e:12.4e} {order}")

    ns = (9, 17, 33, 65, 129)
    errs = laplacian_errors(ns)
    print("\nNeumann Laplacian on cos(pi x) cos(pi y)")
    print(f"{'n':>6} {'error':>12} {'order':>7}")
    for k, (n, e) in enumerate(zip(ns, errs)):
        order = "" if k == 0 else f"{observed_orders(errs)[k - 1]:7.3f}"
        print(f"{n:6d} {e:12.4e} {order}")


if __name__ == "__main__":
    main()
