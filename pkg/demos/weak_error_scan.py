"""How closely does quantized descent track its Langevin SDE as lam shrinks?

On the 1-D quadratic the SDE is an Ornstein-Uhlenbeck process with a known
second moment.  For each step size the scan runs many replicas with the
resolution chosen so the rounding plus gradient noise matches the SDE's
diffusion, and reports |E X_T^2 - E X(T)^2|.  A log-log slope near 1 is
first-order weak convergence.
"""

import argparse

from qsgld import RngStream, weak_error_scan


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=10_000)
    ap.add_argument("--lambdas", type=float, nargs="+", default=[1 / 8, 1 / 16, 1 / 32, 1 / 64])
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()

    rep = weak_error_scan(g="x2", lambdas=args.lambdas, seeds=args.seeds, rng=RngStream(args.seed))
    print(f"{'lambda':>9} {'qp':>8} {'error':>10} {'stderr':>9}")
    for lam, qp, e, s in zip(rep.lambda_values, rep.qp_values, rep.errors, rep.stderr):
        print(f"{lam:9.5f} {qp:8.2f} {e:10.3e} {s:9.1e}")
    print(f"fitted order {rep.fitted_order:.2f}, monotone within 2 stderr: {rep.monotone()}")


if __name__ == "__main__":
    main()
