"""Early paralysis and how the compensation term breaks it.

When every coordinate of ``lam * h`` is below half a grid cell, plain
rounding sends the whole update to zero and the iterate never moves.  The
compensation term adds a short-lived push of size ``lam`` along ``h/|h|``;
with ``lam >= 1/qp`` that is enough to move at least one coordinate.
"""

import argparse

import numpy as np

from qsgld import CompensationConfig, OptimizerConfig, QuantizationSchedule, RngStream, paralysis_probe, run
from qsgld.objectives import Quadratic


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--qp", type=float, default=10.0)
    ap.add_argument("--steps", type=int, default=200)
    args = ap.parse_args()
    qp = args.qp

    print("fraction of zero updates over 10^4 random small directions")
    for lam, scale in ((1 / qp, 0.3), (2 / qp, 0.2)):
        off = paralysis_probe(qp, lam, scale, False)
        on = paralysis_probe(qp, lam, scale, True)
        print(f"  lam={lam:.3f} |h|<={scale}: uncompensated {off:.3f}  compensated {on:.3f}")

    # a shallow quadratic where every early update is below half a cell
    obj = Quadratic(np.full(2, 0.05))
    sched = QuantizationSchedule(eta=qp, kind="constant")
    lam = 1 / qp
    for enabled in (False, True):
        comp = CompensationConfig(kappa=2.0, tau0=args.steps // 2, lam=lam, enabled=enabled)
        tr = run(OptimizerConfig("qsgld", lam, schedule=sched, compensation=comp), obj,
                 [3.0, -2.0], args.steps, RngStream(0))
        print(f"compensation {'on ' if enabled else 'off'}: f(x0)={obj.full_loss(np.array([3.0, -2.0])):.4f} "
              f"-> f(x_T)={tr[-1].train_loss:.4f}, x_T={tr.state.x.tolist()}")


if __name__ == "__main__":
    main()
