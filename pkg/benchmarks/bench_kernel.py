"""Compiled vs pure-Python integration core.

Times ``propagate`` for the plain equation (mode 0) and the coefficient
system (mode 1) on the same inputs, checks the two cores agree and prints a
small table.  Usage: ``python benchmarks/bench_kernel.py [--x-max 200]``.
"""

import argparse
import math
import time

import numpy as np

from acstab import _pykernel
from acstab.potentials import compile_program, periodic, power_oscillatory

try:
    from acstab import _kernel
except ImportError:  # extension not built
    _kernel = None


def _time(fn, repeat):
    best = math.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--x-max", type=float, default=200.0)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    U = compile_program(periodic([0.0, 2.0, 0.0], 2 * math.pi))
    V = compile_program(power_oscillatory(1.0, 0.7, 1.0))
    xs = np.linspace(0.0, args.x_max, int(args.x_max * 10) + 1)
    cases = {0: np.array([1.0, 0.3j]), 1: np.array([1.0, 0.3j, 0, 0, 0], dtype=complex)}
    kw = dict(kappa=0.7j, rtol=1e-10, atol=1e-12, max_step=0.1)
    print(f"{'mode':>4} {'steps':>8} {'python [s]':>11} {'compiled [s]':>13} {'speedup':>8} "
          f"{'max diff':>9}")
    for mode, y0 in cases.items():
        tp, rp = _time(lambda: _pykernel.propagate(mode, U, V, 3.4, 0.0, xs, y0, **kw),
                       args.repeat)
        if _kernel is None:
            print(f"{mode:>4} {rp[2]:>8} {tp:>11.3f} {'n/a':>13} {'n/a':>8} {'n/a':>9}")
            continue
        tc, rc = _time(lambda: _kernel.propagate(mode, U, V, 3.4, 0.0, xs, y0, **kw),
                       args.repeat)
        diff = float(np.max(np.abs(rc[0] - rp[0])))
        print(f"{mode:>4} {rc[2]:>8} {tp:>11.3f} {tc:>13.4f} {tp / tc:>8.1f} {diff:>9.1e}")


if __name__ == "__main__":
    main()
