"""Compare the numba and pure-numpy kernel backends.

Run with ``python3 benchmarks/bench_kernels.py [--points 48] [--repeat 5]``.
Each kernel is timed on the same inputs in both backends after a warm-up
call (which absorbs numba compilation); outputs are checked to agree.
"""
import argparse
import time

import numpy as np

from qnls import _kernels
from qnls.dynamics import Integrator
from qnls.functionals import workspace_for
from qnls.model import GaussianPotential, GridSpec, Model, NonlinearitySpec


def best_time(fn, repeat):
    fn()
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def kernel_cases(n):
    rng = np.random.default_rng(1)
    shape = (n, n, n)
    u = rng.normal(size=shape) + 1j * rng.normal(size=shape)
    s = np.abs(u) ** 2
    conv = rng.normal(size=shape)
    lap = rng.normal(size=shape)
    hp = rng.random(shape)
    k8 = rng.random((8, 8, 8))
    r8 = rng.random((8, 8, 8))
    return [
        ("density_terms", lambda impl: impl.density_terms(u, 1.0, 0.6, 1e-30)),
        ("apply_potential", lambda impl: impl.apply_potential(u, conv, lap, hp)),
        ("quasilinear_weights", lambda impl: impl.quasilinear_weights(s, 1.0, 0.6, 1e-30)),
        ("direct_convolution 8^3", lambda impl: impl.direct_convolution(k8, r8, 0.1)),
    ]


def rhs_case(n):
    grid = GridSpec(3, 12.0, n)
    model = Model(NonlinearitySpec.power(1.0, 0.6), GaussianPotential(0.1, 2.0))
    ws = workspace_for(model, grid)
    x = grid.r2()
    u = np.exp(-x / 4) + 0j
    integ = Integrator(model, ws)
    return lambda: integ.nonlinear(u)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--points", type=int, default=48)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if _kernels.numba_impl is None:
        raise SystemExit("numba is not importable; nothing to compare")
    impls = [("numpy", _kernels.numpy_impl), ("numba", _kernels.numba_impl)]
    print("%-26s %12s %12s %8s" % ("kernel", "numpy [ms]", "numba [ms]", "speedup"))
    for name, call in kernel_cases(args.points):
        outs = [call(impl) for _, impl in impls]
        outs = [o if isinstance(o, tuple) else (o,) for o in outs]
        for a, b in zip(*outs):
            assert np.allclose(a, b, rtol=1e-12, atol=1e-12), name
        t = [best_time(lambda impl=impl: call(impl), args.repeat) for _, impl in impls]
        print("%-26s %12.3f %12.3f %8.2f" % (name, 1e3 * t[0], 1e3 * t[1], t[0] / t[1]))
    t = []
    for _, impl in impls:
        saved = _kernels.active
        _kernels.active = impl
        try:
            f = rhs_case(args.points)
            t.append(best_time(f, args.repeat))
        finally:
            _kernels.active = saved
    print("%-26s %12.3f %12.3f %8.2f" % ("nonlinear rhs %d^3" % args.points, 1e3 * t[0], 1e3 * t[1], t[0] / t[1]))


if __name__ == "__main__":
    main()
