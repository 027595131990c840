"""Compare the compiled and numpy stencil backends on the extended grid.

    python benchmarks/bench_stencil.py [--repeat 5]
"""

import argparse
import timeit

import numpy as np

from homogbench import kernels
from homogbench.bvp import DomainGrid, stencil_coefficients, _tensor_sampler
from homogbench.coefficients import builtin


def cases():
    A1, A2 = builtin("A1", 256), builtin("A2", 64)
    yield "1d N=65535", A1, DomainGrid(1, 65535)
    yield "2d N=255", A2, DomainGrid(2, 255)
    yield "2d N=511", A2, DomainGrid(2, 511)


def main(argv=None):
    p = argparse.ArgumentParser()
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args(argv)
    rng = np.random.default_rng(0)
    print(f"compiled extension available: {kernels._stencil is not None}")
    print(f"{'case':<14}{'python ms':>12}{'cython ms':>12}{'speedup':>10}{'max diff':>12}")
    for label, A, grid in cases():
        eps = 1 / 16
        tensor, m = _tensor_sampler(A, eps)
        co = stencil_coefficients(grid, tensor)
        u = rng.standard_normal((m,) + (grid.N + 4,) * grid.d)
        times, results = {}, {}
        for backend in ("python", "cython"):
            if backend == "cython" and kernels._stencil is None:
                continue
            fn = lambda b=backend: kernels.apply_operator(u, eps * eps, co, grid.h, backend=b)
            results[backend] = fn()
            times[backend] = min(timeit.repeat(fn, number=1, repeat=args.repeat)) * 1e3
        if "cython" in times:
            scale = np.abs(results["python"]).max()
            diff = np.abs(results["python"] - results["cython"]).max() / scale
            print(f"{label:<14}{times['python']:>12.2f}{times['cython']:>12.2f}"
                  f"{times['python'] / times['cython']:>10.2f}{diff:>12.1e}")
        else:
            print(f"{label:<14}{times['python']:>12.2f}{'n/a':>12}")


if __name__ == "__main__":
    main()
