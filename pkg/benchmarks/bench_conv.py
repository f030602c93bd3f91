"""Benchmark the compiled convolution kernels against the numpy fallback.

Run:  python3 benchmarks/bench_conv.py

Also asserts forward bit-parity between the two backends on every shape.
"""

import time

import numpy as np

from iadg.kernels import python_backend
from iadg.tensor import Rng

try:
    from iadg.kernels import _conv as compiled
except ImportError:
    compiled = None


SHAPES = [
    # (batch, cin, size, cout)  typical stage shapes of the desk config
    (16, 3, 32, 8),
    (16, 8, 16, 16),
    (16, 16, 8, 32),
    (4, 32, 16, 64),
]


def timeit(fn, repeats=5):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    if compiled is None:
        print("compiled extension unavailable; benchmarking fallback only")
    for n, cin, s, cout in SHAPES:
        rng = Rng(99, n * cin)
        x = rng.normal(1.0, (n, cin, s, s))
        k = rng.normal(1.0, (cout, cin, 3, 3))
        xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
        go = rng.normal(1.0, (n, cout, s, s))

        t_py = timeit(lambda: python_backend.conv2d_fwd(xp, k, 1))
        t_py_b = timeit(lambda: python_backend.conv2d_bwd(go, xp, k, 1))
        line = (f"conv {n}x{cin}x{s}x{s} -> {cout}: "
                f"python fwd {t_py*1e3:7.2f} ms bwd {t_py_b*1e3:7.2f} ms")
        if compiled is not None:
            out_py = python_backend.conv2d_fwd(xp, k, 1)
            out_cy = compiled.conv2d_fwd(xp, k, 1)
            assert np.array_equal(out_py, out_cy), "forward results diverge"
            t_cy = timeit(lambda: compiled.conv2d_fwd(xp, k, 1))
            t_cy_b = timeit(lambda: compiled.conv2d_bwd(go, xp, k, 1))
            line += (f" | cython fwd {t_cy*1e3:7.2f} ms ({t_py/t_cy:4.1f}x) "
                     f"bwd {t_cy_b*1e3:7.2f} ms ({t_py_b/t_cy_b:4.1f}x)")
        print(line)


if __name__ == "__main__":
    main()
