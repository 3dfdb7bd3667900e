"""Compare the compiled scan kernels against the NumPy fallback.

Run: python benchmarks/bench_kernels.py [--n 100000] [--dim 28] [--repeats 20]

The fused Cython scan avoids materializing the full score vector and sort;
nearest-centroid assignment is where NumPy's BLAS matmul usually wins, which
is why the IVF build keeps whichever backend is active rather than forcing
the compiled path.
"""

import argparse
import time

import numpy as np

from ammr import kernels
from ammr.kernels import _numpy as numpy_backend


def timeit(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        started = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - started)
    return best * 1000.0


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--n", type=int, default=100_000)
    parser.add_argument("--dim", type=int, default=28)
    parser.add_argument("--repeats", type=int, default=20)
    parser.add_argument("--centroids", type=int, default=256)
    args = parser.parse_args()

    if kernels.cython_backend is None:
        print("compiled extension not built; only the NumPy fallback is available")
        return

    rng = np.random.default_rng(7)
    matrix = np.ascontiguousarray(rng.standard_normal((args.n, args.dim)))
    matrix /= np.linalg.norm(matrix, axis=1, keepdims=True)
    wq = rng.standard_normal(args.dim)
    row_norms = np.linalg.norm(matrix, axis=1)
    q_norm = float(np.linalg.norm(wq))
    centroids = np.ascontiguousarray(matrix[rng.choice(args.n, args.centroids, replace=False)])
    subset = np.sort(rng.choice(args.n, args.n // 16, replace=False)).astype(np.intp)

    cases = [
        ("topk_scan full k=10", lambda b: b.topk_scan(matrix, wq, row_norms, q_norm, 10)),
        ("topk_scan full k=300", lambda b: b.topk_scan(matrix, wq, row_norms, q_norm, 300)),
        ("topk_scan subset k=100", lambda b: b.topk_scan(matrix, wq, row_norms, q_norm, 100, subset)),
        (f"assign_nearest {args.centroids}c", lambda b: b.assign_nearest(matrix, centroids)),
    ]

    print(f"n={args.n} dim={args.dim} repeats={args.repeats} (best-of timings, ms)")
    print(f"{'case':28s} {'cython':>10s} {'numpy':>10s} {'speedup':>9s}")
    for name, call in cases:
        cy = timeit(lambda: call(kernels.cython_backend), args.repeats)
        np_ms = timeit(lambda: call(numpy_backend), args.repeats)
        print(f"{name:28s} {cy:10.3f} {np_ms:10.3f} {np_ms / cy:8.2f}x")

    # sanity: identical selections
    for name, call in cases[:3]:
        a = call(kernels.cython_backend)
        b = call(numpy_backend)
        assert np.array_equal(a[0], b[0]), f"backend mismatch in {name}"
    assert np.array_equal(
        kernels.cython_backend.assign_nearest(matrix, centroids),
        numpy_backend.assign_nearest(matrix, centroids),
    )
    print("backends agree on all selections")


if __name__ == "__main__":
    main()
