"""Compare the compiled kernels against the numpy/scipy fallback.

Usage: python3 benchmarks/bench_kernels.py [--repeat N]

Reports the median wall time of sparse propagation (one ``A @ H`` product on
a Youshu-sized user-item graph) and of a lazy Adam update over a batch of
rows, and checks that both backends return the same numbers.
"""
import argparse
import statistics
import time

import numpy as np
import scipy.sparse as sp

from crosscbr import kernels


def _time(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def bench_propagation(rng, repeat):
    # roughly the size of the Youshu user-item graph, stacked square operator
    users, items, nnz, d = 8039, 32770, 138515, 64
    rows = rng.integers(users, size=nnz)
    cols = rng.integers(items, size=nnz)
    a = sp.csr_matrix((rng.random(nnz), (rows, cols + users)), shape=(users + items,) * 2)
    a = (a + a.T).tocsr()
    a.sum_duplicates()
    indptr, indices = a.indptr.astype(np.int64), a.indices.astype(np.int64)
    h = rng.normal(size=(users + items, d))
    out = {}
    for backend in kernels.available_backends():
        out[backend] = _time(lambda: kernels.csr_matmul(indptr, indices, a.data, h, a.shape[0],
                                                        backend=backend), repeat)
    ref = kernels.csr_matmul(indptr, indices, a.data, h, a.shape[0], backend="python")
    for backend in out:
        got = kernels.csr_matmul(indptr, indices, a.data, h, a.shape[0], backend=backend)
        assert np.allclose(got, ref, rtol=0, atol=1e-12)
    return out


def bench_adam(rng, repeat):
    n, d, batch = 32770, 64, 4096
    grad = rng.normal(size=(n, d))
    rows = np.unique(rng.integers(n, size=batch))
    out = {}
    for backend in kernels.available_backends():
        param = rng.normal(size=(n, d))
        m, v = np.zeros_like(param), np.zeros_like(param)
        out[backend] = _time(lambda: kernels.lazy_adam_rows(
            param, m, v, grad, rows, 1e-3, 0.9, 0.999, 1e-8, 0.1, 0.001, backend=backend), repeat)
    return out


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=7)
    args = parser.parse_args()
    rng = np.random.default_rng(0)
    print(f"default backend: {kernels.BACKEND}")
    print(f"{'kernel':<14}{'backend':<10}{'median ms':>11}{'speedup':>9}")
    for name, result in (("propagation", bench_propagation(rng, args.repeat)),
                         ("lazy_adam", bench_adam(rng, args.repeat))):
        base = result["python"]
        for backend, t in result.items():
            print(f"{name:<14}{backend:<10}{t * 1e3:>11.2f}{base / t:>8.2f}x")


if __name__ == "__main__":
    main()
