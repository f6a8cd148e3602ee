"""Timing of the dual-basis kernels on the numba and numpy paths."""

from __future__ import annotations

import os
import time
from contextlib import contextmanager

import numpy as np

from . import _kernels


@contextmanager
def kernel_backend(name: str):
    """Temporarily select ``numba`` or ``numpy`` kernels."""
    old = os.environ.get("MPDO_APPROX_NUMBA")
    os.environ["MPDO_APPROX_NUMBA"] = "1" if name == "numba" else "0"
    try:
        yield
    finally:
        if old is None:
            os.environ.pop("MPDO_APPROX_NUMBA", None)
        else:
            os.environ["MPDO_APPROX_NUMBA"] = old


def _frame(n: int, D: int, rng) -> np.ndarray:
    g = rng.standard_normal((n * n, D)) + 1j * rng.standard_normal((n * n, D))
    q, _ = np.linalg.qr(g)
    return np.ascontiguousarray(q.T.reshape(D, n, n))


def _median_time(fn, repeats: int) -> float:
    fn()  # warm-up (and numba compilation)
    ts = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        ts.append(time.perf_counter() - t0)
    return float(np.median(ts))


def run_benchmark(sizes=(4, 8, 16), repeats: int = 5, seed: int = 0, inner: int = 50) -> list[dict]:
    """Median seconds per call of each kernel for both backends.

    Rows: ``kernel, n, D, backend, seconds, max_abs_diff`` where the last
    column compares the two backends' outputs on the same inputs.
    """
    rng = np.random.default_rng(seed)
    backends = ["numpy"] + (["numba"] if _kernels.HAVE_NUMBA else [])
    rows = []
    for n in sizes:
        D = min(n, 8)
        frame = _frame(n, D, rng)
        u = rng.standard_normal(D)
        target = rng.standard_normal(D)
        v0 = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
        outs = {}
        for b in backends:
            with kernel_backend(b):
                f1 = lambda: [_kernels.smoothed_nuclear(u, frame, 1e-3) for _ in range(inner)]
                f2 = lambda: _kernels.alternating_projections(v0, frame, target, 1.0, inner)
                outs[b] = (_kernels.smoothed_nuclear(u, frame, 1e-3)[1],
                           _kernels.alternating_projections(v0, frame, target, 1.0, inner))
                rows.append({"kernel": "smoothed_nuclear", "n": n, "D": D, "backend": b,
                             "seconds": _median_time(f1, repeats) / inner})
                rows.append({"kernel": "alternating_projections", "n": n, "D": D, "backend": b,
                             "seconds": _median_time(f2, repeats) / inner})
        diff = [0.0, 0.0]
        if len(backends) == 2:
            diff = [float(np.max(np.abs(outs["numpy"][i] - outs["numba"][i]))) for i in range(2)]
        for r in rows[-2 * len(backends):]:
            r["max_abs_diff"] = diff[0] if r["kernel"] == "smoothed_nuclear" else diff[1]
    return rows
