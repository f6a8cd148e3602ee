"""Inner loops of the dual-basis construction, in numba and plain numpy.

Set ``MPDO_APPROX_NUMBA=0`` to force the numpy path.  Both paths compute the
same quantities; ``benchmarks/bench_kernels.py`` and the ``bench`` CLI task
time them against each other.
"""

from __future__ import annotations

import os

import numpy as np

try:  # pragma: no cover - exercised implicitly
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    numba = None
    HAVE_NUMBA = False


def numba_requested() -> bool:
    return os.environ.get("MPDO_APPROX_NUMBA", "1").strip().lower() not in ("0", "false", "no", "off")


# -- numpy reference ---------------------------------------------------------


def smoothed_nuclear_np(u, frame, mu):
    """``sum_i sqrt(s_i^2 + mu^2)`` of ``Y = sum_r u_r B_r`` and its gradient in ``u``."""
    y = np.tensordot(u, frame, axes=1)
    left, s, right = np.linalg.svd(y)
    root = np.sqrt(s * s + mu * mu)
    g = (left * (s / root)) @ right
    grad = np.real(np.einsum("rij,ij->r", frame.conj(), g))
    return float(root.sum()), grad


def alternating_projections_np(v, frame, target, t, iters):
    """Alternate between the spectral-norm ball of radius ``t`` and the affine set
    ``{V : Re tr(B_r^dag V) = target_r}``.  Returns the last affine iterate."""
    fc = frame.conj()
    for _ in range(iters):
        left, s, right = np.linalg.svd(v)
        z = (left * np.minimum(s, t)) @ right
        c = np.real(np.einsum("rij,ij->r", fc, z))
        v = z + np.tensordot(target - c, frame, axes=1)
    return v


# -- numba -------------------------------------------------------------------

if HAVE_NUMBA:

    @numba.njit(cache=True)
    def _combine(u, frame):
        r, n, m = frame.shape
        y = np.zeros((n, m), dtype=np.complex128)
        for k in range(r):
            uk = u[k]
            for i in range(n):
                for j in range(m):
                    y[i, j] += uk * frame[k, i, j]
        return y

    @numba.njit(cache=True)
    def _real_pairing(frame, g):
        r, n, m = frame.shape
        out = np.zeros(r)
        for k in range(r):
            acc = 0.0
            for i in range(n):
                for j in range(m):
                    f = frame[k, i, j]
                    x = g[i, j]
                    acc += f.real * x.real + f.imag * x.imag
            out[k] = acc
        return out

    @numba.njit(cache=True)
    def smoothed_nuclear_nb(u, frame, mu):
        y = _combine(u.astype(np.complex128), frame)
        left, s, right = np.linalg.svd(y)
        root = np.sqrt(s * s + mu * mu)
        scale = s / root
        g = np.zeros_like(y)
        k = s.shape[0]
        for i in range(y.shape[0]):
            for j in range(y.shape[1]):
                acc = 0.0 + 0.0j
                for p in range(k):
                    acc += left[i, p] * scale[p] * right[p, j]
                g[i, j] = acc
        return root.sum(), _real_pairing(frame, g)

    @numba.njit(cache=True)
    def alternating_projections_nb(v, frame, target, t, iters):
        v = v.copy()
        for _ in range(iters):
            left, s, right = np.linalg.svd(v)
            clipped = np.minimum(s, t)
            z = (left * clipped) @ right
            c = _real_pairing(frame, z)
            v = z + _combine((target - c).astype(np.complex128), frame)
        return v


    @numba.njit(cache=True)
    def _eval(z, base, qmat, frame, mu):
        u = base + qmat @ z
        y = _combine(u.astype(np.complex128), frame)
        left, s, right = np.linalg.svd(y)
        root = np.sqrt(s * s + mu * mu)
        scale = s / root
        g = np.zeros_like(y)
        k = s.shape[0]
        for i in range(y.shape[0]):
            for j in range(y.shape[1]):
                acc = 0.0 + 0.0j
                for p in range(k):
                    acc += left[i, p] * scale[p] * right[p, j]
                g[i, j] = acc
        grad_u = _real_pairing(frame, g)
        return root.sum(), qmat.T @ grad_u, s.sum()

    @numba.njit(cache=True)
    def _lbfgs_stage(z, base, qmat, frame, mu, gtol, maxiter, memory):
        m = z.shape[0]
        sk = np.zeros((memory, m))
        yk = np.zeros((memory, m))
        rho = np.zeros(memory)
        alpha = np.zeros(memory)
        f, g, _ = _eval(z, base, qmat, frame, mu)
        count = 0
        head = 0
        for _ in range(maxiter):
            if np.max(np.abs(g)) <= gtol:
                break
            d = -g.copy()
            # two-loop recursion over the stored pairs, newest first
            for t in range(count):
                i = (head - 1 - t) % memory
                alpha[i] = rho[i] * (sk[i] @ d)
                d -= alpha[i] * yk[i]
            if count > 0:
                i = (head - 1) % memory
                d *= (sk[i] @ yk[i]) / (yk[i] @ yk[i])
            for t in range(count - 1, -1, -1):
                i = (head - 1 - t) % memory
                beta = rho[i] * (yk[i] @ d)
                d += (alpha[i] - beta) * sk[i]
            slope = g @ d
            if slope >= 0.0:
                d = -g.copy()
                slope = g @ d
                count = 0
            step = 1.0
            accepted = False
            for _ls in range(60):
                zn = z + step * d
                fn, gn, _ = _eval(zn, base, qmat, frame, mu)
                if fn <= f + 1e-4 * step * slope:
                    accepted = True
                    break
                step *= 0.5
            if not accepted:
                break
            sv = zn - z
            yv = gn - g
            sy = sv @ yv
            if sy > 1e-20:
                sk[head] = sv
                yk[head] = yv
                rho[head] = 1.0 / sy
                head = (head + 1) % memory
                count = min(count + 1, memory)
            done = f - fn <= 1e-16 * max(1.0, abs(f))
            z, f, g = zn, fn, gn
            if done:
                break
        return z

    @numba.njit(cache=True)
    def smoothed_primal_nb(base, qmat, frame, mus, gtols, stop_above, maxiter):
        """Continuation in ``mu``; returns ``(z, early)``."""
        z = np.zeros(qmat.shape[1])
        for st in range(mus.shape[0]):
            z = _lbfgs_stage(z, base, qmat, frame, mus[st], gtols[st], maxiter, 20)
            if stop_above > 0.0:
                _, _, nuc = _eval(z, base, qmat, frame, mus[st])
                if 1.0 / nuc > stop_above:
                    return z, True
        return z, False


def _use_numba() -> bool:
    return HAVE_NUMBA and numba_requested()


def smoothed_nuclear(u, frame, mu):
    if _use_numba():
        f, g = smoothed_nuclear_nb(np.ascontiguousarray(u, dtype=np.float64),
                                   np.ascontiguousarray(frame, dtype=np.complex128), float(mu))
        return float(f), g
    return smoothed_nuclear_np(u, frame, mu)


def alternating_projections(v, frame, target, t, iters):
    if _use_numba():
        return alternating_projections_nb(np.ascontiguousarray(v, dtype=np.complex128),
                                          np.ascontiguousarray(frame, dtype=np.complex128),
                                          np.ascontiguousarray(target, dtype=np.float64),
                                          float(t), int(iters))
    return alternating_projections_np(v, frame, target, t, iters)


def backend() -> str:
    return "numba" if _use_numba() else "numpy"
