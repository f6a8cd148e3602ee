"""Trace-norm Auerbach bases, operator-norm dual extensions and the embedded
projection that merges two low-rank approximations.

For a subspace ``A`` of ``n x n`` matrices with the trace norm, an Auerbach
basis ``{Ahat_i}`` has ``||Ahat_i||_1 = 1`` and biorthogonal functionals of
norm one on ``A``.  Each functional is extended to the whole matrix space as
``X -> tr(Ahat'_i^dag X)`` with ``||Ahat'_i||_inf`` equal to its norm on ``A``.
The projection ``P(X) = sum_i Ahat_i (x) tr_A[(Ahat'_i (x) 1)^dag X]`` then has
trace-norm amplification at most ``sum_i ||Ahat_i||_1 ||Ahat'_i||_inf``.

Dual norms are computed from both sides: a smoothed trace-norm minimisation
over the subspace gives a certified lower bound (a feasible primal point) and
a near-optimal extension; bisection with alternating projections between the
spectral-norm ball and the affine constraint set polishes the extension
whenever the gap is above tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import null_space, qr
from scipy.optimize import minimize

from . import _kernels
from .errors import DomainError, InvariantViolation, StructuralError
from .operators import from_hermitian_coeffs, hermitian_coeffs, trace_norm

DUAL_TOLERANCE = 1e-3
RANK_TOL = 1e-10


def _is_hermitian(mats: np.ndarray, tol: float = 1e-12) -> bool:
    scale = max(1.0, float(np.max(np.abs(mats)))) if mats.size else 1.0
    return bool(np.max(np.abs(mats - mats.conj().transpose(0, 2, 1)), initial=0.0) <= tol * scale)


def _realify(mats: np.ndarray) -> np.ndarray:
    flat = mats.reshape(mats.shape[0], -1)
    return np.concatenate([flat.real, flat.imag], axis=1).T  # (2 n^2, m)


def _pairing(frame: np.ndarray, x: np.ndarray) -> np.ndarray:
    """``Re tr(B_r^dag X)`` for every frame element."""
    return np.real(np.einsum("rij,ij->r", frame.conj(), x))


@dataclass(frozen=True)
class OperatorSubspace:
    """Span of ``generators`` (matrices on ``region``) with an orthonormal frame.

    ``frame`` is Hilbert-Schmidt orthonormal.  When every generator is
    Hermitian the frame is Hermitian and the subspace is treated as the real
    span of Hermitian matrices, so bases and duals are Hermitian too.
    """

    generators: np.ndarray
    frame: np.ndarray
    hermitian: bool
    region: tuple[int, ...] = ()

    @property
    def dim(self) -> int:
        return self.frame.shape[0]

    @property
    def n(self) -> int:
        return self.frame.shape[1]

    @classmethod
    def from_generators(cls, generators: Sequence[np.ndarray], region: Sequence[int] = (),
                        rank_tol: float = RANK_TOL) -> "OperatorSubspace":
        gens = np.asarray(np.stack([np.asarray(g, dtype=np.complex128) for g in generators]))
        if gens.ndim != 3 or gens.shape[1] != gens.shape[2]:
            raise DomainError("generators must be a list of square matrices")
        herm = _is_hermitian(gens)
        flat = _realify(gens) if herm else gens.reshape(gens.shape[0], -1).T
        s = np.linalg.svd(flat, compute_uv=False)
        if s.size == 0 or s[0] <= 0:
            raise DomainError("generators span the zero subspace")
        rank = int(np.sum(s > rank_tol * s[0]))
        # pivoting picks an independent subset; re-orthonormalise it in the given order
        _, _, piv = qr(flat, mode="economic", pivoting=True)
        chosen = np.sort(piv[:rank])
        qmat, rmat = np.linalg.qr(flat[:, chosen])
        qmat = qmat * np.sign(np.where(np.diag(rmat).real == 0, 1.0, np.diag(rmat).real))
        n = gens.shape[1]
        if herm:
            half = n * n
            frame = (qmat[:half] + 1j * qmat[half:]).T.reshape(rank, n, n)
            frame = 0.5 * (frame + frame.conj().transpose(0, 2, 1))
        else:
            frame = qmat.T.reshape(rank, n, n)
        return cls(gens, frame, herm, tuple(region))

    @classmethod
    def from_frame(cls, frame: np.ndarray, hermitian: bool, region: Sequence[int] = ()):
        frame = np.asarray(frame, dtype=np.complex128)
        return cls(frame, frame, bool(hermitian), tuple(region))

    def real_frame(self) -> np.ndarray:
        """Real-orthonormal frame of the subspace seen as a real vector space."""
        if self.hermitian:
            return self.frame
        return np.concatenate([self.frame, 1j * self.frame])

    def matrices(self, coords: np.ndarray) -> np.ndarray:
        """Matrices ``sum_k coords[k, i] frame_k`` for each column ``i``."""
        return np.einsum("ki,kab->iab", coords, self.frame)

    def coordinates(self, x: np.ndarray) -> np.ndarray:
        c = np.einsum("kab,ab->k", self.frame.conj(), x)
        return c.real if self.hermitian else c


@dataclass(frozen=True)
class DualSolve:
    lower: float            # certified: value of a feasible primal point
    maximizer: np.ndarray   # unit trace norm element of the subspace attaining ``lower``
    extension: np.ndarray   # full-space matrix reproducing the functional on the subspace
    norm: float             # ||extension||_inf
    converged: bool
    state: Optional[tuple] = field(default=None, repr=False)  # (u, grad) for a later extension


_MU_STAGES = np.array([1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7])
_STAGE_GTOL = np.array([1e-5, 1e-6, 1e-7, 1e-13, 1e-13, 1e-13, 1e-13])
EXCHANGE_FRACTION = 0.25  # exchange when a subspace dual exceeds 1 + fraction * tol


def _smoothed_primal(target: np.ndarray, frame: np.ndarray, u_start: Optional[np.ndarray],
                     stop_above: Optional[float] = None):
    """Minimise a smoothed trace norm over ``{Y : Re tr(W^dag Y) = 1}``.

    Returns ``(u, grad, early)``; with ``stop_above`` set, the continuation
    stops as soon as the certified lower bound ``1/||Y||_1`` exceeds it.
    """
    a = target
    aa = float(a @ a)
    base = a / aa
    q = null_space(a[None, :]) if a.size > 1 else np.zeros((1, 0))
    z = np.zeros(q.shape[1]) if u_start is None else q.T @ (u_start - base)
    y0 = np.tensordot(base, frame, axes=1)
    scale = max(trace_norm(y0), 1e-300) / frame.shape[1]
    mus = scale * _MU_STAGES
    if q.shape[1] and _kernels.backend() == "numba":
        z, early = _kernels.smoothed_primal_nb(
            np.ascontiguousarray(base), np.ascontiguousarray(q),
            np.ascontiguousarray(frame, dtype=np.complex128), mus, _STAGE_GTOL,
            -1.0 if stop_above is None else float(stop_above), 2000)
        u = base + q @ z
        if early:
            return u, None, True
        _, grad_u = _kernels.smoothed_nuclear(u, frame, mus[-1])
        return u, grad_u, False
    for mu, gtol in zip(mus, _STAGE_GTOL) if q.shape[1] else ():

        def fun(zz, mu=mu):
            f, g = _kernels.smoothed_nuclear(base + q @ zz, frame, mu)
            return f, q.T @ g

        # loose inner solves early in the continuation, tight at the end
        res = minimize(fun, z, jac=True, method="L-BFGS-B",
                       options={"maxiter": 2000, "gtol": gtol, "ftol": 1e-16, "maxcor": 30})
        z = res.x
        if stop_above is not None:
            ynorm = trace_norm(np.tensordot(base + q @ z, frame, axes=1))
            if 1.0 / ynorm > stop_above:
                return base + q @ z, None, True
    u = base + q @ z
    _, grad_u = _kernels.smoothed_nuclear(u, frame, mus[-1])
    return u, grad_u, False


def _affine_fix(v: np.ndarray, frame: np.ndarray, target: np.ndarray) -> np.ndarray:
    return v + np.tensordot(target - _pairing(frame, v), frame, axes=1)


def _polish(v: np.ndarray, lower: float, frame: np.ndarray, target: np.ndarray,
            gap_tol: float, rounds: int = 30, iters: int = 200) -> tuple[np.ndarray, float]:
    best, best_norm = v, float(np.linalg.norm(v, 2))
    lo = lower
    for _ in range(rounds):
        if best_norm - lower <= gap_tol:
            break
        t = 0.5 * (lo + best_norm)
        cand = _kernels.alternating_projections(best, frame, target, t, iters)
        cand = _affine_fix(cand, frame, target)
        cn = float(np.linalg.norm(cand, 2))
        if cn < best_norm:
            if cn > t + 0.25 * (best_norm - t):
                lo = t  # slow progress: the ball is probably (nearly) infeasible
            best, best_norm = cand, cn
        else:
            lo = t
        if best_norm - lo <= 0.1 * gap_tol:
            lo = lower
    return best, best_norm


def dual_norm(w: np.ndarray, sub: OperatorSubspace, gap_tol: float = 1e-4,
              u_start: Optional[np.ndarray] = None, stop_above: Optional[float] = None,
              extend: bool = True) -> DualSolve:
    """Norm of ``X -> tr(W^dag X)`` on ``(sub, ||.||_1)`` with a minimal-norm extension.

    ``W`` must lie in the subspace.  With ``stop_above`` the solve may return
    early, as soon as the certified lower bound exceeds that value.  The
    extension is ``None`` then, or when ``extend`` is false; pass the result
    to :func:`extend_solution` to build it later.
    """
    frame = sub.real_frame()
    target = _pairing(frame, w)
    if not np.any(target):
        raise DomainError("zero functional")
    if sub.dim == 1:
        # equality case of trace-norm duality: scaled polar sign factor
        g = sub.frame[0]
        gn = trace_norm(g)
        f = complex(np.vdot(w, g))
        phase = np.conj(f) / abs(f)
        lower = abs(f) / gn
        ext = np.conj(f) / gn * _sign_factor(g)
        nrm = float(np.linalg.norm(ext, 2))
        return DualSolve(lower, g * phase / gn, ext, nrm, True)

    u, grad, early = _smoothed_primal(target, frame, u_start, stop_above)
    y = np.tensordot(u, frame, axes=1)
    ynorm = trace_norm(y)
    lower = 1.0 / ynorm  # Re tr(W^dag Y) = 1 by construction
    if early or not extend:
        return DualSolve(lower, y / ynorm, None, np.inf, False, None if early else (u, grad))
    return extend_solution(DualSolve(lower, y / ynorm, None, np.inf, False, (u, grad)), w, sub,
                           gap_tol)


def extend_solution(sol: DualSolve, w: np.ndarray, sub: OperatorSubspace,
                    gap_tol: float = 1e-4) -> DualSolve:
    """Operator-norm extension from a finished smoothed solve."""
    if sol.extension is not None:
        return sol
    frame = sub.real_frame()
    target = _pairing(frame, w)
    u, grad = sol.state
    lower = sol.lower
    y = np.tensordot(u, frame, axes=1)
    ynorm = trace_norm(y)
    lam = float(grad @ target) / float(target @ target)
    left, s, right = np.linalg.svd(y)
    mu = ynorm / y.shape[0] * 1e-7
    g = (left * (s / np.sqrt(s * s + mu * mu))) @ right
    cand = [_affine_fix(g / lam, frame, target), _affine_fix(np.array(w, dtype=np.complex128), frame, target)]
    norms = [float(np.linalg.norm(c, 2)) for c in cand]
    best = int(np.argmin(norms))
    ext, nrm = cand[best], norms[best]
    if nrm - lower > gap_tol:
        ext, nrm = _polish(ext, lower, frame, target, gap_tol)
    if sub.hermitian:
        ext = 0.5 * (ext + ext.conj().T)
        ext = _affine_fix(ext, frame, target)
        nrm = float(np.linalg.norm(ext, 2))
    return DualSolve(lower, y / ynorm, ext, nrm, nrm - lower <= gap_tol)


def _sign_factor(x: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Partial isometry ``U V^dag`` of the polar decomposition."""
    left, s, right = np.linalg.svd(x)
    keep = s > tol * max(s[0], 1e-300)
    return left[:, keep] @ right[keep]


# -- Auerbach bases ----------------------------------------------------------


@dataclass(frozen=True)
class AuerbachBasis:
    subspace: OperatorSubspace
    mode: str
    coords: np.ndarray        # column i: frame coordinates of basis element i
    coefficients: np.ndarray  # row i: Ahat_i = sum_k c_ik generator_k
    basis: np.ndarray         # (D, n, n), unit trace norm
    duals: np.ndarray         # (D, n, n)
    dual_lower: np.ndarray    # certified lower bounds of the subspace dual norms
    converged: bool
    sweeps: int
    exchanges: int

    @property
    def D(self) -> int:
        return self.basis.shape[0]

    @property
    def trace_norms(self) -> np.ndarray:
        return np.array([trace_norm(b) for b in self.basis])

    @property
    def dual_norms(self) -> np.ndarray:
        return np.array([np.linalg.norm(v, 2) for v in self.duals])

    @property
    def quality(self) -> float:
        return float(self.dual_norms.max())

    @property
    def biorthogonality_residual(self) -> float:
        g = np.einsum("iab,jab->ij", self.duals.conj(), self.basis)
        return float(np.max(np.abs(g - np.eye(self.D))))

    @property
    def amplification_certificate(self) -> float:
        """``sum_i ||Ahat_i||_1 ||Ahat'_i||_inf``."""
        return float(np.sum(self.trace_norms * self.dual_norms))

    def summary(self) -> dict:
        return {"D": self.D, "mode": self.mode, "quality": self.quality,
                "biorthogonality_residual": self.biorthogonality_residual,
                "amplification_certificate": self.amplification_certificate,
                "converged": self.converged, "sweeps": self.sweeps, "exchanges": self.exchanges}


def _riesz(coords_inv_row: np.ndarray, sub: OperatorSubspace) -> np.ndarray:
    # f(Y) = (X^{-1} y)_j = w^H y  with  w = conj(X^{-1}[j])
    return np.tensordot(coords_inv_row.conj(), sub.frame, axes=1)


def _normalise_columns(coords: np.ndarray, sub: OperatorSubspace) -> np.ndarray:
    mats = sub.matrices(coords)
    return coords / np.array([trace_norm(m) for m in mats])


def _finish(sub: OperatorSubspace, mode, coords, duals, lower, converged, sweeps, exchanges):
    basis = sub.matrices(coords)
    norms = np.array([trace_norm(b) for b in basis])
    basis = basis / norms[:, None, None]
    coords = coords / norms
    gens = sub.generators.reshape(sub.generators.shape[0], -1).T
    coeffs = np.linalg.lstsq(gens, basis.reshape(basis.shape[0], -1).T, rcond=None)[0].T
    if sub.hermitian:
        coeffs = coeffs.real if np.allclose(coeffs.imag, 0, atol=1e-12) else coeffs
    return AuerbachBasis(sub, mode, coords, coeffs, basis, np.asarray(duals),
                         np.asarray(lower, dtype=float), converged, sweeps, exchanges)


_CHEAP_GAIN = 1.05


def _cheap_ascent(w: np.ndarray, row: np.ndarray, sub: OperatorSubspace,
                  threshold: float) -> Optional[np.ndarray]:
    """Unit-trace-norm coordinates ``y`` with ``|f(y)| > threshold``, if a cheap guess finds one.

    Guesses are ``W`` itself and the orthogonal projections onto the
    subspace of rank-one pieces of ``W``; each ratio is exact, so any hit is
    a valid exchange.
    """
    cands = [sub.coordinates(w)]
    if sub.hermitian:
        vals, vecs = np.linalg.eigh(w)
        for i in np.argsort(-np.abs(vals))[:3]:
            cands.append(sub.coordinates(np.outer(vecs[:, i], vecs[:, i].conj())))
    else:
        u, _, vh = np.linalg.svd(w)
        for i in range(min(3, u.shape[1])):
            cands.append(sub.coordinates(np.outer(u[:, i], vh[i])))
    best, best_ratio = None, threshold
    for c in cands:
        nrm = trace_norm(sub.matrices(c[:, None])[0])
        if nrm <= 0:
            continue
        ratio = abs(row @ c) / nrm
        if ratio > best_ratio:
            best, best_ratio = c / nrm, ratio
    return best


def matrix_unit_basis(n: int, hermitian: bool) -> tuple[np.ndarray, np.ndarray]:
    """Exact Auerbach basis of all ``n x n`` (Hermitian) matrices and its duals.

    Complex case: ``E_ab`` with duals ``E_ab``.  Hermitian case: ``E_aa``,
    ``(E_ab + E_ba)/2`` for ``a < b`` and ``i(E_ab - E_ba)/2`` for ``a > b``,
    with the same matrices unhalved as duals.  Every element has trace norm
    1 and every dual operator norm 1.
    """
    units = np.zeros((n * n, n, n), dtype=np.complex128)
    for a in range(n):
        for b in range(n):
            units[a * n + b, a, b] = 1.0
    if not hermitian:
        return units, units.copy()
    duals = np.zeros_like(units)
    for a in range(n):
        for b in range(n):
            e = units[a * n + b]
            if a == b:
                duals[a * n + b] = e
            elif a < b:
                duals[a * n + b] = e + e.T
            else:
                duals[a * n + b] = 1j * (e - e.T)
    basis = duals.copy()
    off = np.array([a != b for a in range(n) for b in range(n)])
    basis[off] *= 0.5
    return basis, duals


def auerbach_basis(sub: OperatorSubspace, mode: str = "auerbach", tol: float = DUAL_TOLERANCE,
                   max_iters: int = 200, seed: int = 0) -> AuerbachBasis:
    """Trace-norm-normalised basis of ``sub`` with operator-norm-bounded duals.

    ``auerbach`` mode runs coordinate-exchange ascent on ``|det|`` of the
    coordinate matrix: each element is replaced by the unit-trace-norm
    maximiser of its dual functional whenever that functional has norm above
    ``1 + tol/4`` on the subspace.  At a fixed point every subspace dual has
    norm at most ``1 + tol/4`` and its extension has norm at most ``1 + tol``.
    ``hs`` mode uses the Hilbert-Schmidt orthonormal frame directly.
    """
    D = sub.dim
    if D < 1:
        raise DomainError("rank-deficient (empty) subspace")
    dtype = np.float64 if sub.hermitian else np.complex128
    if mode not in ("auerbach", "hs"):
        raise DomainError(f"unknown basis mode {mode!r}")
    if mode == "hs":
        coords = np.eye(D, dtype=dtype)
        norms = np.array([trace_norm(f) for f in sub.frame])
        duals = sub.frame * norms[:, None, None]
        return _finish(sub, "hs", coords, duals, np.ones(D), True, 0, 0)
    if D == sub.n * sub.n:
        basis, duals = matrix_unit_basis(sub.n, sub.hermitian)
        coords = np.stack([sub.coordinates(b) for b in basis], axis=1)
        return _finish(sub, "auerbach", coords, duals, np.ones(D), True, 0, 0)

    rng = np.random.default_rng(seed)
    coords = _normalise_columns(np.eye(D, dtype=dtype), sub)
    exchange_at = 1.0 + EXCHANGE_FRACTION * tol
    cheap_at = _CHEAP_GAIN
    exchanges = 0
    sweeps = 0
    duals: list = [None] * D
    lower = np.zeros(D)
    clean = False
    for sweeps in range(1, max_iters + 1):
        changed = False
        pending: dict = {}
        for j in rng.permutation(D):
            inv = np.linalg.inv(coords)
            w = _riesz(inv[j], sub)
            y = _cheap_ascent(w, inv[j], sub, cheap_at) if cheap_at else None
            if y is None:
                sol = dual_norm(w, sub, gap_tol=0.5 * tol, stop_above=exchange_at, extend=False)
                if sol.lower > exchange_at:
                    y = sub.coordinates(sol.maximizer)
            if y is not None:
                fj = inv[j] @ y
                coords[:, j] = y * (np.conj(fj) / abs(fj))
                exchanges += 1
                changed = True
            else:
                pending[j] = (sol, w)
        if not changed:
            clean = True
            break
    if clean:
        # nothing moved during the last sweep, so its solves are against the final basis
        for j, (sol, w) in pending.items():
            sol = extend_solution(sol, w, sub, gap_tol=0.5 * tol)
            duals[j], lower[j] = sol.extension, sol.lower
    else:
        # duals from the last sweep may be stale; recompute against the final basis
        inv = np.linalg.inv(coords)
        for j in range(D):
            sol = dual_norm(_riesz(inv[j], sub), sub, gap_tol=0.5 * tol)
            duals[j], lower[j] = sol.extension, sol.lower
    basis = _finish(sub, "auerbach", coords, duals, lower, clean, sweeps, exchanges)
    return _biorthogonalise(basis)


def _biorthogonalise(basis: AuerbachBasis) -> AuerbachBasis:
    """Remove the residual ``tr(V_j^dag Ahat_i) - delta_ij`` left by renormalisation."""
    sub = basis.subspace
    frame = sub.real_frame()
    inv = np.linalg.inv(basis.coords)
    duals = []
    for j in range(basis.D):
        target = _pairing(frame, _riesz(inv[j], sub))
        duals.append(_affine_fix(basis.duals[j], frame, target))
    duals = np.asarray(duals)
    if sub.hermitian:
        duals = 0.5 * (duals + duals.conj().transpose(0, 2, 1))
    return AuerbachBasis(sub, basis.mode, basis.coords, basis.coefficients, basis.basis, duals,
                         basis.dual_lower, basis.converged, basis.sweeps, basis.exchanges)


@dataclass(frozen=True)
class DualExtension:
    matrix: np.ndarray
    norm: float
    subspace_norm_lower: float
    converged: bool


def hahn_banach_extend(basis: Sequence[np.ndarray], index: int, tol: float = DUAL_TOLERANCE
                       ) -> DualExtension:
    """Minimal operator-norm matrix ``V`` with ``tr(V^dag basis_i) = delta_{i,index}``."""
    sub = OperatorSubspace.from_generators(basis)
    if sub.dim != len(basis):
        raise DomainError("basis elements are linearly dependent")
    coords = np.stack([sub.coordinates(b) for b in sub.generators], axis=1)
    inv = np.linalg.inv(coords)
    sol = dual_norm(_riesz(inv[index], sub), sub, gap_tol=tol)
    return DualExtension(sol.extension, sol.norm, sol.lower, sol.converged)


# -- projections -------------------------------------------------------------


@dataclass(frozen=True)
class ProjectionMap:
    """``P(X) = sum_i Ahat_i (x) tr_R[(Ahat'_i (x) 1)^dag X]`` on a chain.

    ``side`` is ``left`` when the projected region is sites ``1..k`` and
    ``right`` for sites ``k+1..N``; ``cut`` is ``k``.  ``source_blocks`` holds
    the (canonicalised) blocks of the approximation whose factors span the
    subspace, used to express the output over its existing bonds.
    """

    basis: AuerbachBasis
    n_sites: int
    d: int
    cut: int
    side: str
    source_blocks: tuple = field(default=(), repr=False)

    @property
    def D(self) -> int:
        return self.basis.D

    @property
    def region(self) -> tuple[int, ...]:
        if self.side == "left":
            return tuple(range(1, self.cut + 1))
        return tuple(range(self.cut + 1, self.n_sites + 1))

    @property
    def amplification_certificate(self) -> float:
        return self.basis.amplification_certificate

    def apply_dense(self, x: np.ndarray) -> np.ndarray:
        n_r = self.basis.basis.shape[1]
        dim = self.d**self.n_sites
        n_o = dim // n_r
        b, v = self.basis.basis, self.basis.duals
        if self.side == "left":
            x4 = np.asarray(x).reshape(n_r, n_o, n_r, n_o)
            y = np.einsum("ica,cbad->ibd", v.conj(), x4)
            out = np.einsum("iac,ibd->abcd", b, y)
        else:
            x4 = np.asarray(x).reshape(n_o, n_r, n_o, n_r)
            y = np.einsum("icb,acdb->iad", v.conj(), x4)
            out = np.einsum("iac,ibd->badc", b, y)
        return out.reshape(dim, dim)


def amplification_measure(proj: ProjectionMap, x: np.ndarray) -> float:
    """``||P(X)||_1 / ||X||_1``."""
    nx = trace_norm(x)
    if nx == 0.0:
        raise DomainError("X has zero trace norm")
    return trace_norm(proj.apply_dense(x)) / nx


def merge_error_bound(D: float, delta1: float, delta2: float) -> float:
    """``(D + 1) delta_1 + D delta_2`` for projecting ``sigma_2`` onto ``sigma_1``'s span."""
    if min(D, delta1, delta2) < 0:
        raise DomainError("merge bound needs non-negative inputs")
    return (D + 1.0) * delta1 + D * delta2


def certified_merge_bound(amplification: float, delta1: float, delta2: float) -> float:
    """Bound with the measured amplification constant in place of ``D``."""
    return (amplification + 1.0) * delta1 + amplification * delta2


def check_projection(proj: ProjectionMap, generators: np.ndarray, tol: float = 1e-9) -> None:
    """Verify ``P(A_k) = A_k`` on the region for every generator."""
    b, v = proj.basis.basis, proj.basis.duals
    for g in generators:
        c = np.einsum("iab,ab->i", v.conj(), g)
        back = np.einsum("i,iab->ab", c, b)
        if np.max(np.abs(back - g)) > tol * max(1.0, float(np.max(np.abs(g)))):
            raise InvariantViolation("projection does not fix its own generators")


def structural_check(ok: bool, msg: str) -> None:
    if not ok:
        raise StructuralError(msg)


# -- building and applying projections on blocked states ----------------------


def _region_frame(blocked, cut: int, side: str):
    """Canonicalise ``blocked`` toward ``cut`` and return its factor frame there."""
    chain = blocked.chain
    n, d = chain.n_sites, chain.d
    if side == "left":
        canon = blocked.canonical_left(cut)
        vecs = canon.left_factors(cut).T
        sites, region = cut, tuple(range(1, cut + 1))
        src = canon.blocks[: canon.block_index(cut) + 1]
    elif side == "right":
        canon = blocked.canonical_right(cut)
        vecs = canon.right_factors(cut)
        sites, region = n - cut, tuple(range(cut + 1, n + 1))
        src = canon.blocks[canon.block_index(cut + 1):]
    else:
        raise DomainError(f"side must be 'left' or 'right', got {side!r}")
    frame = np.stack([from_hermitian_coeffs(v, sites, d) for v in vecs])
    frame = 0.5 * (frame + frame.conj().transpose(0, 2, 1))
    return OperatorSubspace.from_frame(frame, True, region), tuple(src)


def build_projection(source, cut: Optional[int] = None, side: str = "left", mode: str = "auerbach",
                     tol: float = DUAL_TOLERANCE, max_iters: int = 200, seed: int = 0,
                     check_tol: float = 1e-9) -> ProjectionMap:
    """Projection onto the factor span of ``source`` on one side of ``cut``.

    ``source`` is either a :class:`~mpdo_approx.purification.CutTruncation`
    (its left factors ``A_ij`` at its own cut) or a
    :class:`~mpdo_approx.mpdo.BlockedMPDO` together with one of its cuts.
    The resulting map fixes every factor to ``check_tol``.
    """
    from .mpdo import BlockedMPDO
    from .purification import CutTruncation

    generators = None
    if isinstance(source, CutTruncation):
        k = source.cut.position
        if cut is not None and cut != k:
            raise StructuralError(f"truncation lives at cut {k}, not {cut}")
        cut = k
        blocked = BlockedMPDO.from_dense_cut(source.chain, source.sigma, k)
        fam = source.A_factors if side == "left" else source.B_factors
        generators = fam.reshape(-1, *fam.shape[2:])
    elif isinstance(source, BlockedMPDO):
        if cut is None:
            raise DomainError("a cut is required for a blocked source")
        blocked = source
    else:
        raise DomainError(f"cannot build a projection from {type(source).__name__}")
    sub, src = _region_frame(blocked, cut, side)
    basis = auerbach_basis(sub, mode, tol, max_iters, seed)
    if basis.biorthogonality_residual > 1e-9:
        raise InvariantViolation(f"biorthogonality residual {basis.biorthogonality_residual:.3e}")
    proj = ProjectionMap(basis, blocked.chain.n_sites, blocked.chain.d, cut, side, src)
    check_projection(proj, sub.frame if generators is None else generators, check_tol)
    return proj


def _dual_coefficients(proj: ProjectionMap) -> np.ndarray:
    sites = len(proj.region)
    return np.stack([hermitian_coeffs(v, sites, proj.d) for v in proj.basis.duals])


def apply_projection(proj: ProjectionMap, target):
    """``P(target)`` for a blocked state, contracting only along existing bonds.

    The projected region must lie inside the first (``left``) or last
    (``right``) block of ``target``, or end exactly on one of its cuts.  The
    output has a new cut at the projection's boundary with bond ``D``; every
    cut of ``target`` outside the region keeps its bond dimension, and the
    region itself inherits the block structure of the projection's source.
    """
    from .mpdo import Block, BlockedMPDO

    if (target.chain.n_sites, target.chain.d) != (proj.n_sites, proj.d):
        raise StructuralError("projection and state live on different chains")
    if not proj.source_blocks:
        raise StructuralError("projection carries no source blocks")
    x = proj.basis.coords
    if np.iscomplexobj(x):
        if np.max(np.abs(x.imag)) > 1e-12:
            raise StructuralError("blocked application needs a Hermitian basis")
        x = x.real
    v = _dual_coefficients(proj)
    q = target.chain.q
    m = proj.cut
    blocks = list(target.blocks)
    if proj.side == "left":
        first = blocks[0]
        if first.stop > m:
            t = first.tensor.reshape(q**m, q ** (first.stop - m), first.tensor.shape[2])
            mid = [Block(m + 1, first.stop, np.einsum("ia,asr->isr", v, t))]
            rest = blocks[1:]
        elif m in target.cuts:
            k = target.block_index(m)
            mat = v @ target.left_factors(m)
            nxt = blocks[k + 1]
            mid = [Block(nxt.start, nxt.stop, np.tensordot(mat, nxt.tensor, axes=([1], [0])))]
            rest = blocks[k + 2:]
        else:
            raise StructuralError(f"region 1..{m} straddles cut {first.stop} of the target")
        src = list(proj.source_blocks)
        last = src[-1]
        src[-1] = Block(last.start, last.stop, np.tensordot(last.tensor, x, axes=([2], [0])))
        out = src + mid + rest
    else:
        n = target.chain.n_sites
        last = blocks[-1]
        if last.start <= m:
            t = last.tensor.reshape(last.tensor.shape[0], q ** (m - last.start + 1), q ** (n - m))
            mid = [Block(last.start, m, np.einsum("lsa,ia->lsi", t, v))]
            rest = blocks[:-1]
        elif m in target.cuts:
            k = target.block_index(m)
            mat = target.right_factors(m) @ v.T
            prv = blocks[k]
            mid = [Block(prv.start, prv.stop, np.tensordot(prv.tensor, mat, axes=([2], [0])))]
            rest = blocks[:k]
        else:
            raise StructuralError(f"region {m + 1}..{n} straddles cut {last.start - 1} of the target")
        src = list(proj.source_blocks)
        head = src[0]
        src[0] = Block(head.start, head.stop, np.tensordot(x.T, head.tensor, axes=([1], [0])))
        out = rest + mid + src
    return BlockedMPDO(target.chain, out)
