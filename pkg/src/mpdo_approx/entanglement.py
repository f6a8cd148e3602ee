"""Renyi entropies, entanglement of purification estimates, mutual information
and per-cut entropy profiles.  All logarithms are natural."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy.linalg import expm
from scipy.special import logsumexp

from .errors import DomainError, ResourceError
from .operators import Cut, DenseOperator, as_cut, reduced_matrix
from .purification import PurifiedState, canonical_purification

METHODS = ("canonical-purification", "optimized-purification", "mutual-information")
DEFAULT_PURIFYING_CAP = 64


def renyi_entropy(spectrum, alpha: float) -> float:
    """``S_a(p) = log(sum p^a) / (1 - a)``; von Neumann entropy at ``a == 1``.

    Evaluated in log space so that very small orders stay accurate.
    """
    p = np.asarray(spectrum, dtype=float).ravel()
    if np.any(p < -1e-12):
        raise DomainError(f"spectrum has negative entry {p.min():.3e}")
    p = np.clip(p, 0.0, None)
    if abs(p.sum() - 1.0) > 1e-9:
        raise DomainError(f"spectrum sums to {p.sum():.15g}, not 1")
    if alpha < 0:
        raise DomainError(f"Renyi order must be >= 0, got {alpha}")
    p = p[p > 0]
    if alpha == 1.0:
        return float(max(-np.sum(p * np.log(p)), 0.0))
    if alpha == 0.0:
        return float(np.log(p.size))
    val = logsumexp(alpha * np.log(p)) / (1.0 - alpha)
    return float(max(val, 0.0))


def _density_spectrum(mat: np.ndarray) -> np.ndarray:
    w = np.linalg.eigvalsh(0.5 * (mat + mat.conj().T))
    w = np.clip(w, 0.0, None)
    return w / w.sum()


def purification_entanglement(psi: PurifiedState, cut: Union[Cut, int], alpha: float) -> float:
    """Renyi entropy of the sites ``1..k`` together with their ancillas."""
    s = np.linalg.svd(psi.split(as_cut(cut)), compute_uv=False)
    p = s**2
    return renyi_entropy(p / p.sum(), alpha)


def von_neumann(mat: np.ndarray) -> float:
    return renyi_entropy(_density_spectrum(mat), 1.0)


def mutual_information(rho: DenseOperator, cut: Union[Cut, int]) -> float:
    """``S(A) + S(B) - S(AB)`` with von Neumann entropies."""
    cut = as_cut(cut).check(rho.chain)
    n, d, k = rho.chain.n_sites, rho.chain.d, cut.position
    ra = reduced_matrix(rho.matrix, n, d, range(1, k + 1))
    rb = reduced_matrix(rho.matrix, n, d, range(k + 1, n + 1))
    return von_neumann(ra) + von_neumann(rb) - von_neumann(rho.matrix)


# -- entanglement of purification -------------------------------------------


@dataclass(frozen=True)
class EopEstimate:
    cut: Cut
    alpha: float
    value: float
    canonical_value: float
    restarts: int
    iterations: int
    converged: bool
    best_restart: int
    best_split: tuple[int, int]

    @property
    def gap_to_canonical(self) -> float:
        return self.canonical_value - self.value


def _even_split(r: int) -> tuple[int, int]:
    a = int(np.ceil(np.sqrt(r)))
    b = int(np.ceil(r / a))
    return a, b


class _PurifyingProblem:
    """``S_a`` of ``(AA')`` for ``(1 (x) U) |psi0>`` as a function of the ancilla unitary."""

    def __init__(self, psi0: np.ndarray, dims: tuple[int, int, int, int], alpha: float):
        # psi0[a, b, k] with k the joint ancilla index (a', b') in row-major order
        self.da, self.db, self.ra, self.rb = dims
        self.psi0 = psi0.reshape(self.da * self.db, self.ra * self.rb)
        self.alpha = alpha

    def _matrix(self, u: np.ndarray) -> np.ndarray:
        phi = self.psi0 @ u.T  # phi[ab, kappa] = sum_k U[kappa, k] psi0[ab, k]
        t = phi.reshape(self.da, self.db, self.ra, self.rb).transpose(0, 2, 1, 3)
        return phi, t.reshape(self.da * self.ra, self.db * self.rb)

    def value(self, u: np.ndarray) -> float:
        _, m = self._matrix(u)
        s = np.linalg.svd(m, compute_uv=False)
        p = s**2
        return renyi_entropy(p / p.sum(), self.alpha)

    def value_and_gradient(self, u: np.ndarray) -> tuple[float, np.ndarray]:
        """Value and anti-Hermitian Riemannian gradient for updates ``U <- exp(-tX) U``."""
        phi, m = self._matrix(u)
        w, s, zh = np.linalg.svd(m, full_matrices=False)
        p = s**2
        a = self.alpha
        if a == 1.0:
            pc = np.clip(p, 1e-300, None)
            val = float(-np.sum(p * np.log(pc)))
            coef = -2.0 * s * (np.log(pc) + 1.0)
        else:
            logp = np.log(np.clip(p, 1e-300, None))
            lt = logsumexp(a * logp)
            val = float(lt / (1.0 - a))
            sc = np.clip(s, 1e-12, None)
            # dS/ds_i = 2a s_i^(2a-1) / ((1-a) T)
            coef = 2.0 * a * np.exp((2 * a - 1) * np.log(sc) - lt) / (1.0 - a)
        gm = (w * coef) @ zh  # Euclidean gradient w.r.t. M (real inner product)
        g = gm.reshape(self.da, self.ra, self.db, self.rb).transpose(0, 2, 1, 3)
        g = g.reshape(self.da * self.db, self.ra * self.rb)
        # df = Re tr(X Phi) with Phi = phi^T conj(g)
        big_phi = phi.T @ g.conj()
        omega = 0.5 * (big_phi - big_phi.conj().T)
        return max(val, 0.0), omega


def _descend(problem: _PurifyingProblem, u: np.ndarray, max_iters: int,
             gtol: float = 1e-9) -> tuple[np.ndarray, float, int, bool]:
    val, omega = problem.value_and_gradient(u)
    step = 1.0
    for it in range(1, max_iters + 1):
        gnorm2 = float(np.real(np.vdot(omega, omega)))
        if gnorm2 < gtol**2:
            return u, val, it, True
        accepted = False
        while step > 1e-12:
            # -omega^dagger = omega for anti-Hermitian omega, so exp(-t * omega_desc)
            trial = expm(step * omega) @ u
            tval = problem.value(trial)
            if tval <= val - 1e-4 * step * gnorm2:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            return u, val, it, True
        u = trial
        prev = val
        val, omega = problem.value_and_gradient(u)
        step = min(step * 2.0, 4.0)
        if prev - val < 1e-13 * max(1.0, abs(val)):
            return u, val, it, True
    return u, val, max_iters, False


def _random_unitary(dim: int, rng: np.random.Generator, scale: float = np.pi) -> np.ndarray:
    g = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    gen = 0.5 * (g - g.conj().T) / np.sqrt(dim)
    return expm(scale * gen)


def eop_estimate(rho: DenseOperator, cut: Union[Cut, int], alpha: float, restarts: int = 8,
                 max_iters: int = 300, seed: int = 0,
                 purifying_cap: int = DEFAULT_PURIFYING_CAP) -> EopEstimate:
    """Multi-restart upper bound on the Renyi entanglement of purification.

    The search space is ``(1 (x) U)|psi0>`` over ancilla unitaries ``U``, for
    the canonical purification (ancillas split as ``d^k x d^(N-k)``, restart 0
    starts at ``U = 1``) and for the spectral purification with its ancilla
    split as evenly as possible, both orderings.
    """
    cut = as_cut(cut).check(rho.chain)
    if restarts < 1:
        raise DomainError("need at least one restart")
    n, d, k = rho.chain.n_sites, rho.chain.d, cut.position
    da, db = d**k, d ** (n - k)
    if rho.dim > purifying_cap:
        raise ResourceError(f"purifying dimension {rho.dim} exceeds cap {purifying_cap}")

    psi = canonical_purification(rho)
    # canonical: local order (a1 a1' a2 a2' ...) -> [a, b, a', b']
    t = psi.amplitudes.reshape((d, d) * n)
    phys = [2 * s for s in range(n)]
    anc = [2 * s + 1 for s in range(n)]
    canon = t.transpose(phys + anc).reshape(da * db, da * db)
    problems = [(_PurifyingProblem(canon, (da, db, da, db), alpha), (da, db))]

    w, v = np.linalg.eigh(0.5 * (rho.matrix + rho.matrix.conj().T))
    keep = w > 1e-14 * max(w[-1], 1e-300)
    r = int(keep.sum())
    ra, rb = _even_split(r)
    for split in ((ra, rb), (rb, ra)):
        if split in [p[1] for p in problems]:
            continue
        dim = split[0] * split[1]
        spec = np.zeros((da * db, dim), dtype=np.complex128)
        spec[:, :r] = v[:, keep] * np.sqrt(np.clip(w[keep], 0, None))
        problems.append((_PurifyingProblem(spec, (da, db) + split, alpha), split))

    canonical_value = problems[0][0].value(np.eye(da * db))
    rng = np.random.default_rng(seed)
    best = (np.inf, -1, (0, 0))
    total_iters = 0
    all_converged = True
    for rs in range(restarts):
        prob, split = problems[rs % len(problems)]
        dim = split[0] * split[1]
        u0 = np.eye(dim, dtype=np.complex128) if rs < len(problems) else _random_unitary(dim, rng)
        _, val, its, conv = _descend(prob, u0, max_iters)
        total_iters += its
        all_converged &= conv
        if val < best[0]:
            best = (val, rs, split)
    return EopEstimate(cut, alpha, float(best[0]), float(canonical_value), restarts, total_iters,
                       bool(all_converged), best[1], best[2])


# -- profiles ----------------------------------------------------------------


@dataclass(frozen=True)
class EntropyProfile:
    alpha: float
    method: str
    values: tuple[float, ...]  # cut k = 1..N-1

    @property
    def e_max(self) -> float:
        return max(self.values) if self.values else 0.0

    def rows(self) -> list[dict]:
        return [{"cut": k + 1, "alpha": self.alpha, "method": self.method, "value": v}
                for k, v in enumerate(self.values)]


def arealaw_scan(rho: DenseOperator, alpha: float, method: str = "canonical-purification",
                 restarts: int = 8, max_iters: int = 300, seed: int = 0) -> EntropyProfile:
    if method not in METHODS:
        raise DomainError(f"unknown method {method!r}; expected one of {METHODS}")
    cuts = rho.chain.cuts()
    if method == "canonical-purification":
        psi = canonical_purification(rho)
        vals = [purification_entanglement(psi, c, alpha) for c in cuts]
    elif method == "mutual-information":
        vals = [mutual_information(rho, c) for c in cuts]
    else:
        vals = [eop_estimate(rho, c, alpha, restarts, max_iters, seed).value for c in cuts]
    return EntropyProfile(float(alpha), method, tuple(float(v) for v in vals))
