"""Canonical purification, Schmidt truncation across a cut, and the operator
factors of the truncated purification.

The canonical purification of ``rho`` has amplitudes ``<i|sqrt(rho)|j>`` with
the ancilla index ``j_s`` of every site stored next to its physical index
``i_s``.  In the local flattening of :mod:`mpdo_approx.operators` this is just
the local vector of ``sqrt(rho)``, so cuts of the purification line up with
cuts of ``rho``.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import ConsistencyError, DomainError
from .operators import (
    Cut,
    DenseOperator,
    SiteChain,
    as_cut,
    from_local,
    psd_sqrt,
    to_local,
    trace_norm,
)


def fingerprint(op: DenseOperator) -> str:
    h = hashlib.sha256()
    h.update(f"{op.chain.n_sites}:{op.chain.d}:".encode())
    h.update(np.ascontiguousarray(op.matrix).tobytes())
    return h.hexdigest()[:16]


@dataclass(frozen=True)
class PurifiedState:
    chain: SiteChain
    amplitudes: np.ndarray
    source_fingerprint: str

    def split(self, cut: Union[Cut, int]) -> np.ndarray:
        """Amplitudes as a ``(q**k, q**(N-k))`` matrix across ``(AA'):(BB')``."""
        k = as_cut(cut).check(self.chain).position
        q = self.chain.q
        return self.amplitudes.reshape(q**k, q ** (self.chain.n_sites - k))

    def physical_operator(self) -> np.ndarray:
        """``|psi>`` reshaped to the (physical, ancilla) matrix, i.e. ``sqrt(rho)``."""
        return from_local(self.amplitudes, self.chain.n_sites, self.chain.d)

    def reduced(self) -> np.ndarray:
        """Trace over all ancillas."""
        x = self.physical_operator()
        return x @ x.conj().T


def canonical_purification(rho: DenseOperator) -> PurifiedState:
    if not rho.density:
        rho = DenseOperator(rho.chain, rho.matrix, density=True)
    root = psd_sqrt(rho)
    amps = to_local(root, rho.chain.n_sites, rho.chain.d).astype(np.complex128)
    amps.setflags(write=False)
    return PurifiedState(rho.chain, amps, fingerprint(rho))


@dataclass(frozen=True)
class SchmidtTruncation:
    """Rank-``D_p`` truncation of a purification across one cut.

    ``chi`` is not renormalised: ``||chi||^2 = 1 - eta``.
    """

    cut: Cut
    Dp: int
    schmidt_values: np.ndarray
    left_vectors: np.ndarray   # (q**k, Dp), orthonormal columns
    right_vectors: np.ndarray  # (Dp, q**(N-k)), orthonormal rows
    chi: np.ndarray
    eta: float
    chain: SiteChain
    source_fingerprint: str

    @property
    def overlap(self) -> float:
        """``<psi|chi>``; equals the retained weight ``1 - eta``."""
        return float(np.sum(self.schmidt_values[: self.Dp] ** 2))


def max_schmidt_rank(chain: SiteChain, cut: Union[Cut, int]) -> int:
    k = as_cut(cut).check(chain).position
    q = chain.q
    return min(q**k, q ** (chain.n_sites - k))


def _gauge(u: np.ndarray, vh: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # largest-magnitude entry of each left vector real positive; right rows compensate
    idx = np.argmax(np.abs(u), axis=0)
    ph = u[idx, np.arange(u.shape[1])]
    ph = ph / np.where(np.abs(ph) > 0, np.abs(ph), 1.0)
    return u * ph.conj(), vh * ph[:, None]


def schmidt_truncate(psi: PurifiedState, cut: Union[Cut, int], Dp: int) -> SchmidtTruncation:
    cut = as_cut(cut).check(psi.chain)
    top = max_schmidt_rank(psi.chain, cut)
    if int(Dp) != Dp or not 1 <= Dp <= top:
        raise DomainError(f"D_p={Dp} outside 1..{top} at cut {cut.position}")
    Dp = int(Dp)
    norm = float(np.linalg.norm(psi.amplitudes))
    if abs(norm - 1.0) > 1e-10:
        raise DomainError(f"purification not normalised (norm {norm:.15g})")
    u, s, vh = np.linalg.svd(psi.split(cut), full_matrices=False)
    order = np.argsort(-s, kind="stable")
    u, s, vh = u[:, order], s[order], vh[order]
    uk, vk = _gauge(u[:, :Dp], vh[:Dp])
    chi = ((uk * s[:Dp]) @ vk).reshape(-1)
    eta = float(np.sum(s[Dp:] ** 2))
    return SchmidtTruncation(cut, Dp, s, uk, vk, chi, max(eta, 0.0), psi.chain,
                             psi.source_fingerprint)


@dataclass(frozen=True)
class CutTruncation:
    """Operator decomposition ``sigma_D = sum_ij A_ij (x) B_ij`` of one truncation."""

    cut: Cut
    Dp: int
    schmidt_values: np.ndarray
    left_vectors: np.ndarray
    right_vectors: np.ndarray
    eta: float
    A_factors: np.ndarray  # (Dp, Dp, d**k, d**k)
    B_factors: np.ndarray  # (Dp, Dp, d**(N-k), d**(N-k))
    sigma: np.ndarray      # dense sigma_D
    delta_measured: float
    chain: SiteChain

    @property
    def D(self) -> int:
        return self.Dp * self.Dp

    @property
    def delta_analytic(self) -> float:
        return 2.0 * np.sqrt(self.eta)

    def assemble(self) -> np.ndarray:
        """``sum_ij A_ij (x) B_ij`` by explicit Kronecker products."""
        a, b = self.A_factors, self.B_factors
        out = np.zeros_like(self.sigma)
        for i in range(self.Dp):
            for j in range(self.Dp):
                out += np.kron(a[i, j], b[i, j])
        return out


def _vector_operators(vecs: np.ndarray, n: int, d: int) -> np.ndarray:
    """Columns of local vectors on ``n`` sites -> (physical, ancilla) matrices."""
    return np.stack([from_local(vecs[:, i], n, d) for i in range(vecs.shape[1])])


def cut_sigma(trunc: SchmidtTruncation, rho: DenseOperator) -> CutTruncation:
    """Operator factors of ``tr_{A'B'} |chi><chi|`` and their exact error against ``rho``."""
    if fingerprint(rho) != trunc.source_fingerprint:
        raise ConsistencyError("truncation was computed from a different state")
    chain = trunc.chain
    n, d, k = chain.n_sites, chain.d, trunc.cut.position
    Dp = trunc.Dp
    w = np.sqrt(trunc.schmidt_values[:Dp])
    # chi = sum_i (w_i u_i) (w_i v_i): weights split symmetrically
    xl = _vector_operators(trunc.left_vectors * w, k, d)            # (Dp, d^k, d^k)
    xr = _vector_operators((trunc.right_vectors * w[:, None]).T, n - k, d)
    a_f = np.einsum("iab,jcb->ijac", xl, xl.conj())
    b_f = np.einsum("iab,jcb->ijac", xr, xr.conj())
    x = from_local(trunc.chi, n, d)
    sigma = x @ x.conj().T
    sigma = 0.5 * (sigma + sigma.conj().T)
    delta = trace_norm(rho.matrix - sigma)
    return CutTruncation(trunc.cut, Dp, trunc.schmidt_values, trunc.left_vectors,
                         trunc.right_vectors, trunc.eta, a_f, b_f, sigma, delta, chain)


def truncate_cut(rho: DenseOperator, cut: Union[Cut, int], Dp: int,
                 psi: PurifiedState | None = None) -> CutTruncation:
    """Convenience wrapper: purify (unless given), truncate, and factor."""
    psi = canonical_purification(rho) if psi is None else psi
    return cut_sigma(schmidt_truncate(psi, cut, Dp), rho)


def eta_bound(entropy: float, alpha: float, Dp: float) -> float:
    """Upper bound ``((1-a) e^E / D_p)^((1-a)/a)`` on the discarded Schmidt weight."""
    if not 0.0 < alpha < 1.0:
        raise DomainError(f"alpha must lie in (0, 1), got {alpha}")
    if Dp < 1 or entropy < -1e-12:
        raise DomainError("need D_p >= 1 and a non-negative entropy")
    log_base = np.log1p(-alpha) + entropy - np.log(Dp)
    return float(np.exp((1.0 - alpha) / alpha * log_base))


def delta_bound(entropy: float, alpha: float, D: float) -> float:
    """Trace-norm bound ``2((1-a) e^E / sqrt D)^((1-a)/(2a))`` for rank ``D = D_p^2``."""
    if not 0.0 < alpha < 1.0:
        raise DomainError(f"alpha must lie in (0, 1), got {alpha}")
    if D < 1 or entropy < -1e-12:
        raise DomainError("need D >= 1 and a non-negative entropy")
    log_base = np.log1p(-alpha) + entropy - 0.5 * np.log(D)
    return float(2.0 * np.exp((1.0 - alpha) / (2.0 * alpha) * log_base))
