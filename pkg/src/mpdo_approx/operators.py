"""Dense multi-site operators, bipartitions and the norms measured against them.

Index conventions
-----------------
A chain of ``N`` sites with local dimension ``d`` has total dimension
``d**N``.  Dense matrices use big-endian site ordering: site 1 is the most
significant digit of both the row (ket) and column (bra) index.

Two flattenings of an operator ``X`` are used throughout:

* the *local* vector, indexed by ``(i_1 j_1)(i_2 j_2)...(i_N j_N)`` where each
  site contributes its ket/bra pair ``i_s * d + j_s``.  Reshaping the local
  vector to ``(q**k, q**(N-k))`` with ``q = d*d`` exposes the bipartition at
  cut ``k``;
* the *Hermitian coefficient* vector, the same layout but expanded in a fixed
  real orthonormal basis of Hermitian ``d x d`` matrices.  Hermitian operators
  have real coefficients, so tensor trains built from them stay Hermitian.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional, Union

import numpy as np

from .errors import DomainError, ResourceError

DEFAULT_DIM_CAP = 4096
PSD_TOL = 1e-10

ArrayLike = Union[np.ndarray, "DenseOperator"]


@dataclass(frozen=True)
class SiteChain:
    """Open chain of ``n_sites`` spins of local dimension ``d``.

    ``n_sites`` may drop below 2 for the results of partial traces; a chain
    with zero sites is the scalar (1 x 1) case.
    """

    n_sites: int
    d: int = 2
    dim_cap: int = DEFAULT_DIM_CAP

    def __post_init__(self):
        if int(self.n_sites) != self.n_sites or self.n_sites < 0:
            raise DomainError(f"n_sites must be a non-negative integer, got {self.n_sites!r}")
        if int(self.d) != self.d or self.d < 2:
            raise DomainError(f"local dimension must be an integer >= 2, got {self.d!r}")
        # exact integer power, no float round-off
        if self.d**self.n_sites > self.dim_cap:
            raise ResourceError(
                f"total dimension {self.d}**{self.n_sites} = {self.d**self.n_sites} "
                f"exceeds the dense cap {self.dim_cap}"
            )

    @property
    def total_dim(self) -> int:
        return self.d**self.n_sites

    @property
    def q(self) -> int:
        """Dimension of one site's operator space."""
        return self.d * self.d

    def sub(self, n_sites: int) -> "SiteChain":
        return SiteChain(n_sites, self.d, self.dim_cap)

    def cuts(self) -> list["Cut"]:
        return [Cut(k) for k in range(1, self.n_sites)]


@dataclass(frozen=True)
class Cut:
    """Bipartition ``A = sites 1..k``, ``B = sites k+1..N``."""

    position: int

    def check(self, chain: SiteChain) -> "Cut":
        if not 1 <= self.position <= chain.n_sites - 1:
            raise DomainError(
                f"cut position {self.position} outside 1..{chain.n_sites - 1}"
            )
        return self


def as_cut(cut: Union[Cut, int]) -> Cut:
    return cut if isinstance(cut, Cut) else Cut(int(cut))


class DenseOperator:
    """Immutable dense matrix on a :class:`SiteChain`.

    Parameters
    ----------
    chain : SiteChain
    matrix : array_like, shape (d**N, d**N)
    density : bool
        When true the density-matrix invariants (Hermitian, unit trace,
        positive semidefinite) are validated on construction.
    """

    __slots__ = ("chain", "matrix", "density")

    def __init__(self, chain: SiteChain, matrix, density: bool = False):
        mat = np.array(matrix, dtype=np.complex128, copy=True)
        dim = chain.total_dim
        if mat.shape != (dim, dim):
            raise DomainError(f"matrix shape {mat.shape} does not match chain dimension {dim}")
        mat.setflags(write=False)
        object.__setattr__(self, "chain", chain)
        object.__setattr__(self, "matrix", mat)
        object.__setattr__(self, "density", bool(density))
        if density:
            check_density(mat)

    def __setattr__(self, name, value):
        raise AttributeError("DenseOperator is immutable")

    def __repr__(self):
        return f"DenseOperator(N={self.chain.n_sites}, d={self.chain.d}, density={self.density})"

    @property
    def dim(self) -> int:
        return self.chain.total_dim

    def with_matrix(self, matrix, density: Optional[bool] = None) -> "DenseOperator":
        return DenseOperator(self.chain, matrix, self.density if density is None else density)

    def trace(self) -> complex:
        return complex(np.trace(self.matrix))


def _mat(op: ArrayLike) -> np.ndarray:
    return op.matrix if isinstance(op, DenseOperator) else np.asarray(op)


def check_density(mat: np.ndarray, herm_tol: float = 1e-12, trace_tol: float = 1e-12,
                  psd_tol: float = PSD_TOL) -> None:
    """Raise :class:`DomainError` unless ``mat`` is a valid density matrix."""
    mat = np.asarray(mat)
    scale = max(1.0, float(np.max(np.abs(mat))))
    herm = float(np.max(np.abs(mat - mat.conj().T)))
    if herm > herm_tol * scale:
        raise DomainError(f"density matrix not Hermitian (deviation {herm:.3e})")
    tr = np.trace(mat)
    if abs(tr - 1.0) > trace_tol:
        raise DomainError(f"density matrix trace {tr.real:.15g} differs from 1")
    lo = float(np.linalg.eigvalsh(0.5 * (mat + mat.conj().T))[0])
    if lo < -psd_tol:
        raise DomainError(f"density matrix has negative eigenvalue {lo:.3e}")


# -- norms -------------------------------------------------------------------


def singular_values(op: ArrayLike) -> np.ndarray:
    return np.linalg.svd(_mat(op), compute_uv=False)


def trace_norm(op: ArrayLike) -> float:
    """Sum of singular values."""
    mat = _mat(op)
    if mat.size == 0:
        return 0.0
    return float(np.sum(np.linalg.svd(mat, compute_uv=False)))


def two_norm(op: ArrayLike) -> float:
    """Frobenius (Hilbert-Schmidt) norm."""
    return float(np.linalg.norm(_mat(op)))


def operator_norm(op: ArrayLike) -> float:
    """Largest singular value."""
    mat = _mat(op)
    if mat.size == 0:
        return 0.0
    return float(np.linalg.svd(mat, compute_uv=False)[0])


def hermiticity_deviation(op: ArrayLike) -> float:
    mat = _mat(op)
    return float(np.max(np.abs(mat - mat.conj().T)))


def psd_sqrt(op: ArrayLike, tol: float = PSD_TOL) -> np.ndarray:
    """Hermitian square root of a positive semidefinite matrix.

    Eigenvalues in ``[-tol, 0)`` are clipped to zero; anything more negative
    raises :class:`DomainError`.  Positive eigenvalues below the eigensolver's
    round-off level ``n eps max|w|`` are zeroed as well, otherwise their square
    roots (about ``1e-8``) would turn exact zeros into visible weight.
    """
    mat = _mat(op)
    herm = 0.5 * (mat + mat.conj().T)
    w, v = np.linalg.eigh(herm)
    if w[0] < -tol:
        raise DomainError(f"operator is not positive semidefinite: min eigenvalue {w[0]:.3e}")
    floor = herm.shape[0] * np.finfo(float).eps * max(abs(w[0]), abs(w[-1]))
    w = np.where(w > floor, w, 0.0)
    root = (v * np.sqrt(w)) @ v.conj().T
    return 0.5 * (root + root.conj().T)


# -- site bookkeeping --------------------------------------------------------


def _site_tensor(mat: np.ndarray, n: int, d: int) -> np.ndarray:
    return mat.reshape((d,) * (2 * n))


def partial_trace(op: DenseOperator, sites: Iterable[int]) -> DenseOperator:
    """Trace out the given (1-based) sites, returning the operator on the rest."""
    chain = op.chain
    n, d = chain.n_sites, chain.d
    sites = sorted(set(int(s) for s in sites))
    for s in sites:
        if not 1 <= s <= n:
            raise DomainError(f"site index {s} outside 1..{n}")
    keep = [s for s in range(1, n + 1) if s not in sites]
    t = _site_tensor(op.matrix, n, d)
    letters = "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ"
    ket = [letters[i] for i in range(n)]
    bra = [letters[n + i] if (i + 1) in keep else letters[i] for i in range(n)]
    out = "".join(ket[s - 1] for s in keep) + "".join(bra[s - 1] for s in keep)
    red = np.einsum("".join(ket) + "".join(bra) + "->" + out, t)
    m = len(keep)
    sub = chain.sub(m)
    dm = d**m
    res = np.asarray(red).reshape(dm, dm)
    return DenseOperator(sub, res, density=False)


def reduced_matrix(mat: np.ndarray, n: int, d: int, keep: Iterable[int]) -> np.ndarray:
    """Reduced density matrix on the (1-based) ``keep`` sites of a raw matrix."""
    keep = sorted(set(keep))
    chain = SiteChain(n, d, dim_cap=max(DEFAULT_DIM_CAP, d**n))
    traced = [s for s in range(1, n + 1) if s not in keep]
    return partial_trace(DenseOperator(chain, mat), traced).matrix


def to_local(mat: np.ndarray, n: int, d: int) -> np.ndarray:
    """Dense matrix -> local vector with per-site (ket, bra) pairs."""
    if n == 0:
        return np.asarray(mat).reshape(1)
    t = _site_tensor(np.asarray(mat), n, d)
    perm = [ax for s in range(n) for ax in (s, n + s)]
    return t.transpose(perm).reshape(-1)


def from_local(vec: np.ndarray, n: int, d: int) -> np.ndarray:
    """Inverse of :func:`to_local`."""
    if n == 0:
        return np.asarray(vec).reshape(1, 1)
    t = np.asarray(vec).reshape((d,) * (2 * n))
    perm = list(range(0, 2 * n, 2)) + list(range(1, 2 * n, 2))
    return t.transpose(perm).reshape(d**n, d**n)


def local_split(op: ArrayLike, n: int, d: int, k: int) -> np.ndarray:
    """Local vector reshaped to ``(q**k, q**(n-k))`` across cut ``k``."""
    q = d * d
    return to_local(_mat(op), n, d).reshape(q**k, q ** (n - k))


def operator_schmidt_spectrum(op: DenseOperator, cut: Union[Cut, int]) -> np.ndarray:
    """Singular values of ``op`` viewed as a vector in ops(A) (x) ops(B)."""
    cut = as_cut(cut).check(op.chain)
    n, d = op.chain.n_sites, op.chain.d
    return np.linalg.svd(local_split(op, n, d, cut.position), compute_uv=False)


def operator_schmidt_rank(mat: np.ndarray, n: int, d: int, k: int, tol: float = 1e-10) -> int:
    s = np.linalg.svd(local_split(mat, n, d, k), compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s > tol * s[0]))


# -- Hermitian basis ---------------------------------------------------------

_HERM_CACHE: dict = {}


def hermitian_basis(d: int) -> np.ndarray:
    """Real-orthonormal basis of Hermitian ``d x d`` matrices, shape ``(d*d, d, d)``.

    Element ``a*d + b`` is ``E_aa`` for ``a == b``, ``(E_ab + E_ba)/sqrt 2`` for
    ``a < b`` and ``i(E_ba - E_ab)/sqrt 2`` for ``a > b``.
    """
    if d not in _HERM_CACHE:
        basis = np.zeros((d * d, d, d), dtype=np.complex128)
        r = 1.0 / np.sqrt(2.0)
        for a in range(d):
            for b in range(d):
                h = basis[a * d + b]
                if a == b:
                    h[a, a] = 1.0
                elif a < b:
                    h[a, b] = h[b, a] = r
                else:
                    h[b, a] = 1j * r
                    h[a, b] = -1j * r
        basis.setflags(write=False)
        _HERM_CACHE[d] = basis
    return _HERM_CACHE[d]


def _site_transform(vec: np.ndarray, n: int, t: np.ndarray) -> np.ndarray:
    q = t.shape[1]
    out = np.asarray(vec).reshape((q,) * n) if n else np.asarray(vec).reshape(())
    for ax in range(n):
        out = np.moveaxis(np.tensordot(t, out, axes=([1], [ax])), 0, ax)
    return out.reshape(-1)


def hermitian_coeffs(mat: ArrayLike, n: int, d: int) -> np.ndarray:
    """Real coefficients of a Hermitian operator in the product Hermitian basis.

    Coefficient ``a`` is ``tr(h_a X)``; the imaginary parts are dropped, so
    non-Hermitian inputs lose their anti-Hermitian part.
    """
    h = hermitian_basis(d)
    # tr(h_a X) = sum_ij h_a[j, i] X[i, j]
    t = h.transpose(0, 2, 1).reshape(d * d, d * d)
    return np.real(_site_transform(to_local(_mat(mat), n, d), n, t))


def from_hermitian_coeffs(coeffs: np.ndarray, n: int, d: int) -> np.ndarray:
    """Dense matrix ``sum_a c_a h_a`` for a real coefficient vector."""
    h = hermitian_basis(d)
    s = h.reshape(d * d, d * d).T  # [(ij), a] = h_a[i, j]
    return from_local(_site_transform(np.asarray(coeffs, dtype=np.complex128), n, s), n, d)


def kron_all(mats: Iterable[np.ndarray]) -> np.ndarray:
    out = np.ones((1, 1), dtype=np.complex128)
    for m in mats:
        out = np.kron(out, m)
    return out


def embed_site_operator(local_op: np.ndarray, site: int, chain: SiteChain) -> np.ndarray:
    """Operator acting as ``local_op`` on a run of sites starting at ``site`` (1-based)."""
    d = chain.d
    span = int(round(np.log(local_op.shape[0]) / np.log(d)))
    left = d ** (site - 1)
    right = d ** (chain.n_sites - site - span + 1)
    return np.kron(np.kron(np.eye(left), local_op), np.eye(right))
