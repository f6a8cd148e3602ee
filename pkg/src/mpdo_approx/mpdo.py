"""Blocked tensor trains of Hermitian operators and the final MPDO.

A :class:`BlockedMPDO` is an exact representation of a Hermitian operator as a
chain of dense blocks over contiguous sites.  Each block is a real tensor of
shape ``(D_left, q**len, D_right)`` in the product Hermitian basis, so
boundaries between blocks are the compressed cuts.  Contracting all blocks
gives the Hermitian coefficient vector of the operator.

:class:`MPDO` stores one complex core ``(D_left, d, d, D_right)`` per site and
is what compression returns.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from typing import Sequence, TextIO, Union

import numpy as np

from .errors import DomainError, InvariantViolation, StructuralError
from .operators import (
    DEFAULT_DIM_CAP,
    DenseOperator,
    SiteChain,
    from_hermitian_coeffs,
    hermitian_basis,
    hermitian_coeffs,
)

CANON_TOL = 1e-12


@dataclass(frozen=True)
class Block:
    start: int          # first site, 1-based
    stop: int           # last site, inclusive
    tensor: np.ndarray  # (D_left, q**(stop - start + 1), D_right), real

    @property
    def length(self) -> int:
        return self.stop - self.start + 1


def _svd_rank(s: np.ndarray, tol: float) -> int:
    if s.size == 0 or s[0] <= 0.0:
        return 1
    return max(1, int(np.sum(s > tol * s[0])))


class BlockedMPDO:
    """Exact blocked tensor-train form of a Hermitian operator on ``chain``."""

    def __init__(self, chain: SiteChain, blocks: Sequence[Block]):
        blocks = tuple(blocks)
        if not blocks or blocks[0].start != 1 or blocks[-1].stop != chain.n_sites:
            raise StructuralError("blocks must cover sites 1..N")
        q = chain.q
        for i, b in enumerate(blocks):
            t = b.tensor
            if t.ndim != 3 or t.shape[1] != q**b.length:
                raise StructuralError(f"block {i} has shape {t.shape} for {b.length} sites")
            if i and (b.start != blocks[i - 1].stop + 1 or t.shape[0] != blocks[i - 1].tensor.shape[2]):
                raise StructuralError(f"block {i} does not join its left neighbour")
        if blocks[0].tensor.shape[0] != 1 or blocks[-1].tensor.shape[2] != 1:
            raise StructuralError("boundary bonds must have dimension 1")
        self.chain = chain
        self.blocks = blocks

    # -- construction --------------------------------------------------------

    @classmethod
    def from_dense_cut(cls, chain: SiteChain, mat: np.ndarray, k: int,
                       rank_tol: float = CANON_TOL) -> "BlockedMPDO":
        """Two blocks split at cut ``k`` with the operator Schmidt rank as bond."""
        n, q = chain.n_sites, chain.q
        coeffs = hermitian_coeffs(mat, n, chain.d).reshape(q**k, q ** (n - k))
        u, s, vt = np.linalg.svd(coeffs, full_matrices=False)
        r = _svd_rank(s, rank_tol)
        left = (u[:, :r] * s[:r]).reshape(1, q**k, r)
        right = vt[:r].reshape(r, q ** (n - k), 1)
        return cls(chain, [Block(1, k, left), Block(k + 1, n, right)])

    # -- structure -----------------------------------------------------------

    @property
    def cuts(self) -> tuple[int, ...]:
        return tuple(b.stop for b in self.blocks[:-1])

    @property
    def bond_dims(self) -> dict[int, int]:
        return {b.stop: b.tensor.shape[2] for b in self.blocks[:-1]}

    def block_index(self, site: int) -> int:
        for i, b in enumerate(self.blocks):
            if b.start <= site <= b.stop:
                return i
        raise DomainError(f"site {site} outside the chain")

    def coefficients(self) -> np.ndarray:
        acc = np.ones((1, 1))
        for b in self.blocks:
            t = b.tensor
            acc = np.tensordot(acc, t, axes=([1], [0])).reshape(-1, t.shape[2])
        return acc.reshape(-1)

    def to_dense(self) -> np.ndarray:
        return from_hermitian_coeffs(self.coefficients(), self.chain.n_sites, self.chain.d)

    # -- gauge ---------------------------------------------------------------

    def canonical_left(self, cut: int, tol: float = CANON_TOL) -> "BlockedMPDO":
        """Left-orthonormal gauge on the blocks ending at or before ``cut``.

        Singular values below ``tol`` times the largest are dropped, which
        changes the operator by at most that relative amount.
        """
        if cut not in self.cuts:
            raise StructuralError(f"cut {cut} is not a block boundary")
        blocks = list(self.blocks)
        last = self.block_index(cut)
        for i in range(last + 1):
            t = blocks[i].tensor
            dl, m, dr = t.shape
            u, s, vt = np.linalg.svd(t.reshape(dl * m, dr), full_matrices=False)
            r = _svd_rank(s, tol)
            blocks[i] = Block(blocks[i].start, blocks[i].stop, u[:, :r].reshape(dl, m, r))
            carry = s[:r, None] * vt[:r]
            nxt = blocks[i + 1]
            blocks[i + 1] = Block(nxt.start, nxt.stop, np.tensordot(carry, nxt.tensor, axes=([1], [0])))
        return BlockedMPDO(self.chain, blocks)

    def canonical_right(self, cut: int, tol: float = CANON_TOL) -> "BlockedMPDO":
        """Right-orthonormal gauge on the blocks starting after ``cut``."""
        if cut not in self.cuts:
            raise StructuralError(f"cut {cut} is not a block boundary")
        blocks = list(self.blocks)
        first = self.block_index(cut + 1)
        for i in range(len(blocks) - 1, first - 1, -1):
            t = blocks[i].tensor
            dl, m, dr = t.shape
            u, s, vt = np.linalg.svd(t.reshape(dl, m * dr), full_matrices=False)
            r = _svd_rank(s, tol)
            blocks[i] = Block(blocks[i].start, blocks[i].stop, vt[:r].reshape(r, m, dr))
            carry = u[:, :r] * s[:r]
            prv = blocks[i - 1]
            blocks[i - 1] = Block(prv.start, prv.stop, np.tensordot(prv.tensor, carry, axes=([2], [0])))
        return BlockedMPDO(self.chain, blocks)

    def left_factors(self, cut: int) -> np.ndarray:
        """Coefficient vectors of the left factors at ``cut``, shape ``(q**cut, D)``."""
        acc = np.ones((1, 1))
        for b in self.blocks[: self.block_index(cut) + 1]:
            acc = np.tensordot(acc, b.tensor, axes=([1], [0])).reshape(-1, b.tensor.shape[2])
        return acc

    def right_factors(self, cut: int) -> np.ndarray:
        """Coefficient vectors of the right factors at ``cut``, shape ``(D, q**(N-cut))``."""
        acc = np.ones((1, 1))
        for b in reversed(self.blocks[self.block_index(cut + 1):]):
            acc = np.tensordot(b.tensor, acc, axes=([2], [0])).reshape(b.tensor.shape[0], -1)
        return acc

    def to_mpdo(self, normalize: bool = True) -> "MPDO":
        """Per-site complex cores; every block must cover exactly one site."""
        if any(b.length != 1 for b in self.blocks):
            raise StructuralError("cores need single-site blocks (some cuts are uncompressed)")
        h = hermitian_basis(self.chain.d)
        cores = [np.einsum("lar,aij->lijr", b.tensor, h) for b in self.blocks]
        out = MPDO(self.chain, cores)
        return out.normalized() if normalize else out


# -- MPDO ------------------------------------------------------------------------


class MPDO:
    """Tensor train ``rho = sum A^[1]_{i1 j1} ... A^[N]_{iN jN} |i><j|``.

    ``cores[k]`` has shape ``(D_{k-1}, d, d, D_k)`` with ``D_0 = D_N = 1``.
    """

    def __init__(self, chain: SiteChain, cores: Sequence[np.ndarray]):
        cores = [np.asarray(c, dtype=np.complex128) for c in cores]
        if len(cores) != chain.n_sites:
            raise StructuralError(f"{len(cores)} cores for {chain.n_sites} sites")
        d = chain.d
        for k, c in enumerate(cores):
            if c.ndim != 4 or c.shape[1:3] != (d, d):
                raise StructuralError(f"core {k} has shape {c.shape}")
            if k and c.shape[0] != cores[k - 1].shape[3]:
                raise StructuralError(f"bond mismatch between cores {k - 1} and {k}")
        if cores[0].shape[0] != 1 or cores[-1].shape[3] != 1:
            raise StructuralError("boundary bonds must have dimension 1")
        self.chain = chain
        self.cores = cores

    @property
    def bond_dims(self) -> tuple[int, ...]:
        return tuple(c.shape[3] for c in self.cores[:-1])

    @property
    def max_bond(self) -> int:
        return max(self.bond_dims, default=1)

    def trace(self) -> complex:
        acc = np.ones((1, 1), dtype=np.complex128)
        for c in self.cores:
            acc = acc @ np.einsum("liir->lr", c)
        return complex(acc[0, 0])

    def normalized(self) -> "MPDO":
        t = self.trace()
        if abs(t) < 1e-300 or not np.isfinite(t):
            raise InvariantViolation(f"cannot normalise an MPDO with trace {t}")
        cores = [c.copy() for c in self.cores]
        cores[0] = cores[0] / t
        return MPDO(self.chain, cores)

    def __eq__(self, other):
        return (isinstance(other, MPDO) and self.chain == other.chain
                and all(np.array_equal(a, b) for a, b in zip(self.cores, other.cores)))

    # -- text format ---------------------------------------------------------

    def write(self, fh: TextIO) -> None:
        """Plain-text dump: a header then each core's entries in row-major order."""
        fh.write("MPDO 1\n")
        fh.write(f"N {self.chain.n_sites}\n")
        fh.write(f"d {self.chain.d}\n")
        fh.write("bonds " + " ".join(str(b) for b in (1,) + self.bond_dims + (1,)) + "\n")
        for k, c in enumerate(self.cores):
            fh.write(f"core {k + 1} " + " ".join(str(s) for s in c.shape) + "\n")
            for z in c.reshape(-1):
                fh.write(f"{z.real:.17g} {z.imag:.17g}\n")

    def dumps(self) -> str:
        buf = io.StringIO()
        self.write(buf)
        return buf.getvalue()

    @classmethod
    def read(cls, fh: TextIO) -> "MPDO":
        lines = iter(fh.read().splitlines())

        def field(name):
            parts = next(lines).split()
            if not parts or parts[0] != name:
                raise DomainError(f"expected {name!r} line in MPDO text")
            return parts[1:]

        if field("MPDO") != ["1"]:
            raise DomainError("unsupported MPDO text version")
        n = int(field("N")[0])
        d = int(field("d")[0])
        bonds = [int(x) for x in field("bonds")]
        chain = SiteChain(n, d, dim_cap=max(d**n, DEFAULT_DIM_CAP))
        cores = []
        for k in range(n):
            shape = tuple(int(x) for x in field("core")[1:])
            if shape != (bonds[k], d, d, bonds[k + 1]):
                raise DomainError(f"core {k + 1} shape {shape} disagrees with header")
            vals = np.empty(int(np.prod(shape)), dtype=np.complex128)
            for i in range(vals.size):
                re, im = next(lines).split()
                vals[i] = complex(float(re), float(im))
            cores.append(vals.reshape(shape))
        return cls(chain, cores)

    @classmethod
    def loads(cls, text: str) -> "MPDO":
        return cls.read(io.StringIO(text))


def reconstruct(m: MPDO, dim_cap: Union[int, None] = None) -> DenseOperator:
    """Contract all cores into a dense operator (verification only)."""
    chain = m.chain
    cap = chain.dim_cap if dim_cap is None else dim_cap
    SiteChain(chain.n_sites, chain.d, cap)  # raises when over the cap
    d = chain.d
    acc = np.ones((1, 1, 1), dtype=np.complex128)  # (ket, bra, bond)
    for c in m.cores:
        t = np.einsum("abl,lijr->aibjr", acc, c)
        a, i, b, j, r = t.shape
        acc = t.reshape(a * i, b * j, r)
    mat = acc[:, :, 0]
    return DenseOperator(chain, mat)
