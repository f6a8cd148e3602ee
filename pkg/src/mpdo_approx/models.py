"""Hamiltonians, Gibbs states and analytic test states on open chains."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .errors import DomainError
from .operators import DenseOperator, SiteChain, embed_site_operator, kron_all

PAULI_X = np.array([[0, 1], [1, 0]], dtype=np.complex128)
PAULI_Y = np.array([[0, -1j], [1j, 0]], dtype=np.complex128)
PAULI_Z = np.array([[1, 0], [0, -1]], dtype=np.complex128)

# allowed parameters and their defaults, per model
MODEL_PARAMS: dict[str, dict[str, float]] = {
    "tfim": {"J": 1.0, "g": 1.0},
    "xxz": {"J_xy": 1.0, "J_z": 1.0, "h": 0.0},
    "random": {"seed": 0.0, "strength": 1.0},
}


@dataclass(frozen=True)
class HamiltonianSpec:
    """Nearest-neighbour Hamiltonian on an open chain.

    Models
    ------
    ``tfim``   : ``H = -J sum Z_i Z_{i+1} - g sum X_i``
    ``xxz``    : ``H = J_xy sum (X_i X_{i+1} + Y_i Y_{i+1}) + J_z sum Z_i Z_{i+1} - h sum Z_i``
    ``random`` : each bond carries an independent GUE ``d^2 x d^2`` term scaled by
                 ``strength``, drawn from ``seed``.
    """

    chain: SiteChain
    model: str = "tfim"
    params: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.model not in MODEL_PARAMS:
            raise DomainError(f"unknown model {self.model!r}; expected one of {sorted(MODEL_PARAMS)}")
        allowed = MODEL_PARAMS[self.model]
        unknown = set(self.params) - set(allowed)
        if unknown:
            raise DomainError(f"unknown parameters for {self.model}: {sorted(unknown)}")
        merged = dict(allowed)
        for k, v in self.params.items():
            v = float(v)
            if not np.isfinite(v):
                raise DomainError(f"parameter {k} must be finite, got {v}")
            merged[k] = v
        if self.model != "random" and self.chain.d != 2:
            raise DomainError(f"model {self.model} is defined for qubits only (d=2)")
        if self.model == "random" and merged["seed"] != int(merged["seed"]):
            raise DomainError("random model seed must be an integer")
        object.__setattr__(self, "params", dict(sorted(merged.items())))

    def to_dict(self) -> dict:
        return {"N": self.chain.n_sites, "d": self.chain.d, "model": self.model,
                **{k: self.params[k] for k in self.params}}

    @classmethod
    def from_dict(cls, data: Mapping) -> "HamiltonianSpec":
        data = dict(data)
        chain = SiteChain(int(data.pop("N")), int(data.pop("d", 2)))
        model = data.pop("model", "tfim")
        return cls(chain, model, data)


@dataclass(frozen=True)
class GibbsSpec:
    hamiltonian: HamiltonianSpec
    beta: float = 1.0

    def __post_init__(self):
        if not np.isfinite(self.beta) or self.beta < 0:
            raise DomainError(f"inverse temperature must be finite and >= 0, got {self.beta}")

    def to_dict(self) -> dict:
        return {**self.hamiltonian.to_dict(), "beta": float(self.beta)}

    @classmethod
    def from_dict(cls, data: Mapping) -> "GibbsSpec":
        data = dict(data)
        beta = float(data.pop("beta", 1.0))
        return cls(HamiltonianSpec.from_dict(data), beta)


def _bond(chain: SiteChain, site: int, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return embed_site_operator(np.kron(a, b), site, chain)


def build_hamiltonian(spec: HamiltonianSpec) -> DenseOperator:
    chain = spec.chain
    n, d = chain.n_sites, chain.d
    p = spec.params
    h = np.zeros((chain.total_dim, chain.total_dim), dtype=np.complex128)
    if spec.model == "tfim":
        for i in range(1, n):
            h -= p["J"] * _bond(chain, i, PAULI_Z, PAULI_Z)
        for i in range(1, n + 1):
            h -= p["g"] * embed_site_operator(PAULI_X, i, chain)
    elif spec.model == "xxz":
        for i in range(1, n):
            h += p["J_xy"] * (_bond(chain, i, PAULI_X, PAULI_X) + _bond(chain, i, PAULI_Y, PAULI_Y))
            h += p["J_z"] * _bond(chain, i, PAULI_Z, PAULI_Z)
        for i in range(1, n + 1):
            h -= p["h"] * embed_site_operator(PAULI_Z, i, chain)
    else:
        rng = np.random.default_rng(int(p["seed"]))
        dd = d * d
        for i in range(1, n):
            g = rng.standard_normal((dd, dd)) + 1j * rng.standard_normal((dd, dd))
            term = p["strength"] * (g + g.conj().T) / (2.0 * np.sqrt(dd))
            h += embed_site_operator(term, i, chain)
    h = 0.5 * (h + h.conj().T)
    return DenseOperator(chain, h)


def gibbs_from_hamiltonian(h: DenseOperator, beta: float) -> DenseOperator:
    energies, vecs = np.linalg.eigh(h.matrix)
    weights = np.exp(-beta * (energies - energies[0]))
    weights /= weights.sum()
    rho = (vecs * weights) @ vecs.conj().T
    rho = 0.5 * (rho + rho.conj().T)
    rho /= np.trace(rho).real
    return DenseOperator(h.chain, rho, density=True)


def gibbs_state(spec: GibbsSpec) -> DenseOperator:
    """``exp(-beta H) / Z`` via a shifted eigendecomposition."""
    return gibbs_from_hamiltonian(build_hamiltonian(spec.hamiltonian), spec.beta)


def tfim_gibbs(n: int, beta: float, J: float = 1.0, g: float = 1.0) -> DenseOperator:
    return gibbs_state(GibbsSpec(HamiltonianSpec(SiteChain(n), "tfim", {"J": J, "g": g}), beta))


def random_gibbs(n: int, beta: float, seed: int, strength: float = 1.0, d: int = 2) -> DenseOperator:
    spec = HamiltonianSpec(SiteChain(n, d), "random", {"seed": seed, "strength": strength})
    return gibbs_state(GibbsSpec(spec, beta))


# -- analytic test states ----------------------------------------------------

TEST_STATE_KINDS = ("product", "dephased-GHZ", "pure-random", "rank-r-random", "maximally-mixed")
_RANK_RE = re.compile(r"^rank-(\d+)-random$")


def _random_density(dim: int, rank: int, rng: np.random.Generator) -> np.ndarray:
    g = rng.standard_normal((dim, rank)) + 1j * rng.standard_normal((dim, rank))
    rho = g @ g.conj().T
    rho = 0.5 * (rho + rho.conj().T)
    return rho / np.trace(rho).real


def test_state(kind: str, chain: SiteChain, seed: int = 0) -> DenseOperator:
    """Deterministic analytic or seeded random density matrix.

    ``kind`` is one of ``product``, ``dephased-GHZ``, ``pure-random``,
    ``rank-<r>-random`` (e.g. ``rank-2-random``) or ``maximally-mixed``.
    """
    rng = np.random.default_rng(seed)
    dim, d, n = chain.total_dim, chain.d, chain.n_sites
    if kind == "maximally-mixed":
        rho = np.eye(dim) / dim
    elif kind == "dephased-GHZ":
        rho = np.zeros((dim, dim), dtype=np.complex128)
        ones = sum(d**s for s in range(n))  # index of |11...1>
        rho[0, 0] = rho[ones, ones] = 0.5
    elif kind == "product":
        rho = kron_all(_random_density(d, d, rng) for _ in range(n))
    elif kind == "pure-random":
        rho = _random_density(dim, 1, rng)
    else:
        m = _RANK_RE.match(kind)
        if not m:
            raise DomainError(f"unknown test state kind {kind!r}; expected one of {TEST_STATE_KINDS}")
        rank = int(m.group(1))
        if not 1 <= rank <= dim:
            raise DomainError(f"rank {rank} outside 1..{dim}")
        rho = _random_density(dim, rank, rng)
    return DenseOperator(chain, rho, density=True)


# pytest would otherwise try to collect the public name above
test_state.__test__ = False
