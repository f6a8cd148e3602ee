"""Compression of a dense mixed state into an MPDO by merging per-cut
truncations with trace-norm-controlled projections.

Every cut ``k`` gets its own approximation ``sigma_k`` (rank ``D_p`` truncation
of the canonical purification across ``k``).  Approximations holding adjacent
runs of cuts are merged pairwise: the projection onto one side's factor span
is applied to the other side, so the result keeps both sets of cuts.  A merge
of inputs with errors ``e_1`` (projection source) and ``e_2`` has error at most
``(A + 1) e_1 + A e_2`` with ``A`` the projection's amplification constant.

The ``tree`` schedule merges balanced halves, so ``N - 1`` cuts need
``K = ceil(log2(N - 1))`` rounds; ``sequential`` absorbs one cut at a time.
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .entanglement import purification_entanglement
from .errors import DomainError, InvariantViolation
from .merge import DUAL_TOLERANCE, apply_projection, build_projection
from .mpdo import MPDO, BlockedMPDO, reconstruct
from .operators import DenseOperator, hermiticity_deviation, operator_schmidt_rank, trace_norm
from .purification import canonical_purification, max_schmidt_rank, truncate_cut

STRATEGIES = ("tree", "sequential")
BOUND_SLACK = 1e-6


# -- schedules ---------------------------------------------------------------


@dataclass(frozen=True)
class Merge:
    """Join of the approximation holding cuts ``left`` with the one holding ``right``.

    Ranges are inclusive; ``right[0] == left[1] + 1``.
    """

    left: tuple[int, int]
    right: tuple[int, int]

    @property
    def joint(self) -> int:
        return self.left[1]

    @property
    def cuts(self) -> tuple[int, int]:
        return (self.left[0], self.right[1])


@dataclass(frozen=True)
class MergeSchedule:
    """Merge plan over the cuts ``1..N-1``.

    ``levels[0]`` is the final merge, ``levels[-1]`` the first round; execution
    runs from the last level to the first.  ``leaves`` lists the cuts whose
    single-cut truncations enter the plan.
    """

    n_sites: int
    strategy: str
    levels: tuple[tuple[Merge, ...], ...]
    leaves: tuple[int, ...]

    @property
    def K(self) -> int:
        return len(self.levels)

    def level_joints(self) -> list[tuple[int, ...]]:
        return [tuple(m.joint for m in lvl) for lvl in self.levels]

    def execution_order(self) -> list[tuple[int, Merge]]:
        """``(level, merge)`` pairs, deepest level first, left to right."""
        return [(r + 1, m) for r in range(self.K - 1, -1, -1) for m in self.levels[r]]

    def validate(self) -> None:
        n = self.n_sites
        if sorted(self.leaves) != list(range(1, n)):
            raise InvariantViolation("leaves must be every cut exactly once")
        live = {(c, c) for c in self.leaves}
        for _, m in self.execution_order():
            if m.right[0] != m.left[1] + 1 or m.left not in live or m.right not in live:
                raise InvariantViolation(f"merge {m} joins unavailable approximations")
            live -= {m.left, m.right}
            live.add(m.cuts)
        if n >= 2 and live != {(1, n - 1)}:
            raise InvariantViolation("schedule does not end with a single approximation")
        if self.strategy == "tree":
            for r, lvl in enumerate(self.levels):
                if len(lvl) > 2**r:
                    raise InvariantViolation(f"level {r + 1} has {len(lvl)} merges")
            if n > 2 and self.K > math.ceil(math.log2(n - 1)):
                raise InvariantViolation(f"tree depth {self.K} exceeds ceil(log2(N-1))")


def schedule_tree(n_sites: int) -> MergeSchedule:
    """Balanced bisection of the cut range; shorter branches start later."""
    if n_sites < 2:
        raise DomainError("a schedule needs at least two sites")
    levels: list[list[Merge]] = []

    def split(lo: int, hi: int, depth: int) -> None:
        if lo == hi:
            return
        mid = lo + (hi - lo + 1 + 1) // 2 - 1  # left half gets ceil(len/2) cuts
        while len(levels) <= depth:
            levels.append([])
        levels[depth].append(Merge((lo, mid), (mid + 1, hi)))
        split(lo, mid, depth + 1)
        split(mid + 1, hi, depth + 1)

    split(1, n_sites - 1, 0)
    sched = MergeSchedule(n_sites, "tree", tuple(tuple(l) for l in levels), tuple(range(1, n_sites)))
    sched.validate()
    return sched


def schedule_sequential(n_sites: int) -> MergeSchedule:
    """Absorb cuts left to right: ``{1} + {2}``, then ``{1,2} + {3}``, ..."""
    if n_sites < 2:
        raise DomainError("a schedule needs at least two sites")
    merges = [Merge((1, c - 1), (c, c)) for c in range(2, n_sites)]
    sched = MergeSchedule(n_sites, "sequential", tuple((m,) for m in reversed(merges)),
                          tuple(range(1, n_sites)))
    sched.validate()
    return sched


def make_schedule(n_sites: int, strategy: str) -> MergeSchedule:
    if strategy == "tree":
        return schedule_tree(n_sites)
    if strategy == "sequential":
        return schedule_sequential(n_sites)
    raise DomainError(f"unknown schedule strategy {strategy!r}; expected one of {STRATEGIES}")


# -- bounds ------------------------------------------------------------------


def global_bound(D: float, K: int, delta_max: float, dual_tolerance: float = DUAL_TOLERANCE) -> float:
    """``(2D + 1)^K delta_max (1 + tol)^K``."""
    if min(D, K, delta_max, dual_tolerance) < 0:
        raise DomainError("global bound needs non-negative inputs")
    return float((2.0 * D + 1.0) ** K * delta_max * (1.0 + dual_tolerance) ** K)


@dataclass(frozen=True)
class AsymptoticParams:
    """Parameters of the area-law scaling argument, all evaluated in log space.

    With ``E_max^alpha <= c log N`` at ``alpha = lambda / (5 log2 N)`` and bond
    dimension ``D = N^kappa``, the error is at most ``6 N^kappa (3/N^Delta)^log2 N``.
    """

    N: float
    c: float
    lam: float
    kappa: float
    alpha: float
    kappa_min: float
    Delta: float
    log_D: float
    log_bound: float
    log_finite_bound: float

    @property
    def D(self) -> float:
        return math.exp(self.log_D)

    @property
    def bound(self) -> float:
        """May underflow to 0.0; use ``log_bound`` for comparisons."""
        return math.exp(self.log_bound) if self.log_bound < 700 else math.inf

    def row(self) -> dict:
        return {"N": self.N, "c": self.c, "lambda": self.lam, "kappa": self.kappa,
                "alpha": self.alpha, "kappa_min": self.kappa_min, "Delta": self.Delta,
                "log_D": self.log_D, "log_bound": self.log_bound, "bound": self.bound,
                "log_finite_bound": self.log_finite_bound}


def asymptotic_params(N: float, c: float, lam: float, kappa: float) -> AsymptoticParams:
    if not 0.0 < lam < 1.0:
        raise DomainError(f"lambda must lie in (0, 1), got {lam}")
    if c <= 0:
        raise DomainError(f"c must be positive, got {c}")
    if N < 2:
        raise DomainError(f"N must be at least 2, got {N}")
    kappa_min = 2.0 * c / (1.0 - lam)
    if not kappa > kappa_min:
        raise DomainError(f"kappa={kappa} must exceed kappa_min = 2c/(1-lambda) = {kappa_min}")
    log2n = math.log2(N)
    ln_n = math.log(N)
    alpha = lam / (5.0 * log2n)
    delta = (kappa * (1.0 - lam) - 2.0 * c) / lam
    log_d = kappa * ln_n
    log_bound = math.log(6.0) + log_d + log2n * (math.log(3.0) - delta * ln_n)
    # 2 (2D+1)^(log2 N + 1) ((1-alpha) e^E / sqrt D)^((1-alpha)/(2 alpha)) with E = c ln N
    log_2d1 = log_d + math.log(2.0) + math.log1p(math.exp(-log_d) / 2.0)
    log_base = math.log1p(-alpha) + c * ln_n - 0.5 * log_d
    log_finite = math.log(2.0) + (log2n + 1.0) * log_2d1 + (1.0 - alpha) / (2.0 * alpha) * log_base
    return AsymptoticParams(float(N), float(c), float(lam), float(kappa), alpha, kappa_min, delta,
                            log_d, log_bound, log_finite)


# -- reports -----------------------------------------------------------------


@dataclass
class CutRecord:
    cut: int
    Dp: int
    eta: float
    delta_measured: float
    delta_analytic: float
    entropy: float
    leaf_rank: int
    leaf_error: float  # trace distance of the stored leaf, includes the SVD cut
    min_eig: float


@dataclass
class MergeRecord:
    level: int
    joint: int
    cuts: tuple[int, int]
    side: str
    basis_mode: str  # auerbach | hs
    D: int
    amplification: float
    quality: float
    biorthogonality_residual: float
    converged: bool
    error_source: float
    error_target: float
    bound_local: float      # (A+1) e_source + A e_target with measured inputs
    bound_recursive: float  # same recursion seeded with the leaf errors only
    measured: float
    within_bound: bool


@dataclass
class CompressionReport:
    N: int
    d: int
    Dp: int
    strategy: str
    mode: str
    alpha: float
    dual_tolerance: float
    seed: int
    K: int
    D: int
    bond_dims: tuple[int, ...]
    cuts: list[CutRecord]
    merges: list[MergeRecord]
    level_errors: list[float]  # index r: max measured error after round r (execution order)
    eta_max: float
    delta_max: float
    eps_measured: float
    eps_raw: float
    raw_trace: float
    eps_bound: float
    eps_bound_recursive: float
    min_eig: float
    hermiticity: float
    trace_error: float
    bond_rank_ok: bool
    converged: bool
    backend: str
    timings_ms: dict = field(default_factory=dict)

    @property
    def within_bound(self) -> bool:
        return self.eps_measured <= self.eps_bound + BOUND_SLACK

    def to_dict(self) -> dict:
        out = asdict(self)
        out["within_bound"] = self.within_bound
        return out

    def row(self) -> dict:
        return {"D_p": self.Dp, "D": self.D, "K": self.K, "eta_max": self.eta_max,
                "delta_max": self.delta_max, "eps_measured": self.eps_measured,
                "eps_bound": self.eps_bound, "min_eig": self.min_eig,
                "wall_ms": self.timings_ms.get("total", 0.0)}


# -- driver ------------------------------------------------------------------


@dataclass
class _Approx:
    blocked: BlockedMPDO
    error: float
    bound: float


def _merge_seed(seed: int, merge: Merge) -> list[int]:
    return [int(seed), merge.left[0], merge.joint, merge.right[1]]


def bond_rank_check(mat: np.ndarray, n: int, d: int, bonds, tol: float = 1e-10) -> bool:
    return all(operator_schmidt_rank(mat, n, d, k + 1, tol) <= b for k, b in enumerate(bonds))


def compress(rho: DenseOperator, Dp: int, strategy: str = "tree", mode: str = "auerbach",
             alpha: float = 0.5, seed: int = 0, dual_tolerance: float = DUAL_TOLERANCE,
             max_iters: int = 200) -> tuple[MPDO, CompressionReport]:
    """Compress ``rho`` to an MPDO with bond dimension at most ``D_p^2``.

    ``D_p`` is clipped at each cut to the largest available Schmidt rank, so
    a large ``D_p`` gives the lossless limit.  The returned MPDO has unit
    trace; ``eps_measured`` is the exact trace distance of that normalised
    operator to ``rho`` and ``eps_raw`` the distance before normalisation.
    """
    from . import _kernels

    t_start = time.perf_counter()
    if int(Dp) != Dp or Dp < 1:
        raise DomainError(f"D_p must be a positive integer, got {Dp}")
    if not rho.density:
        rho = DenseOperator(rho.chain, rho.matrix, density=True)
    chain = rho.chain
    n, d = chain.n_sites, chain.d
    if n < 2:
        raise DomainError("compression needs at least two sites")
    schedule = make_schedule(n, strategy)
    if mode not in ("auerbach", "hs"):
        raise DomainError(f"unknown basis mode {mode!r}")
    timings: dict = {}

    t0 = time.perf_counter()
    psi = canonical_purification(rho)
    cut_records, approx = [], {}
    for k in schedule.leaves:
        dpk = min(int(Dp), max_schmidt_rank(chain, k))
        tr = truncate_cut(rho, k, dpk, psi)
        leaf = BlockedMPDO.from_dense_cut(chain, tr.sigma, k)
        err = trace_norm(rho.matrix - leaf.to_dense())
        approx[(k, k)] = _Approx(leaf, err, err)
        ent = purification_entanglement(psi, k, alpha) if 0 < alpha else float("nan")
        cut_records.append(CutRecord(k, dpk, tr.eta, tr.delta_measured, tr.delta_analytic, ent,
                                     leaf.bond_dims[k], err,
                                     float(np.linalg.eigvalsh(tr.sigma)[0])))
    timings["truncate"] = 1e3 * (time.perf_counter() - t0)

    t0 = time.perf_counter()
    merge_records: list[MergeRecord] = []
    for level, m in schedule.execution_order():
        left, right = approx.pop(m.left), approx.pop(m.right)
        # project across the shorter side: left region is sites 1..joint,
        # right region is sites joint+2..N
        if m.joint <= n - m.joint - 1:
            side, src, tgt, cut = "left", left, right, m.joint
        else:
            side, src, tgt, cut = "right", right, left, m.joint + 1
        proj = build_projection(src.blocked, cut, side, mode, dual_tolerance, max_iters,
                                seed=_merge_seed(seed, m))
        out = apply_projection(proj, tgt.blocked)
        amp = proj.amplification_certificate
        err = trace_norm(rho.matrix - out.to_dense())
        local = (amp + 1.0) * src.error + amp * tgt.error
        rec = (amp + 1.0) * src.bound + amp * tgt.bound
        approx[m.cuts] = _Approx(out, err, rec)
        b = proj.basis
        merge_records.append(MergeRecord(level, m.joint, m.cuts, side, b.mode, b.D, amp, b.quality,
                                         b.biorthogonality_residual, b.converged, src.error,
                                         tgt.error, local, rec, err, err <= local + BOUND_SLACK))
    timings["merge"] = 1e3 * (time.perf_counter() - t0)

    (final,) = approx.values()
    raw = final.blocked.to_mpdo(normalize=False)
    out_mpdo = raw.normalized()
    t0 = time.perf_counter()
    dense = reconstruct(out_mpdo).matrix
    raw_dense = final.blocked.to_dense()
    eps = trace_norm(rho.matrix - dense)
    eps_raw = trace_norm(rho.matrix - raw_dense)
    herm = 0.5 * (dense + dense.conj().T)
    min_eig = float(np.linalg.eigvalsh(herm)[0])
    bonds = out_mpdo.bond_dims
    rank_ok = bond_rank_check(dense, n, d, bonds)
    timings["verify"] = 1e3 * (time.perf_counter() - t0)

    levels = sorted({lv for lv, _ in schedule.execution_order()}, reverse=True)
    level_errors = [max(r.measured for r in merge_records if r.level == lv) for lv in levels]
    D = max([r.D for r in merge_records] + [c.leaf_rank for c in cut_records])
    delta_max = max(max(c.delta_measured, c.leaf_error) for c in cut_records)
    timings["total"] = 1e3 * (time.perf_counter() - t_start)
    report = CompressionReport(
        N=n, d=d, Dp=int(Dp), strategy=strategy, mode=mode, alpha=float(alpha),
        dual_tolerance=float(dual_tolerance), seed=int(seed), K=schedule.K, D=int(D),
        bond_dims=tuple(int(b) for b in bonds), cuts=cut_records, merges=merge_records,
        level_errors=level_errors, eta_max=max(c.eta for c in cut_records), delta_max=delta_max,
        eps_measured=eps, eps_raw=eps_raw, raw_trace=float(raw.trace().real),
        eps_bound=global_bound(D, schedule.K, delta_max, dual_tolerance),
        eps_bound_recursive=final.bound, min_eig=min_eig,
        hermiticity=hermiticity_deviation(dense), trace_error=abs(np.trace(dense) - 1.0),
        bond_rank_ok=bool(rank_ok), converged=all(r.converged for r in merge_records),
        backend=_kernels.backend(), timings_ms=timings)
    return out_mpdo, report
