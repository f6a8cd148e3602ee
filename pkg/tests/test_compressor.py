import json
import math

import numpy as np
import pytest

from mpdo_approx import errors
from mpdo_approx.compressor import (
    Merge,
    MergeSchedule,
    asymptotic_params,
    compress,
    global_bound,
    make_schedule,
    schedule_sequential,
    schedule_tree,
)
from mpdo_approx.models import random_gibbs, test_state as make_state, tfim_gibbs
from mpdo_approx.mpdo import reconstruct
from mpdo_approx.operators import SiteChain, trace_norm

import oracles


# -- schedules -----------------------------------------------------------------


def test_two_sites_need_no_merges():
    s = schedule_tree(2)
    assert s.K == 0 and s.leaves == (1,)
    assert s.execution_order() == []


def test_five_site_tree():
    s = schedule_tree(5)
    assert s.level_joints() == [(2,), (1, 3)]
    assert s.K == 2 == math.ceil(math.log2(4))
    assert s.levels[0][0] == Merge((1, 2), (3, 4))


def test_nine_site_tree_doubles_each_level():
    s = schedule_tree(9)
    assert s.K == 3
    assert [len(lvl) for lvl in s.levels] == [1, 2, 4]
    assert s.level_joints() == [(4,), (2, 6), (1, 3, 5, 7)]
    # the deepest round acts first
    assert [lv for lv, _ in s.execution_order()] == [3, 3, 3, 3, 2, 2, 1]


@pytest.mark.parametrize("n", range(2, 18))
def test_tree_schedules_are_valid(n):
    s = schedule_tree(n)
    s.validate()
    assert s.K == (math.ceil(math.log2(n - 1)) if n > 2 else 0)
    joints = sorted(m.joint for lvl in s.levels for m in lvl)
    assert joints == list(range(1, n - 1))
    for r, lvl in enumerate(s.levels):
        assert len(lvl) <= 2**r


def test_power_of_two_plus_one_depth():
    for e in range(1, 6):
        assert schedule_tree(2**e + 1).K == e


def test_sequential_schedule():
    s = schedule_sequential(5)
    assert s.K == 3
    assert [m for _, m in s.execution_order()] == [Merge((1, 1), (2, 2)), Merge((1, 2), (3, 3)),
                                                   Merge((1, 3), (4, 4))]


def test_bad_schedules_rejected():
    with pytest.raises(errors.DomainError):
        schedule_tree(1)
    with pytest.raises(errors.DomainError):
        make_schedule(4, "random")
    bad = MergeSchedule(4, "tree", ((Merge((1, 1), (3, 3)),),), (1, 2, 3))
    with pytest.raises(errors.InvariantViolation):
        bad.validate()
    dup = MergeSchedule(3, "tree", ((Merge((1, 1), (2, 2)),),), (1, 1, 2))
    with pytest.raises(errors.InvariantViolation):
        dup.validate()


# -- bounds ----------------------------------------------------------------------


def test_global_bound_examples():
    assert global_bound(1, 1, 0.1, 0.0) == pytest.approx(0.3, abs=1e-15)
    assert global_bound(3, 2, 0.01, 1e-3) == pytest.approx(49 * 0.01 * 1.001**2, rel=1e-14)
    with pytest.raises(errors.DomainError):
        global_bound(1, 1, -0.1, 0.0)


def test_tree_bound_matches_log_form_for_power_of_two_plus_one():
    for e in (2, 3, 4):
        n = 2**e + 1
        K = schedule_tree(n).K
        assert K == math.log2(n - 1)
        assert global_bound(2, K, 0.01, 0.0) == pytest.approx(5**e * 0.01, rel=1e-14)


def test_asymptotic_examples():
    p = asymptotic_params(16, 1.0, 0.5, 5.0)
    assert p.kappa_min == pytest.approx(4.0, abs=1e-15)
    assert p.Delta == pytest.approx(1.0, abs=1e-15)
    assert p.alpha == pytest.approx(0.5 / 20, abs=1e-15)
    # 6 N^kappa (3/N^Delta)^log2 N at N = 16
    assert p.log_bound == pytest.approx(math.log(6 * 16**5 * (3 / 16) ** 4), rel=1e-12)
    with pytest.raises(errors.DomainError, match="kappa_min"):
        asymptotic_params(16, 1.0, 0.5, 4.0)
    for lam in (0.0, 1.0):
        with pytest.raises(errors.DomainError):
            asymptotic_params(16, 1.0, lam, 5.0)


def test_asymptotic_bound_strictly_decreasing_without_overflow():
    rows = [asymptotic_params(2.0**e, 1.0, 0.5, 5.0) for e in range(4, 21)]
    logs = [r.log_bound for r in rows]
    assert all(math.isfinite(v) for v in logs)
    assert all(b < a for a, b in zip(logs, logs[1:]))
    assert all(math.isfinite(r.log_finite_bound) for r in rows)
    # N = 2^20: ln 6 + 100 ln 2 + 20 (ln 3 - 20 ln 2)
    ref = math.log(6) + 100 * math.log(2) + 20 * (math.log(3) - 20 * math.log(2))
    assert rows[-1].log_bound == pytest.approx(ref, rel=1e-12)


# -- compression -----------------------------------------------------------------


def check_output(mpdo, rep, rho):
    m = reconstruct(mpdo).matrix
    assert np.max(np.abs(m - m.conj().T)) <= 1e-10
    assert abs(np.trace(m) - 1) <= 1e-8
    n = rho.chain.n_sites
    for k, b in enumerate(mpdo.bond_dims, start=1):
        s = oracles.operator_schmidt_values_loops(m, n, 2, k)
        assert int(np.sum(s > 1e-10)) <= b
    assert rep.eps_measured == pytest.approx(oracles.trace_norm_svd(rho.matrix - m), abs=1e-12)
    assert rep.bond_rank_ok


@pytest.mark.parametrize("n", [3, 4, 5])
def test_lossless_limit(n):
    rho = tfim_gibbs(n, 1.0)
    mpdo, rep = compress(rho, 4**n)
    assert rep.eps_measured <= 1e-8
    assert rep.eta_max <= 1e-12
    check_output(mpdo, rep, rho)


def test_product_state_rank_one():
    rho = make_state("product", SiteChain(5), seed=3)
    mpdo, rep = compress(rho, 1)
    assert rep.eps_measured <= 1e-9
    assert mpdo.bond_dims == (1, 1, 1, 1)
    check_output(mpdo, rep, rho)


def test_gibbs_n6_within_bound_and_against_sequential():
    rho = tfim_gibbs(6, 1.0)
    tree_m, tree = compress(rho, 4, "tree")
    seq_m, seq = compress(rho, 4, "sequential")
    for m, r in ((tree_m, tree), (seq_m, seq)):
        check_output(m, r, rho)
        assert r.within_bound and r.converged
        assert all(rec.within_bound for rec in r.merges)
        assert r.eps_measured <= r.eps_bound_recursive + 1e-6
    # identical leaf data on both strategies
    assert [c.eta for c in tree.cuts] == [c.eta for c in seq.cuts]
    assert tree.K == 3 and seq.K == 4
    assert tree.eps_bound < seq.eps_bound
    # heuristic floor: the result is not better than the worst single cut allows
    floor = max(c.delta_measured for c in tree.cuts) / (3 * tree.D)
    assert tree.eps_measured >= floor and seq.eps_measured >= floor


def test_report_fields_and_serialisation():
    rho = tfim_gibbs(5, 1.0)
    mpdo, rep = compress(rho, 2, seed=4)
    assert rep.N == 5 and rep.Dp == 2 and rep.K == 2
    assert len(rep.cuts) == 4 and len(rep.merges) == 3
    assert len(rep.level_errors) == rep.K
    assert rep.delta_max >= max(c.delta_measured for c in rep.cuts)
    for c in rep.cuts:
        assert c.delta_measured <= c.delta_analytic + 1e-9
        assert c.delta_measured <= 2 * math.sqrt(c.eta) + 1e-9
        assert c.min_eig >= -1e-10
    assert rep.eps_bound == pytest.approx(global_bound(rep.D, rep.K, rep.delta_max, rep.dual_tolerance))
    assert mpdo.max_bond <= rep.D
    json.dumps(rep.to_dict())
    assert set(rep.row()) == {"D_p", "D", "K", "eta_max", "delta_max", "eps_measured", "eps_bound",
                              "min_eig", "wall_ms"}


def test_per_level_growth_is_controlled():
    rep = compress(tfim_gibbs(6, 0.5), 2)[1]
    prev = 0.0
    for lv, err in zip(sorted({m.level for m in rep.merges}, reverse=True), rep.level_errors):
        amp = max(m.amplification for m in rep.merges if m.level == lv)
        assert err <= (2 * amp + 1) * max(rep.delta_max, prev) + 1e-9
        prev = err


def test_unnormalised_error_also_recorded():
    rep = compress(tfim_gibbs(5, 1.0), 2)[1]
    assert rep.raw_trace == pytest.approx(1.0, abs=0.2)
    assert rep.eps_raw > 0 and math.isfinite(rep.eps_raw)


def test_hs_mode_runs_and_reports_quality():
    rep = compress(tfim_gibbs(5, 1.0), 2, mode="hs")[1]
    assert all(m.basis_mode == "hs" for m in rep.merges)
    assert all(m.biorthogonality_residual <= 1e-9 for m in rep.merges)


def test_seeded_runs_are_identical():
    rho = random_gibbs(5, 1.0, seed=2)
    a, ra = compress(rho, 2, seed=9)
    b, rb = compress(rho, 2, seed=9)
    assert a == b
    da, db = ra.to_dict(), rb.to_dict()
    da.pop("timings_ms"), db.pop("timings_ms")
    assert da == db


def test_error_decreases_with_bond_dimension_in_median():
    eps = []
    for seed in range(5):
        rho = random_gibbs(5, 1.0, seed=seed)
        eps.append([compress(rho, dp, seed=seed)[1].eps_measured for dp in (1, 2, 3, 4)])
    med = np.median(np.array(eps), axis=0)
    assert all(b <= a for a, b in zip(med, med[1:]))


def test_compress_validation():
    rho = tfim_gibbs(3, 1.0)
    for bad in (0, 2.5):
        with pytest.raises(errors.DomainError):
            compress(rho, bad)
    with pytest.raises(errors.DomainError):
        compress(rho, 2, mode="frobenius")
    with pytest.raises(errors.DomainError):
        compress(tfim_gibbs(1, 1.0), 1)


def test_final_min_eigenvalue_reported_not_asserted():
    mpdo, rep = compress(tfim_gibbs(5, 2.0), 1)
    m = reconstruct(mpdo).matrix
    assert rep.min_eig == pytest.approx(np.linalg.eigvalsh(m)[0], abs=1e-12)
    assert trace_norm(m - tfim_gibbs(5, 2.0).matrix) == pytest.approx(rep.eps_measured, abs=1e-12)
