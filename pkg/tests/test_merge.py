import numpy as np
import pytest

from mpdo_approx import errors
from mpdo_approx.merge import (
    OperatorSubspace,
    amplification_measure,
    apply_projection,
    auerbach_basis,
    build_projection,
    certified_merge_bound,
    dual_norm,
    hahn_banach_extend,
    merge_error_bound,
)
from mpdo_approx.models import random_gibbs, test_state as make_state, tfim_gibbs
from mpdo_approx.mpdo import BlockedMPDO
from mpdo_approx.operators import SiteChain, operator_norm, operator_schmidt_rank, trace_norm
from mpdo_approx.purification import truncate_cut

import oracles

SX = np.array([[0, 1], [1, 0]], dtype=complex)
SY = np.array([[0, -1j], [1j, 0]])
SZ = np.diag([1.0 + 0j, -1.0])


def rand_sub(n, D, rng, hermitian=True):
    if hermitian:
        gens = [oracles.random_hermitian(n, rng) for _ in range(D)]
    else:
        gens = [rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n)) for _ in range(D)]
    return OperatorSubspace.from_generators(gens)


def pairings(basis):
    return np.einsum("iab,jab->ij", basis.duals.conj(), basis.basis)


# -- subspaces ---------------------------------------------------------------------


def test_subspace_filters_dependent_generators():
    rng = np.random.default_rng(0)
    a, b = oracles.random_hermitian(4, rng), oracles.random_hermitian(4, rng)
    sub = OperatorSubspace.from_generators([a, b, a + 2 * b, 1e-13 * a])
    assert sub.dim == 2 and sub.hermitian
    gram = np.einsum("kab,lab->kl", sub.frame.conj(), sub.frame)
    np.testing.assert_allclose(gram, np.eye(2), atol=1e-13)
    with pytest.raises(errors.DomainError):
        OperatorSubspace.from_generators([np.zeros((2, 2))])


def test_complex_subspace_is_not_flagged_hermitian():
    sub = rand_sub(4, 2, np.random.default_rng(1), hermitian=False)
    assert not sub.hermitian
    assert sub.real_frame().shape[0] == 4


# -- Auerbach bases ------------------------------------------------------------------


def test_one_dimensional_basis_uses_polar_sign_factor():
    rng = np.random.default_rng(2)
    g = rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))
    b = auerbach_basis(OperatorSubspace.from_generators([g]))
    u, s, vh = np.linalg.svd(g)
    assert b.D == 1
    # basis element is G/||G||_1 up to a phase fixed by biorthogonality
    ratio = b.basis[0] / (g / s.sum())
    np.testing.assert_allclose(ratio, ratio[0, 0] * np.ones((4, 4)), atol=1e-12)
    sign = u @ vh
    np.testing.assert_allclose(b.duals[0], ratio[0, 0] * sign, atol=1e-12)
    assert b.quality == pytest.approx(1.0, abs=1e-12)
    assert b.biorthogonality_residual <= 1e-12


def test_pauli_pair_basis_and_duals():
    b = auerbach_basis(OperatorSubspace.from_generators([SX, SY]))
    np.testing.assert_allclose(b.basis, [SX / 2, SY / 2], atol=1e-12)
    # in this span ||X||_1 = 2|c| for X = c . (sx, sy); the sign of c picks the
    # dual, so check the analytic duals directly
    np.testing.assert_allclose(b.duals, [SX, SY], atol=1e-9)
    np.testing.assert_allclose(pairings(b), np.eye(2), atol=1e-12)
    assert [trace_norm(x) for x in b.basis] == pytest.approx([1.0, 1.0], abs=1e-12)
    assert [operator_norm(x) for x in b.duals] == pytest.approx([1.0, 1.0], abs=1e-9)


@pytest.mark.parametrize("hermitian", [True, False])
def test_random_subspace_auerbach_beats_hs(hermitian):
    sub = rand_sub(4, 3, np.random.default_rng(3), hermitian)
    a = auerbach_basis(sub, "auerbach", seed=1)
    h = auerbach_basis(sub, "hs")
    assert a.quality <= 1 + 1e-3
    assert a.converged
    assert h.quality >= 1 - 1e-12  # duality: ||A'||_inf >= tr(A'^dag A)/||A||_1 = 1
    assert h.quality > a.quality
    for basis in (a, h):
        assert basis.biorthogonality_residual <= 1e-9
        np.testing.assert_allclose(basis.trace_norms, 1.0, atol=1e-12)
    # coefficient matrix reproduces the basis from the generators
    rebuilt = np.einsum("ik,kab->iab", a.coefficients, sub.generators)
    np.testing.assert_allclose(rebuilt, a.basis, atol=1e-10)


def test_auerbach_is_seed_deterministic():
    sub = rand_sub(4, 3, np.random.default_rng(4))
    a, b = auerbach_basis(sub, seed=5), auerbach_basis(sub, seed=5)
    assert np.array_equal(a.basis, b.basis) and np.array_equal(a.duals, b.duals)


@pytest.mark.parametrize("hermitian", [True, False])
def test_full_space_uses_exact_matrix_unit_basis(hermitian):
    rng = np.random.default_rng(15)
    sub = rand_sub(4, 16, rng, hermitian)
    assert sub.dim == 16
    b = auerbach_basis(sub)
    assert b.sweeps == 0 and b.converged
    assert b.quality == pytest.approx(1.0, abs=1e-12)
    assert b.amplification_certificate == pytest.approx(16.0, abs=1e-10)
    assert b.biorthogonality_residual <= 1e-12
    np.testing.assert_allclose(b.trace_norms, 1.0, atol=1e-12)
    # the projection onto the whole space is the identity
    x = oracles.random_hermitian(4, rng)
    c = np.einsum("iab,ab->i", b.duals.conj(), x)
    np.testing.assert_allclose(np.einsum("i,iab->ab", c, b.basis), x, atol=1e-12)


def test_unconverged_search_is_flagged():
    sub = rand_sub(8, 5, np.random.default_rng(5))
    b = auerbach_basis(sub, max_iters=1, seed=0)
    assert not b.converged
    assert b.biorthogonality_residual <= 1e-9


def test_bad_mode_rejected():
    with pytest.raises(errors.DomainError):
        auerbach_basis(rand_sub(2, 1, np.random.default_rng(0)), mode="qr")


# -- Hahn-Banach extensions ---------------------------------------------------------


def test_extension_of_one_dimensional_functional_is_sign_factor():
    rng = np.random.default_rng(6)
    g = oracles.random_hermitian(4, rng)
    a = g / trace_norm(g)
    ext = hahn_banach_extend([a], 0)
    w, v = np.linalg.eigh(g)
    np.testing.assert_allclose(ext.matrix, (v * np.sign(w)) @ v.conj().T, atol=1e-9)
    assert ext.norm == pytest.approx(1.0, abs=1e-9)


def test_pauli_duals_need_no_extension():
    ext = hahn_banach_extend([SX / 2, SY / 2], 0)
    np.testing.assert_allclose(ext.matrix, SX, atol=1e-6)
    assert ext.norm == pytest.approx(1.0, abs=1e-9)


@pytest.mark.parametrize("seed", [7, 8, 9])
def test_extension_norm_matches_grid_oracle(seed):
    rng = np.random.default_rng(seed)
    b0, b1 = oracles.random_hermitian(4, rng), oracles.random_hermitian(4, rng)
    b0, b1 = b0 / trace_norm(b0), b1 / trace_norm(b1)
    for index in (0, 1):
        ext = hahn_banach_extend([b0, b1], index)
        # functional: X = c0 b0 + c1 b1 -> c_index
        g = np.array([[np.vdot(x, y).real for y in (b0, b1)] for x in (b0, b1)])

        def coeff(x, index=index):
            rhs = np.array([np.vdot(b0, x).real, np.vdot(b1, x).real])
            return np.linalg.solve(g, rhs)[index]

        exact = oracles.dual_norm_grid(coeff, [b0, b1])
        assert ext.norm <= exact + 1e-3
        assert ext.norm >= exact - 1e-6
        assert ext.subspace_norm_lower <= exact + 1e-9
        # constraints hold
        for j, b in enumerate((b0, b1)):
            assert np.vdot(ext.matrix, b).real == pytest.approx(float(j == index), abs=1e-9)


def test_dual_norm_of_one_dimensional_space_is_exact():
    rng = np.random.default_rng(10)
    g = oracles.random_hermitian(8, rng)
    sub = OperatorSubspace.from_generators([g])
    w = g / trace_norm(g) / np.vdot(g / trace_norm(g), g / trace_norm(g)).real
    sol = dual_norm(w, sub)
    # w pairs to 1 with G/||G||_1, so its dual norm is 1 exactly
    assert sol.norm == pytest.approx(1.0, abs=1e-9)
    assert sol.lower == pytest.approx(1.0, abs=1e-9)


# -- projections -----------------------------------------------------------------------


@pytest.fixture(scope="module")
def gibbs4():
    return tfim_gibbs(4, 1.0)


@pytest.fixture(scope="module")
def proj_cut1(gibbs4):
    t = truncate_cut(gibbs4, 1, 2)
    return t, build_projection(t, side="left", seed=0)


def test_certificate_between_D_and_D_times_tol(proj_cut1):
    _, proj = proj_cut1
    d = proj.D
    assert d - 1e-6 <= proj.amplification_certificate <= d * (1 + 1e-3)


def test_projection_fixes_factors_and_own_truncation(proj_cut1):
    t, proj = proj_cut1
    for a in t.A_factors.reshape(-1, 2, 2):
        full = np.kron(a, np.eye(8))
        got = proj.apply_dense(full)
        np.testing.assert_allclose(got, full, atol=1e-9)
    np.testing.assert_allclose(proj.apply_dense(t.sigma), t.sigma, atol=1e-9)


def test_projection_is_linear_and_idempotent(proj_cut1):
    _, proj = proj_cut1
    rng = np.random.default_rng(11)
    for _ in range(5):
        x = rng.standard_normal((16, 16)) + 1j * rng.standard_normal((16, 16))
        y = rng.standard_normal((16, 16)) + 1j * rng.standard_normal((16, 16))
        px = proj.apply_dense(x)
        assert trace_norm(proj.apply_dense(px) - px) <= 1e-8
        np.testing.assert_allclose(proj.apply_dense(x + 2.5 * y), px + 2.5 * proj.apply_dense(y),
                                   atol=1e-11)
        assert operator_schmidt_rank(px, 4, 2, 1) <= proj.D


def test_rank_one_truncation_projects_to_rank_one():
    rho = make_state("product", SiteChain(3), seed=3)
    proj = build_projection(truncate_cut(rho, 1, 1), side="left")
    assert proj.D == 1
    x = oracles.random_hermitian(8, np.random.default_rng(12))
    assert operator_schmidt_rank(proj.apply_dense(x), 3, 2, 1) == 1


def test_amplification_measure(proj_cut1):
    t, proj = proj_cut1
    assert amplification_measure(proj, t.sigma) == pytest.approx(1.0, abs=1e-9)
    rng = np.random.default_rng(13)
    for _ in range(20):
        x = oracles.random_hermitian(16, rng)
        assert amplification_measure(proj, x) <= proj.amplification_certificate + 1e-6
    with pytest.raises(errors.DomainError):
        amplification_measure(proj, np.zeros((16, 16)))


def test_hs_mode_on_near_parallel_generators_amplifies_more():
    rng = np.random.default_rng(14)
    a = oracles.random_hermitian(4, rng)
    b = a + 1e-3 * oracles.random_hermitian(4, rng)
    c = oracles.random_hermitian(4, rng)
    sub = OperatorSubspace.from_generators([a, b, c])
    hs = auerbach_basis(sub, "hs")
    au = auerbach_basis(sub, "auerbach", seed=0)
    assert au.amplification_certificate <= 3 * (1 + 1e-3)
    assert hs.amplification_certificate > au.amplification_certificate
    # record of the measured ratio; hs may exceed D
    assert np.isfinite(hs.quality)


def test_right_side_projection(gibbs4):
    t = truncate_cut(gibbs4, 3, 2)
    proj = build_projection(t, side="right", seed=0)
    assert proj.region == (4,)
    for b in t.B_factors.reshape(-1, 2, 2):
        full = np.kron(np.eye(8), b)
        np.testing.assert_allclose(proj.apply_dense(full), full, atol=1e-9)


# -- applying projections to blocked states -----------------------------------------------


def test_apply_projection_to_its_source_is_identity(gibbs4, proj_cut1):
    t, proj = proj_cut1
    out = apply_projection(proj, BlockedMPDO.from_dense_cut(gibbs4.chain, t.sigma, 1))
    np.testing.assert_allclose(out.to_dense(), t.sigma, atol=1e-10)


def test_apply_projection_matches_dense_map_and_keeps_cuts(gibbs4, proj_cut1):
    _, proj = proj_cut1
    t3 = truncate_cut(gibbs4, 3, 2)
    target = BlockedMPDO.from_dense_cut(gibbs4.chain, t3.sigma, 3)
    out = apply_projection(proj, target)
    np.testing.assert_allclose(out.to_dense(), proj.apply_dense(t3.sigma), atol=1e-10)
    assert out.cuts == (1, 3)
    assert out.bond_dims[3] == target.bond_dims[3]
    assert out.bond_dims[1] <= proj.D


def test_disjoint_projections_commute(gibbs4):
    left = build_projection(truncate_cut(gibbs4, 1, 2), side="left", seed=0)
    right = build_projection(truncate_cut(gibbs4, 3, 2), side="right", seed=0)
    t2 = truncate_cut(gibbs4, 2, 2)
    base = BlockedMPDO.from_dense_cut(gibbs4.chain, t2.sigma, 2)
    a = apply_projection(right, apply_projection(left, base)).to_dense()
    b = apply_projection(left, apply_projection(right, base)).to_dense()
    np.testing.assert_allclose(a, b, atol=1e-10)
    dense = right.apply_dense(left.apply_dense(t2.sigma))
    np.testing.assert_allclose(a, dense, atol=1e-10)


def test_misaligned_region_is_a_structural_error(gibbs4):
    big = build_projection(truncate_cut(gibbs4, 2, 2), side="left", seed=0)
    target = _three_blocks(gibbs4, truncate_cut(gibbs4, 1, 2))
    # region 1..2 ends inside the target's block [2..3]
    with pytest.raises(errors.StructuralError):
        apply_projection(big, target)


def _three_blocks(gibbs4, t1):
    # blocks [1], [2..4] plus an extra cut at 3: region 1..2 ends inside block [2..3]
    b = BlockedMPDO.from_dense_cut(gibbs4.chain, t1.sigma, 1)
    from mpdo_approx.mpdo import Block

    q = 4
    first, second = b.blocks
    t = second.tensor.reshape(second.tensor.shape[0] * q * q, q)
    u, s, vh = np.linalg.svd(t, full_matrices=False)
    r = int(np.sum(s > 1e-12 * s[0]))
    mid = (u[:, :r] * s[:r]).reshape(second.tensor.shape[0], q * q, r)
    last = vh[:r].reshape(r, q, 1)
    return BlockedMPDO(gibbs4.chain, [first, Block(2, 3, mid), Block(4, 4, last)])


# -- merge bound -----------------------------------------------------------------------------


def test_merge_error_bound_examples():
    assert merge_error_bound(1, 0.1, 0.1) == pytest.approx(0.3)
    for D in (1, 4, 16):
        assert merge_error_bound(D, 0.2, 0.2) <= (2 * D + 1) * 0.2 + 1e-15
    assert certified_merge_bound(4.0, 0.1, 0.2) == pytest.approx(merge_error_bound(4, 0.1, 0.2))
    with pytest.raises(errors.DomainError):
        merge_error_bound(1, -0.1, 0.0)


@pytest.mark.parametrize("seed", range(4))
def test_merge_bound_holds_on_random_gibbs(seed):
    rho = random_gibbs(4, 1.0, seed=seed)
    t1, t2 = truncate_cut(rho, 1, 1), truncate_cut(rho, 2, 2)
    proj = build_projection(t1, side="left", seed=seed)
    merged = apply_projection(proj, BlockedMPDO.from_dense_cut(rho.chain, t2.sigma, 2))
    err = trace_norm(merged.to_dense() - rho.matrix)
    bound = merge_error_bound(proj.D, t1.delta_measured, t2.delta_measured)
    assert err <= bound * (1 + 1e-3)
