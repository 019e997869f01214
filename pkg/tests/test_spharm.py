import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import special

from sphcp.harness import dense_psi
from sphcp.spharm import (BlockDiagonal, Transform, assoc_legendre_bar, block_layout, build_error_operator,
                          build_grid, coeff_index, degree_order, legendre_table, sht_forward, sht_inverse,
                          sparsity_count)
from sphcp.errors import SingularOperatorError


def pbar_mpmath(l, m, x, dps=50):
    """Brute force: explicit Legendre coefficients, m-fold polynomial derivative, exact factorials."""
    with mp.workdps(dps):
        x = mp.mpf(x)
        total = mp.mpf(0)
        for k in range(l // 2 + 1):
            c = (-1) ** k * mp.binomial(l, k) * mp.binomial(2 * l - 2 * k, l) / mp.mpf(2) ** l
            p = l - 2 * k
            if p >= m:
                total += c * mp.factorial(p) / mp.factorial(p - m) * x ** (p - m)
        plm = (1 - x * x) ** (mp.mpf(m) / 2) * total
        norm = mp.sqrt((2 * l + 1) / (4 * mp.pi) * mp.factorial(l - m) / mp.factorial(l + m))
        if m > 0:
            norm *= mp.sqrt(2)
        return float(norm * plm)


def psi_lpmv(grid, L):
    """Independent dense Psi from scipy's lpmv (Condon-Shortley phase removed)."""
    l, m = degree_order(L)
    t = np.repeat(grid.theta, 2 * grid.K)
    p = np.tile(grid.phi, grid.K)
    out = np.empty((grid.N, l.size))
    for j, (lj, mj) in enumerate(zip(l, m)):
        am = abs(mj)
        norm = math.sqrt((2 * lj + 1) / (4 * math.pi) * math.factorial(lj - am) / math.factorial(lj + am))
        base = (-1) ** am * norm * special.lpmv(am, lj, np.cos(t))
        if mj > 0:
            out[:, j] = math.sqrt(2) * base * np.cos(am * p)
        elif mj < 0:
            out[:, j] = math.sqrt(2) * base * np.sin(am * p)
        else:
            out[:, j] = base
    return out


def test_pbar_high_degree_matches_mpmath():
    ref = pbar_mpmath(50, 25, 0.3)
    assert assoc_legendre_bar(50, 25, 0.3) == pytest.approx(ref, rel=1e-10)


@pytest.mark.parametrize("l,m,x", [(0, 0, 0.2), (3, 1, -0.7), (10, 10, 0.5), (20, 7, 0.99), (31, 0, -0.1)])
def test_pbar_low_degree_matches_mpmath(l, m, x):
    assert assoc_legendre_bar(l, m, x) == pytest.approx(pbar_mpmath(l, m, x), rel=1e-11, abs=1e-14)


def test_pbar_no_underflow_at_high_order():
    # sectoral values near the pole are tiny but must not be zero or nan
    v = assoc_legendre_bar(300, 300, 0.9)
    assert np.isfinite(v) and v > 0


def test_pbar_normalization_integral():
    x, w = np.polynomial.legendre.leggauss(64)
    P = legendre_table(12, x)
    for l in range(13):
        for m in range(l + 1):
            target = (2 - (m == 0)) / (2 * np.pi)
            assert np.sum(w * P[l, m] ** 2) == pytest.approx(target, rel=1e-12)


def test_pbar_rejects_bad_arguments():
    with pytest.raises(ValueError):
        assoc_legendre_bar(3, 4, 0.1)
    with pytest.raises(ValueError):
        assoc_legendre_bar(3, 1, 1.5)


def test_grid_weights_sum_and_pole():
    for K in (4, 8, 16, 32):
        g = build_grid(K)
        assert g.point_weights.sum() == pytest.approx(4 * np.pi, rel=1e-13)
        assert g.weights[0] == 0.0
        assert g.N == 2 * K * K and g.lmax == K // 2 - 1


@pytest.mark.parametrize("K", [3, 2, 7, 0])
def test_grid_rejects_bad_K(K):
    with pytest.raises(ValueError):
        build_grid(K)


def test_dense_psi_matches_lpmv_oracle():
    g = build_grid(8)
    assert np.abs(dense_psi(g, 3) - psi_lpmv(g, 3)).max() < 1e-12


@pytest.mark.parametrize("K", [8, 16])
def test_discrete_orthogonality(K):
    g = build_grid(K)
    Psi = psi_lpmv(g, K // 2 - 1)
    G = Psi.T @ (g.point_weights[:, None] * Psi)
    assert np.abs(G - np.eye(G.shape[0])).max() < 1e-12


def test_orthogonality_fails_above_capacity():
    # degree K/2 lies beyond exactness, so the Gram matrix must deviate
    g = build_grid(8)
    Psi = psi_lpmv(g, 4)
    G = Psi.T @ (g.point_weights[:, None] * Psi)
    assert np.abs(G - np.eye(G.shape[0])).max() > 1e-3


def test_forward_recovers_known_coefficients():
    g = build_grid(16)
    L = 7
    rng = np.random.default_rng(1)
    beta = rng.standard_normal((L + 1) ** 2)
    f = psi_lpmv(g, L) @ beta
    assert np.abs(sht_forward(f, g, L) - beta).max() < 1e-9


def test_transform_matches_dense_operators():
    g = build_grid(8)
    Psi = psi_lpmv(g, 3)
    rng = np.random.default_rng(2)
    f = rng.standard_normal(g.N)
    a = rng.standard_normal(16)
    assert np.abs(sht_forward(f, g, 3) - Psi.T @ (g.point_weights * f)).max() < 1e-12
    assert np.abs(sht_inverse(a, g) - Psi @ a).max() < 1e-12


def test_transform_batches_leading_axes():
    g = build_grid(8)
    rng = np.random.default_rng(3)
    F = rng.standard_normal((2, 3, g.N))
    out = sht_forward(F, g, 3)
    assert out.shape == (2, 3, 16)
    assert np.allclose(out[1, 2], sht_forward(F[1, 2], g, 3), atol=1e-14)


@settings(max_examples=25, deadline=None)
@given(K=st.sampled_from([4, 8, 12, 16]), seed=st.integers(0, 2**31 - 1))
def test_roundtrip_property(K, seed):
    g = build_grid(K)
    a = np.random.default_rng(seed).standard_normal(K * K // 4)
    assert np.abs(sht_forward(sht_inverse(a, g), g, g.lmax) - a).max() < 1e-10


def test_truncated_forward_is_prefix():
    g = build_grid(16)
    f = np.random.default_rng(4).standard_normal(g.N)
    full = sht_forward(f, g, 7)
    assert np.allclose(sht_forward(f, g, 3), full[:16], atol=1e-14)


def test_transform_rejects_excess_degree():
    g = build_grid(8)
    with pytest.raises(ValueError):
        Transform(g, 4)
    with pytest.raises(ValueError):
        sht_inverse(np.zeros(25), g)
    with pytest.raises(ValueError):
        sht_forward(np.zeros(10), g, 2)


def test_canonical_index():
    l, m = degree_order(3)
    assert np.array_equal(coeff_index(l, m), np.arange(16))
    assert coeff_index(2, -2) == 4 and coeff_index(2, 2) == 8


@pytest.mark.parametrize("L,count", [(1, 4), (2, 11)])
def test_sparsity_examples(L, count):
    assert sparsity_count(L) == count
    assert build_error_operator(build_grid(2 * L + 2), L).nnz == count


def test_error_operator_l1_distinct_values():
    E = build_error_operator(build_grid(8), 1)
    vals = np.unique(np.round(np.concatenate([b.ravel() for b in E.blocks]), 14))
    assert vals.size == 3


def test_error_operator_matches_dense_oracle():
    g = build_grid(8)
    Psi = psi_lpmv(g, 3)
    w = g.point_weights
    D = Psi.T @ (w[:, None] ** 2 * Psi)
    E = build_error_operator(g, 3)
    S = E.to_dense()
    assert np.abs(S - D).max() < 1e-10
    mask = S == 0
    assert np.abs(D[mask]).max() < 1e-12
    v = np.random.default_rng(5).standard_normal(16)
    assert np.abs(E.solve(v) - np.linalg.solve(D, v)).max() < 1e-8
    assert np.abs(E.apply(v) - D @ v).max() < 1e-12


def test_block_layout_partitions_coordinates():
    for L in range(0, 8):
        keys, index = block_layout(L)
        allidx = np.sort(np.concatenate(index))
        assert np.array_equal(allidx, np.arange((L + 1) ** 2))
        assert len(keys) == len(set(keys))


def test_block_operations_against_dense():
    E = build_error_operator(build_grid(12), 5)
    D = E.to_dense()
    d = np.linspace(0.5, 2.0, E.n)
    P = E.inverse().add_diagonal(d)
    Pd = np.linalg.inv(D) + np.diag(d)
    assert np.abs(P.to_dense() - Pd).max() < 1e-8 * np.abs(Pd).max()
    C = np.linalg.cholesky(Pd)
    z = np.random.default_rng(6).standard_normal(E.n)
    ref = np.linalg.solve(C.T, z)
    assert np.abs(P.solve_lower_transpose(z) - ref).max() < 1e-8
    assert np.abs(P.inverse_factor().to_dense() @ C - np.eye(E.n)).max() < 1e-9
    assert np.abs(E.scaled(2.0).to_dense() - 2 * D).max() == 0
    assert np.abs(E.matmul_diagonal(d).to_dense() - D * d[None, :]).max() < 1e-15


def test_singular_block_raises():
    B = BlockDiagonal(2, [np.array([0]), np.array([1])], [np.array([[1.0]]), np.array([[-1.0]])])
    with pytest.raises(SingularOperatorError):
        B.cholesky()


def test_error_operator_vector_length_check():
    E = build_error_operator(build_grid(8), 2)
    with pytest.raises(ValueError):
        E.solve(np.zeros(5))
