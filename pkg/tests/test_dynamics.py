import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sphcp.dynamics import (DynamicsParams, DynamicsState, ar1_coeff, channel_vectors, cross_cov, csep,
                            innovation_var, ou_stationary_var, sample_prior_path, stationary_var, update_U)
from sphcp.harness import dense_U_sweep, dense_psi
from sphcp.rng import Streams
from sphcp.spectral_prior import MaternSpec, covariance_series, spectral_density
from sphcp.spharm import build_error_operator, build_grid, coeff_index, sht_forward, sht_inverse

SPEC = MaternSpec(1.0, 5.0, 1.0)


def test_params_validation():
    with pytest.raises(ValueError):
        DynamicsParams(xi_r=0.0)
    with pytest.raises(ValueError):
        DynamicsParams(xi_d=-1.0)
    with pytest.raises(ValueError):
        DynamicsParams(xi_d=0.1, mode="separable")
    with pytest.raises(ValueError):
        DynamicsParams.separable(1.0, 1.0, SPEC)
    p = DynamicsParams.separable(0.3, 2.0, SPEC)
    assert p.xi == pytest.approx(0.3)
    assert p.with_xi(0.6).xi == pytest.approx(0.6)
    assert p.with_sigma2(5.0).sigma2 == 5.0


@settings(max_examples=20, deadline=None)
@given(xi_r=st.floats(0.01, 5.0), xi_d=st.floats(0.0, 3.0), sigma2=st.floats(0.1, 10.0),
       kappa=st.floats(0.5, 20.0), nu=st.floats(0.6, 3.0), l=st.integers(0, 60))
def test_stationary_variance_identity(xi_r, xi_d, sigma2, kappa, nu, l):
    p = DynamicsParams(xi_r=xi_r, xi_d=xi_d, sigma2=sigma2, matern=MaternSpec(1.0, kappa, nu))
    lhs = innovation_var(p, l) / (1 - ar1_coeff(p, l) ** 2)
    rhs = sigma2 * (kappa**2 + l * (l + 1)) ** -(nu + 1) / (2 * (xi_r + xi_d * l * (l + 1)))
    assert lhs == pytest.approx(rhs, rel=1e-10)
    assert stationary_var(p, l) == pytest.approx(ou_stationary_var(p, l), rel=1e-10)


def test_separable_channel_vectors():
    p = DynamicsParams.separable(0.4, 2.0, SPEC)
    xi, eta = channel_vectors(p, 3)
    assert np.allclose(xi, 0.4)
    l = np.repeat(np.arange(4), 2 * np.arange(4) + 1)
    assert np.allclose(eta, 2.0 * spectral_density(SPEC, l))


def test_prior_path_autocorrelation_and_variance():
    p = DynamicsParams(xi_r=0.3, xi_d=0.05, sigma2=1.0, matern=SPEC)
    n = 50_000
    U = sample_prior_path(p, 2, n, rng=3).Uhat
    for l, m in ((1, 0), (2, -1)):
        x = U[:, coeff_index(l, m)]
        rho = float(ar1_coeff(p, l))
        r1 = np.corrcoef(x[:-1], x[1:])[0, 1]
        assert abs(r1 - rho) < 3 * math.sqrt((1 - rho**2) / n)
    x = U[:, coeff_index(1, 0)]
    rho = float(ar1_coeff(p, 1))
    v = float(stationary_var(p, 1))
    se = v * math.sqrt(2 * (1 + rho**2) / ((1 - rho**2) * n))
    assert abs(x.var() - v) < 3 * se


def _setup(K=8, L=3, M=3, seed=0):
    g = build_grid(K)
    E = build_error_operator(g, L)
    rng = np.random.default_rng(seed)
    Y = rng.standard_normal((M, g.N))
    mu = np.full((M, g.N), 0.2)
    return g, E, Y, mu


def test_update_U_matches_dense_sweep():
    g, E, Y, mu = _setup()
    p = DynamicsParams.separable(0.6, 0.4, SPEC)
    state = DynamicsState(np.random.default_rng(1).standard_normal((4, 16)), p)
    U0 = state.Uhat.copy()
    streams = Streams(5)
    update_U(state, Y, mu, 0.5, E, g, streams, 0)
    xi, eta = channel_vectors(p, 3)
    z = streams.normal(0, "U", (4, (g.lmax + 1) ** 2))[:, :16]
    ref = dense_U_sweep(dense_psi(g, 3), g.point_weights, U0, Y, mu, 0.5, xi, eta, z)
    assert np.abs(state.Uhat - ref).max() < 1e-8


def test_update_U_prior_bridge_when_data_vanish():
    g, E, Y, mu = _setup(M=2)
    p = DynamicsParams.separable(0.7, 1.0, SPEC)
    state = DynamicsState(np.random.default_rng(2).standard_normal((3, 16)), p)
    U2 = state.Uhat[2].copy()
    streams = Streams(6)
    update_U(state, Y, mu, 1e10, E, g, streams, 0)
    xi, eta = channel_vectors(p, 3)
    z = streams.normal(0, "U", (3, (g.lmax + 1) ** 2))[:, :16]
    bridge = xi * (state.Uhat[0] + U2) / (1 + xi**2) + np.sqrt(eta / (1 + xi**2)) * z[1]
    assert np.abs(state.Uhat[1] - bridge).max() < 1e-4


def test_update_U_independent_conjugate_limit():
    # xi underflows to 0: one time step reduces to a single conjugate Gaussian update
    g, E, Y, mu = _setup(M=1)
    p = DynamicsParams(xi_r=800.0, sigma2=2.0, matern=SPEC, mode="separable")
    assert ar1_coeff(p, 0) == 0.0
    state = DynamicsState(np.zeros((2, 16)), p)
    streams = Streams(7)
    update_U(state, Y, mu, 0.3, E, g, streams, 0)
    _, eta = channel_vectors(p, 3)
    Ed = E.to_dense()
    c = sht_forward(Y[0] - mu[0], g, 3)
    P = np.linalg.inv(Ed) / 0.3 + np.diag(1 / eta)
    z = streams.normal(0, "U", (2, (g.lmax + 1) ** 2))[1, :16]
    ref = np.linalg.solve(P, np.linalg.solve(Ed, c) / 0.3) + np.linalg.solve(np.linalg.cholesky(P).T, z)
    assert np.abs(state.Uhat[1] - ref).max() < 1e-10


def test_update_U_degree_coupling_prefix():
    # chains at different L consume the same normals, so low-degree draws stay close
    g = build_grid(12)
    rng = np.random.default_rng(3)
    Y = rng.standard_normal((4, g.N))
    mu = np.zeros_like(Y)
    p = DynamicsParams.separable(0.5, 0.2, MaternSpec(1.0, 20.0, 1.0))
    out = []
    for L in (3, 5):
        st_ = DynamicsState(np.zeros((5, (L + 1) ** 2)), p)
        update_U(st_, Y, mu, 0.5, build_error_operator(g, L), g, Streams(1), 0)
        out.append(st_.Uhat)
    assert np.corrcoef(out[0][:, 0], out[1][:, 0])[0, 1] > 0.9


def test_update_U_shape_checks():
    g, E, Y, mu = _setup()
    p = DynamicsParams.separable(0.6, 0.4, SPEC)
    with pytest.raises(ValueError):
        update_U(DynamicsState(np.zeros((3, 16)), p), Y, mu, 0.5, E, g, Streams(0), 0)
    with pytest.raises(ValueError):
        update_U(DynamicsState(np.zeros((4, 9)), p), Y, mu, 0.5, E, g, Streams(0), 0)


def test_state_fields_are_inverse_transforms():
    g = build_grid(8)
    U = np.random.default_rng(4).standard_normal((3, 16))
    st_ = DynamicsState(U, DynamicsParams.separable(0.5, 1.0, SPEC))
    assert st_.L == 3 and st_.M == 2
    assert np.allclose(st_.fields(g), sht_inverse(U[1:], g))


def test_cross_cov_separable_factorization():
    p = DynamicsParams(xi_r=0.5, xi_d=0.0, sigma2=2.0, matern=SPEC)
    u = np.cos(np.linspace(0, np.pi, 7))
    h = np.array([0.0, 0.5, 3.0])
    C = cross_cov(p, u, h, 30)
    spatial = covariance_series(SPEC, u, 30) * 2.0 / (2 * 0.5)
    assert np.allclose(C[:, 0], spatial, atol=1e-14)
    assert np.allclose(C, np.outer(spatial, np.exp(-0.5 * h)), atol=1e-14)
    with pytest.raises(ValueError):
        cross_cov(p, u, np.array([-1.0]), 5)


def test_csep_shape():
    u = np.linspace(0, np.pi, 61)
    h = np.linspace(0, 10, 41)
    vals = [csep(DynamicsParams(xi_r=0.5, xi_d=d, sigma2=1.0, matern=SPEC), u, h, 60)
            for d in (0.0, 0.5, 1.0, 100.0, 1e6)]
    assert vals[0] < 1e-12
    assert vals[1] > 0 and vals[3] < max(vals[1], vals[2])
    assert vals[4] < 1e-3
    with pytest.raises(ValueError):
        csep(DynamicsParams(), np.array([]), h, 5)
