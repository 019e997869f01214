"""Simulation data, evaluation metrics, the exponential-decay fit and dense brute-force oracles."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Literal

import numpy as np
from scipy import linalg, special

from .dynamics import DynamicsParams, sample_prior_path
from .errors import ConfigError
from .inference import ModelConfig
from .probit import init_changepoint_state, log_prior_probs, sample_categorical, update_gamma, update_Z
from .means import ConstantMeans, gaussian_loglik_by_tau
from .rng import Streams
from .spectral_prior import MaternSpec, covariance_series, normalized_spec, sample_grf, variance_sum
from .spharm import DHGrid, build_grid, degree_order, legendre_table

TAU_MIN, TAU_MAX = 6, 55


@dataclass(frozen=True)
class SimConfig:
    K: int = 20
    M: int = 60
    generator: Literal["minmax", "cdf"] = "minmax"
    kappa_tau: float = 3.0
    nu_tau: float = 1.0
    delta: float = 1.0
    mu1: float = 0.0
    xi: float = 0.5
    sigma2_U: float = 0.1
    kappa_U: float = 20.0
    nu_U: float = 1.0
    sigma2_eps: float = 0.5
    # U is generated on a grid this many times finer and subsampled, so it carries
    # power above the analysis grid's maximum degree
    U_oversample: int = 1
    replicates: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.generator not in ("minmax", "cdf"):
            raise ConfigError(f"unknown generator {self.generator!r}")
        if self.delta < 0 or self.sigma2_U < 0 or self.sigma2_eps < 0:
            raise ConfigError("delta and variances must be >= 0")
        if self.M <= TAU_MAX:
            raise ConfigError(f"M must exceed {TAU_MAX} so the changepoint support fits the window")
        if not 0 < self.xi < 1:
            raise ConfigError("xi must lie in (0, 1)")
        if self.K < 4 or self.K % 2 or self.replicates < 1 or self.U_oversample < 1:
            raise ConfigError("K must be even and >= 4, replicates and U_oversample >= 1")

    def fit_config(self, **overrides) -> ModelConfig:
        """Model configuration whose grid, window and error-process shape match this design."""
        kw = dict(K=self.K, M=self.M, L=self.K // 2 - 1, kappa_U=self.kappa_U, nu_U=self.nu_U)
        kw.update(overrides)
        return ModelConfig(**kw)


@dataclass
class Dataset:
    Y: np.ndarray  # (M, N)
    tau: np.ndarray  # (N,)
    U: np.ndarray  # (M, N)
    tau_tilde: np.ndarray


def gen_changepoints_minmax(tau_tilde) -> np.ndarray:
    x = np.asarray(tau_tilde, dtype=float)
    lo, hi = x.min(), x.max()
    if not hi > lo:
        raise ValueError("min-max scaling needs a non-constant field")
    k = np.floor((x - lo) / (hi - lo) * 49 + 6)
    return np.clip(k, TAU_MIN, TAU_MAX).astype(np.int64)


def gen_changepoints_cdf(tau_tilde, marginal_sd: float = 1.0) -> np.ndarray:
    if not marginal_sd > 0:
        raise ValueError("marginal_sd must be > 0")
    x = np.asarray(tau_tilde, dtype=float) / marginal_sd
    k = np.floor(special.ndtr(x) * 50 + 6)
    return np.clip(k, TAU_MIN, TAU_MAX).astype(np.int64)


def gen_dataset(sim: SimConfig, replicate: int = 0) -> Dataset:
    """Y = mu1 + delta 1{t > tau} + U + eps with a GRF-driven changepoint field."""
    grid = build_grid(sim.K)
    L = grid.lmax
    rng = np.random.default_rng(Streams(sim.seed).spawn(replicate).seed)
    spec = MaternSpec(1.0, sim.kappa_tau, sim.nu_tau)
    _, tt = sample_grf(spec, L, grid, rng)
    if sim.generator == "minmax":
        tau = gen_changepoints_minmax(tt)
    else:
        sd = np.sqrt(variance_sum(sim.kappa_tau, sim.nu_tau, L) / (4 * np.pi))
        tau = gen_changepoints_cdf(tt, sd)
    params = DynamicsParams.separable(sim.xi, sim.sigma2_U, normalized_spec(sim.kappa_U, sim.nu_U))
    o = sim.U_oversample
    fine = grid if o == 1 else build_grid(sim.K * o)
    U = sample_prior_path(params, fine.lmax, sim.M, rng).fields(fine)
    if o > 1:
        U = U.reshape(sim.M, fine.K, 2 * fine.K)[:, ::o, ::o].reshape(sim.M, grid.N)
    t = np.arange(1, sim.M + 1)[:, None]
    eps = np.sqrt(sim.sigma2_eps) * rng.standard_normal(U.shape)
    Y = sim.mu1 + sim.delta * (t > tau[None, :]) + U + eps
    return Dataset(Y=Y, tau=tau, U=U, tau_tilde=tt)


def g_rmse(truth, estimate, grid: DHGrid) -> float:
    truth = np.asarray(truth, dtype=float)
    estimate = np.asarray(estimate, dtype=float)
    if truth.shape != (grid.N,) or estimate.shape != (grid.N,):
        raise ValueError("fields must match the grid")
    return float(np.sqrt(np.sum(grid.point_weights * (truth - estimate) ** 2) / (4 * np.pi)))


@dataclass
class DecayFit:
    a: float
    b: float
    c: float
    residual: float


def _profile(b: float, L: np.ndarray, y: np.ndarray):
    if b == 0.0:
        c = float(np.mean(y))
        return 0.0, c, float(np.linalg.norm(y - c))
    X = np.column_stack([np.exp(-b * L), np.ones_like(L)])
    (a, c), *_ = np.linalg.lstsq(X, y, rcond=None)
    return float(a), float(c), float(np.linalg.norm(X @ [a, c] - y))


def fit_exp_decay(L, y, b_max: float | None = None, tol: float = 1e-13) -> DecayFit:
    """Least squares ``y = a exp(-b L) + c``: golden section over b >= 0, (a, c) profiled."""
    L = np.asarray(L, dtype=float)
    y = np.asarray(y, dtype=float)
    if L.size < 3 or np.unique(L).size < 3:
        raise ValueError("need at least three distinct L values")
    if np.ptp(y) == 0:
        return DecayFit(0.0, 0.0, float(y[0]), 0.0)
    b_max = 30.0 / max(L.min(), 1.0) if b_max is None else b_max
    bs = np.linspace(0.0, b_max, 601)
    res = np.array([_profile(b, L, y)[2] for b in bs])
    i = int(np.argmin(res))
    lo, hi = bs[max(i - 1, 0)], bs[min(i + 1, bs.size - 1)]
    phi = (np.sqrt(5) - 1) / 2
    x1, x2 = hi - phi * (hi - lo), lo + phi * (hi - lo)
    f1, f2 = _profile(x1, L, y)[2], _profile(x2, L, y)[2]
    while hi - lo > tol * max(1.0, hi):
        if f1 < f2:
            hi, x2, f2 = x2, x1, f1
            x1 = hi - phi * (hi - lo)
            f1 = _profile(x1, L, y)[2]
        else:
            lo, x1, f1 = x1, x2, f2
            x2 = lo + phi * (hi - lo)
            f2 = _profile(x2, L, y)[2]
    cands = [(res[i], bs[i]), (f1, x1), (f2, x2)]
    _, b = min(cands)
    a, c, r = _profile(float(b), L, y)
    return DecayFit(a, float(b), c, r)


# ---------------------------------------------------------------- dense oracles

def _guard(grid: DHGrid, max_points: int):
    if grid.N > max_points:
        raise ValueError(f"dense oracle limited to {max_points} points, grid has {grid.N}")


def dense_psi(grid: DHGrid, L: int, max_points: int = 512) -> np.ndarray:
    """Explicit ``Psi`` (N x (L+1)^2), evaluated pointwise from the harmonic definitions."""
    _guard(grid, max_points)
    P = legendre_table(L, np.cos(grid.theta))  # (l, m, i)
    l, m = degree_order(L)
    th = np.repeat(np.arange(grid.K), 2 * grid.K)
    ph = np.tile(grid.phi, grid.K)
    am = np.abs(m)
    trig = np.where(m[None, :] >= 0, np.cos(np.outer(ph, am)), np.sin(np.outer(ph, am)))
    return P[l[None, :], am[None, :], th[:, None]] * trig


def cos_separation(grid: DHGrid) -> np.ndarray:
    X = grid.unit_vectors()
    return np.clip(X @ X.T, -1.0, 1.0)


def dense_cov(spec: MaternSpec, grid: DHGrid, L: int, max_points: int = 512) -> np.ndarray:
    """Explicit N x N covariance from the addition-theorem series truncated at ``L``."""
    _guard(grid, max_points)
    cu = cos_separation(grid)
    key, inv = np.unique(np.round(cu, 14), return_inverse=True)
    return covariance_series(spec, key, L)[inv].reshape(cu.shape)


def dense_alpha_draw(Psi, w, Z, mZ, D_alpha, z) -> np.ndarray:
    """Conjugate alpha draw with explicit matrices; noise ``C^{-T} z`` from the canonical-order Cholesky."""
    E = Psi.T @ (w[:, None] ** 2 * Psi)
    Einv = np.linalg.inv(E)
    P = Einv + np.diag(1.0 / D_alpha)
    C = np.linalg.cholesky(P)
    lin = Einv @ (Psi.T @ (w * (Z - mZ)))
    return np.linalg.solve(P, lin) + linalg.solve_triangular(C, z, lower=True, trans="T")


def dense_U_sweep(Psi, w, Uhat, Y, mean_fields, sigma2_eps, xi, eta, z) -> np.ndarray:
    """Forward t = 0..M sweep of the spectral error-process conditionals, written densely."""
    U = Uhat.copy()
    M = U.shape[0] - 1
    E = Psi.T @ (w[:, None] ** 2 * Psi)
    Einv = np.linalg.inv(E)
    U[0] = xi * U[1] + np.sqrt(eta) * z[0]
    for t in range(1, M + 1):
        last = t == M
        P = Einv / sigma2_eps + np.diag((1.0 if last else 1.0 + xi**2) / eta)
        nb = U[t - 1] + (0.0 if last else U[t + 1])
        a = Einv @ (Psi.T @ (w * (Y[t - 1] - mean_fields[t - 1]))) / sigma2_eps + xi / eta * nb
        C = np.linalg.cholesky(P)
        U[t] = np.linalg.solve(P, a) + linalg.solve_triangular(C, z[t], lower=True, trans="T")
    return U


class DenseReference:
    """MPM pipeline with explicit N x N spatial covariances, used as a timing baseline.

    Error-process draws use the pathwise-conditioning identity
    ``x = f + A (A + s I)^{-1} (r - f - e)`` with ``f ~ N(m0, A)`` and ``e ~ N(0, s I)``.
    """

    def __init__(self, grid: DHGrid, Y: np.ndarray, spec_U: MaternSpec, spec_Z: MaternSpec, L_cov: int,
                 max_points: int = 3200, seed: int = 0, mZ: float = 3.0):
        self.grid, self.Y = grid, Y
        self.M, self.N = Y.shape
        self.Sigma_U = dense_cov(spec_U, grid, L_cov, max_points)
        self.Sigma_Z = dense_cov(spec_Z, grid, L_cov, max_points)
        jitter = 1e-8 * np.eye(self.N)
        self.C_U = np.linalg.cholesky(self.Sigma_U + jitter)
        self.C_ZI = np.linalg.cholesky(self.Sigma_Z + np.eye(self.N))
        self.C_Z = np.linalg.cholesky(self.Sigma_Z + jitter)
        self.streams = Streams(seed)
        self.cp = init_changepoint_state(self.N, self.M, 0, mZ)
        self.U = np.zeros((self.M + 1, self.N))
        self.means = ConstantMeans(float(Y.mean()), float(Y.mean()))
        self.sigma2_eps, self.sigma2_U, self.xi = float(Y.var()), float(Y.var()), 0.5
        self.iteration = 0

    def _prior_and_residual(self, m0, scale, r, g):
        f = m0 + np.sqrt(scale) * (self.C_U @ g.standard_normal(self.N))
        e = np.sqrt(self.sigma2_eps) * g.standard_normal(self.N)
        return f, r - f - e

    def step(self) -> None:
        it, g = self.iteration, self.streams.generator(self.iteration, "dense")
        xi, s2, sU = self.xi, self.sigma2_eps, self.sigma2_U
        mu = self.means.fields(self.cp.tau, self.M)
        R = self.Y - mu
        eye = np.eye(self.N)
        C_int = linalg.cho_factor(sU / (1 + xi**2) * self.Sigma_U + s2 * eye, lower=True)
        C_end = linalg.cho_factor(sU * self.Sigma_U + s2 * eye, lower=True)
        self.U[0] = xi * self.U[1] + np.sqrt(sU) * (self.C_U @ g.standard_normal(self.N))
        for t in range(1, self.M + 1):
            last = t == self.M
            if last:
                m0, scale, C = xi * self.U[t - 1], sU, C_end
            else:
                m0, scale, C = xi * (self.U[t - 1] + self.U[t + 1]) / (1 + xi**2), sU / (1 + xi**2), C_int
            f, resid = self._prior_and_residual(m0, scale, R[t - 1], g)
            self.U[t] = f + scale * (self.Sigma_U @ linalg.cho_solve(C, resid))
        Ufields = self.U[1:]
        lp = log_prior_probs(self.cp.muZ_field, self.cp.gammas)
        ll = gaussian_loglik_by_tau(self.means, self.Y - Ufields, s2)
        self.cp.tau = sample_categorical(ll + lp, self.streams.uniform(it, "tau", self.N))
        update_Z(self.cp, self.streams, it)
        update_gamma(self.cp, self.streams, it)
        # mu_Z | Z ~ N(m + Sigma (Sigma + I)^{-1}(Z - m), Sigma - Sigma (Sigma + I)^{-1} Sigma)
        f = self.C_Z @ g.standard_normal(self.N)
        e = g.standard_normal(self.N)
        r = self.cp.Z - self.cp.mZ
        self.cp.muZ_field = self.cp.mZ + f + self.Sigma_Z @ linalg.cho_solve((self.C_ZI, True), r - f - e)
        resid = self.Y - self.means.fields(self.cp.tau, self.M) - Ufields
        self.sigma2_eps = float((0.01 + 0.5 * np.sum(resid**2)) / g.standard_gamma(0.01 + resid.size / 2))
        self.iteration += 1


def time_dense_reference(ref: DenseReference, iterations: int = 2) -> float:
    t0 = time.perf_counter()
    for _ in range(iterations):
        ref.step()
    return (time.perf_counter() - t0) / iterations
