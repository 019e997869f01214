"""Model assembly, the Gibbs driver, hyperparameter updates, coupled chains and WAIC."""

from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Literal

import numpy as np
from scipy import special

from .dynamics import DynamicsParams, DynamicsState, update_U
from .errors import ConfigError, NumericalError
from .io import write_fields, write_sidecar
from .means import ConstantMeans, LinearMeans
from .probit import (ChangepointState, alpha_precision, init_changepoint_state, update_gamma, update_muZ,
                     update_tau, update_Z)
from .rng import Streams
from .spectral_prior import coefficient_variances, normalized_spec
from .spharm import DHGrid, build_error_operator, build_grid


@dataclass(frozen=True)
class ModelConfig:
    K: int = 20
    L: int = 9
    M: int = 60
    mean_model: Literal["constant", "linear"] = "constant"
    prior: Literal["mpm", "ind"] = "mpm"
    dynamics: Literal["separable", "off"] = "separable"
    # identifiability
    mZ: float = 3.0
    gamma_cap: float = 9.0
    # latent probit mean field: pointwise variance and Matern shape
    muZ_var: float = 1.0
    kappa_Z: float = 5.0
    nu_Z: float = 1.0
    # error process shape; sigma2_U is its pointwise innovation variance
    kappa_U: float = 20.0
    nu_U: float = 1.0
    # inverse-gamma priors
    a_eps: float = 0.01
    b_eps: float = 0.01
    a_U: float = 0.01
    b_U: float = 0.01
    # Gaussian priors on mean coefficients: (mu1, mu2) or (beta0, beta1, beta2)
    beta0_mean: float = 0.0
    beta0_var: float = 100.0
    beta1_mean: float = 0.0
    beta1_var: float = 100.0
    beta2_mean: float = 0.0
    beta2_var: float = 1.0
    # fixed values; a positive value pins the parameter
    fix_sigma_eps: float = 0.0
    xi_init: float = 0.5
    sigmaU_init_frac: float = 0.01
    xi_target_accept: float = 0.35
    # MCMC
    iterations: int = 2000
    burn_in: int = 1000
    thin: int = 1
    seed: int = 0
    threads: int = 1
    coupling: bool = True
    compute_waic: bool = False

    def __post_init__(self):
        if self.K < 4 or self.K % 2:
            raise ConfigError(f"K must be even and >= 4, got {self.K}")
        if not 0 <= self.L <= self.K // 2 - 1:
            raise ConfigError(f"L={self.L} must lie in 0..{self.K // 2 - 1}")
        if self.M < 2:
            raise ConfigError("M must be >= 2")
        if not 0 <= self.burn_in < self.iterations:
            raise ConfigError("need 0 <= burn_in < iterations")
        if self.thin < 1:
            raise ConfigError("thin must be >= 1")
        for name in ("muZ_var", "kappa_Z", "nu_Z", "kappa_U", "nu_U", "a_eps", "b_eps", "a_U", "b_U",
                     "beta0_var", "beta1_var", "beta2_var", "sigmaU_init_frac"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be > 0")
        if not 0 < self.xi_init < 1:
            raise ConfigError("xi_init must lie in (0, 1)")
        if self.fix_sigma_eps < 0:
            raise ConfigError("fix_sigma_eps must be >= 0")
        if self.mean_model not in ("constant", "linear") or self.prior not in ("mpm", "ind") \
                or self.dynamics not in ("separable", "off"):
            raise ConfigError("invalid categorical option")

    def replace(self, **kw) -> "ModelConfig":
        return dataclasses.replace(self, **kw)


class Model:
    """Data plus the per-chain precomputations (grid, error operator, prior spectra)."""

    def __init__(self, config: ModelConfig, Y: np.ndarray):
        Y = np.asarray(Y, dtype=float)
        if Y.shape != (config.M, 2 * config.K**2):
            raise ValueError(f"data shape {Y.shape} does not match (M, 2K^2) = {(config.M, 2 * config.K**2)}")
        if not np.all(np.isfinite(Y)):
            raise NumericalError("data contain non-finite values")
        self.config = config
        self.Y = Y
        self.grid: DHGrid = build_grid(config.K)
        self.E = build_error_operator(self.grid, config.L)
        self.D_alpha = coefficient_variances(normalized_spec(config.kappa_Z, config.nu_Z, config.muZ_var), config.L)
        self.P_alpha = alpha_precision(self.E, self.D_alpha)
        self.U_spec = normalized_spec(config.kappa_U, config.nu_U, 1.0)
        self.S_U = coefficient_variances(self.U_spec, config.L)
        self.n_draw = (self.grid.lmax + 1) ** 2 if config.coupling else (config.L + 1) ** 2
        self.streams = Streams(config.seed)

    @property
    def N(self) -> int:
        return self.Y.shape[1]

    def dynamics_params(self, xi: float, sigma2_U: float) -> DynamicsParams:
        return DynamicsParams.separable(xi, sigma2_U, self.U_spec)


@dataclass
class ChainState:
    cp: ChangepointState
    dyn: DynamicsState
    means: ConstantMeans | LinearMeans
    sigma2_eps: float
    xi: float
    sigma2_U: float
    U_fields: np.ndarray
    iteration: int = 0
    log_step: float = np.log(0.5)
    xi_accepts: int = 0

    def copy(self) -> "ChainState":
        m = self.means
        means = ConstantMeans(m.mu1, m.mu2) if isinstance(m, ConstantMeans) else \
            LinearMeans(m.beta0, m.beta1.copy(), m.beta2.copy())
        return ChainState(self.cp.copy(), DynamicsState(self.dyn.Uhat.copy(), self.dyn.params), means,
                          self.sigma2_eps, self.xi, self.sigma2_U, self.U_fields.copy(), self.iteration,
                          self.log_step, self.xi_accepts)


def init_state(model: Model) -> ChainState:
    """tau = M, Z above the top threshold, alpha = 0, Uhat = 0, xi = xi_init.

    sigma2_eps starts at the data variance and sigma2_U at a small fraction of it, so the
    error process cannot absorb the mean shift before tau has moved.
    """
    c = model.config
    N = model.N
    ybar, yvar = float(model.Y.mean()), float(model.Y.var())
    if yvar <= 0:
        yvar = 1.0
    cp = init_changepoint_state(N, c.M, c.L, c.mZ, c.gamma_cap)
    if c.mean_model == "constant":
        means = ConstantMeans(ybar, ybar)
    else:
        means = LinearMeans(ybar, np.full(N, ybar), np.zeros(N))
    s2 = c.fix_sigma_eps if c.fix_sigma_eps > 0 else yvar
    sU = c.sigmaU_init_frac * yvar
    dyn = DynamicsState(np.zeros((c.M + 1, (c.L + 1) ** 2)), model.dynamics_params(c.xi_init, sU))
    return ChainState(cp, dyn, means, s2, c.xi_init, sU, np.zeros((c.M, N)))


# ---------------------------------------------------------------- conditionals

def _normal(model: Model, it: int, tag: str, size):
    return model.streams.normal(it, tag, size)


def update_means(state: ChainState, model: Model) -> None:
    """Conjugate Gaussian draws of the mean coefficients given tau, U and sigma2_eps."""
    c, it = model.config, state.iteration
    R = model.Y - state.U_fields
    M, N = R.shape
    t = np.arange(1, M + 1)[:, None]
    pre = t <= state.cp.tau[None, :]
    s2 = state.sigma2_eps
    z = _normal(model, it, "means", 2 + 2 * N)

    def scalar(sum_r, count, m0, v0, zz):
        prec = count / s2 + 1.0 / v0
        return (sum_r / s2 + m0 / v0) / prec + zz / np.sqrt(prec)

    mu1 = scalar(R[pre].sum(), pre.sum(), c.beta0_mean, c.beta0_var, z[0])
    if isinstance(state.means, ConstantMeans):
        mu2 = scalar(R[~pre].sum(), (~pre).sum(), c.beta1_mean, c.beta1_var, z[1])
        state.means = ConstantMeans(float(mu1), float(mu2))
        return
    post = ~pre
    j = np.where(post, t - state.cp.tau[None, :], 0).astype(float)
    n = post.sum(axis=0).astype(float)
    sj, sjj = j.sum(axis=0), (j * j).sum(axis=0)
    sr = np.where(post, R, 0.0).sum(axis=0)
    sjr = (j * np.where(post, R, 0.0)).sum(axis=0)
    a11 = n / s2 + 1.0 / c.beta1_var
    a12 = sj / s2
    a22 = sjj / s2 + 1.0 / c.beta2_var
    b1 = sr / s2 + c.beta1_mean / c.beta1_var
    b2 = sjr / s2 + c.beta2_mean / c.beta2_var
    det = a11 * a22 - a12 * a12
    m1 = (a22 * b1 - a12 * b2) / det
    m2 = (a11 * b2 - a12 * b1) / det
    # A = C C^T with C lower; x = C^{-T} z.
    c11 = np.sqrt(a11)
    c21 = a12 / c11
    c22 = np.sqrt(a22 - c21 * c21)
    z1, z2 = z[2:2 + N], z[2 + N:]
    x2 = z2 / c22
    x1 = (z1 - c21 * x2) / c11
    state.means = LinearMeans(float(mu1), m1 + x1, m2 + x2)


def residual_ss(state: ChainState, model: Model) -> float:
    mu = state.means.fields(state.cp.tau, model.config.M)
    return float(np.sum((model.Y - mu - state.U_fields) ** 2))


def update_sigma_eps(state: ChainState, model: Model) -> float:
    c = model.config
    if c.fix_sigma_eps > 0:
        state.sigma2_eps = c.fix_sigma_eps
        return state.sigma2_eps
    shape = c.a_eps + model.Y.size / 2.0
    rate = c.b_eps + residual_ss(state, model) / 2.0
    g = model.streams.generator(state.iteration, "sigma_eps").standard_gamma(shape)
    state.sigma2_eps = float(rate / g)
    return state.sigma2_eps


def innovation_stats(Uhat: np.ndarray, S: np.ndarray) -> tuple[float, float, float, float]:
    """Scaled sums ``(A, B, C, D)`` with A = sum U_0^2/S, B = sum U_{t-1}U_t/S, C = sum U_{t-1}^2/S, D = sum U_t^2/S."""
    W = Uhat / np.sqrt(S)
    A = float(np.sum(W[0] ** 2))
    B = float(np.sum(W[:-1] * W[1:]))
    C = float(np.sum(W[:-1] ** 2))
    D = float(np.sum(W[1:] ** 2))
    return A, B, C, D


def update_sigmaU(state: ChainState, model: Model) -> float:
    """Inverse-gamma draw from the stationary initial state plus all AR(1) innovations."""
    c = model.config
    A, B, C, D = innovation_stats(state.dyn.Uhat, model.S_U)
    xi = state.xi
    ss = (1 - xi**2) * A + D - 2 * xi * B + xi**2 * C
    shape = c.a_U + state.dyn.Uhat.size / 2.0
    g = model.streams.generator(state.iteration, "sigma_U").standard_gamma(shape)
    state.sigma2_U = float((c.b_U + ss / 2.0) / g)
    return state.sigma2_U


def xi_log_target(xi: float, stats, n: int, sigma2_U: float) -> float:
    A, B, C, D = stats
    return 0.5 * n * np.log1p(-xi * xi) - ((1 - xi * xi) * A + D - 2 * xi * B + xi * xi * C) / (2 * sigma2_U)


def update_xi(state: ChainState, model: Model) -> float:
    """Random-walk Metropolis on logit(xi), step adapted toward the target rate during burn-in."""
    c = model.config
    stats = innovation_stats(state.dyn.Uhat, model.S_U)
    n = state.dyn.Uhat.shape[1]
    g = model.streams.generator(state.iteration, "xi")
    z, u = g.standard_normal(), g.random()
    x0 = special.logit(state.xi)
    x1 = x0 + np.exp(state.log_step) * z
    xi1 = float(special.expit(x1))
    accept = False
    if 0 < xi1 < 1:
        # log-Jacobian of the logit map: log xi + log(1 - xi)
        lp0 = xi_log_target(state.xi, stats, n, state.sigma2_U) + np.log(state.xi) + np.log1p(-state.xi)
        lp1 = xi_log_target(xi1, stats, n, state.sigma2_U) + np.log(xi1) + np.log1p(-xi1)
        accept = np.log(u) < lp1 - lp0
    if accept:
        state.xi = xi1
        state.xi_accepts += 1
    if state.iteration < c.burn_in:
        state.log_step += (float(accept) - c.xi_target_accept) / (state.iteration + 1) ** 0.6
    return state.xi


def gibbs_step(state: ChainState, model: Model) -> ChainState:
    """One sweep: U, tau, Z, gamma, mu_Z, means, sigma2_eps, sigma2_U, xi. Advances the state in place."""
    c, grid, it = model.config, model.grid, state.iteration
    streams = model.streams
    if c.dynamics == "separable":
        state.dyn.params = model.dynamics_params(state.xi, state.sigma2_U)
        mu = state.means.fields(state.cp.tau, c.M)
        update_U(state.dyn, model.Y, mu, state.sigma2_eps, model.E, grid, streams, it, model.n_draw)
        state.U_fields = state.dyn.fields(grid)
    update_tau(model.Y, state.means, state.U_fields, state.sigma2_eps, state.cp, streams, it,
               prior=c.prior, threads=c.threads)
    if c.prior == "mpm":
        update_Z(state.cp, streams, it, threads=c.threads)
        update_gamma(state.cp, streams, it)
        update_muZ(state.cp, model.E, model.P_alpha, grid, streams, it, model.n_draw)
    update_means(state, model)
    update_sigma_eps(state, model)
    if c.dynamics == "separable":
        update_sigmaU(state, model)
        update_xi(state, model)
    state.iteration += 1
    return state


def pointwise_loglik(state: ChainState, model: Model) -> np.ndarray:
    """Per-location Gaussian log-likelihood summed over time."""
    mu = state.means.fields(state.cp.tau, model.config.M)
    r = model.Y - mu - state.U_fields
    s2 = state.sigma2_eps
    return -0.5 * np.sum(r * r, axis=0) / s2 - 0.5 * model.config.M * np.log(2 * np.pi * s2)


# ---------------------------------------------------------------- driver

SCALARS = ("sigma2_eps", "sigma2_U", "xi", "mean0", "mean1")


@dataclass
class Archive:
    M: int
    tau: np.ndarray  # (S, N) uint16
    scalars: dict[str, np.ndarray]
    loglik: np.ndarray | None = None
    muZ_mean: np.ndarray | None = None
    beta_mean: np.ndarray | None = None
    seconds_per_iteration: float = 0.0

    def save(self, out_dir, K: int) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        self.tau.astype("<u2").tofile(out / "tau.u16")
        cols = list(self.scalars)
        np.savetxt(out / "scalars.csv", np.column_stack([self.scalars[k] for k in cols]) if cols else np.zeros((0, 0)),
                   delimiter=",", header=",".join(cols), comments="")
        if self.loglik is not None:
            write_fields(out / "loglik.sfld", self.loglik, K)
        if self.muZ_mean is not None:
            write_fields(out / "muZ_mean.sfld", self.muZ_mean, K)
        write_sidecar(out / "manifest.txt", format="archive1", M=self.M, samples=self.tau.shape[0],
                      N=self.tau.shape[1], K=K, tau="tau.u16 uint16 little-endian sample-major",
                      scalars="scalars.csv", seconds_per_iteration=self.seconds_per_iteration)

    @classmethod
    def load(cls, out_dir) -> "Archive":
        from .io import read_fields, read_kv

        out = Path(out_dir)
        man = read_kv(out / "manifest.txt")
        S, N, M = int(man["samples"]), int(man["N"]), int(man["M"])
        tau = np.fromfile(out / "tau.u16", dtype="<u2").reshape(S, N)
        data = np.genfromtxt(out / "scalars.csv", delimiter=",", names=True)
        scalars = {k: np.atleast_1d(data[k]) for k in data.dtype.names}
        loglik = read_fields(out / "loglik.sfld")[0] if (out / "loglik.sfld").exists() else None
        muZ = read_fields(out / "muZ_mean.sfld")[0] if (out / "muZ_mean.sfld").exists() else None
        return cls(M, tau, scalars, loglik, muZ, None, float(man.get("seconds_per_iteration", 0.0)))


@dataclass
class PosteriorSummary:
    tau_mean: np.ndarray
    tau_mode: np.ndarray
    mode_prob: np.ndarray
    changepoint: np.ndarray
    scalar_means: dict[str, float]
    waic: float | None = None


def summarize(archive: Archive) -> PosteriorSummary:
    S, N = archive.tau.shape
    if S == 0:
        raise ValueError("empty archive")
    M = archive.M
    tau = archive.tau.astype(np.int64)
    counts = np.bincount((tau - 1 + M * np.arange(N)[None, :]).ravel(), minlength=N * M).reshape(N, M)
    mode = np.argmax(counts, axis=1) + 1  # argmax keeps the smallest label on ties
    prob = counts[np.arange(N), mode - 1] / S
    w = waic(archive.loglik) if archive.loglik is not None and archive.loglik.shape[0] >= 2 else None
    return PosteriorSummary(
        tau_mean=tau.mean(axis=0),
        tau_mode=mode,
        mode_prob=prob,
        changepoint=mode != M,
        scalar_means={k: float(np.mean(v)) for k, v in archive.scalars.items()},
        waic=w,
    )


def _scalar_row(state: ChainState) -> dict[str, float]:
    m = state.means
    m0, m1 = (m.mu1, m.mu2) if isinstance(m, ConstantMeans) else (m.beta0, float(np.mean(m.beta1)))
    return {"sigma2_eps": state.sigma2_eps, "sigma2_U": state.sigma2_U, "xi": state.xi, "mean0": m0, "mean1": m1}


def run_chain(config: ModelConfig, Y: np.ndarray, state: ChainState | None = None,
              callback=None) -> tuple[PosteriorSummary, Archive]:
    """Burn-in plus thinned sampling; returns the summary and the sample archive."""
    model = Model(config, Y)
    state = init_state(model) if state is None else state
    keep = [i for i in range(config.burn_in, config.iterations) if (i - config.burn_in) % config.thin == 0]
    S, N = len(keep), model.N
    taus = np.zeros((S, N), dtype=np.uint16)
    scal = {k: np.zeros(S) for k in SCALARS}
    ll = np.zeros((S, N)) if config.compute_waic else None
    muZ_sum = np.zeros(N)
    beta_sum = None
    j = 0
    t0 = time.perf_counter()
    while state.iteration < config.iterations:
        it = state.iteration
        try:
            gibbs_step(state, model)
        except (NumericalError, np.linalg.LinAlgError) as exc:
            raise NumericalError(f"iteration {it}: {exc}") from exc
        if j < S and it == keep[j]:
            taus[j] = state.cp.tau
            for k, v in _scalar_row(state).items():
                scal[k][j] = v
            if ll is not None:
                ll[j] = pointwise_loglik(state, model)
            muZ_sum += state.cp.muZ_field
            if isinstance(state.means, LinearMeans):
                b = np.stack([state.means.beta1, state.means.beta2])
                beta_sum = b if beta_sum is None else beta_sum + b
            j += 1
        if callback is not None:
            callback(state, model)
    elapsed = time.perf_counter() - t0
    archive = Archive(config.M, taus, scal, ll, (muZ_sum / max(S, 1))[None, :],
                      None if beta_sum is None else beta_sum / S,
                      elapsed / max(config.iterations, 1))
    return summarize(archive), archive


def run_coupled(config: ModelConfig, Y: np.ndarray, levels, truth: np.ndarray,
                grid: DHGrid | None = None) -> list[dict]:
    """Chains at several truncation degrees driven by identical streams; IND prior per level.

    Returns one record per level with the g-RMSE of the posterior-mean changepoint.
    """
    from .harness import g_rmse

    grid = build_grid(config.K) if grid is None else grid
    out = []
    for L in levels:
        cfg = config.replace(L=int(L), prior="ind", coupling=True)
        summary, archive = run_chain(cfg, Y)
        out.append({"L": int(L), "g_rmse": g_rmse(truth, summary.tau_mean, grid), "summary": summary,
                    "tau": archive.tau})
    return out


def waic(loglik: np.ndarray) -> float:
    """``-2 (lppd - p_waic)`` from an (S samples, n observations) log-likelihood matrix."""
    loglik = np.asarray(loglik, dtype=float)
    if loglik.ndim != 2 or loglik.shape[0] < 2:
        raise ValueError("waic needs at least two samples")
    S = loglik.shape[0]
    lppd = np.sum(special.logsumexp(loglik, axis=0) - np.log(S))
    p = np.sum(np.var(loglik, axis=0, ddof=1))
    return float(-2.0 * (lppd - p))
