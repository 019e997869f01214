"""Multinomial-probit changepoint prior: full conditionals for tau, Z, gamma and mu_Z.

Thresholds are stored as ``gammas[k-1] = gamma_k`` for k = 1..M-1. With the
conventions ``gamma_0 = -inf`` and ``gamma_M = +inf`` a location has
``tau = k`` exactly when ``gamma_{k-1} < Z <= gamma_k``.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import special

from .errors import NumericalError
from .means import LinearMeans, gaussian_loglik_by_tau
from .rng import Streams
from .spharm import BlockDiagonal, DHGrid, ErrorOperator, sht_forward, sht_inverse

TAIL_SD = 4.0


@dataclass
class ChangepointState:
    tau: np.ndarray
    Z: np.ndarray
    gammas: np.ndarray
    alpha: np.ndarray
    muZ_field: np.ndarray
    mZ: float = 3.0
    gamma_cap: float = 9.0

    @property
    def M(self) -> int:
        return self.gammas.size + 1

    def full_gammas(self) -> np.ndarray:
        return np.concatenate([[-np.inf], self.gammas, [np.inf]])

    def check(self) -> None:
        g = self.full_gammas()
        if self.gammas.size and self.gammas[0] != 0.0:
            raise AssertionError("gamma_1 must be exactly 0")
        if np.any(np.diff(g) <= 0):
            raise AssertionError("thresholds not strictly increasing")
        if not np.all((g[self.tau - 1] < self.Z) & (self.Z <= g[self.tau])):
            raise AssertionError("(tau, Z) inconsistent with thresholds")

    def copy(self) -> "ChangepointState":
        return ChangepointState(self.tau.copy(), self.Z.copy(), self.gammas.copy(), self.alpha.copy(),
                                self.muZ_field.copy(), self.mZ, self.gamma_cap)


def initial_gammas(M: int, mZ: float) -> np.ndarray:
    """Equal-probability thresholds around ``mZ``, shifted and scaled so ``gamma_1 = 0``."""
    if M < 2:
        raise ValueError("M must be >= 2")
    q = special.ndtri(np.arange(1, M) / M)
    if M == 2:
        return np.zeros(1)
    s = -mZ / q[0]
    g = mZ + s * q
    g[0] = 0.0
    return g


def init_changepoint_state(N: int, M: int, L: int, mZ: float = 3.0, gamma_cap: float | None = None) -> ChangepointState:
    """tau = M everywhere, Z one unit above the top threshold, alpha = 0."""
    g = initial_gammas(M, mZ)
    cap = mZ + 6.0 if gamma_cap is None else gamma_cap
    if g[-1] >= cap:
        raise ValueError(f"gamma cap {cap} must exceed the initial top threshold {g[-1]}")
    return ChangepointState(
        tau=np.full(N, M, dtype=np.int64),
        Z=np.full(N, g[-1] + 1.0),
        gammas=g,
        alpha=np.zeros((L + 1) ** 2),
        muZ_field=np.full(N, float(mZ)),
        mZ=float(mZ),
        gamma_cap=float(cap),
    )


def _log_interval_prob(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``log(Phi(b) - Phi(a))`` in log space, working in whichever tail keeps both CDFs away from 1."""
    flip = a > 0
    lo = np.where(flip, -b, a)
    hi = np.where(flip, -a, b)
    lhi = special.log_ndtr(hi)
    with np.errstate(divide="ignore", invalid="ignore"):
        return lhi + np.log1p(-np.exp(special.log_ndtr(lo) - lhi))


def log_prior_probs(muZ: np.ndarray, gammas: np.ndarray) -> np.ndarray:
    """``log pi_k(s) = log(Phi(gamma_k - mu) - Phi(gamma_{k-1} - mu))``; shape (N, M)."""
    g = np.concatenate([[-np.inf], gammas, [np.inf]])
    x = g[None, :] - muZ[:, None]
    tail = special.ndtr(-np.abs(x))  # small tail mass at every edge
    neg = x <= 0
    ta, tb = tail[:, :-1], tail[:, 1:]
    na, nb = neg[:, :-1], neg[:, 1:]
    # both edges below zero: Phi(b) - Phi(a); both above: tail(a) - tail(b); straddling: 1 - both tails
    p = np.where(nb, tb - ta, np.where(na, 1.0 - ta - tb, ta - tb))
    with np.errstate(divide="ignore"):
        out = np.log(p)
    bad = p < 1e-250
    if np.any(bad):
        a = x[:, :-1][bad]
        b = x[:, 1:][bad]
        out[bad] = _log_interval_prob(a, b)
    return out


def sample_categorical(logw: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Inverse-CDF categorical draw per row from unnormalized log weights; returns 1-based labels."""
    if not np.all(np.isfinite(np.max(logw, axis=1))):
        raise NumericalError("non-finite categorical log weights")
    w = np.exp(logw - np.max(logw, axis=1, keepdims=True))
    c = np.cumsum(w, axis=1)
    target = u * c[:, -1]
    k = np.sum(c <= target[:, None], axis=1)
    return np.minimum(k, logw.shape[1] - 1) + 1


def _chunks(N: int, threads: int | None):
    if not threads or threads <= 1:
        return [slice(0, N)]
    step = -(-N // threads)
    return [slice(i, min(i + step, N)) for i in range(0, N, step)]


def _map_chunks(fn, N: int, threads: int | None):
    parts = _chunks(N, threads)
    if len(parts) == 1:
        return [fn(parts[0])]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, parts))


def tau_log_posterior(R: np.ndarray, means, sigma2: float, log_prior) -> np.ndarray:
    ll = gaussian_loglik_by_tau(means, R, sigma2)
    if not np.all(np.isfinite(ll)):
        raise NumericalError("non-finite changepoint log-likelihood")
    return ll + log_prior


def update_tau(Y: np.ndarray, means, U: np.ndarray | None, sigma2_eps: float, state: ChangepointState,
               streams: Streams, iteration: int, prior: str = "mpm", threads: int | None = None) -> np.ndarray:
    """Draw every ``tau(s)`` from its categorical full conditional; updates ``state.tau`` in place.

    ``Y`` and ``U`` are (M, N) arrays for t = 1..M. ``prior='ind'`` uses ``pi_k = 1/M``.
    """
    if sigma2_eps <= 0:
        raise ValueError("sigma2_eps must be positive")
    M, N = Y.shape
    R = Y if U is None else Y - U
    u = streams.uniform(iteration, "tau", N)

    def work(sl):
        if prior == "mpm":
            lp = log_prior_probs(state.muZ_field[sl], state.gammas)
        elif prior == "ind":
            lp = -np.log(M)
        else:
            raise ValueError(f"unknown prior {prior!r}")
        return sample_categorical(tau_log_posterior(R[:, sl], _slice_means(means, sl), sigma2_eps, lp), u[sl])

    state.tau = np.concatenate(_map_chunks(work, N, threads)).astype(np.int64)
    return state.tau


def ind_update_tau(Y, means, U, sigma2_eps, state, streams, iteration, threads=None):
    return update_tau(Y, means, U, sigma2_eps, state, streams, iteration, prior="ind", threads=threads)


def _slice_means(means, sl):
    if isinstance(means, LinearMeans):
        return LinearMeans(means.beta0, means.beta1[sl], means.beta2[sl])
    return means


def _tail_draws(lo: np.ndarray, hi: np.ndarray, gens) -> np.ndarray:
    """Exponential-rejection sampler for a standard normal on [lo, hi] with lo >= TAIL_SD."""
    out = np.empty(lo.size)
    for j in range(lo.size):
        a, b, g = lo[j], hi[j], gens(j)
        lam = a
        width = b - a
        scale = -np.expm1(-lam * width) if np.isfinite(width) else 1.0
        while True:
            v, w = g.random(2)
            x = a - np.log1p(-v * scale) / lam
            if w <= np.exp(-0.5 * (x - a) ** 2):
                out[j] = x
                break
    return out


def truncnorm_draw(mu, lo, hi, u, tail_generator=None) -> np.ndarray:
    """Draw ``N(mu, 1)`` truncated to ``(lo, hi]`` by inverse CDF, or a tail sampler past 4 sd.

    ``tail_generator(j)`` returns a numpy Generator for element ``j``; it is only called
    for intervals lying entirely beyond ``TAIL_SD`` standard deviations.
    """
    mu, lo, hi, u = (np.atleast_1d(np.asarray(v, dtype=float)) for v in (mu, lo, hi, u))
    mu, lo, hi, u = np.broadcast_arrays(mu, lo, hi, u)
    a, b = lo - mu, hi - mu
    if np.any(~(a < b)):
        raise ValueError("empty truncation interval")
    out = np.empty(a.shape)
    upper_tail = a >= TAIL_SD
    lower_tail = b <= -TAIL_SD
    central = ~(upper_tail | lower_tail)
    # Central regime: use whichever tail keeps CDF values accurate.
    flip = central & (a > 0)
    plain = central & ~flip
    if np.any(plain):
        pa, pb = special.ndtr(a[plain]), special.ndtr(b[plain])
        out[plain] = special.ndtri(pa + u[plain] * (pb - pa))
    if np.any(flip):
        qa, qb = special.ndtr(-a[flip]), special.ndtr(-b[flip])
        out[flip] = -special.ndtri(qa - u[flip] * (qa - qb))
    for mask, sign in ((upper_tail, 1.0), (lower_tail, -1.0)):
        if np.any(mask):
            if tail_generator is None:
                raise ValueError("tail interval needs a tail_generator")
            idx = np.flatnonzero(mask)
            lo_s = a[idx] if sign > 0 else -b[idx]
            hi_s = b[idx] if sign > 0 else -a[idx]
            out[idx] = sign * _tail_draws(lo_s, hi_s, lambda j: tail_generator(int(idx[j])))
    return mu + np.clip(out, a, b)


def update_Z(state: ChangepointState, streams: Streams, iteration: int, threads: int | None = None) -> np.ndarray:
    """``Z(s) | tau(s)=k ~ TN(mu_Z(s), 1, gamma_{k-1}, gamma_k)``; updates ``state.Z`` in place."""
    g = state.full_gammas()
    N = state.Z.size
    u = streams.uniform(iteration, "Z", N)
    lo, hi = g[state.tau - 1], g[state.tau]

    def work(sl):
        offset = sl.start
        return truncnorm_draw(state.muZ_field[sl], lo[sl], hi[sl], u[sl],
                              lambda j: streams.generator(iteration, "Z-tail", offset + j))

    Z = np.concatenate(_map_chunks(work, N, threads))
    # Keep the half-open convention exactly: Z == lo can only arise from rounding.
    Z = np.where(Z <= lo, np.nextafter(lo, np.inf), Z)
    state.Z = Z
    return Z


def update_gamma(state: ChangepointState, streams: Streams, iteration: int) -> np.ndarray:
    """Sequential uniform draws of ``gamma_k`` for k = 2..M-1 (``gamma_1 = 0`` fixed)."""
    M = state.M
    if M <= 2:
        return state.gammas
    u = streams.uniform(iteration, "gamma", M - 2)
    maxz = np.full(M + 2, -np.inf)
    minz = np.full(M + 2, np.inf)
    np.maximum.at(maxz, state.tau, state.Z)
    np.minimum.at(minz, state.tau, state.Z)
    g = np.concatenate([[-np.inf], state.gammas, [state.gamma_cap]])  # g[k] = gamma_k, g[M] = cap
    for k in range(2, M):
        lower = max(maxz[k], g[k - 1])
        upper = min(minz[k + 1], g[k + 1])
        if not lower < upper:
            raise AssertionError(f"empty interval for gamma_{k}: ({lower}, {upper})")
        g[k] = lower + u[k - 2] * (upper - lower)
    state.gammas = g[1:M].copy()
    return state.gammas


def alpha_precision(E: ErrorOperator, D_alpha: np.ndarray) -> BlockDiagonal:
    """``E^{-1} + D_alpha^{-1}`` with E's block layout."""
    P = E.inverse().add_diagonal(1.0 / np.asarray(D_alpha, dtype=float))
    P.cholesky()
    return P


def update_muZ(state: ChangepointState, E: ErrorOperator, P: BlockDiagonal, grid: DHGrid, streams: Streams,
               iteration: int, n_draw: int | None = None) -> np.ndarray:
    """Exact Gaussian draw of ``alpha`` given Z, then refresh ``mu_Z = m_Z + Psi alpha``.

    ``P`` is ``alpha_precision(E, D_alpha)``. Normals are drawn at length ``n_draw``
    (default the grid's full coefficient count) and the leading prefix used, so
    chains at different degrees consume the same stream.
    """
    n = E.n
    n_draw = (grid.lmax + 1) ** 2 if n_draw is None else n_draw
    c = sht_forward(state.Z - state.mZ, grid, E.L)
    z = streams.normal(iteration, "alpha", n_draw)[:n]
    state.alpha = P.sample_from_precision(E.solve(c), z)
    state.muZ_field = state.mZ + sht_inverse(state.alpha, grid)
    return state.alpha
