"""Pre/post-changepoint mean models and their per-changepoint log-likelihoods.

Time runs over t = 1..M with data stored as ``R[t-1, i]``. ``tau = k`` puts
t <= k in the first segment, so ``tau = M`` means no change in the window.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def _prefix(x: np.ndarray) -> np.ndarray:
    """Prefix sums over time with a leading zero row: out[k] = sum_{t<=k}."""
    out = np.zeros((x.shape[0] + 1,) + x.shape[1:])
    np.cumsum(x, axis=0, out=out[1:])
    return out


@dataclass
class ConstantMeans:
    """``mu_1(s,t) = mu1`` and ``mu_2(s,t) = mu2``."""

    mu1: float
    mu2: float

    def fields(self, tau: np.ndarray, M: int) -> np.ndarray:
        t = np.arange(1, M + 1)[:, None]
        return np.where(t <= tau[None, :], self.mu1, self.mu2)

    def sse_by_tau(self, R: np.ndarray) -> np.ndarray:
        """Residual sum of squares for every candidate ``tau``; shape (N, M)."""
        pre = _prefix((R - self.mu1) ** 2)  # (M+1, N)
        post = _prefix((R - self.mu2) ** 2)
        k = np.arange(1, R.shape[0] + 1)
        return (pre[k] + post[-1][None, :] - post[k]).T


@dataclass
class LinearMeans:
    """``mu_1 = beta0`` and ``mu_2(s,t) = beta1(s) + beta2(s)(t - tau(s))``."""

    beta0: float
    beta1: np.ndarray
    beta2: np.ndarray

    def fields(self, tau: np.ndarray, M: int) -> np.ndarray:
        t = np.arange(1, M + 1)[:, None]
        post = self.beta1[None, :] + self.beta2[None, :] * (t - tau[None, :])
        return np.where(t <= tau[None, :], self.beta0, post)

    def sse_by_tau(self, R: np.ndarray) -> np.ndarray:
        M = R.shape[0]
        t = np.arange(1, M + 1)[:, None].astype(float)
        pre = _prefix((R - self.beta0) ** 2)
        d = R - self.beta1[None, :]
        s0 = _prefix(d**2)
        s1 = _prefix(d * t)
        s2 = _prefix(d)
        k = np.arange(1, M + 1)
        kk = k[:, None].astype(float)
        # suffix sums over t > k
        q0 = s0[-1] - s0[k]
        q1 = s1[-1] - s1[k]
        q2 = s2[-1] - s2[k]
        n = (M - k).astype(float)
        sq = (n * (n + 1) * (2 * n + 1) / 6.0)[:, None]  # sum_{j=1}^{M-k} j^2
        b2 = self.beta2[None, :]
        post = q0 - 2 * b2 * (q1 - kk * q2) + b2**2 * sq
        return (pre[k] + post).T


def gaussian_loglik_by_tau(means, R: np.ndarray, sigma2: float) -> np.ndarray:
    """Log-likelihood up to a tau-independent constant; shape (N, M)."""
    return -0.5 * means.sse_by_tau(R) / sigma2
