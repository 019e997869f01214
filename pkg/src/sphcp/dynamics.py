"""Spectral Ornstein-Uhlenbeck / AR(1) error process on the sphere.

Each coefficient channel ``(l, m)`` follows
``U_t = xi_l U_{t-1} + eta_t`` with ``eta_t ~ N(0, eta_l)``. Coefficient paths are
stored time-major: ``Uhat[t]`` for t = 0..M, where t = 0 is a latent initial state.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Literal

import numpy as np

from .rng import Streams
from .spectral_prior import MaternSpec, legendre_p, spectral_density
from .spharm import BlockDiagonal, DHGrid, ErrorOperator, degree_order, sht_forward, sht_inverse


@dataclass(frozen=True)
class DynamicsParams:
    """Reaction rate ``xi_r``, diffusivity ``xi_d`` and noise scale ``sigma2``.

    In ``separable`` mode ``xi_d = 0``, ``xi = exp(-xi_r)`` and the innovation variance is
    ``sigma2 * S_l``. In ``nonseparable`` mode ``sigma2`` plays the role of ``sigma_Q**2``.
    """

    xi_r: float = 0.5
    xi_d: float = 0.0
    sigma2: float = 1.0
    matern: MaternSpec = field(default_factory=lambda: MaternSpec(1.0, 1.0, 1.0))
    mode: Literal["separable", "nonseparable"] = "nonseparable"

    def __post_init__(self):
        if self.mode not in ("separable", "nonseparable"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.xi_d < 0 or self.sigma2 < 0:
            raise ValueError("xi_d and sigma2 must be >= 0")
        if not self.xi_r > 0:
            raise ValueError("xi_r must be > 0 so every channel has a positive rate")
        if self.mode == "separable" and self.xi_d != 0:
            raise ValueError("separable mode requires xi_d = 0")

    @classmethod
    def separable(cls, xi: float, sigma2_U: float, matern: MaternSpec) -> "DynamicsParams":
        if not 0 < xi < 1:
            raise ValueError("xi must lie in (0, 1)")
        return cls(xi_r=-np.log(xi), xi_d=0.0, sigma2=sigma2_U, matern=matern, mode="separable")

    @property
    def xi(self) -> float:
        return float(np.exp(-self.xi_r))

    def with_xi(self, xi: float) -> "DynamicsParams":
        return replace(self, xi_r=-np.log(xi))

    def with_sigma2(self, sigma2: float) -> "DynamicsParams":
        return replace(self, sigma2=sigma2)


def rate(params: DynamicsParams, l) -> np.ndarray:
    l = np.asarray(l, dtype=float)
    return params.xi_r + params.xi_d * l * (l + 1.0)


def ar1_coeff(params: DynamicsParams, l):
    return np.exp(-rate(params, l))


def innovation_var(params: DynamicsParams, l):
    l = np.asarray(l, dtype=float)
    S = spectral_density(params.matern, l)
    if params.mode == "separable":
        return params.sigma2 * S
    r = rate(params, l)
    return params.sigma2 * S * (-np.expm1(-2.0 * r)) / (2.0 * r)


def stationary_var(params: DynamicsParams, l):
    return innovation_var(params, l) / (1.0 - ar1_coeff(params, l) ** 2)


def ou_stationary_var(params: DynamicsParams, l):
    """``sigma_Q**2 S_l / (2 rate_l)`` for the continuous-time process."""
    return params.sigma2 * spectral_density(params.matern, l) / (2.0 * rate(params, l))


def channel_vectors(params: DynamicsParams, L: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-coefficient ``(xi, eta)`` over the canonical ordering."""
    l, _ = degree_order(L)
    return np.broadcast_to(ar1_coeff(params, l), l.shape).astype(float), np.asarray(innovation_var(params, l), float)


@dataclass
class DynamicsState:
    Uhat: np.ndarray  # (M + 1, (L + 1)**2)
    params: DynamicsParams

    @property
    def L(self) -> int:
        return int(round(np.sqrt(self.Uhat.shape[1]))) - 1

    @property
    def M(self) -> int:
        return self.Uhat.shape[0] - 1

    def fields(self, grid: DHGrid) -> np.ndarray:
        """Grid fields ``U_t`` for t = 1..M; shape (M, N)."""
        return sht_inverse(self.Uhat[1:], grid)


def sample_prior_path(params: DynamicsParams, L: int, M_time: int, rng=None) -> DynamicsState:
    """Simulate every channel from its stationary law at t = 0 and then the AR(1) recursion."""
    rng = np.random.default_rng(rng)
    xi, eta = channel_vectors(params, L)
    z = rng.standard_normal((M_time + 1, xi.size))
    U = np.empty_like(z)
    U[0] = np.sqrt(eta / (1.0 - xi**2)) * z[0]
    sd = np.sqrt(eta)
    for t in range(1, M_time + 1):
        U[t] = xi * U[t - 1] + sd * z[t]
    return DynamicsState(U, params)


def _sparse_parts(P: BlockDiagonal, coupling: np.ndarray):
    """Sparse ``P^{-1}``, ``C^{-T}`` and gain ``P^{-1} diag(coupling)``."""
    inv = P.inverse()
    return inv.to_sparse(), P.inverse_factor().to_sparse().T.tocsr(), inv.matmul_diagonal(coupling).to_sparse()


def update_U(state: DynamicsState, Y: np.ndarray, mean_fields: np.ndarray, sigma2_eps: float, E: ErrorOperator,
             grid: DHGrid, streams: Streams, iteration: int, n_draw: int | None = None) -> np.ndarray:
    """Single-site-in-time Gibbs sweep t = 0..M over the spectral coefficients.

    ``Y`` and ``mean_fields`` are (M, N) arrays for t = 1..M. The data enter through
    ``Psi^T D_w (Y_t - mu_t) ~ N(Uhat_t, sigma2_eps E)``. Normals are drawn at width
    ``n_draw`` (default the grid's full coefficient count) and sliced, so chains at
    different degrees share streams.
    """
    U = state.Uhat
    M, n = U.shape[0] - 1, U.shape[1]
    if Y.shape[0] != M:
        raise ValueError(f"data have {Y.shape[0]} time steps, state has {M}")
    if E.n != n:
        raise ValueError("error operator and state degree differ")
    n_draw = (grid.lmax + 1) ** 2 if n_draw is None else n_draw
    xi, eta = channel_vectors(state.params, E.L)
    z = streams.normal(iteration, "U", (M + 1, n_draw))[:, :n]

    Einv = E.inverse().scaled(1.0 / sigma2_eps)
    d = (Einv.to_sparse() @ sht_forward(Y - mean_fields, grid, E.L).T).T  # (M, n)
    coupling = xi / eta
    base = np.empty((M, n))
    Pinv, Cit, G_end = _sparse_parts(Einv.add_diagonal(1.0 / eta), coupling)
    base[-1] = Pinv @ d[-1] + Cit @ z[M]
    if M > 1:
        Pinv, Cit, G_int = _sparse_parts(Einv.add_diagonal((1.0 + xi**2) / eta), coupling)
        base[:-1] = (Pinv @ d[:-1].T + Cit @ z[1:M].T).T

    U[0] = xi * U[1] + np.sqrt(eta) * z[0]
    for t in range(1, M):
        U[t] = base[t - 1] + G_int @ (U[t - 1] + U[t + 1])
    U[M] = base[M - 1] + G_end @ U[M - 1]
    return U


def cross_cov(params: DynamicsParams, cos_u, h, L: int):
    """Space-time covariance ``C(u, h)`` of the continuous-time process truncated at ``L``.

    ``(sigma_Q**2 / 4pi) sum_l (2l+1) P_l(cos u) S_l exp(-rate_l h) / (2 rate_l)``.
    """
    cos_u = np.asarray(cos_u, dtype=float)
    h = np.asarray(h, dtype=float)
    if np.any(h < 0):
        raise ValueError("lag must be >= 0")
    l = np.arange(L + 1, dtype=float)
    r = rate(params, l)
    w = (2 * l + 1) * params.sigma2 * spectral_density(params.matern, l) / (2.0 * r) / (4 * np.pi)
    P = legendre_p(L, cos_u)  # (L+1, *u)
    decay = np.exp(-np.multiply.outer(r, h))  # (L+1, *h)
    P2 = P.reshape(L + 1, -1)
    D2 = decay.reshape(L + 1, -1)
    out = (P2 * w[:, None]).T @ D2
    return out.reshape(cos_u.shape + h.shape) if out.size > 1 else float(out.ravel()[0])


def csep(params: DynamicsParams, u_grid, h_grid, L: int) -> float:
    """Grid maximum of ``|rho_st(u,h) - rho_s(u) rho_t(h)|`` (a lower bound on the supremum).

    ``u_grid`` holds angular separations in radians.
    """
    u = np.atleast_1d(np.asarray(u_grid, dtype=float))
    h = np.atleast_1d(np.asarray(h_grid, dtype=float))
    if u.size == 0 or h.size == 0:
        raise ValueError("grids must be nonempty")
    C = np.atleast_2d(cross_cov(params, np.cos(u), h, L))
    C00 = cross_cov(params, np.array([1.0]), np.array([0.0]), L)
    C0h = np.atleast_1d(cross_cov(params, np.array([1.0]), h, L)).ravel()
    Cu0 = np.atleast_1d(cross_cov(params, np.cos(u), np.array([0.0]), L)).ravel()
    rho_st = C / C00
    return float(np.max(np.abs(rho_st - np.outer(Cu0 / C00, C0h / C00))))
