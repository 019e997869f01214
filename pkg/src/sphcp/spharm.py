"""Driscoll-Healy grids, real spherical harmonic transforms and the error operator.

Conventions
-----------
* Grid: ``K`` colatitude rows ``theta_i = pi*i/K`` and ``2K`` longitudes
  ``phi_j = pi*j/K``. Fields are flat vectors of length ``2K**2`` with the
  colatitude index outermost (``f.reshape(K, 2K)``).
* Coefficients: real harmonics ``psi_lm = Pbar_lm(cos t) cos(m p)`` for m >= 0
  and ``Pbar_l|m|(cos t) sin(|m| p)`` for m < 0, stored at ``l**2 + m + l``.
* ``grid.weights[i]`` is the per-point quadrature weight in steradians, so
  ``sum_ij psi psi' w_i = delta`` exactly for degrees up to ``K/2 - 1`` and
  ``sum_ij w_i = 4 pi``. The ``1/(2K)`` longitude factor is folded in here.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, sparse

from .errors import SingularOperatorError


def n_coeffs(L: int) -> int:
    return (L + 1) ** 2


def coeff_index(l: int, m: int) -> int:
    return l * l + m + l


def degree_order(L: int) -> tuple[np.ndarray, np.ndarray]:
    """Arrays ``(l, m)`` of length ``(L+1)**2`` in canonical order."""
    l = np.repeat(np.arange(L + 1), 2 * np.arange(L + 1) + 1)
    m = np.arange(n_coeffs(L)) - l * l - l
    return l, m


@dataclass(frozen=True, eq=False)
class DHGrid:
    K: int
    theta: np.ndarray
    phi: np.ndarray
    weights: np.ndarray

    @property
    def lmax(self) -> int:
        return self.K // 2 - 1

    @property
    def N(self) -> int:
        return 2 * self.K * self.K

    @property
    def point_weights(self) -> np.ndarray:
        """Quadrature weight for every grid point, flat layout."""
        return np.repeat(self.weights, 2 * self.K)

    def unit_vectors(self) -> np.ndarray:
        t, p = np.meshgrid(self.theta, self.phi, indexing="ij")
        return np.stack([np.sin(t) * np.cos(p), np.sin(t) * np.sin(p), np.cos(t)], axis=-1).reshape(-1, 3)


def dh_weight(theta: np.ndarray, K: int) -> np.ndarray:
    """Driscoll-Healy colatitude weight ``(2 sqrt2 / K) sin t sum_j sin((2j+1)t)/(2j+1)``."""
    theta = np.asarray(theta, dtype=float)
    j = np.arange(K // 2).reshape((-1,) + (1,) * theta.ndim)
    series = np.sum(np.sin((2 * j + 1) * theta) / (2 * j + 1), axis=0)
    return (2.0 * np.sqrt(2.0) / K) * np.sin(theta) * series


def build_grid(K: int) -> DHGrid:
    if int(K) != K or K < 4 or K % 2:
        raise ValueError(f"K must be an even integer >= 4, got {K!r}")
    K = int(K)
    theta = np.pi * np.arange(K) / K
    phi = np.pi * np.arange(2 * K) / K
    # sum_i dh_weight(theta_i) = sqrt(2); rescale so the 2K longitudes integrate to 4 pi.
    w = dh_weight(theta, K) * (np.sqrt(2.0) * np.pi / K)
    w[0] = 0.0
    return DHGrid(K=K, theta=theta, phi=phi, weights=w)


def legendre_table(L: int, x) -> np.ndarray:
    """Orthonormalized associated Legendre functions ``Pbar[l, m, ...]`` for l, m <= L.

    Normalized so that ``int Pbar_lm**2 dx = (2 - delta_m0) / (2 pi)``; entries with
    m > l are zero. The sectoral seeds are built in log space.
    """
    x = np.asarray(x, dtype=float)
    if np.any(np.abs(x) > 1.0):
        raise ValueError("|x| must be <= 1")
    s = np.sqrt(np.clip(1.0 - x * x, 0.0, None))
    out = np.zeros((L + 1, L + 1) + x.shape)
    with np.errstate(divide="ignore"):
        log_s = np.log(s)
    log_seed = -0.5 * np.log(4.0 * np.pi)
    for m in range(L + 1):
        if m == 1:
            log_seed += 0.5 * np.log(2.0) + 0.5 * np.log(1.5)
        elif m > 1:
            log_seed += 0.5 * np.log((2.0 * m + 1.0) / (2.0 * m))
        if m == 0:
            pmm = np.full(x.shape, np.exp(log_seed))
        else:
            with np.errstate(invalid="ignore"):
                pmm = np.exp(log_seed + m * log_s)
            pmm = np.where(s == 0.0, 0.0, pmm)
        out[m, m] = pmm
        if m == L:
            break
        out[m + 1, m] = np.sqrt(2.0 * m + 3.0) * x * pmm
        for l in range(m + 2, L + 1):
            a = np.sqrt((4.0 * l * l - 1.0) / (l * l - m * m))
            b = np.sqrt((2.0 * l + 1.0) * ((l - 1.0) ** 2 - m * m) / ((2.0 * l - 3.0) * (l * l - m * m)))
            out[l, m] = a * x * out[l - 1, m] - b * out[l - 2, m]
    return out


def assoc_legendre_bar(l: int, m: int, x: float) -> float:
    if not (0 <= m <= l):
        raise ValueError(f"need 0 <= m <= l, got l={l}, m={m}")
    if abs(x) > 1.0:
        raise ValueError(f"|x| must be <= 1, got {x}")
    return float(legendre_table(l, np.array([x]))[l, m, 0])


class Transform:
    """Forward (``Psi^T D_w``) and inverse (``Psi``) transforms at degree ``L``.

    Both act on the last axis, so a ``(T, N)`` stack of fields maps to a
    ``(T, (L+1)**2)`` stack of coefficients in one call.
    """

    def __init__(self, grid: DHGrid, L: int):
        if L < 0 or L > grid.lmax:
            raise ValueError(f"degree {L} exceeds grid capacity Lmax={grid.lmax}")
        self.grid = grid
        self.L = L
        K = grid.K
        P = legendre_table(L, np.cos(grid.theta))  # (l, m, i)
        self._P = [np.ascontiguousarray(P[m:, m, :]) for m in range(L + 1)]  # (L+1-m, K)
        self._Pw = [p * grid.weights for p in self._P]
        self._pos = [coeff_index(np.arange(m, L + 1), m) for m in range(L + 1)]
        self._neg = [coeff_index(np.arange(m, L + 1), -m) for m in range(L + 1)]
        self.n = n_coeffs(L)
        self._K = K

    def forward(self, f) -> np.ndarray:
        f = np.asarray(f, dtype=float)
        K = self._K
        if f.shape[-1] != 2 * K * K:
            raise ValueError(f"field length {f.shape[-1]} does not match grid of {2 * K * K} points")
        lead = f.shape[:-1]
        F = np.fft.rfft(f.reshape(lead + (K, 2 * K)), axis=-1)
        out = np.empty(lead + (self.n,))
        for m in range(self.L + 1):
            Fm = F[..., m]
            out[..., self._pos[m]] = Fm.real @ self._Pw[m].T
            if m:
                out[..., self._neg[m]] = -Fm.imag @ self._Pw[m].T
        return out

    def inverse(self, alpha) -> np.ndarray:
        alpha = np.asarray(alpha, dtype=float)
        if alpha.shape[-1] != self.n:
            raise ValueError(f"coefficient length {alpha.shape[-1]} != {self.n}")
        K = self._K
        lead = alpha.shape[:-1]
        G = np.zeros(lead + (K, K + 1), dtype=complex)
        for m in range(self.L + 1):
            c = alpha[..., self._pos[m]] @ self._P[m]
            if m == 0:
                G[..., 0] = 2 * K * c
            else:
                s = alpha[..., self._neg[m]] @ self._P[m]
                G[..., m] = K * (c - 1j * s)
        return np.fft.irfft(G, n=2 * K, axis=-1).reshape(lead + (2 * K * K,))


_TRANSFORMS: dict[tuple[int, int], Transform] = {}


def get_transform(grid: DHGrid, L: int) -> Transform:
    key = (grid.K, L)
    if key not in _TRANSFORMS:
        _TRANSFORMS[key] = Transform(grid, L)
    return _TRANSFORMS[key]


def sht_forward(f, grid: DHGrid, L: int) -> np.ndarray:
    if L > grid.lmax:
        raise ValueError(f"L={L} exceeds grid Lmax={grid.lmax}")
    return get_transform(grid, L).forward(f)


def sht_inverse(alpha, grid: DHGrid) -> np.ndarray:
    alpha = np.asarray(alpha, dtype=float)
    L = int(round(np.sqrt(alpha.shape[-1]))) - 1
    if n_coeffs(L) != alpha.shape[-1]:
        raise ValueError(f"length {alpha.shape[-1]} is not a square (L+1)^2")
    if L > grid.lmax:
        raise ValueError(f"coefficient degree {L} exceeds grid Lmax={grid.lmax}")
    return get_transform(grid, L).inverse(alpha)


@dataclass
class BlockDiagonal:
    """Symmetric matrix that is block diagonal after a permutation of coordinates.

    ``index[b]`` lists the canonical coordinates of block ``b`` in increasing
    order; because within-block order is preserved the Cholesky factor of the
    permuted matrix is the Cholesky factor of the canonical-order matrix.
    """

    n: int
    index: list[np.ndarray]
    blocks: list[np.ndarray]
    _chol: list[np.ndarray] | None = field(default=None, repr=False)
    _inv: "BlockDiagonal | None" = field(default=None, repr=False)
    _inv_factor: "BlockDiagonal | None" = field(default=None, repr=False)
    _pattern: tuple | None = field(default=None, repr=False)

    def _like(self, blocks) -> "BlockDiagonal":
        return BlockDiagonal(self.n, self.index, blocks, _pattern=self._csr_pattern())

    def _csr_pattern(self) -> tuple:
        """Permutation of the concatenated block entries into CSR order, plus indices and indptr."""
        if self._pattern is None:
            rows = np.concatenate([np.repeat(idx, idx.size) for idx in self.index])
            cols = np.concatenate([np.tile(idx, idx.size) for idx in self.index])
            order = np.lexsort((cols, rows))
            indptr = np.zeros(self.n + 1, dtype=np.int64)
            np.add.at(indptr, rows + 1, 1)
            self._pattern = (order, cols[order], np.cumsum(indptr))
        return self._pattern

    @property
    def nnz(self) -> int:
        return int(sum(b.size for b in self.blocks))

    def _by_size(self, blocks, fn) -> list[np.ndarray]:
        """Apply a stacked linear-algebra routine to equal-size blocks at once."""
        out: list = [None] * len(blocks)
        sizes = np.array([B.shape[0] for B in blocks])
        for size in np.unique(sizes):
            ks = np.flatnonzero(sizes == size)
            res = fn(np.stack([blocks[k] for k in ks]))
            for k, R in zip(ks, res):
                out[k] = R
        return out

    def cholesky(self) -> list[np.ndarray]:
        if self._chol is None:
            try:
                self._chol = self._by_size(self.blocks, np.linalg.cholesky)
            except np.linalg.LinAlgError:
                for k, B in enumerate(self.blocks):
                    try:
                        np.linalg.cholesky(B)
                    except np.linalg.LinAlgError as exc:
                        raise SingularOperatorError(
                            f"block {k} (size {B.shape[0]}) is not positive definite") from exc
                raise
        return self._chol

    def _check(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if v.shape[-1] != self.n:
            raise ValueError(f"vector length {v.shape[-1]} != operator dimension {self.n}")
        return v

    def apply(self, v) -> np.ndarray:
        v = self._check(v)
        out = np.empty_like(v)
        for idx, B in zip(self.index, self.blocks):
            out[..., idx] = v[..., idx] @ B
        return out

    def solve(self, v) -> np.ndarray:
        v = self._check(v)
        out = np.empty_like(v)
        lead = v.shape[:-1]
        for idx, C in zip(self.index, self.cholesky()):
            rhs = v[..., idx].reshape(-1, idx.size).T
            y = linalg.cho_solve((C, True), rhs, check_finite=False)
            out[..., idx] = y.T.reshape(lead + (idx.size,))
        return out

    def solve_lower_transpose(self, z) -> np.ndarray:
        """``C^{-T} z`` per block where ``A = C C^T``; turns N(0, I) into N(0, A^{-1})."""
        z = self._check(z)
        out = np.empty_like(z)
        lead = z.shape[:-1]
        for idx, C in zip(self.index, self.cholesky()):
            rhs = z[..., idx].reshape(-1, idx.size).T
            y = linalg.solve_triangular(C, rhs, lower=True, trans="T", check_finite=False)
            out[..., idx] = y.T.reshape(lead + (idx.size,))
        return out

    def sample_from_precision(self, linear, z) -> np.ndarray:
        """Draw from N(A^{-1} linear, A^{-1}) with A this operator, noise ``z ~ N(0, I)``."""
        return self.solve(linear) + self.solve_lower_transpose(z)

    def inverse_factor(self) -> "BlockDiagonal":
        """Blockwise ``C^{-1}`` (lower triangular) where ``A = C C^T``; cached."""
        if self._inv_factor is None:
            out = self._by_size(self.cholesky(), lambda C: np.tril(np.linalg.inv(C)))
            self._inv_factor = self._like(out)
        return self._inv_factor

    def inverse(self) -> "BlockDiagonal":
        """Blockwise inverse, cached; callers must not mutate the result."""
        if self._inv is None:
            def sym_inv(Ci):
                B = np.swapaxes(Ci, 1, 2) @ Ci
                return 0.5 * (B + np.swapaxes(B, 1, 2))
            self._inv = self._like(self._by_size(self.inverse_factor().blocks, sym_inv))
        return self._inv

    def add_diagonal(self, d) -> "BlockDiagonal":
        d = np.broadcast_to(np.asarray(d, dtype=float), (self.n,))
        return self._like([B + np.diag(d[idx]) for idx, B in zip(self.index, self.blocks)])

    def scaled(self, c: float) -> "BlockDiagonal":
        return self._like([c * B for B in self.blocks])

    def matmul_diagonal(self, d) -> "BlockDiagonal":
        """``A @ diag(d)``; the result is generally not symmetric, use only for ``apply``."""
        d = np.broadcast_to(np.asarray(d, dtype=float), (self.n,))
        return self._like([B * d[idx] for idx, B in zip(self.index, self.blocks)])

    def to_sparse(self) -> sparse.csr_matrix:
        order, indices, indptr = self._csr_pattern()
        vals = np.concatenate([B.ravel() for B in self.blocks])[order]
        return sparse.csr_matrix((vals, indices, indptr), shape=(self.n, self.n))

    def to_dense(self) -> np.ndarray:
        return self.to_sparse().toarray()


def block_layout(L: int) -> tuple[list[tuple[int, int]], list[np.ndarray]]:
    """Block keys ``(m, parity)`` ordered by m then parity, with canonical indices."""
    keys, index = [], []
    for m in range(-L, L + 1):
        for parity in (0, 1):
            ls = [l for l in range(abs(m), L + 1) if l % 2 == parity]
            if ls:
                keys.append((m, parity))
                index.append(coeff_index(np.array(ls), m))
    return keys, index


@dataclass
class ErrorOperator(BlockDiagonal):
    """``E = Psi^T D_w^2 Psi`` stored as its (m, parity) blocks."""

    L: int = 0
    keys: list[tuple[int, int]] = field(default_factory=list)


def sparsity_count(L: int) -> int:
    return sum(-(-((L + 1 - abs(m)) ** 2) // 2) for m in range(-L, L + 1))


def build_error_operator(grid: DHGrid, L: int) -> ErrorOperator:
    if L > grid.lmax:
        raise ValueError(f"L={L} exceeds grid Lmax={grid.lmax}")
    K = grid.K
    P = legendre_table(L, np.cos(grid.theta))
    w2 = grid.weights**2
    keys, index = block_layout(L)
    blocks = []
    for (m, parity), idx in zip(keys, index):
        ls = np.array([l for l in range(abs(m), L + 1) if l % 2 == parity])
        Pm = P[ls, abs(m), :]
        lon = 2 * K if m == 0 else K  # sum_j cos^2 / sin^2 over 2K longitudes
        B = lon * (Pm * w2) @ Pm.T
        B = 0.5 * (B + B.T)
        blocks.append(B)
    op = ErrorOperator(n=n_coeffs(L), index=index, blocks=blocks, L=L, keys=keys)
    op.cholesky()
    return op
