"""Replicated simulation studies shared by the scripts and the acceptance suite."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .harness import DecayFit, SimConfig, fit_exp_decay, g_rmse, gen_dataset
from .inference import run_chain, run_coupled
from .spharm import build_grid


@dataclass
class PriorComparison:
    mpm: np.ndarray  # g-RMSE per replicate
    ind: np.ndarray

    @property
    def win_rate(self) -> float:
        return float(np.mean(self.mpm < self.ind))


def compare_priors(sim: SimConfig, iterations: int, burn_in: int, progress=None) -> PriorComparison:
    """Fit every replicate under both changepoint priors with identical chain seeds."""
    grid = build_grid(sim.K)
    out = {"mpm": [], "ind": []}
    for r in range(sim.replicates):
        d = gen_dataset(sim, r)
        for prior in out:
            cfg = sim.fit_config(prior=prior, iterations=iterations, burn_in=burn_in, seed=sim.seed + r)
            summary, _ = run_chain(cfg, d.Y)
            out[prior].append(g_rmse(d.tau, summary.tau_mean, grid))
        if progress is not None:
            progress(r, out["mpm"][-1], out["ind"][-1])
    return PriorComparison(np.array(out["mpm"]), np.array(out["ind"]))


@dataclass
class DecayStudy:
    levels: np.ndarray
    g: np.ndarray  # (replicates, levels)
    fit: DecayFit

    @property
    def mean(self) -> np.ndarray:
        return self.g.mean(axis=0)

    @property
    def se(self) -> np.ndarray:
        return self.g.std(axis=0, ddof=1) / np.sqrt(self.g.shape[0])

    def diff_se(self, i: int, j: int) -> float:
        """Standard error of the paired difference between two levels (chains are coupled)."""
        d = self.g[:, j] - self.g[:, i]
        return float(d.std(ddof=1) / np.sqrt(d.size))

    def inversions(self) -> list[int]:
        """Indices i where the mean g-RMSE rises from level i to level i+1."""
        return [i for i in range(self.levels.size - 1) if self.mean[i + 1] > self.mean[i]]

    def fitted(self, L) -> np.ndarray:
        return self.fit.a * np.exp(-self.fit.b * np.asarray(L, float)) + self.fit.c


def truncation_decay(sim: SimConfig, levels, iterations: int, burn_in: int, progress=None) -> DecayStudy:
    """Coupled IND chains across truncation degrees, replicated over datasets."""
    grid = build_grid(sim.K)
    rows = []
    for r in range(sim.replicates):
        d = gen_dataset(sim, r)
        cfg = sim.fit_config(iterations=iterations, burn_in=burn_in, seed=sim.seed + r)
        rows.append([rec["g_rmse"] for rec in run_coupled(cfg, d.Y, levels, d.tau, grid)])
        if progress is not None:
            progress(r, rows[-1])
    g = np.array(rows)
    levels = np.asarray(levels)
    return DecayStudy(levels, g, fit_exp_decay(levels, g.mean(axis=0)))
