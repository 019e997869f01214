"""Command-line entry point: ``sphcp <subcommand> ...``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure, 4 I/O failure.
"""

from __future__ import annotations

import argparse
import csv
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dynamics import DynamicsParams, csep
from .errors import ConfigError, NumericalError
from .harness import (DenseReference, SimConfig, fit_exp_decay, g_rmse, gen_dataset, time_dense_reference)
from .inference import Model, ModelConfig, gibbs_step, init_state, run_chain, run_coupled
from .io import (dump_dataclass, load_dataclass, read_coeffs, read_fields, read_kv, write_coeffs, write_fields,
                 write_sidecar)
from .spectral_prior import (MaternSpec, bound_input, expected_mae_bound, normalized_spec, spread_endpoint,
                             thresholds_equal_distance)
from .spharm import build_grid, sht_forward, sht_inverse

EXIT_CONFIG, EXIT_NUMERICAL, EXIT_IO = 2, 3, 4
DENSE_MAX_POINTS = 3200


@dataclass(frozen=True)
class CsepConfig:
    """Parameters for a c_sep sweep over diffusivities."""

    xi_r: float = 0.5
    sigma2: float = 1.0
    kappa: float = 5.0
    nu: float = 1.0
    L: int = 89
    xi_d: tuple[float, ...] = (0.0, 1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0, 1e6)
    u_max: float = np.pi
    n_u: int = 91
    h_max: float = 10.0
    n_h: int = 51


@dataclass(frozen=True)
class BoundsGrid:
    M: tuple[int, ...] = (10, 50, 100)
    vZ: tuple[float, ...] = (1.0, 5.0, 10.0)
    kappa: tuple[float, ...] = (5.0,)
    nu: tuple[float, ...] = (1.0, 2.0, 3.0)


BOUNDS_SCENARIOS = {
    "equal-prob": BoundsGrid(),
    "equal-dist": BoundsGrid(kappa=(3.0, 5.0, 100.0), nu=(1.0,)),
}


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"expected a comma-separated integer list, got {text!r}") from exc


def _split_config(path) -> tuple[SimConfig, dict[str, str]]:
    """A combined file: plain keys configure the simulation, ``fit.<key>`` keys the model."""
    kv = read_kv(path) if path is not None else {}
    fit = {k[4:]: v for k, v in kv.items() if k.startswith("fit.")}
    sim = load_dataclass(SimConfig, values={k: v for k, v in kv.items() if not k.startswith("fit.")})
    return sim, fit


def _fit_config(sim: SimConfig, fit: dict[str, str]) -> ModelConfig:
    base = sim.fit_config()
    values = {k: str(v) for k, v in vars(base).items()}
    values.update(fit)
    return load_dataclass(ModelConfig, values={k: v for k, v in values.items() if not isinstance(v, tuple)})


def _write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


# ---------------------------------------------------------------- subcommands

def cmd_simulate(args) -> None:
    sim = load_dataclass(SimConfig, args.config)
    out = Path(args.out)
    for r in range(sim.replicates):
        d = gen_dataset(sim, r)
        rep = out / f"rep{r:03d}"
        rep.mkdir(parents=True, exist_ok=True)
        write_fields(rep / "Y.sfld", d.Y, sim.K)
        write_fields(rep / "tau.sfld", d.tau[None, :].astype(float), sim.K)
        write_fields(rep / "U.sfld", d.U, sim.K)
        write_fields(rep / "tau_tilde.sfld", d.tau_tilde[None, :], sim.K)
        dump_dataclass(sim, rep / "sim.cfg")
        write_sidecar(rep / "replicate.txt", replicate=r, seed=sim.seed)
    print(f"wrote {sim.replicates} replicate(s) to {out}")


def cmd_fit(args) -> None:
    config = load_dataclass(ModelConfig, args.config)
    if args.prior is not None:
        config = config.replace(prior=args.prior)
    Y, K = read_fields(Path(args.data) / "Y.sfld")
    if K != config.K:
        raise ConfigError(f"data grid K={K} differs from config K={config.K}")
    summary, archive = run_chain(config, Y)
    out = Path(args.out)
    archive.save(out, K)
    write_fields(out / "tau_mean.sfld", summary.tau_mean[None, :], K)
    write_fields(out / "tau_mode.sfld", summary.tau_mode[None, :].astype(float), K)
    write_fields(out / "mode_prob.sfld", summary.mode_prob[None, :], K)
    extra = {} if summary.waic is None else {"waic": summary.waic}
    write_sidecar(out / "summary.txt", prior=config.prior, detected_fraction=float(summary.changepoint.mean()),
                  **{f"mean_{k}": v for k, v in summary.scalar_means.items()}, **extra)
    dump_dataclass(config, out / "model.cfg")
    print(f"{config.iterations} iterations, {archive.seconds_per_iteration:.4f} s/iteration -> {out}")


def cmd_evaluate(args) -> None:
    truth, K = read_fields(args.truth)
    est, K2 = read_fields(args.estimate)
    if K != K2:
        raise ConfigError(f"grids differ: K={K} vs K={K2}")
    print(f"g_rmse={g_rmse(truth[0], est[0], build_grid(K)):.10g}")


def cmd_sht(args) -> None:
    if args.direction == "forward":
        f, K = read_fields(args.inp)
        write_coeffs(args.out, sht_forward(f, build_grid(K), args.L), args.L)
    else:
        c, L = read_coeffs(args.inp)
        if args.L is not None and args.L != L:
            raise ConfigError(f"--L {args.L} differs from file degree {L}")
        K = args.K if args.K is not None else 2 * (L + 1)
        write_fields(args.out, sht_inverse(c, build_grid(K)), K)


def bounds_rows(scenario: str, reading: str = "corrected", M_values=None):
    grid = BOUNDS_SCENARIOS[scenario]
    rows = []
    for M in (M_values or grid.M):
        for vZ in grid.vZ:
            for kappa in grid.kappa:
                for nu in grid.nu:
                    gammas = None
                    if scenario == "equal-dist":
                        gammas = thresholds_equal_distance(M, spread_endpoint(vZ))
                    inp = bound_input(M, vZ, kappa, nu, gammas=gammas, reading=reading)
                    rows.append((M, M, vZ, kappa, nu, f"{expected_mae_bound(inp):.4f}"))
    return rows


def cmd_bounds(args) -> None:
    M_values = _int_list(args.M) if args.M else None
    rows = bounds_rows(args.scenario, args.reading, M_values)
    _write_csv(args.out, ("M", "observed_categories", "v_Z", "kappa", "nu", "MAE"), rows)
    print(f"{len(rows)} rows -> {args.out}")


def cmd_coupled(args) -> None:
    levels = _int_list(args.levels)
    sim, fit = _split_config(args.config)
    config = _fit_config(sim, fit)
    bad = [L for L in levels if not 0 <= L <= sim.K // 2 - 1]
    if bad:
        raise ConfigError(f"levels {bad} exceed the grid maximum {sim.K // 2 - 1}")
    grid = build_grid(sim.K)
    rows = []
    for r in range(sim.replicates):
        d = gen_dataset(sim, r)
        for rec in run_coupled(config, d.Y, levels, d.tau, grid):
            rows.append((r, rec["L"], f"{rec['g_rmse']:.6f}"))
    _write_csv(args.out, ("replicate", "L", "g_rmse"), rows)
    arr = np.array([[float(v) for v in row] for row in rows])
    means = np.array([arr[arr[:, 1] == L, 2].mean() for L in levels])
    if len(levels) >= 3:
        fit_ = fit_exp_decay(levels, means)
        print(f"a={fit_.a:.6g} b={fit_.b:.6g} c={fit_.c:.6g} residual={fit_.residual:.3g}")
    print(f"{len(rows)} rows -> {args.out}")


def cmd_csep(args) -> None:
    cfg = load_dataclass(CsepConfig, args.params)
    u = np.linspace(0.0, cfg.u_max, cfg.n_u)
    h = np.linspace(0.0, cfg.h_max, cfg.n_h)
    spec = MaternSpec(1.0, cfg.kappa, cfg.nu)
    rows = []
    for xd in cfg.xi_d:
        p = DynamicsParams(xi_r=cfg.xi_r, xi_d=float(xd), sigma2=cfg.sigma2, matern=spec)
        rows.append((xd, f"{csep(p, u, h, cfg.L):.6e}"))
    _write_csv(args.out, ("xi_d", "c_sep"), rows)
    print(f"{len(rows)} rows -> {args.out}")


def bench_rows(sizes, iterations: int = 5, dense_iterations: int = 2, seed: int = 0):
    rows = []
    for K in sizes:
        sim = SimConfig(K=K, seed=seed)
        d = gen_dataset(sim, 0)
        model = Model(sim.fit_config(), d.Y)
        state = init_state(model)
        gibbs_step(state, model)
        t0 = time.perf_counter()
        for _ in range(iterations):
            gibbs_step(state, model)
        spectral = (time.perf_counter() - t0) / iterations
        dense = float("nan")
        grid = model.grid
        if grid.N <= DENSE_MAX_POINTS:
            ref = DenseReference(grid, d.Y, normalized_spec(sim.kappa_U, sim.nu_U),
                                 normalized_spec(model.config.kappa_Z, model.config.nu_Z),
                                 L_cov=grid.lmax, max_points=DENSE_MAX_POINTS, seed=seed)
            ref.step()
            dense = time_dense_reference(ref, dense_iterations)
        rows.append((K, grid.N, spectral, dense, dense / spectral))
    return rows


def cmd_bench(args) -> None:
    rows = bench_rows(_int_list(args.sizes), args.iterations, args.dense_iterations)
    header = ("K", "N", "spectral_s_per_it", "dense_s_per_it", "ratio")
    fmt = [(K, N, f"{s:.5f}", f"{dn:.5f}", f"{r:.1f}") for K, N, s, dn, r in rows]
    if args.out:
        _write_csv(args.out, header, fmt)
    w = csv.writer(sys.stdout)
    w.writerow(header)
    w.writerows(fmt)


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sphcp", description="Spatially varying changepoints on the sphere.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="generate synthetic datasets")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_simulate)

    s = sub.add_parser("fit", help="run the Gibbs sampler on one dataset")
    s.add_argument("--config", required=True)
    s.add_argument("--data", required=True, help="directory holding Y.sfld")
    s.add_argument("--out", required=True)
    s.add_argument("--prior", choices=("mpm", "ind"))
    s.set_defaults(fn=cmd_fit)

    s = sub.add_parser("evaluate", help="g-RMSE between two single-field SFLD1 files")
    s.add_argument("--truth", required=True)
    s.add_argument("--estimate", required=True)
    s.set_defaults(fn=cmd_evaluate)

    s = sub.add_parser("sht", help="spherical harmonic transform of SFLD1/SCOF1 files")
    s.add_argument("direction", choices=("forward", "inverse"))
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--L", type=int)
    s.add_argument("--K", type=int, help="output grid for inverse (default 2(L+1))")
    s.set_defaults(fn=cmd_sht)

    s = sub.add_parser("bounds", help="worst-case expected MAE table")
    s.add_argument("--scenario", choices=tuple(BOUNDS_SCENARIOS), required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--reading", choices=("corrected", "literal"), default="corrected")
    s.add_argument("--M", help="comma-separated window lengths (default 10,50,100)")
    s.set_defaults(fn=cmd_bounds)

    s = sub.add_parser("coupled", help="coupled chains across truncation degrees")
    s.add_argument("--levels", required=True)
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_coupled)

    s = sub.add_parser("csep", help="separability diagnostic sweep")
    s.add_argument("--params")
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_csep)

    s = sub.add_parser("bench", help="per-iteration spectral vs dense timing")
    s.add_argument("--sizes", required=True, help="comma-separated grid sizes K")
    s.add_argument("--iterations", type=int, default=5)
    s.add_argument("--dense-iterations", type=int, default=2)
    s.add_argument("--out")
    s.set_defaults(fn=cmd_bench)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"I/O failure: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return 0


if __name__ == "__main__":
    sys.exit(main())
