"""g-RMSE against truncation degree with coupled IND chains, plus the exponential-decay fit."""

import argparse

from sphcp.harness import SimConfig
from sphcp.studies import truncation_decay


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--K", type=int, default=40)
    ap.add_argument("--levels", default="4,9,14,19")
    ap.add_argument("--delta", type=float, default=1.5)
    ap.add_argument("--generator", choices=("minmax", "cdf"), default="cdf")
    ap.add_argument("--kappa-tau", type=float, default=100.0)
    ap.add_argument("--kappa-U", type=float, default=5.0)
    ap.add_argument("--sigma2-U", type=float, default=0.3)
    ap.add_argument("--sigma2-eps", type=float, default=0.1)
    ap.add_argument("--U-oversample", type=int, default=2)
    ap.add_argument("--replicates", type=int, default=8)
    ap.add_argument("--iterations", type=int, default=1500)
    ap.add_argument("--burn-in", type=int, default=500)
    ap.add_argument("--seed", type=int, default=800)
    args = ap.parse_args()
    levels = [int(v) for v in args.levels.split(",")]
    sim = SimConfig(K=args.K, delta=args.delta, generator=args.generator, kappa_tau=args.kappa_tau,
                    kappa_U=args.kappa_U, sigma2_U=args.sigma2_U, sigma2_eps=args.sigma2_eps,
                    U_oversample=args.U_oversample, replicates=args.replicates, seed=args.seed)
    print("replicate," + ",".join(f"L{L}" for L in levels))
    s = truncation_decay(sim, levels, args.iterations, args.burn_in,
                         progress=lambda r, row: print(f"{r}," + ",".join(f"{v:.5f}" for v in row), flush=True))
    for L, m, se, f in zip(levels, s.mean, s.se, s.fitted(levels)):
        print(f"# L={L:3d} mean {m:.4f} se {se:.4f} fitted {f:.4f}")
    print(f"# fit a={s.fit.a:.5g} b={s.fit.b:.5g} c={s.fit.c:.5g}")


if __name__ == "__main__":
    main()
