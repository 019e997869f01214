"""Separability diagnostic c_sep across spectral diffusivities."""

import argparse

import numpy as np

from sphcp.dynamics import DynamicsParams, csep
from sphcp.spectral_prior import MaternSpec


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--xi-r", type=float, default=0.5)
    ap.add_argument("--kappa", type=float, default=5.0)
    ap.add_argument("--nu", type=float, default=1.0)
    ap.add_argument("--L", type=int, default=89)
    args = ap.parse_args()
    u = np.linspace(0.0, np.pi, 91)
    h = np.linspace(0.0, 10.0, 51)
    spec = MaternSpec(1.0, args.kappa, args.nu)
    print("xi_d,c_sep")
    for xd in np.concatenate([[0.0], np.logspace(-4, 6, 21)]):
        p = DynamicsParams(xi_r=args.xi_r, xi_d=float(xd), sigma2=1.0, matern=spec)
        print(f"{xd:.4g},{csep(p, u, h, args.L):.6e}")


if __name__ == "__main__":
    main()
