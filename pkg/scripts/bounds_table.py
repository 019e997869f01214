"""Worst-case expected MAE of the truncated changepoint prior over the scenario grids."""

import argparse

from sphcp.cli import BOUNDS_SCENARIOS, bounds_rows


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--reading", choices=("corrected", "literal"), default="corrected")
    args = ap.parse_args()
    for scenario in BOUNDS_SCENARIOS:
        print(f"# {scenario} ({args.reading})")
        print(f"{'M':>4} {'v_Z':>5} {'kappa':>6} {'nu':>4} {'MAE':>8}")
        for M, _, vZ, kappa, nu, mae in bounds_rows(scenario, args.reading):
            print(f"{M:>4} {vZ:>5g} {kappa:>6g} {nu:>4g} {mae:>8}")


if __name__ == "__main__":
    main()
