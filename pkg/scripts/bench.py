"""Per-iteration wall time of the spectral sampler against the dense-covariance reference."""

import argparse

from sphcp.cli import bench_rows


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--sizes", default="10,20,40")
    ap.add_argument("--iterations", type=int, default=20)
    ap.add_argument("--dense-iterations", type=int, default=3)
    args = ap.parse_args()
    sizes = [int(v) for v in args.sizes.split(",")]
    print(f"{'K':>4} {'N':>6} {'spectral s/it':>14} {'dense s/it':>11} {'ratio':>7}")
    for K, N, s, d, r in bench_rows(sizes, args.iterations, args.dense_iterations):
        print(f"{K:>4} {N:>6} {s:>14.5f} {d:>11.4f} {r:>7.1f}")


if __name__ == "__main__":
    main()
