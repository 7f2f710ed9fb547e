"""Sample the three kinds of channel prior and compare their texture.

A rough fBM channel (H=0.1) anti-correlates consecutive increments, a smooth
one (H=0.9) correlates them, and a fixed bridge pins its mean to two
endpoints. Run ``python3 demos/prior_paths.py [--csv out.csv]``.
"""
import argparse
import csv

import numpy as np

from mgpvae import gp_prior

N_FRAMES = 8
PRIORS = {
    "fbm H=0.1": gp_prior.fbm(0.1, N_FRAMES),
    "fbm H=0.9": gp_prior.fbm(0.9, N_FRAMES),
    "bridge -2 to 2": gp_prior.bridge(-2.0, 2.0, N_FRAMES),
}


def lag1_increment_correlation(paths):
    """Correlation of consecutive increments of centred paths."""
    inc = np.diff(paths, axis=1)
    return float(np.mean(inc[:, 1:] * inc[:, :-1]) / np.mean(inc * inc))


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--paths", type=int, default=5000)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--csv", help="also write the first 5 paths of every prior here")
    args = parser.parse_args()

    rng = np.random.default_rng(args.seed)
    samples = {}
    for name, spec in PRIORS.items():
        path = gp_prior.prior_path(spec)
        samples[name] = gp_prior.sample_path(path, rng.standard_normal((args.paths, N_FRAMES)))
        print(f"{name:>15}: mean {np.round(path.mean, 2)}, "
              f"lag-1 increment correlation {lag1_increment_correlation(samples[name] - path.mean):+.3f}")

    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["prior", "path_id", "t", "value"])
            for name, paths in samples.items():
                for i, path in enumerate(paths[:5]):
                    out.writerows([name, i, t + 1, repr(float(v))] for t, v in enumerate(path))
        print(f"wrote {args.csv}")


if __name__ == "__main__":
    main()
