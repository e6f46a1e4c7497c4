#!/usr/bin/env python3
"""How often does x-means recover the number of planted Gaussian blobs?

    python scripts/xmeans_recovery.py --ks 2 3 4 5 --trials 50 --sep 10
"""

import argparse
import time

import numpy as np

from spinelab.cluster import xmeans


def planted(k, seed, d, sep, per):
    r = np.random.default_rng([seed, k])
    centers = []
    while len(centers) < k:
        c = r.uniform(0, sep * k, size=d)
        if all(np.linalg.norm(c - o) >= sep for o in centers):
            centers.append(c)
    return np.vstack([c + r.normal(size=(per, d)) for c in centers])


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--ks", type=int, nargs="+", default=[2, 3, 4, 5])
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--dim", type=int, default=8)
    p.add_argument("--sep", type=float, default=10.0, help="minimum center distance in sigmas")
    p.add_argument("--per", type=int, default=100, help="points per blob")
    p.add_argument("--kmax", type=int, default=10)
    a = p.parse_args()
    for k in a.ks:
        t0 = time.perf_counter()
        found = [xmeans(planted(k, t, a.dim, a.sep, a.per), 2, a.kmax, seed=t).best.k for t in range(a.trials)]
        hist = np.bincount(found, minlength=a.kmax + 1)[2:]
        print(f"k={k}: {hist[k - 2]}/{a.trials} exact, chosen-k histogram {hist.tolist()} "
              f"({time.perf_counter() - t0:.1f}s)")


if __name__ == "__main__":
    main()
