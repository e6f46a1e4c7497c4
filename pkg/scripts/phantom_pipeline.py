#!/usr/bin/env python3
"""Run phantoms -> features -> cluster -> evaluate end to end in one directory.

    python scripts/phantom_pipeline.py --out runs/demo --per-class 8 --seed 3
"""

import argparse
import sys
from pathlib import Path

from spinelab.cli import main


def run(argv):
    print("$ spinelab " + " ".join(argv))
    rc = main(argv)
    if rc:
        sys.exit(rc)


def parse_args():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", default="runs/phantoms")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--per-class", type=int, default=8)
    p.add_argument("--classes", default="mushroom,stubby")
    p.add_argument("--families", default="hog,morph,intprof")
    return p.parse_args()


def main_script():
    a = parse_args()
    out = Path(a.out)
    seed = ["--seed", str(a.seed)]
    run(["phantoms", *seed, "--out", str(out / "data"), "--classes", a.classes,
         "--per-class", str(a.per_class)])
    run(["features", *seed, "--out", str(out / "features"), "--rois", str(out / "data" / "rois"),
         "--masks", str(out / "data" / "masks"), "--families", a.families])
    run(["cluster", *seed, "--out", str(out / "clusters"), "--features", str(out / "features"),
         "--families", a.families, "--combine", ""])
    for fam in a.families.split(","):
        run(["evaluate", *seed, "--out", str(out / "eval" / fam),
             "--clustering", str(out / "clusters" / f"clustering_{fam}.json"),
             "--labels", str(out / "data" / "labels.csv"), "--masks", str(out / "data" / "masks")])


if __name__ == "__main__":
    main_script()
