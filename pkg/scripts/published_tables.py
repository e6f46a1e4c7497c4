#!/usr/bin/env python3
"""Print majority-mapping accuracy for the published contingency tables."""

from pathlib import Path

from spinelab.evaluation import ContingencyTable, majority_accuracy, majority_mapping

DATA = Path(__file__).resolve().parents[1] / "tests" / "data"


def main():
    for path in sorted(DATA.glob("published_*.csv")):
        t = ContingencyTable.from_csv(path.read_text())
        name = path.stem.removeprefix("published_")
        prior = t.counts.sum(axis=1).max() / t.total
        print(f"{name:14s} {100 * majority_accuracy(t):6.2f}%  (prior {100 * prior:.2f}%)  "
              f"clusters -> {''.join(majority_mapping(t))}")


if __name__ == "__main__":
    main()
