"""``spinelab`` command line: project | phantoms | features | select | cluster | evaluate.

Every subcommand accepts ``--config`` (INI, ``[pipeline]`` section),
``--seed`` and ``--out``; flags override the config file. Each run writes a
``manifest_<command>.json`` into the output directory.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import pipeline as pl
from .evaluation import average_image, contingency, majority_accuracy, majority_mapping
from .imgcore import (ImageStack, InvalidInputError, PgmFormatError, gen_phantom, median_filter,
                      mip, read_pgm, sample_phantom_spec, write_pgm)
from .intprof import DetectionError


def _out_dir(cfg) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_project(cfg) -> int:
    """Median filter (r=1) every slice of each stack directory, then project."""
    root = Path(cfg.stacks)
    if not root.is_dir():
        raise InvalidInputError(f"stack directory {cfg.stacks!r} does not exist")
    stacks = sorted(p for p in root.iterdir() if p.is_dir())
    if not stacks:
        raise InvalidInputError(f"no stack subdirectories in {root}")
    out = _out_dir(cfg)
    written, failures, inputs = [], [], []
    for s in stacks:
        slices = sorted(s.glob("*.pgm"))
        inputs.extend(slices)
        try:
            stack = ImageStack(tuple(median_filter(read_pgm(p), 1) for p in slices))
            path = out / f"{s.name}.pgm"
            write_pgm(mip(stack), path)
            written.append(path)
        except (OSError, PgmFormatError, InvalidInputError) as exc:
            failures.append({"stack": s.name, "error": str(exc)})
            print(f"spinelab project: {s.name}: {exc}", file=sys.stderr)
    pl.write_json(out / "manifest_project.json", pl.manifest("project", cfg, inputs, written, failures))
    return 1 if not written else 0


def cmd_phantoms(cfg) -> int:
    """Write a labelled phantom corpus: rois/, masks/, labels.csv."""
    out = _out_dir(cfg)
    (out / "rois").mkdir(exist_ok=True)
    (out / "masks").mkdir(exist_ok=True)
    labels, written = [], []
    for ci, cls in enumerate(cfg.classes):
        for i in range(cfg.per_class):
            seed = int(np.random.SeedSequence([cfg.seed, ci, i]).generate_state(1)[0])
            spec = sample_phantom_spec(cls, seed, cfg.noise_sigma)
            img, mask = gen_phantom(spec)
            sid = f"{cls}_{i:03d}"
            write_pgm(img, out / "rois" / f"{sid}.pgm")
            write_pgm(mask.astype(np.float64), out / "masks" / f"{sid}.pgm")
            labels.append((sid, cls))
    pl.write_pairs(out / "labels.csv", "label", labels)
    written.append(out / "labels.csv")
    pl.write_json(out / "manifest_phantoms.json", pl.manifest("phantoms", cfg, (), written))
    return 0


def cmd_features(cfg) -> int:
    if not cfg.rois:
        raise InvalidInputError("features needs an ROI directory (--rois)")
    files = pl.spine_files(cfg.rois)
    if not files:
        raise InvalidInputError(f"no PGM files in {cfg.rois}")
    masks = dict(pl.spine_files(cfg.masks)) if cfg.masks else {}
    jobs = [(sid, str(p), str(masks[sid]) if sid in masks else None, cfg.families) for sid, p in files]
    results = pl.compute_features(jobs, pl.worker_count())

    out = _out_dir(cfg)
    failures = [{"spine_id": sid, "error": err} for sid, _, err in results if err is not None]
    for f in failures:
        print(f"spinelab features: {f['spine_id']}: {f['error']}", file=sys.stderr)
    ok = [(sid, feats) for sid, feats, err in results if err is None]
    written = []
    for fam in cfg.families:
        path = out / f"features_{fam}.csv"
        vals = np.array([feats[fam] for _, feats in ok]).reshape(len(ok), pl.FAMILY_DIMS[fam])
        pl.write_feature_csv(path, [sid for sid, _ in ok], pl.column_names(fam), vals)
        written.append(path)
    pl.write_json(out / "manifest_features.json",
                  pl.manifest("features", cfg, [p for _, p in files], written, failures))
    return 1 if failures else 0


def cmd_select(cfg, features_dir) -> int:
    out = _out_dir(cfg)
    written = []
    for fam in cfg.families:
        fm = pl.read_feature_csv(Path(features_dir) / f"features_{fam}.csv")
        sub, res = pl.select_family(fm, fam, cfg.target, cfg.standardize_selection)
        path = out / f"selected_{fam}.csv"
        pl.write_feature_csv(path, list(sub.row_ids), sub.column_names, sub.values)
        written.append(path)
        if res is not None:
            jpath = out / f"selection_{fam}.json"
            jpath.write_text(res.to_json() + "\n")
            written.append(jpath)
    pl.write_json(out / "manifest_select.json", pl.manifest("select", cfg, [features_dir], written))
    return 0


def cmd_cluster(cfg, features_dir) -> int:
    names = list(cfg.families) + [c for c in cfg.combine if c not in cfg.families]
    needed = sorted({p for n in names for p in n.split("+")})
    mats = {}
    for fam in needed:
        path = Path(features_dir) / f"features_{fam}.csv"
        if not path.exists():
            raise InvalidInputError(f"missing feature table {path}")
        mats[fam] = pl.read_feature_csv(path)
    out = _out_dir(cfg)
    written, summary = [], {}
    for name in names:
        ci = pl.cluster_input(name, mats, cfg)
        res = pl.run_xmeans(ci, cfg)
        tag = name.replace("+", "_")
        jpath = out / f"clustering_{tag}.json"
        pl.write_json(jpath, pl.clustering_json(res, ci))
        cpath = out / f"assignment_{tag}.csv"
        pl.write_pairs(cpath, "cluster", zip(ci.ids, (int(a) for a in res.best.assignment)))
        written += [jpath, cpath]
        summary[name] = {"k": res.best.k, "columns": len(ci.columns), "spines": len(ci.ids)}
        print(f"{name}: {len(ci.columns)} columns, {len(ci.ids)} spines, k = {res.best.k}")
    pl.write_json(out / "manifest_cluster.json",
                  pl.manifest("cluster", cfg, [features_dir], written, extra={"summary": summary}))
    return 0


def cmd_evaluate(cfg, clustering_path) -> int:
    if not cfg.labels:
        raise InvalidInputError("evaluate needs a labels CSV (--labels)")
    data = json.loads(Path(clustering_path).read_text())
    ids = data.get("spine_ids")
    if ids is None:
        raise InvalidInputError(f"{clustering_path} carries no spine_ids")
    assign = dict(zip(ids, data["assignment"]))
    labels = pl.read_pairs(cfg.labels, "label")
    missing = sorted(set(ids) - set(labels))
    extra = sorted(set(labels) - set(ids))
    if missing or extra:
        raise InvalidInputError(f"spine id mismatch; unlabelled: {missing}; not clustered: {extra}")
    order = sorted(ids)
    classes = list(dict.fromkeys(labels[s] for s in order))
    table = contingency([assign[s] for s in order], [labels[s] for s in order], classes=classes)
    acc = majority_accuracy(table)
    mapping = majority_mapping(table)

    out = _out_dir(cfg)
    written = [out / "contingency.csv", out / "report.md"]
    (out / "contingency.csv").write_text(table.to_csv())
    if cfg.masks:
        masks = dict(pl.spine_files(cfg.masks))
        lost = [s for s in order if s not in masks]
        if lost:
            raise InvalidInputError(f"no mask for spine ids: {lost}")
        mask_list = [read_pgm(masks[s]) > 0.5 for s in order]
        for j in table.clusters:
            avg = average_image(mask_list, [assign[s] for s in order], j, cfg.canvas)
            path = out / f"average_cluster{j}.pgm"
            write_pgm(avg.image, path)
            written.append(path)
    lines = [
        f"# Cluster evaluation: {data.get('family', Path(clustering_path).stem)}",
        "",
        f"Spines: {table.total}. Clusters: {len(table.clusters)}.",
        "",
        "| class | " + " | ".join(f"cluster {j}" for j in table.clusters) + " |",
        "|---|" + "---|" * len(table.clusters),
    ]
    for c, row in zip(table.classes, table.counts):
        lines.append(f"| {c} | " + " | ".join(str(int(v)) for v in row) + " |")
    lines += [
        "",
        "Majority class per cluster: " + ", ".join(f"{j} -> {m}" for j, m in zip(table.clusters, mapping)),
        "",
        f"Majority-mapping accuracy: {100 * acc:.2f}% ({int(table.counts.max(axis=0).sum())}/{table.total})",
        "",
    ]
    (out / "report.md").write_text("\n".join(lines))
    print(f"accuracy {100 * acc:.2f}%")
    pl.write_json(out / "manifest_evaluate.json",
                  pl.manifest("evaluate", cfg, [clustering_path, cfg.labels], written,
                              extra={"accuracy": acc}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI file with a [pipeline] section")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output directory")

    p = argparse.ArgumentParser(prog="spinelab", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("project", parents=[common], help="median filter + MIP of z-stacks")
    s.add_argument("--stacks", help="directory with one subdirectory of PGM slices per stack")

    s = sub.add_parser("phantoms", parents=[common], help="generate a labelled phantom corpus")
    s.add_argument("--classes")
    s.add_argument("--per-class", type=int, dest="per_class")
    s.add_argument("--noise-sigma", type=float, dest="noise_sigma")

    s = sub.add_parser("features", parents=[common], help="per-spine feature tables")
    s.add_argument("--rois")
    s.add_argument("--masks")
    s.add_argument("--families")

    for name, helptext in (("select", "feature selection per family"),
                           ("cluster", "selection, z-scoring and x-means per family")):
        s = sub.add_parser(name, parents=[common], help=helptext)
        s.add_argument("--features", required=True, help="directory holding features_<family>.csv")
        s.add_argument("--families")
        s.add_argument("--target", type=int)
        if name == "cluster":
            s.add_argument("--combine", help="comma list such as hog+dnsm,dnsm+intprof ('' for none)")
            s.add_argument("--kmin", type=int)
            s.add_argument("--kmax", type=int)
            s.add_argument("--restarts", type=int)

    s = sub.add_parser("evaluate", parents=[common], help="compare a clustering with labels")
    s.add_argument("--clustering", required=True)
    s.add_argument("--labels")
    s.add_argument("--masks")
    s.add_argument("--canvas", type=int)
    return p


_NOT_CONFIG = ("command", "config", "features", "clustering")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {k: v for k, v in vars(args).items() if k not in _NOT_CONFIG}
    try:
        cfg = pl.load_config(args.config, overrides)
        if args.command == "project":
            return cmd_project(cfg)
        if args.command == "phantoms":
            return cmd_phantoms(cfg)
        if args.command == "features":
            return cmd_features(cfg)
        if args.command == "select":
            return cmd_select(cfg, args.features)
        if args.command == "cluster":
            return cmd_cluster(cfg, args.features)
        return cmd_evaluate(cfg, args.clustering)
    except (InvalidInputError, PgmFormatError, DetectionError, OSError) as exc:
        print(f"spinelab {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
