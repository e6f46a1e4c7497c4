"""Pipeline plumbing shared by the CLI and the experiment scripts.

File formats:

* feature CSV: ``spine_id`` then one column per feature, rows sorted by id,
  floats written with ``repr`` so they round-trip exactly;
* labels CSV: ``spine_id,label``;
* assignment CSV: ``spine_id,cluster``;
* clustering JSON: ``{k, assignment, centroids, inertia, bic, trace, spine_ids, columns}``.
"""

from __future__ import annotations

import configparser
import csv
import hashlib
import io
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from .cluster import MAX_LLOYD_ITERS, xmeans, zscore
from .dnsm import N_PARAMS, FitHyper, binarize, segment, to_feature
from .featsel import FeatureMatrix, select_features
from .hogfeat import HogParams, compute_hog
from .imgcore import InvalidInputError, read_pgm
from .intprof import INTPROF_DIM, INTPROF_SPLIT, ChanVeseParams, intensity_profile
from .morphfeat import MORPH_NAMES, compute_morph, largest_component

FAMILIES = ("hog", "dnsm", "morph", "intprof")
FAMILY_DIMS = {"hog": HogParams().length, "dnsm": N_PARAMS, "morph": len(MORPH_NAMES), "intprof": INTPROF_DIM}
# families that are clustered on their raw columns
UNSELECTED = ("morph",)


def column_names(family: str) -> tuple:
    if family == "hog":
        return tuple(f"h{j:03d}" for j in range(FAMILY_DIMS["hog"]))
    if family == "dnsm":
        return tuple(f"d{j:03d}" for j in range(N_PARAMS))
    if family == "morph":
        return MORPH_NAMES
    if family == "intprof":
        return tuple(f"p{j:03d}" for j in range(INTPROF_DIM))
    raise InvalidInputError(f"unknown feature family {family!r}")


def worker_count() -> int:
    """Pool size from ``SPINELAB_WORKERS`` (default: CPU count), at least 1."""
    raw = os.environ.get("SPINELAB_WORKERS", "")
    if raw.strip():
        try:
            n = int(raw)
        except ValueError:
            raise InvalidInputError(f"SPINELAB_WORKERS={raw!r} is not an integer") from None
        return max(1, n)
    return max(1, os.cpu_count() or 1)


# ------------------------------------------------------------------ config


@dataclass(frozen=True)
class PipelineConfig:
    rois: str = ""
    masks: str = ""
    labels: str = ""
    stacks: str = ""
    families: tuple = FAMILIES
    combine: tuple = ("hog+dnsm", "dnsm+intprof")
    target: int = 100
    standardize_selection: bool = False
    kmin: int = 2
    kmax: int = 10
    restarts: int = 10
    seed: int = 0
    out: str = "out"
    # phantom corpus
    classes: tuple = ("mushroom", "stubby", "thin", "filopodia")
    per_class: int = 10
    noise_sigma: float = 0.05
    canvas: int = 64

    def __post_init__(self):
        fams = _as_tuple(self.families)
        combos = _as_tuple(self.combine)
        object.__setattr__(self, "families", fams)
        object.__setattr__(self, "combine", combos)
        object.__setattr__(self, "classes", _as_tuple(self.classes))
        if not fams:
            raise InvalidInputError("at least one feature family is required")
        for f in fams + tuple(p for c in combos for p in c.split("+")):
            if f not in FAMILIES:
                raise InvalidInputError(f"unknown feature family {f!r}")
        if self.kmin < 1 or self.kmin > self.kmax:
            raise InvalidInputError(f"invalid cluster range [{self.kmin}, {self.kmax}]")
        if self.target < 1:
            raise InvalidInputError("selection target must be >= 1")
        for f in fams:
            if f not in UNSELECTED and self.target > FAMILY_DIMS[f]:
                raise InvalidInputError(f"selection target {self.target} exceeds the {f} dimension {FAMILY_DIMS[f]}")
        if self.restarts < 1 or self.per_class < 0 or self.canvas < 1:
            raise InvalidInputError("restarts, per_class and canvas must be positive")

    def as_dict(self) -> dict:
        """Settings that shape results; the output location is left out."""
        d = asdict(self)
        del d["out"]
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.as_dict(), sort_keys=True).encode()).hexdigest()


def _as_tuple(v) -> tuple:
    if isinstance(v, str):
        return tuple(s.strip() for s in v.split(",") if s.strip())
    return tuple(v)


def load_config(path=None, overrides=None) -> PipelineConfig:
    """Read the ``[pipeline]`` section of an INI file, then apply overrides (flags win)."""
    values = {}
    types = {f.name: f.type for f in fields(PipelineConfig)}
    if path:
        parser = configparser.ConfigParser()
        if not parser.read(path):
            raise InvalidInputError(f"cannot read config file {path}")
        if parser.has_section("pipeline"):
            for key, raw in parser["pipeline"].items():
                if key not in types:
                    raise InvalidInputError(f"unknown config key {key!r}")
                values[key] = _coerce(key, raw)
    for key, v in (overrides or {}).items():
        if v is not None:
            values[key] = v
    return replace(PipelineConfig(), **values)


def _coerce(key, raw: str):
    default = getattr(PipelineConfig(), key)
    if isinstance(default, bool):
        return raw.strip().lower() in ("1", "true", "yes", "on")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw.strip()


def constants() -> dict:
    """Every decided constant that shapes the outputs."""
    hog = HogParams()
    return {
        "hog": asdict(hog) | {"length": hog.length},
        "dnsm": asdict(FitHyper()) | {"polytopes": 16, "halfspaces": 8, "binarize_threshold": 0.5},
        "chan_vese": asdict(ChanVeseParams()),
        "intprof": {"split": list(INTPROF_SPLIT), "a": 16, "b": 12, "hist_range": [0.0, 1.0]},
        "kmeans": {"max_lloyd_iters": MAX_LLOYD_ITERS, "init": "kmeans++"},
        "cluster_standardization": "zscore",
        "median_radius": 1,
    }


def manifest(command: str, cfg: PipelineConfig, inputs=(), outputs=(), failures=(), extra=None) -> dict:
    """Run record without timestamps, so identical runs produce identical manifests."""
    d = {
        "command": command,
        "version": __version__,
        "numpy": np.__version__,
        "config": cfg.as_dict(),
        "config_hash": cfg.digest(),
        "seed": cfg.seed,
        "constants": constants(),
        "inputs": [str(p) for p in inputs],
        "outputs": {Path(p).name: _sha256(p) for p in outputs},
        "failures": list(failures),
    }
    if extra:
        d.update(extra)
    return d


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


# --------------------------------------------------------------------- tables


def write_feature_csv(path, ids, columns, values) -> None:
    values = np.asarray(values, dtype=np.float64)
    order = sorted(range(len(ids)), key=lambda i: ids[i])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["spine_id", *columns])
    for i in order:
        w.writerow([ids[i], *(repr(float(v)) for v in values[i])])
    Path(path).write_text(buf.getvalue())


def read_feature_csv(path) -> FeatureMatrix:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][:1] != ["spine_id"]:
        raise InvalidInputError(f"{path}: missing spine_id header")
    ids = tuple(r[0] for r in rows[1:])
    vals = np.array([[float(v) for v in r[1:]] for r in rows[1:]], dtype=np.float64)
    if vals.size == 0:
        vals = vals.reshape(0, len(rows[0]) - 1)
    return FeatureMatrix(vals, tuple(rows[0][1:]), ids)


def read_pairs(path, value_name: str) -> dict:
    """Two-column CSV ``spine_id,<value_name>`` as a dict."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["spine_id", value_name]:
        raise InvalidInputError(f"{path}: expected header spine_id,{value_name}")
    out = {}
    for r in rows[1:]:
        if len(r) != 2:
            raise InvalidInputError(f"{path}: malformed row {r}")
        out[r[0]] = r[1]
    return out


def write_pairs(path, value_name: str, pairs) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["spine_id", value_name])
    for k, v in sorted(pairs):
        w.writerow([k, v])
    Path(path).write_text(buf.getvalue())


def spine_files(directory) -> list:
    """``(spine_id, path)`` for every PGM in ``directory``, ids sorted."""
    d = Path(directory)
    if not d.is_dir():
        raise InvalidInputError(f"{directory} is not a directory")
    return sorted((p.stem, p) for p in d.glob("*.pgm"))


# ------------------------------------------------------------------- features


def spine_features(image, families, mask=None) -> dict:
    """All requested feature vectors for one ROI.

    Without an annotation mask the morphological features use the largest
    component of the binarized DNSM fit.
    """
    out = {}
    model = None
    if "hog" in families:
        out["hog"] = compute_hog(image)
    if "dnsm" in families or ("morph" in families and mask is None):
        model = segment(image)
    if "dnsm" in families:
        out["dnsm"] = to_feature(model)
    if "morph" in families:
        if mask is None:
            h, w = image.shape
            mask = binarize(model, w, h)
            if not mask.any():
                raise InvalidInputError("DNSM fit produced an empty mask")
            mask = largest_component(mask)
        out["morph"] = compute_morph(mask).as_array()
    if "intprof" in families:
        out["intprof"] = intensity_profile(image)
    return out


def _feature_job(args):
    sid, roi_path, mask_path, families = args
    try:
        img = read_pgm(roi_path)
        mask = read_pgm(mask_path) > 0.5 if mask_path is not None else None
        return sid, spine_features(img, families, mask), None
    except Exception as exc:  # recorded per spine, the row is skipped
        return sid, None, f"{type(exc).__name__}: {exc}"


def compute_features(jobs, workers: int = 1) -> list:
    """Run ``(sid, roi_path, mask_path, families)`` jobs; results keep job order."""
    if workers <= 1 or len(jobs) <= 1:
        return [_feature_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
        return list(pool.map(_feature_job, jobs))


# ------------------------------------------------------------------ clustering


@dataclass
class ClusterInput:
    name: str
    ids: tuple
    columns: tuple
    values: np.ndarray
    selections: dict = field(default_factory=dict)  # family -> SelectionResult


def select_family(fm: FeatureMatrix, family: str, target: int, standardize: bool = False):
    """Selected sub-matrix for ``family`` (morph passes through)."""
    if family in UNSELECTED:
        return fm, None
    if target > fm.n_features:
        raise InvalidInputError(f"selection target {target} exceeds the {family} dimension {fm.n_features}")
    res = select_features(fm, target=target, standardize=standardize)
    return fm.take(res.kept), res


def cluster_input(name: str, matrices: dict, cfg: PipelineConfig) -> ClusterInput:
    """Selected (and, for combinations, concatenated) matrix for ``name``."""
    parts = name.split("+")
    common = set.intersection(*(set(matrices[p].row_ids) for p in parts))
    ids = tuple(sorted(common))
    if len(ids) < 2:
        raise InvalidInputError(f"{name}: fewer than two spines have features")
    blocks, cols, sels = [], [], {}
    for p in parts:
        fm = matrices[p]
        pos = {sid: i for i, sid in enumerate(fm.row_ids)}
        fm = FeatureMatrix(fm.values[[pos[s] for s in ids]], fm.column_names, ids)
        sub, res = select_family(fm, p, cfg.target, cfg.standardize_selection)
        blocks.append(sub.values)
        prefix = f"{p}:" if len(parts) > 1 else ""
        cols.extend(prefix + c for c in sub.column_names)
        if res is not None:
            sels[p] = res
    return ClusterInput(name, ids, tuple(cols), np.hstack(blocks), sels)


def run_xmeans(ci: ClusterInput, cfg: PipelineConfig):
    n = ci.values.shape[0]
    kmax = min(cfg.kmax, n)
    if cfg.kmin > kmax:
        raise InvalidInputError(f"{ci.name}: {n} spines cannot support kmin={cfg.kmin}")
    return xmeans(zscore(ci.values), cfg.kmin, kmax, seed=cfg.seed, restarts=cfg.restarts)


def clustering_json(result, ci: ClusterInput) -> dict:
    d = json.loads(result.to_json(spine_ids=ci.ids))
    d["columns"] = list(ci.columns)
    d["family"] = ci.name
    return d
