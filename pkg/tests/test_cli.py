import json
from pathlib import Path

import numpy as np
import pytest

from spinelab import pipeline as pl
from spinelab.cli import main
from spinelab.imgcore import InvalidInputError, median_filter, mip, read_pgm, write_pgm

DATA = Path(__file__).parent / "data"


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    assert main(["phantoms", "--out", str(root / "ph"), "--seed", "4", "--per-class", "4",
                 "--classes", "mushroom,stubby"]) == 0
    assert main(["features", "--rois", str(root / "ph" / "rois"), "--masks", str(root / "ph" / "masks"),
                 "--families", "hog,morph,intprof", "--out", str(root / "feat")]) == 0
    return root


def test_phantom_corpus_layout(corpus):
    ph = corpus / "ph"
    labels = pl.read_pairs(ph / "labels.csv", "label")
    assert len(labels) == 8 and set(labels.values()) == {"mushroom", "stubby"}
    assert sorted(p.stem for p in (ph / "rois").glob("*.pgm")) == sorted(labels)
    man = json.loads((ph / "manifest_phantoms.json").read_text())
    assert man["seed"] == 4 and "labels.csv" in man["outputs"]


def test_feature_tables(corpus):
    for fam, dim in (("hog", 576), ("morph", 12), ("intprof", 378)):
        fm = pl.read_feature_csv(corpus / "feat" / f"features_{fam}.csv")
        assert fm.values.shape == (8, dim)
        assert list(fm.row_ids) == sorted(fm.row_ids)
    header = (corpus / "feat" / "features_hog.csv").read_text().splitlines()[0].split(",")
    assert header[:2] == ["spine_id", "h000"] and header[-1] == "h575"
    header = (corpus / "feat" / "features_intprof.csv").read_text().splitlines()[0].split(",")
    assert header[-1] == "p377"


def test_feature_csv_round_trips_exactly(tmp_path, rng):
    vals = rng.normal(size=(3, 4)) * 1e-7
    pl.write_feature_csv(tmp_path / "f.csv", ["b", "a", "c"], ["x", "y", "z", "w"], vals)
    fm = pl.read_feature_csv(tmp_path / "f.csv")
    assert fm.row_ids == ("a", "b", "c")
    assert np.array_equal(fm.values, vals[[1, 0, 2]])


def test_cluster_outputs_and_determinism(corpus, tmp_path):
    args = ["cluster", "--features", str(corpus / "feat"), "--families", "hog,morph,intprof",
            "--combine", "hog+intprof", "--kmax", "4", "--restarts", "3", "--target", "20", "--seed", "11"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert "clustering_hog_intprof.json" in names and "assignment_morph.csv" in names
    for name in names:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name
    d = json.loads((tmp_path / "a" / "clustering_hog_intprof.json").read_text())
    assert len(d["columns"]) == 40 and len(d["spine_ids"]) == 8
    assert set(d) >= {"k", "assignment", "centroids", "inertia", "bic", "trace"}
    assert [t["k"] for t in d["trace"]] == [2, 3, 4]
    morph = json.loads((tmp_path / "a" / "clustering_morph.json").read_text())
    assert len(morph["columns"]) == 12  # no selection for morphology


def test_select_command(corpus, tmp_path):
    assert main(["select", "--features", str(corpus / "feat"), "--families", "hog,morph",
                 "--target", "30", "--out", str(tmp_path)]) == 0
    assert pl.read_feature_csv(tmp_path / "selected_hog.csv").n_features == 30
    assert pl.read_feature_csv(tmp_path / "selected_morph.csv").n_features == 12
    assert len(json.loads((tmp_path / "selection_hog.json").read_text())["kept"]) == 30


def test_evaluate_command(corpus, tmp_path):
    cl = tmp_path / "cl"
    assert main(["cluster", "--features", str(corpus / "feat"), "--families", "morph", "--combine", "",
                 "--kmax", "4", "--out", str(cl)]) == 0
    ev = tmp_path / "ev"
    assert main(["evaluate", "--clustering", str(cl / "clustering_morph.json"),
                 "--labels", str(corpus / "ph" / "labels.csv"), "--masks", str(corpus / "ph" / "masks"),
                 "--canvas", "48", "--out", str(ev)]) == 0
    report = (ev / "report.md").read_text()
    assert "Majority-mapping accuracy" in report
    k = json.loads((cl / "clustering_morph.json").read_text())["k"]
    avgs = sorted(ev.glob("average_cluster*.pgm"))
    assert len(avgs) == k and read_pgm(avgs[0]).shape == (48, 48)


def test_evaluate_reports_id_mismatch(corpus, tmp_path, capsys):
    cl = tmp_path / "cl"
    main(["cluster", "--features", str(corpus / "feat"), "--families", "morph", "--combine", "",
          "--kmax", "3", "--out", str(cl)])
    labels = tmp_path / "labels.csv"
    pl.write_pairs(labels, "label", [("mushroom_000", "m"), ("ghost", "s")])
    rc = main(["evaluate", "--clustering", str(cl / "clustering_morph.json"), "--labels", str(labels),
               "--out", str(tmp_path / "ev")])
    assert rc == 2
    err = capsys.readouterr().err
    assert "ghost" in err and "stubby_000" in err


def test_config_file_and_flag_precedence(tmp_path):
    ini = tmp_path / "run.ini"
    ini.write_text("[pipeline]\nkmax = 6\nseed = 3\nfamilies = hog, morph\ncombine =\n")
    cfg = pl.load_config(ini, {"seed": 9})
    assert (cfg.kmax, cfg.seed, cfg.families, cfg.combine) == (6, 9, ("hog", "morph"), ())
    with pytest.raises(InvalidInputError):
        pl.load_config(None, {"target": 500, "families": "intprof"})
    with pytest.raises(InvalidInputError):
        pl.load_config(None, {"kmin": 5, "kmax": 3})
    bad = tmp_path / "bad.ini"
    bad.write_text("[pipeline]\nbogus = 1\n")
    with pytest.raises(InvalidInputError):
        pl.load_config(bad)


def test_target_above_dimension_is_config_error(corpus, tmp_path):
    rc = main(["cluster", "--features", str(corpus / "feat"), "--families", "intprof",
               "--target", "400", "--out", str(tmp_path)])
    assert rc == 2


def test_worker_count(monkeypatch):
    monkeypatch.setenv("SPINELAB_WORKERS", "3")
    assert pl.worker_count() == 3
    monkeypatch.setenv("SPINELAB_WORKERS", "0")
    assert pl.worker_count() == 1
    monkeypatch.setenv("SPINELAB_WORKERS", "many")
    with pytest.raises(InvalidInputError):
        pl.worker_count()


def test_parallel_features_match_serial(corpus, tmp_path, monkeypatch):
    monkeypatch.setenv("SPINELAB_WORKERS", "2")
    assert main(["features", "--rois", str(corpus / "ph" / "rois"), "--families", "hog",
                 "--out", str(tmp_path)]) == 0
    assert (tmp_path / "features_hog.csv").read_bytes() == (corpus / "feat" / "features_hog.csv").read_bytes()


def test_feature_failures_are_recorded(tmp_path):
    rois = tmp_path / "rois"
    rois.mkdir()
    write_pgm(np.random.default_rng(0).random((20, 20)), rois / "good.pgm")
    write_pgm(np.random.default_rng(1).random((16, 24)), rois / "good2.pgm")
    write_pgm(np.zeros((5, 5)), rois / "tiny.pgm")
    rc = main(["features", "--rois", str(rois), "--families", "hog", "--out", str(tmp_path / "f")])
    assert rc == 1
    man = json.loads((tmp_path / "f" / "manifest_features.json").read_text())
    assert [f["spine_id"] for f in man["failures"]] == ["tiny"]
    assert pl.read_feature_csv(tmp_path / "f" / "features_hog.csv").row_ids == ("good", "good2")


def test_project_command(tmp_path, rng):
    stacks = tmp_path / "stacks"
    slices = [np.round(rng.random((10, 12)) * 255) / 255 for _ in range(4)]
    (stacks / "s1").mkdir(parents=True)
    for i, s in enumerate(slices):
        write_pgm(s, stacks / "s1" / f"z{i}.pgm")
    (stacks / "s2").mkdir()
    write_pgm(slices[0], stacks / "s2" / "z0.pgm")
    assert main(["project", "--stacks", str(stacks), "--out", str(tmp_path / "out")]) == 0
    expected = mip([median_filter(s, 1) for s in slices])
    assert np.max(np.abs(read_pgm(tmp_path / "out" / "s1.pgm") - expected)) <= 0.5 / 255 + 1e-12
    assert np.max(np.abs(read_pgm(tmp_path / "out" / "s2.pgm") - median_filter(slices[0], 1))) <= 0.5 / 255 + 1e-12


def test_project_empty_dir_fails(tmp_path):
    (tmp_path / "empty").mkdir()
    assert main(["project", "--stacks", str(tmp_path / "empty"), "--out", str(tmp_path / "o")]) == 2


def test_evaluate_published_hog_fixture(tmp_path):
    labels = pl.read_pairs(DATA / "hog_labels.csv", "label")
    clusters = pl.read_pairs(DATA / "hog_assignment.csv", "cluster")
    ids = sorted(labels)
    clustering = {"k": 4, "assignment": [int(clusters[s]) for s in ids], "spine_ids": ids}
    (tmp_path / "c.json").write_text(json.dumps(clustering))
    assert main(["evaluate", "--clustering", str(tmp_path / "c.json"), "--labels",
                 str(DATA / "hog_labels.csv"), "--out", str(tmp_path / "ev")]) == 0
    assert "88.02%" in (tmp_path / "ev" / "report.md").read_text()
