import csv
import gzip
import json
from pathlib import Path

import numpy as np
import pytest
import yaml

from pckid.cli import main
from pckid.dataset import DataFormatError, IncompleteMatrix, load_csv
from pckid.harness import idx
from pckid.harness.config import (
    ConfigError,
    DatasetSpec,
    ExperimentConfig,
    MissingnessSpec,
    all_methods,
    config_from_dict,
    load_config,
    parse_method,
)
from pckid.harness.experiment import (
    CellSeeds,
    UnsupportedMethodError,
    cell_input,
    deterministic_view,
    emit_embedding,
    load_dataset,
    report_json,
    run_experiment,
    write_report,
)
from pckid.harness.synthetic import two_blobs
from pckid.kernel import EnsembleConfig, load_kernel_binary

ROOT = Path(__file__).resolve().parents[1]
MNIST_IMAGES = ROOT / "data" / "mnist5k-images-idx3-ubyte.gz"
MNIST_LABELS = ROOT / "data" / "mnist5k-labels-idx1-ubyte.gz"
needs_mnist = pytest.mark.skipif(
    not MNIST_IMAGES.exists(), reason="run scripts/fetch_mnist_subset.py first"
)


def write_blob_csv(path, n_per_blob=25, dim=3, separation=12.0, seed=0):
    X, y = two_blobs(n_per_blob=n_per_blob, dim=dim, separation=separation, seed=seed)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        for row, label in zip(X, y):
            w.writerow([repr(float(v)) for v in row] + [int(label)])
    return X, y


def small_config(csv_path, **overrides):
    base = dict(
        dataset=DatasetSpec(path=str(csv_path), format="csv"),
        missingness=MissingnessSpec(mechanism="mcar", p_m=[0.0]),
        methods=["kmeans+mean"],
        runs=1,
        k=2,
        ensemble=EnsembleConfig(Q=2, G=3),
        restarts=5,
        base_seed=7,
    )
    base.update(overrides)
    return ExperimentConfig(**base)


# ---------------------------------------------------------------- idx


@pytest.mark.parametrize("suffix", [".idx", ".idx.gz"])
def test_idx_round_trip(tmp_path, suffix):
    images = np.arange(2 * 3 * 4, dtype=np.uint8).reshape(2, 3, 4)
    path = tmp_path / f"im{suffix}"
    idx.write_idx(images, path)
    np.testing.assert_array_equal(idx.read_idx(path), images)
    raw = gzip.open(path).read() if suffix.endswith(".gz") else path.read_bytes()
    assert raw[:4] == bytes([0, 0, 8, 3])
    assert raw[4:8] == (2).to_bytes(4, "big")


def test_idx_float_round_trip(tmp_path):
    a = np.linspace(-1, 1, 6).reshape(2, 3)
    idx.write_idx(a, tmp_path / "f.idx")
    np.testing.assert_array_equal(idx.read_idx(tmp_path / "f.idx"), a)


def test_idx_bad_magic(tmp_path):
    path = tmp_path / "bad.idx"
    path.write_bytes(bytes([1, 2, 8, 1, 0, 0, 0, 1, 5]))
    with pytest.raises(DataFormatError, match="magic"):
        idx.read_idx(path)


def test_idx_truncated(tmp_path):
    path = tmp_path / "short.idx"
    idx.write_idx(np.zeros((4, 2, 2), dtype=np.uint8), path)
    path.write_bytes(path.read_bytes()[:-3])
    with pytest.raises(DataFormatError, match="expected"):
        idx.read_idx(path)


def test_digits_label_count_mismatch(tmp_path):
    idx.write_idx(np.zeros((3, 2, 2), dtype=np.uint8), tmp_path / "i.idx")
    idx.write_idx(np.zeros(2, dtype=np.uint8), tmp_path / "l.idx")
    with pytest.raises(DataFormatError):
        idx.read_idx_digits(tmp_path / "i.idx", tmp_path / "l.idx")


def test_balanced_indices_contract():
    labels = np.repeat([0, 1, 2], [10, 6, 8])
    a = idx.balanced_indices(labels, [2, 0], 5, seed=3)
    b = idx.balanced_indices(labels, [0, 2], 5, seed=3)
    np.testing.assert_array_equal(a, b)
    assert np.all(np.diff(a) > 0)
    assert np.bincount(labels[a], minlength=3).tolist() == [5, 0, 5]
    with pytest.raises(ValueError, match="class 9"):
        idx.balanced_indices(labels, [9], 1, seed=0)
    with pytest.raises(ValueError, match="requested"):
        idx.balanced_indices(labels, [1], 7, seed=0)


@needs_mnist
def test_load_mnist_digits():
    data, y = idx.load_idx_digits(MNIST_IMAGES, MNIST_LABELS, {5, 6}, 100, seed=1)
    assert data.shape == (200, 784)
    assert sorted(np.unique(y, return_counts=True)[1].tolist()) == [100, 100]
    assert set(y.tolist()) == {5, 6}
    assert data.values.min() >= 0.0 and data.values.max() <= 1.0
    again, y2 = idx.load_idx_digits(MNIST_IMAGES, MNIST_LABELS, {5, 6}, 100, seed=1)
    np.testing.assert_array_equal(again.values, data.values)
    np.testing.assert_array_equal(y2, y)


# ---------------------------------------------------------------- config


def test_method_names():
    assert parse_method("pckid") == ("pckid", None)
    assert parse_method("rbf+median")[1].value == "median"
    assert len(all_methods()) == 9
    with pytest.raises(ConfigError, match="unknown method"):
        parse_method("svm+mean")
    with pytest.raises(ConfigError, match="unknown imputer"):
        parse_method("kmeans+knn")


def test_config_validation(tmp_path):
    ds = DatasetSpec(path="x.csv", format="csv")
    with pytest.raises(ConfigError, match="runs"):
        ExperimentConfig(dataset=ds, runs=0)
    with pytest.raises(ConfigError, match="p_m"):
        ExperimentConfig(dataset=ds, missingness=MissingnessSpec(p_m=[1.5]))
    with pytest.raises(ConfigError, match="mechanism"):
        ExperimentConfig(dataset=ds, missingness=MissingnessSpec(mechanism="mnar"))
    with pytest.raises(ConfigError, match="unknown keys"):
        config_from_dict({"dataset": {"path": "x"}, "bogus": 1})
    with pytest.raises(ConfigError, match="dataset"):
        config_from_dict({})
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "nope.yaml")


def test_config_paths_resolve_relative_to_file(tmp_path):
    sub = tmp_path / "cfg"
    sub.mkdir()
    (sub / "c.yaml").write_text(
        yaml.safe_dump({"dataset": {"path": "../d.csv", "format": "csv"}, "ensemble": {"Q": 3}})
    )
    cfg = load_config(sub / "c.yaml")
    assert Path(cfg.dataset.path) == (tmp_path / "d.csv").resolve()
    assert cfg.ensemble.Q == 3


def test_shipped_config_loads():
    cfg = load_config(ROOT / "configs" / "mnist56_desk.yaml")
    assert cfg.dataset.per_class == 200
    assert cfg.runs == 10 and cfg.ensemble.Q == cfg.ensemble.G == 10
    assert len(cfg.missingness.p_m) == 10
    assert cfg.methods == all_methods()


def test_missing_dataset_file(tmp_path):
    cfg = small_config(tmp_path / "absent.csv")
    with pytest.raises(FileNotFoundError, match="absent.csv"):
        run_experiment(cfg)


def test_absent_class(tmp_path):
    write_blob_csv(tmp_path / "d.csv")
    cfg = small_config(
        tmp_path / "d.csv",
        dataset=DatasetSpec(path=str(tmp_path / "d.csv"), format="csv", classes=[0, 4], per_class=5),
    )
    with pytest.raises(ConfigError, match=r"\[4\]"):
        run_experiment(cfg)


# ---------------------------------------------------------------- experiment


def test_separable_kmeans_single_cell(tmp_path):
    write_blob_csv(tmp_path / "d.csv")
    report = run_experiment(small_config(tmp_path / "d.csv"))
    assert len(report["results"]) == 1
    cell = report["results"][0]
    assert cell["method"] == "kmeans+mean" and cell["p_m"] == 0.0
    assert cell["accs"] == [1.0]


def test_all_methods_share_one_input(tmp_path):
    write_blob_csv(tmp_path / "d.csv")
    cfg = small_config(
        tmp_path / "d.csv",
        methods=all_methods(),
        missingness=MissingnessSpec(mechanism="mcar", p_m=[0.0, 0.3]),
        runs=2,
    )
    report = run_experiment(cfg)
    assert len(report["results"]) == 9 * 2
    assert len(report["runs"]) == 2 * 2
    for entry in report["runs"]:
        cell, _, _ = cell_input(cfg, *load_dataset(cfg.dataset), entry["run"], entry["p_m"])
        assert cell.fingerprint() == entry["input_sha256"]
        assert entry["pckid"]["members"] + entry["pckid"]["skipped"] == 2 * 2


def test_aggregates_recompute(tmp_path):
    write_blob_csv(tmp_path / "d.csv", separation=3.0)
    cfg = small_config(
        tmp_path / "d.csv",
        methods=["pckid", "rbf+zero", "kmeans+median"],
        missingness=MissingnessSpec(mechanism="mcar", p_m=[0.2, 0.5]),
        runs=3,
    )
    report = run_experiment(cfg)
    for row in report["results"]:
        assert len(row["accs"]) == 3
        assert abs(np.mean(row["accs"]) - row["mean_acc"]) <= 1e-12
        assert abs(np.std(row["accs"]) - row["std_acc"]) <= 1e-12


def test_report_is_deterministic(tmp_path):
    write_blob_csv(tmp_path / "d.csv", separation=4.0)
    cfg = small_config(
        tmp_path / "d.csv",
        methods=["pckid", "rbf+mean"],
        missingness=MissingnessSpec(mechanism="mcar", p_m=[0.0, 0.4]),
        runs=2,
    )
    a = report_json(deterministic_view(run_experiment(cfg)))
    b = report_json(deterministic_view(run_experiment(cfg)))
    assert a == b
    assert "timing" not in json.loads(a)


def test_seeds_split_by_cell():
    a = CellSeeds.for_cell(1, 0, 0.1)
    b = CellSeeds.for_cell(1, 0, 0.2)
    c = CellSeeds.for_cell(1, 1, 0.1)
    # the class subset depends on the run only
    assert a.subset == b.subset != c.subset
    assert len({a.missing, b.missing, c.missing}) == 3
    assert len({a.ensemble, a.cluster, a.missing}) == 3


def test_write_report(tmp_path):
    write_blob_csv(tmp_path / "d.csv")
    report = run_experiment(small_config(tmp_path / "d.csv"))
    json_path, csv_path = write_report(report, tmp_path / "out")
    assert json.loads(json_path.read_text())["schema"] == report["schema"]
    rows = list(csv.DictReader(csv_path.open()))
    assert rows == [
        {"method": "kmeans+mean", "p_m": "0.0", "mean_acc": "1.0", "std_acc": "0.0", "n_runs": "1"}
    ]


def test_nmar_and_standardize_paths(tmp_path):
    write_blob_csv(tmp_path / "d.csv")
    cfg = small_config(
        tmp_path / "d.csv",
        dataset=DatasetSpec(path=str(tmp_path / "d.csv"), format="csv", standardize=True),
        missingness=MissingnessSpec(mechanism="nmar_censor", p_m=[0.1]),
        methods=["pckid"],
    )
    cell, _, _ = cell_input(cfg, *load_dataset(cfg.dataset), 0, 0.1)
    assert 0.85 < cell.observed_fraction() < 0.95
    np.testing.assert_allclose(np.nanmean(cell.values, axis=0), 0.0, atol=1e-12)
    assert run_experiment(cfg)["results"][0]["accs"][0] > 0.9


# ---------------------------------------------------------------- embedding


def _margin(Z, y):
    """Largest margin of a separating line, via the perceptron on hard-margin data."""
    A = np.hstack([Z, np.ones((len(Z), 1))])
    s = np.where(y == y[0], 1.0, -1.0)
    w = np.zeros(3)
    for _ in range(10000):
        viol = np.flatnonzero(s * (A @ w) <= 0)
        if viol.size == 0:
            return float(np.min(s * (A @ w)) / np.linalg.norm(w[:2]))
        w += s[viol[0]] * A[viol[0]]
    return -1.0


def test_embedding_separable(tmp_path):
    write_blob_csv(tmp_path / "d.csv")
    cfg = small_config(tmp_path / "d.csv", methods=["pckid"])
    out = emit_embedding(cfg, "pckid", 0.0, tmp_path / "e.csv")
    rows = list(csv.DictReader(out.open()))
    assert len(rows) == 50
    assert list(rows[0]) == ["z1", "z2", "y_true", "y_pred"]
    Z = np.array([[float(r["z1"]), float(r["z2"])] for r in rows])
    y = np.array([int(r["y_true"]) for r in rows])
    assert _margin(Z, y) > 0
    again = emit_embedding(cfg, "pckid", 0.0, tmp_path / "e2.csv")
    assert again.read_bytes() == out.read_bytes()


def test_embedding_rejects_kmeans(tmp_path):
    write_blob_csv(tmp_path / "d.csv")
    with pytest.raises(UnsupportedMethodError):
        emit_embedding(small_config(tmp_path / "d.csv"), "kmeans+zero", 0.0, tmp_path / "e.csv")


def test_rbf_embedding(tmp_path):
    write_blob_csv(tmp_path / "d.csv")
    out = emit_embedding(small_config(tmp_path / "d.csv"), "rbf+mean", 0.0, tmp_path / "e.csv")
    assert len(out.read_text().splitlines()) == 51


# ---------------------------------------------------------------- cli


def test_cli_experiment_run(tmp_path, capsys):
    write_blob_csv(tmp_path / "d.csv")
    (tmp_path / "c.yaml").write_text(
        yaml.safe_dump(
            {
                "dataset": {"path": "d.csv", "format": "csv"},
                "missingness": {"mechanism": "mcar", "p_m": [0.0, 0.2]},
                "methods": ["kmeans+zero", "pckid"],
                "runs": 3,
                "restarts": 5,
                "ensemble": {"Q": 2, "G": 3},
            }
        )
    )
    assert main(["experiment", "run", str(tmp_path / "c.yaml"), "--out", str(tmp_path / "r"), "--runs", "1"]) == 0
    report = json.loads((tmp_path / "r" / "report.json").read_text())
    assert report["config"]["runs"] == 1
    assert "kmeans+zero" in capsys.readouterr().out
    assert main(["experiment", "embed", str(tmp_path / "c.yaml"), "--out", str(tmp_path / "e.csv")]) == 0
    assert (tmp_path / "e.csv").exists()


def test_cli_inject_and_kernel(tmp_path):
    write_blob_csv(tmp_path / "d.csv", n_per_blob=15)
    args = ["data", "inject-missing", str(tmp_path / "d.csv"), "--rate", "0.3", "--seed", "2"]
    assert main(args + ["--out", str(tmp_path / "m.csv"), "--mask-out", str(tmp_path / "mask.csv")]) == 0
    data = load_csv(tmp_path / "m.csv")
    mask = np.loadtxt(tmp_path / "mask.csv", delimiter=",").astype(bool)
    np.testing.assert_array_equal(data.mask, mask)
    assert 0.6 < data.observed_fraction() < 0.8
    kargs = ["kernel", "build", str(tmp_path / "m.csv"), "--Q", "2", "--G", "3"]
    assert main(kargs + ["--out", str(tmp_path / "k.bin")]) == 0
    K = load_kernel_binary(tmp_path / "k.bin")
    assert K.shape == (30, 30)
    assert main(kargs + ["--jobs", "2", "--out", str(tmp_path / "k.csv")]) == 0
    np.testing.assert_allclose(np.loadtxt(tmp_path / "k.csv", delimiter=","), K, atol=1e-10)


def test_cli_eval_acc(tmp_path, capsys):
    (tmp_path / "t.txt").write_text("0\n0\n1\n1\n")
    (tmp_path / "p.txt").write_text("0,1,0,1")
    assert main(["eval", "acc", str(tmp_path / "t.txt"), str(tmp_path / "p.txt")]) == 0
    assert capsys.readouterr().out.strip() == "0.500000"


def test_cli_reports_errors(tmp_path, capsys):
    assert main(["experiment", "run", str(tmp_path / "missing.yaml")]) == 2
    assert "error:" in capsys.readouterr().err
    (tmp_path / "bad.csv").write_text("1,2\n3\n")
    assert main(["kernel", "build", str(tmp_path / "bad.csv"), "--out", str(tmp_path / "k.csv")]) == 2
    assert "bad.csv:2" in capsys.readouterr().err
