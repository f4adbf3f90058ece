"""End-to-end experiment runner: sample, corrupt, cluster, score, aggregate."""

from __future__ import annotations

import csv
import datetime as _dt
import json
import logging
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .. import __version__
from ..dataset import (
    IncompleteMatrix,
    apply_mar_quadrant,
    apply_mcar,
    apply_nmar_censor,
    impute,
    load_csv,
    remove_zero_variance,
    standardize_observed,
)
from ..evaluation import clustering_accuracy
from ..kernel import build_kernel
from ..spectral import kernel_pca, kmeans, median_heuristic_sigma, rbf_kernel, spectral_cluster
from .config import ConfigError, DatasetSpec, ExperimentConfig, MissingnessSpec, parse_method
from .idx import balanced_indices, read_idx_digits

log = logging.getLogger(__name__)

REPORT_SCHEMA = "pckid.experiment-report/1"
VOLATILE_KEYS = ("timing",)

# tags separating the seed streams of one (run, p_m) cell
_SUBSET, _MISSING, _ENSEMBLE, _CLUSTER = 1, 2, 3, 4


class UnsupportedMethodError(ValueError):
    pass


def derive_seed(base_seed: int, *key: int) -> int:
    return int(np.random.SeedSequence([int(base_seed), *map(int, key)]).generate_state(1)[0])


def _p_key(p: float) -> int:
    return int(round(p * 1_000_000))


@dataclass(frozen=True)
class CellSeeds:
    subset: int
    missing: int
    ensemble: int
    cluster: int

    @classmethod
    def for_cell(cls, base_seed: int, run: int, p: float) -> CellSeeds:
        return cls(
            subset=derive_seed(base_seed, _SUBSET, run),
            missing=derive_seed(base_seed, _MISSING, run, _p_key(p)),
            ensemble=derive_seed(base_seed, _ENSEMBLE, run, _p_key(p)),
            cluster=derive_seed(base_seed, _CLUSTER, run, _p_key(p)),
        )


# ---------------------------------------------------------------- data


def load_dataset(spec: DatasetSpec) -> tuple[IncompleteMatrix, np.ndarray]:
    path = Path(spec.path)
    if not path.exists():
        raise FileNotFoundError(f"dataset file not found: {path}")
    if spec.format == "idx":
        if not spec.labels_path:
            raise ConfigError("idx datasets need 'labels_path'")
        if not Path(spec.labels_path).exists():
            raise FileNotFoundError(f"label file not found: {spec.labels_path}")
        X, y = read_idx_digits(path, spec.labels_path)
        return IncompleteMatrix.complete(X), y
    table = load_csv(path, spec.missing_token, header=spec.header)
    col = spec.label_column % table.d
    if not table.mask[:, col].all():
        raise ConfigError(f"label column {spec.label_column} has missing entries")
    labels = table.values[:, col]
    if not np.all(labels == np.round(labels)):
        raise ConfigError(f"label column {spec.label_column} is not integer-valued")
    feats = [j for j in range(table.d) if j != col]
    return table.columns(feats), labels.astype(np.int64)


def sample_run(
    data: IncompleteMatrix, labels: np.ndarray, spec: DatasetSpec, seed: int
) -> tuple[IncompleteMatrix, np.ndarray]:
    if spec.classes is None and spec.per_class is None:
        return data, labels
    idx = balanced_indices(labels, spec.classes, spec.per_class, seed)
    return data.rows(idx), labels[idx]


def inject_missingness(data: IncompleteMatrix, spec: MissingnessSpec, p: float, seed: int):
    if spec.mechanism == "none" or p == 0.0:
        return data
    if spec.mechanism == "mcar":
        return apply_mcar(data, p, seed)
    if spec.mechanism == "mar_quadrant":
        return apply_mar_quadrant(data, p, spec.image_side, seed)
    if p >= 1.0:
        raise ConfigError("nmar_censor needs p_m < 1")
    # censor the top fraction p of every column
    return apply_nmar_censor(data, 1.0 - p)


def prepare(data: IncompleteMatrix, standardize: bool) -> IncompleteMatrix:
    data, _ = remove_zero_variance(data)
    if standardize:
        data, _ = standardize_observed(data)
    return data


def cell_input(config: ExperimentConfig, data, labels, run: int, p: float):
    """The exact matrix every method sees for one (run, p_m) cell."""
    seeds = CellSeeds.for_cell(config.base_seed, run, p)
    sub, y = sample_run(data, labels, config.dataset, seeds.subset)
    sub = inject_missingness(sub, config.missingness, p, seeds.missing)
    return prepare(sub, config.dataset.standardize), y, seeds


# ---------------------------------------------------------------- methods


def method_kernel(method: str, data: IncompleteMatrix, config: ExperimentConfig, seeds: CellSeeds):
    base, imputer = parse_method(method)
    if base == "pckid":
        ens = replace(config.ensemble, base_seed=seeds.ensemble)
        result = build_kernel(data, ens, n_jobs=config.n_jobs)
        return result.matrix, {
            "members": result.n_members,
            "skipped": result.n_skipped,
            "retries": result.n_retries,
        }
    if base == "rbf":
        X = impute(data, imputer)
        return rbf_kernel(X, median_heuristic_sigma(X)), {}
    raise UnsupportedMethodError(f"method {method!r} does not produce a kernel")


def run_method(method, data, config, seeds, cache=None):
    """Cluster labels for one method plus any method diagnostics.

    ``cache`` memoises imputation baselines whose imputed matrices coincide
    bit-for-bit (e.g. zero and median fills on sparse images).
    """
    base, imputer = parse_method(method)
    if base == "kmeans":
        X = impute(data, imputer)
        key = ("kmeans", IncompleteMatrix.complete(X).fingerprint())
        if cache is not None and key in cache:
            return cache[key], {}
        labels = kmeans(X, config.k, config.restarts, seeds.cluster).labels
        if cache is not None:
            cache[key] = labels
        return labels, {}
    if base == "rbf":
        X = impute(data, imputer)
        key = ("rbf", IncompleteMatrix.complete(X).fingerprint())
        if cache is not None and key in cache:
            return cache[key], {}
    K, info = method_kernel(method, data, config, seeds)
    labels = spectral_cluster(K, config.k, config.restarts, seeds.cluster)
    if base == "rbf" and cache is not None:
        cache[key] = labels
    return labels, info


# ---------------------------------------------------------------- experiment


def run_experiment(config: ExperimentConfig, progress=None) -> dict:
    data, labels = load_dataset(config.dataset)
    if config.dataset.classes is not None:
        present = set(np.unique(labels).tolist())
        absent = [c for c in config.dataset.classes if c not in present]
        if absent:
            raise ConfigError(f"classes {absent} do not occur in {config.dataset.path}")
    p_values = list(config.missingness.p_m)
    accs = {(m, j): [] for m in config.methods for j in range(len(p_values))}
    seconds = {m: 0.0 for m in config.methods}
    runs = []
    started = time.perf_counter()
    for run in range(config.runs):
        for j, p in enumerate(p_values):
            cell, y, seeds = cell_input(config, data, labels, run, p)
            digest = cell.fingerprint()
            entry = {
                "run": run,
                "p_m": p,
                "input_sha256": digest,
                "n_rows": cell.n,
                "n_dims": cell.d,
                "observed_fraction": cell.observed_fraction(),
                "seeds": vars(seeds).copy(),
            }
            cache: dict = {}
            for method in config.methods:
                t0 = time.perf_counter()
                pred, info = run_method(method, cell, config, seeds, cache)
                seconds[method] += time.perf_counter() - t0
                if cell.fingerprint() != digest:
                    raise RuntimeError(f"method {method} modified its input")
                acc = clustering_accuracy(y, pred)
                accs[(method, j)].append(acc)
                if info:
                    entry[method] = info
                if progress:
                    progress(run, p, method, acc)
            runs.append(entry)
    results = []
    for method in config.methods:
        for j, p in enumerate(p_values):
            vals = accs[(method, j)]
            results.append(
                {
                    "method": method,
                    "p_m": p,
                    "mean_acc": float(np.mean(vals)),
                    "std_acc": float(np.std(vals)),
                    "accs": vals,
                }
            )
    return {
        "schema": REPORT_SCHEMA,
        "package_version": __version__,
        "config": config.to_dict(),
        "results": results,
        "runs": runs,
        "timing": {
            "created_at": _dt.datetime.now(_dt.timezone.utc).isoformat(),
            "total_seconds": time.perf_counter() - started,
            "method_seconds": seconds,
        },
    }


def deterministic_view(report: dict) -> dict:
    return {k: v for k, v in report.items() if k not in VOLATILE_KEYS}


def report_json(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True)


def write_report(report: dict, out_dir) -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    json_path = out_dir / "report.json"
    json_path.write_text(report_json(report) + "\n", encoding="utf-8")
    csv_path = out_dir / "summary.csv"
    with csv_path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "p_m", "mean_acc", "std_acc", "n_runs"])
        for row in report["results"]:
            writer.writerow(
                [row["method"], row["p_m"], repr(row["mean_acc"]), repr(row["std_acc"]), len(row["accs"])]
            )
    return json_path, csv_path


def summary_table(report: dict) -> str:
    """Methods as rows, p_m as columns, mean ACC in the cells."""
    p_values = sorted({r["p_m"] for r in report["results"]})
    by = {(r["method"], r["p_m"]): r["mean_acc"] for r in report["results"]}
    methods = list(dict.fromkeys(r["method"] for r in report["results"]))
    head = f"{'method':<22}" + "".join(f"{p:>7.1f}" for p in p_values)
    lines = [head]
    for m in methods:
        lines.append(f"{m:<22}" + "".join(f"{by[(m, p)]:>7.3f}" for p in p_values))
    return "\n".join(lines)


# ---------------------------------------------------------------- embeddings


def emit_embedding(config: ExperimentConfig, method: str, p_m: float, out, run: int = 0) -> Path:
    """2-d kernel PCA coordinates with true and predicted labels for one cell."""
    base, _ = parse_method(method)
    if base == "kmeans":
        raise UnsupportedMethodError(f"method {method!r} has no kernel to embed")
    data, labels = load_dataset(config.dataset)
    cell, y, seeds = cell_input(config, data, labels, run, p_m)
    K, _ = method_kernel(method, cell, config, seeds)
    Z = kernel_pca(K, 2)
    pred = spectral_cluster(K, config.k, config.restarts, seeds.cluster)
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["z1", "z2", "y_true", "y_pred"])
        for (z1, z2), t, q in zip(Z, y, pred):
            writer.writerow([repr(float(z1)), repr(float(z2)), int(t), int(q)])
    return out
