"""Declarative experiment configuration (YAML or JSON documents)."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from ..dataset import ImputationStrategy
from ..kernel import EnsembleConfig

MECHANISMS = ("none", "mcar", "mar_quadrant", "nmar_censor")
KERNEL_METHODS = ("pckid", "rbf")


class ConfigError(ValueError):
    pass


@dataclass
class DatasetSpec:
    path: str
    format: str = "idx"  # idx | csv
    labels_path: str | None = None  # idx only
    label_column: int = -1  # csv only
    header: bool = False
    missing_token: str = ""
    classes: list[int] | None = None
    per_class: int | None = None
    standardize: bool = False


@dataclass
class MissingnessSpec:
    mechanism: str = "mar_quadrant"
    p_m: list[float] = field(default_factory=lambda: [0.0])
    image_side: int = 28


@dataclass
class ExperimentConfig:
    dataset: DatasetSpec
    missingness: MissingnessSpec = field(default_factory=MissingnessSpec)
    methods: list[str] = field(default_factory=lambda: ["pckid"])
    runs: int = 10
    k: int = 2
    ensemble: EnsembleConfig = field(default_factory=EnsembleConfig)
    restarts: int = 100
    base_seed: int = 0
    n_jobs: int = 1

    def __post_init__(self):
        if self.runs < 1:
            raise ConfigError("runs must be >= 1")
        if self.k < 1:
            raise ConfigError("k must be >= 1")
        if self.restarts < 1:
            raise ConfigError("restarts must be >= 1")
        if self.missingness.mechanism not in MECHANISMS:
            raise ConfigError(
                f"unknown missingness mechanism {self.missingness.mechanism!r}; "
                f"choose from {', '.join(MECHANISMS)}"
            )
        for p in self.missingness.p_m:
            if not 0.0 <= p <= 1.0:
                raise ConfigError(f"p_m values must lie in [0, 1], got {p}")
        if self.dataset.format not in ("idx", "csv"):
            raise ConfigError(f"dataset format must be 'idx' or 'csv', got {self.dataset.format!r}")
        if not self.methods:
            raise ConfigError("at least one method is required")
        for m in self.methods:
            parse_method(m)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["ensemble"]["covariance_kind"] = self.ensemble.covariance_kind.value
        return out


def parse_method(name: str) -> tuple[str, ImputationStrategy | None]:
    """'pckid' -> ('pckid', None); 'rbf+mean' -> ('rbf', MEAN); 'kmeans+zero' -> ('kmeans', ZERO)."""
    if name == "pckid":
        return "pckid", None
    base, _, imputer = name.partition("+")
    if base not in ("rbf", "kmeans") or not imputer:
        raise ConfigError(
            f"unknown method {name!r}; use 'pckid', 'rbf+<imputer>' or 'kmeans+<imputer>'"
        )
    try:
        return base, ImputationStrategy(imputer)
    except ValueError:
        choices = ", ".join(s.value for s in ImputationStrategy)
        raise ConfigError(f"unknown imputer {imputer!r} in {name!r}; choose from {choices}") from None


def all_methods() -> list[str]:
    out = ["pckid"]
    for base in ("rbf", "kmeans"):
        out += [f"{base}+{s.value}" for s in ImputationStrategy]
    return out


def _build(cls, obj, where: str):
    if not isinstance(obj, dict):
        raise ConfigError(f"{where} must be a mapping")
    known = {f.name for f in fields(cls)}
    extra = set(obj) - known
    if extra:
        raise ConfigError(f"unknown keys in {where}: {', '.join(sorted(extra))}")
    try:
        return cls(**obj)
    except TypeError as err:
        raise ConfigError(f"{where}: {err}") from None


def config_from_dict(obj: dict, base_dir: Path | None = None) -> ExperimentConfig:
    obj = dict(obj)
    if "dataset" not in obj:
        raise ConfigError("config needs a 'dataset' section")
    dataset = _build(DatasetSpec, obj.pop("dataset"), "dataset")
    if base_dir is not None:
        dataset.path = str((base_dir / dataset.path).resolve())
        if dataset.labels_path:
            dataset.labels_path = str((base_dir / dataset.labels_path).resolve())
    missingness = _build(MissingnessSpec, obj.pop("missingness", {}), "missingness")
    try:
        ensemble = _build(EnsembleConfig, obj.pop("ensemble", {}), "ensemble")
    except ValueError as err:
        raise ConfigError(f"ensemble: {err}") from None
    return _build(
        ExperimentConfig,
        {**obj, "dataset": dataset, "missingness": missingness, "ensemble": ensemble},
        "config",
    )


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    with path.open(encoding="utf-8") as fh:
        obj = yaml.safe_load(fh)
    return config_from_dict(obj or {}, base_dir=path.parent)
