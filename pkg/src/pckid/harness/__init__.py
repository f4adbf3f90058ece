from .config import ExperimentConfig, DatasetSpec, MissingnessSpec, load_config, config_from_dict
from .experiment import run_experiment, emit_embedding, write_report, deterministic_view
from .idx import load_idx_digits, read_idx, write_idx

__all__ = [
    "ExperimentConfig",
    "DatasetSpec",
    "MissingnessSpec",
    "load_config",
    "config_from_dict",
    "run_experiment",
    "emit_embedding",
    "write_report",
    "deterministic_view",
    "load_idx_digits",
    "read_idx",
    "write_idx",
]
