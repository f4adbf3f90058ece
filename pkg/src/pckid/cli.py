"""Command line entry point: ``pckid <group> <command> ...``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .dataset import (
    DataFormatError,
    apply_mar_quadrant,
    apply_mcar,
    apply_nmar_censor,
    load_csv,
    remove_zero_variance,
    save_csv,
    save_mask_csv,
    standardize_observed,
)
from .evaluation import clustering_accuracy
from .gmm import GmmError
from .harness.config import ConfigError, load_config
from .harness.experiment import (
    UnsupportedMethodError,
    emit_embedding,
    run_experiment,
    summary_table,
    write_report,
)
from .kernel import EnsembleConfig, build_kernel, save_kernel_binary, save_kernel_csv


def _experiment_run(args):
    config = load_config(args.config)
    if args.runs is not None:
        config.runs = args.runs

    def progress(run, p, method, acc):
        if args.verbose:
            print(f"run {run:>3}  p_m={p:.2f}  {method:<20} ACC={acc:.4f}", file=sys.stderr)

    report = run_experiment(config, progress=progress)
    json_path, csv_path = write_report(report, args.out)
    print(summary_table(report))
    print(f"wrote {json_path} and {csv_path}")


def _experiment_embed(args):
    config = load_config(args.config)
    out = emit_embedding(config, args.method, args.p_m, args.out, run=args.run)
    print(f"wrote {out}")


def _inject_missing(args):
    data = load_csv(args.input, args.missing_token, header=args.header)
    if args.mechanism == "mcar":
        out = apply_mcar(data, args.rate, args.seed)
    elif args.mechanism == "mar_quadrant":
        out = apply_mar_quadrant(data, args.rate, args.side, args.seed)
    else:
        out = apply_nmar_censor(data, args.quantile)
    save_csv(out, args.out, args.missing_token)
    if args.mask_out:
        save_mask_csv(out, args.mask_out)
    print(f"observed fraction {out.observed_fraction():.4f}; wrote {args.out}")


def _kernel_build(args):
    data = load_csv(args.input, args.missing_token, header=args.header)
    data, kept = remove_zero_variance(data)
    if args.standardize:
        data, _ = standardize_observed(data)
    config = EnsembleConfig(
        Q=args.Q,
        G=args.G,
        subsample_fraction=args.subsample,
        em_iterations=args.em_iterations,
        covariance_kind=args.covariance,
        base_seed=args.seed,
    )
    result = build_kernel(data, config, n_jobs=args.jobs)
    fmt = args.format or ("bin" if Path(args.out).suffix == ".bin" else "csv")
    (save_kernel_binary if fmt == "bin" else save_kernel_csv)(result.matrix, args.out)
    print(
        f"N={data.n} d={data.d} (kept {kept.size} dims); members={result.n_members} "
        f"skipped={result.n_skipped}; wrote {args.out}"
    )


def _read_labels(path) -> np.ndarray:
    text = Path(path).read_text(encoding="utf-8").replace(",", " ").split()
    return np.array([int(float(t)) for t in text], dtype=np.int64)


def _eval_acc(args):
    acc = clustering_accuracy(_read_labels(args.y_true), _read_labels(args.y_pred))
    print(f"{acc:.6f}")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pckid", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    groups = ap.add_subparsers(dest="group", required=True)

    exp = groups.add_parser("experiment", help="run configured experiments")
    exp_cmds = exp.add_subparsers(dest="command", required=True)
    run = exp_cmds.add_parser("run", help="run a full sweep and write report.json + summary.csv")
    run.add_argument("config", type=Path)
    run.add_argument("--out", type=Path, default=Path("results"))
    run.add_argument("--runs", type=int, help="override the configured repetition count")
    run.set_defaults(func=_experiment_run)
    emb = exp_cmds.add_parser("embed", help="write 2-d kernel PCA coordinates for one cell")
    emb.add_argument("config", type=Path)
    emb.add_argument("--method", default="pckid")
    emb.add_argument("--p-m", type=float, default=0.0, dest="p_m")
    emb.add_argument("--run", type=int, default=0)
    emb.add_argument("--out", type=Path, required=True)
    emb.set_defaults(func=_experiment_embed)

    data = groups.add_parser("data", help="data utilities")
    data_cmds = data.add_subparsers(dest="command", required=True)
    inj = data_cmds.add_parser("inject-missing", help="hide cells of a complete CSV")
    inj.add_argument("input", type=Path)
    inj.add_argument("--mechanism", choices=["mcar", "mar_quadrant", "nmar_censor"], default="mcar")
    inj.add_argument("--rate", type=float, default=0.0, help="cell rate (mcar) or image fraction (mar_quadrant)")
    inj.add_argument("--quantile", type=float, default=0.9, help="censoring quantile (nmar_censor)")
    inj.add_argument("--side", type=int, default=28, help="image side for mar_quadrant")
    inj.add_argument("--seed", type=int, default=0)
    inj.add_argument("--missing-token", default="")
    inj.add_argument("--header", action="store_true")
    inj.add_argument("--out", type=Path, required=True)
    inj.add_argument("--mask-out", type=Path, help="also write the 0/1 observed mask")
    inj.set_defaults(func=_inject_missing)

    ker = groups.add_parser("kernel", help="kernel utilities")
    ker_cmds = ker.add_subparsers(dest="command", required=True)
    kb = ker_cmds.add_parser("build", help="build the ensemble kernel for a CSV")
    kb.add_argument("input", type=Path)
    kb.add_argument("--Q", type=int, default=30)
    kb.add_argument("--G", type=int, default=30)
    kb.add_argument("--subsample", type=float, default=0.5)
    kb.add_argument("--em-iterations", type=int, default=10)
    kb.add_argument("--covariance", choices=["diag", "full"], default="diag")
    kb.add_argument("--seed", type=int, default=0)
    kb.add_argument("--jobs", type=int, default=1)
    kb.add_argument("--standardize", action="store_true")
    kb.add_argument("--missing-token", default="")
    kb.add_argument("--header", action="store_true")
    kb.add_argument("--format", choices=["csv", "bin"])
    kb.add_argument("--out", type=Path, required=True)
    kb.set_defaults(func=_kernel_build)

    ev = groups.add_parser("eval", help="evaluation utilities")
    ev_cmds = ev.add_subparsers(dest="command", required=True)
    acc = ev_cmds.add_parser("acc", help="clustering accuracy of two label files")
    acc.add_argument("y_true", type=Path)
    acc.add_argument("y_pred", type=Path)
    acc.set_defaults(func=_eval_acc)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        args.func(args)
    except (ConfigError, DataFormatError, UnsupportedMethodError, FileNotFoundError, GmmError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
