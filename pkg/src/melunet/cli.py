"""Command-line entry point.

Subcommands: train, evaluate, ensemble, gradcheck, basis, report.
Exit codes: 0 success, 1 validation failure, 2 runtime fault.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import data as dataio
from .activations import family_from_tag
from .basis import build_melu_basis
from .ensemble import ScoreMatrix, accuracy, fuse_sum, load_scores_csv, save_scores_csv
from .errors import ConfigurationError, DatasetParseError, MelunetError, TrainingFault
from .evaluation import (
    DatasetSpec,
    ExperimentConfig,
    build_default_model,
    build_report,
    expand_roster,
    run_experiment,
)
from .gradcheck import DEFAULT_TOL, default_suite, run_suite
from .nn import TrainConfig, save_checkpoint, train

ALL_FAMILY_TAGS = ["relu", "leaky_relu", "elu", "selu", "prelu",
                   "srelu", "aplu_n5", "melu_k8"]


@dataclass
class RunConfig:
    """Flat, JSON-serializable run configuration; unknown keys rejected."""

    command: str = ""
    data: list = field(default_factory=list)
    labels: str = ""
    format: str = "csv"                 # csv | idx
    shape: str = ""                     # "CxHxW"
    normalize_to_maxinput: bool = False
    families: list = field(default_factory=lambda: list(ALL_FAMILY_TAGS))
    max_inputs: list = field(default_factory=lambda: [1.0])
    melu_params: int = 8
    aplu_hinges: int = 5
    batch_size: int = 30
    lr: float = 0.0001
    epochs: int = 30
    folds: int = 5
    seed: int = 0
    augment: bool = False
    paper_gradients: bool = False
    out: str = "out"

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        try:
            payload = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"bad config file {path}: {exc}") from None
        if not isinstance(payload, dict):
            raise ConfigurationError(f"config file {path} must hold a JSON object")
        return cls.from_dict(payload)

    def to_file(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n",
                              encoding="utf-8")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _build_parser() -> _Parser:
    parser = _Parser(prog="melunet")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", default=None, help="JSON config file")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None)

    def add_data(p):
        p.add_argument("--data", action="append", default=None,
                       help="dataset file (repeatable for evaluate)")
        p.add_argument("--labels", default=None,
                       help="labels file (idx format only)")
        p.add_argument("--format", choices=("csv", "idx"), default=None)
        p.add_argument("--shape", default=None, help="CxHxW feature reshape")
        p.add_argument("--normalize-to-maxinput", action="store_true",
                       default=None)

    def add_model(p):
        p.add_argument("--family", action="append", default=None,
                       help="activation family tag (repeatable)")
        p.add_argument("--max-input", action="append", type=float, default=None)
        p.add_argument("--k", type=int, default=None,
                       help="total learnable parameters per channel for melu")
        p.add_argument("--hinges", type=int, default=None,
                       help="hinge count per channel for aplu")
        p.add_argument("--paper-gradients", action="store_true", default=None)

    def add_train(p):
        p.add_argument("--batch-size", type=int, default=None)
        p.add_argument("--lr", type=float, default=None)
        p.add_argument("--epochs", type=int, default=None)
        p.add_argument("--folds", type=int, default=None)
        p.add_argument("--augment", action="store_true", default=None)

    p_train = sub.add_parser("train", help="train one model on one dataset")
    for add in (add_common, add_data, add_model, add_train):
        add(p_train)

    p_eval = sub.add_parser("evaluate",
                            help="k-fold grid over families and max_inputs")
    for add in (add_common, add_data, add_model, add_train):
        add(p_eval)

    p_ens = sub.add_parser("ensemble", help="fuse score CSVs by the sum rule")
    add_common(p_ens)
    p_ens.add_argument("--scores", action="append", required=True)
    p_ens.add_argument("--labels", default=None)

    p_grad = sub.add_parser("gradcheck",
                            help="finite-difference check of all kernels")
    add_common(p_grad)
    add_model(p_grad)
    p_grad.add_argument("--points", type=int, default=1000)

    p_basis = sub.add_parser("basis", help="print the bump schedule as CSV")
    p_basis.add_argument("--max-input", type=float, required=True)
    p_basis.add_argument("--hats", type=int, required=True)

    p_report = sub.add_parser("report", help="rebuild tables from score CSVs")
    add_common(p_report)
    p_report.add_argument("--results", required=True)
    return parser


def _merge_config(args) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if getattr(args, "config", None) \
        else RunConfig()
    cfg.command = args.command
    overrides = {
        "data": getattr(args, "data", None),
        "labels": getattr(args, "labels", None),
        "format": getattr(args, "format", None),
        "shape": getattr(args, "shape", None),
        "normalize_to_maxinput": getattr(args, "normalize_to_maxinput", None),
        "families": getattr(args, "family", None),
        "max_inputs": getattr(args, "max_input", None),
        "melu_params": getattr(args, "k", None),
        "aplu_hinges": getattr(args, "hinges", None),
        "batch_size": getattr(args, "batch_size", None),
        "lr": getattr(args, "lr", None),
        "epochs": getattr(args, "epochs", None),
        "folds": getattr(args, "folds", None),
        "seed": getattr(args, "seed", None),
        "augment": getattr(args, "augment", None),
        "paper_gradients": getattr(args, "paper_gradients", None),
        "out": getattr(args, "out", None),
    }
    for key, value in overrides.items():
        if value is not None:
            setattr(cfg, key, value)
    return cfg


def _parse_shape(text: str) -> tuple | None:
    if not text:
        return None
    try:
        parts = tuple(int(p) for p in text.lower().split("x"))
    except ValueError:
        raise ConfigurationError(f"bad --shape {text!r}, expected CxHxW") from None
    if len(parts) != 3 or any(p < 1 for p in parts):
        raise ConfigurationError(f"bad --shape {text!r}, expected CxHxW")
    return parts


def _resolve_tags(cfg: RunConfig) -> list[str]:
    tags = []
    for tag in cfg.families:
        tag = tag.strip().lower()
        if tag == "melu":
            tag = f"melu_k{cfg.melu_params}"
        elif tag == "aplu":
            tag = f"aplu_n{cfg.aplu_hinges}"
        tags.append(tag)
    return tags


def _load_datasets(cfg: RunConfig) -> list[DatasetSpec]:
    if not cfg.data:
        raise ConfigurationError("no dataset given; use --data")
    shape = _parse_shape(cfg.shape)
    specs = []
    for path in cfg.data:
        if cfg.format == "idx":
            if not cfg.labels:
                raise ConfigurationError("idx format needs --labels")
            data, labels, _ = dataio.load_idx_dataset(path, cfg.labels)
        else:
            data, labels, _ = dataio.load_csv_dataset(path, shape=shape)
        if cfg.normalize_to_maxinput:
            if len(cfg.max_inputs) != 1:
                raise ConfigurationError(
                    "--normalize-to-maxinput needs exactly one --max-input")
            data = dataio.rescale_to_range(data, cfg.max_inputs[0])
        specs.append(DatasetSpec(Path(path).stem, data, labels))
    return specs


def _experiment_config(cfg: RunConfig) -> ExperimentConfig:
    return ExperimentConfig(
        train=TrainConfig(batch_size=cfg.batch_size, learning_rate=cfg.lr,
                          epochs=cfg.epochs, seed=cfg.seed),
        folds=cfg.folds, master_seed=cfg.seed, augment=cfg.augment,
        paper_gradients=cfg.paper_gradients)


def _cmd_basis(args) -> int:
    basis = build_melu_basis(args.max_input, args.hats)
    print("j,a,lambda")
    for j, (center, width) in enumerate(zip(basis.centers, basis.half_widths),
                                        start=1):
        print(f"{j},{center:g},{width:g}")
    return 0


def _cmd_gradcheck(cfg: RunConfig, args) -> int:
    if args.family is not None or args.max_input is not None:
        families = [family_from_tag(t, max_input=mi)
                    for mi in cfg.max_inputs for t in _resolve_tags(cfg)]
    else:
        families = default_suite(aplu_hinges=cfg.aplu_hinges)
    results = run_suite(families, n_points=args.points, seed=cfg.seed,
                        paper_gradients=cfg.paper_gradients)
    print(f"{'family':<14} {'max_input':>9} {'max_rel_err':>12} skipped")
    ok = True
    for res in results:
        skipped = ",".join(res.skipped) if res.skipped else "-"
        note = " (intentionally skipped in published-sign mode)" \
            if res.skipped else ""
        print(f"{res.family.tag:<14} {res.family.max_input:>9g} "
              f"{res.max_rel_err:>12.3e} {skipped}{note}")
        ok = ok and res.passed(DEFAULT_TOL)
        for failure in res.failures[:10]:
            print(f"  FAIL {failure.family} {failure.target} at x={failure.x!r}: "
                  f"analytic={failure.analytic!r} numeric={failure.numeric!r} "
                  f"rel_err={failure.rel_err:.3e}")
    print("gradcheck:", "PASS" if ok else "FAIL")
    return 0 if ok else 1


def _cmd_train(cfg: RunConfig) -> int:
    datasets = _load_datasets(cfg)
    if len(datasets) != 1:
        raise ConfigurationError("train expects exactly one dataset")
    tags = _resolve_tags(cfg)
    if len(tags) != 1 or len(cfg.max_inputs) != 1:
        raise ConfigurationError("train expects one --family and one --max-input")
    ds = datasets[0]
    family = family_from_tag(tags[0], max_input=cfg.max_inputs[0])
    rng = np.random.default_rng(cfg.seed)
    exp_cfg = _experiment_config(cfg)
    net = build_default_model(ds.data.shape[1:], ds.n_classes, family, rng,
                              exp_cfg)
    net.seed = cfg.seed
    trace = train(net, ds.data, ds.labels, exp_cfg.train, rng=rng)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(net, out / "checkpoint.json")
    (out / "loss_trace.csv").write_text(
        "epoch,loss\n" + "".join(f"{i},{v!r}\n" for i, v in enumerate(trace)),
        encoding="utf-8")
    scores = ScoreMatrix(net.predict_scores(ds.data),
                         f"{family.tag}@{family.max_input:g}")
    save_scores_csv(scores, out / f"{ds.name}__{scores.model_id}.scores.csv")
    print(f"trained {scores.model_id} on {ds.name}: "
          f"final loss {trace[-1] if trace else float('nan'):.6f}, "
          f"train accuracy {accuracy(scores, ds.labels):.2f}%")
    return 0


def _cmd_evaluate(cfg: RunConfig) -> int:
    datasets = _load_datasets(cfg)
    roster = expand_roster(_resolve_tags(cfg), cfg.max_inputs)
    report = run_experiment(datasets, roster, _experiment_config(cfg))
    out = Path(cfg.out)
    _write_report(report, out)
    # keep the raw per-cell scores for cross-run fusion / report rebuilds
    cells_dir = out / "cells"
    cells_dir.mkdir(parents=True, exist_ok=True)
    for ds in datasets:
        folds = report.fold_of_sample[ds.name]
        lines = ["label,fold"]
        lines += [f"{int(y)},{int(f)}" for y, f in zip(ds.labels, folds)]
        (cells_dir / f"{ds.name}.labels.csv").write_text(
            "\n".join(lines) + "\n", encoding="utf-8")
    for (ds_name, mid), matrix in report.cells.items():
        save_scores_csv(matrix, cells_dir / f"{ds_name}__{mid}.scores.csv")
    for line in report.warnings:
        print(f"warning: {line}", file=sys.stderr)
    print(report.markdown())
    return 0


def _write_report(report, outdir: Path) -> None:
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / "accuracy_table.csv").write_text(report.accuracy_csv(),
                                               encoding="utf-8")
    (outdir / "wilcoxon.csv").write_text(report.wilcoxon_csv(),
                                         encoding="utf-8")
    (outdir / "report.md").write_text(report.markdown(), encoding="utf-8")


def _cmd_ensemble(cfg: RunConfig, args) -> int:
    matrices = [load_scores_csv(p) for p in args.scores]
    fused = fuse_sum(matrices)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    save_scores_csv(fused, out / "fused.scores.csv")
    if args.labels:
        labels = np.loadtxt(args.labels, dtype=int, ndmin=1)
        print(f"fused accuracy: {accuracy(fused, labels):.2f}%")
    else:
        print(f"fused {len(matrices)} score matrices "
              f"({fused.scores.shape[0]} samples)")
    return 0


def _cmd_report(cfg: RunConfig, args) -> int:
    results = Path(args.results)
    if not results.is_dir():
        raise ConfigurationError(f"results dir {results} does not exist")
    cells = {}
    labels_by_ds = {}
    for labels_file in sorted(results.glob("*.labels.csv")):
        ds_name = labels_file.name[:-len(".labels.csv")]
        rows = [ln.split(",") for ln in
                labels_file.read_text(encoding="utf-8").splitlines()[1:] if ln]
        labels_by_ds[ds_name] = np.array([int(r[0]) for r in rows])
    if not labels_by_ds:
        raise ConfigurationError(f"no *.labels.csv files in {results}")
    model_ids = []
    for scores_file in sorted(results.glob("*__*.scores.csv")):
        stem = scores_file.name[:-len(".scores.csv")]
        ds_name, _, mid = stem.partition("__")
        if ds_name not in labels_by_ds:
            print(f"warning: no labels for {ds_name}, skipping {scores_file}",
                  file=sys.stderr)
            continue
        cells[(ds_name, mid)] = load_scores_csv(scores_file)
        if mid not in model_ids:
            model_ids.append(mid)
    if not cells:
        raise ConfigurationError(f"no per-cell score CSVs in {results}")
    report = build_report(cells, labels_by_ds, model_ids,
                          sorted(labels_by_ds))
    _write_report(report, Path(cfg.out))
    for line in report.warnings:
        print(f"warning: {line}", file=sys.stderr)
    print(report.markdown())
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "basis":
            return _cmd_basis(args)
        cfg = _merge_config(args)
        if args.command == "gradcheck":
            return _cmd_gradcheck(cfg, args)
        if args.command == "train":
            return _cmd_train(cfg)
        if args.command == "evaluate":
            return _cmd_evaluate(cfg)
        if args.command == "ensemble":
            return _cmd_ensemble(cfg, args)
        if args.command == "report":
            return _cmd_report(cfg, args)
        raise ConfigurationError(f"unknown command {args.command!r}")
    except (ConfigurationError, DatasetParseError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except TrainingFault as exc:
        print(f"training fault: {exc}", file=sys.stderr)
        return 2
    except MelunetError as exc:
        print(f"fault: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
