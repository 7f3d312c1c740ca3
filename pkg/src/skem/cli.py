"""Command-line interface.

Every subcommand accepts ``--seed``, ``--jobs``, ``--out-dir``, ``--config``
and ``--verbose``. A config file is INI text; keys in ``[common]`` and in a
section named after the subcommand are option names without the leading
dashes (``max-passes = 50``). Command-line flags override the file, which
overrides built-in defaults. List options take whitespace-separated values.

Exit status: 0 on success, 2 on usage errors, 3 when training diverges and
1 for any other failure (bad input, I/O).
"""

from __future__ import annotations

import argparse
import configparser
import csv
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import experiment as ex
from .classifier import CompositeModel, classify_batch
from .digits import SegmentGeometry, generate_dataset, read_idx, write_idx
from .em import TrainingConfig
from .errors import CovarianceError, DivergenceError, SkemError
from .features import FEATURE_NAMES, VARIANTS, VariantSpec, build_feature_table, read_feature_csv, write_feature_csv
from .metrics import write_confusion_grid
from .modelio import COMPOSITE_HEADER, parse_composite, parse_model, save_composite

__all__ = ["main", "build_parser"]

EXIT_ERROR = 1
EXIT_DIVERGED = 3


def _positive_float(text: str) -> float:
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be > 0, got {text}")
    return v


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {text}")
    return v


def _variant(text: str) -> str:
    if text != "all" and text not in VARIANTS:
        raise argparse.ArgumentTypeError(f"unknown variant {text!r}; choose from all, {', '.join(VARIANTS)}")
    return text


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0, help="base random seed")
    p.add_argument("--jobs", type=_positive_int, default=1, help="parallel worker processes")
    p.add_argument("--out-dir", type=Path, default=Path("."), help="directory for outputs")
    p.add_argument("--config", type=Path, help="INI file with option defaults")
    p.add_argument("--verbose", action="store_true", help="print per-pass training trace to stderr")


def _training(p: argparse.ArgumentParser) -> None:
    p.add_argument("--variant", type=_variant, default="2Dx3D",
                   help="feature variant, or 'all' for one group over every table column")
    p.add_argument("--K", type=_positive_int, default=10, help="mixture components per group")
    p.add_argument("--max-passes", type=_positive_int, default=100)
    p.add_argument("--tol", type=_positive_float, default=0.1, help="log-likelihood change tolerance")


def _dataset_args(p: argparse.ArgumentParser, prefix: str = "", what: str = "") -> None:
    dash = f"--{prefix}-" if prefix else "--"
    p.add_argument(f"{dash}features", type=Path, help=f"{what}feature table CSV")
    p.add_argument(f"{dash}images", type=Path, help=f"{what}IDX image file (with {dash}labels)")
    p.add_argument(f"{dash}labels", type=Path, help=f"{what}IDX label file")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="skem", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate synthetic 7-segment digit images (IDX)")
    _common(p)
    p.add_argument("--D", type=_positive_float, default=2.0, help="segment half-length")
    p.add_argument("--d", type=_positive_float, default=0.5, help="segment half-width")
    p.add_argument("--nsig", type=_positive_float, default=1.0, help="covariance scale")
    p.add_argument("--samples-per-segment", type=_positive_int, default=500)
    p.add_argument("--per-digit", type=_positive_int, default=100)
    p.add_argument("--out-images", type=Path, help="default: OUT_DIR/images.idx")
    p.add_argument("--out-labels", type=Path, help="default: OUT_DIR/labels.idx")

    p = sub.add_parser("extract-features", help="IDX images to a 14-column feature CSV")
    _common(p)
    p.add_argument("--images", type=Path, required=True)
    p.add_argument("--labels", type=Path, required=True)
    p.add_argument("--standardize", action="store_true", help="unit-variance columns before PCA")
    p.add_argument("--out", type=Path, help="default: OUT_DIR/features.csv")

    p = sub.add_parser("train", help="train a composite shared-kernel model")
    _common(p)
    _dataset_args(p, what="training ")
    _training(p)
    p.add_argument("--init", type=Path, help="start from this model file instead of random means")
    p.add_argument("--out", type=Path, help="model file, default: OUT_DIR/model.txt")

    p = sub.add_parser("classify", help="predict labels for a feature table")
    _common(p)
    p.add_argument("--model", type=Path, required=True)
    _dataset_args(p)
    p.add_argument("--variant", type=_variant, help="apply this variant's dither to the table")
    p.add_argument("--out", type=Path, help="default: OUT_DIR/predictions.csv")

    p = sub.add_parser("evaluate", help="confusion matrix and metrics on a test table")
    _common(p)
    p.add_argument("--model", type=Path, required=True)
    _dataset_args(p)
    p.add_argument("--variant", type=_variant, help="apply this variant's dither to the table")

    p = sub.add_parser("experiment", help="Monte Carlo train/evaluate runs")
    _common(p)
    _dataset_args(p, "train", "training ")
    _dataset_args(p, "test", "test ")
    _training(p)
    p.add_argument("--runs", type=_positive_int, default=50)
    p.add_argument("--accuracy-floor", type=float, default=0.5)

    p = sub.add_parser("kstudy", help="mean accuracy across K values and variants")
    _common(p)
    _dataset_args(p, "train", "training ")
    _dataset_args(p, "test", "test ")
    p.add_argument("--K", type=_positive_int, nargs="+", default=[3, 6, 10, 15])
    p.add_argument("--variants", type=_variant, nargs="+", default=["3D", "6D", "3Dx3D"])
    p.add_argument("--runs", type=_positive_int, default=20)
    p.add_argument("--max-passes", type=_positive_int, default=100)
    p.add_argument("--tol", type=_positive_float, default=0.1)
    p.add_argument("--accuracy-floor", type=float, default=0.5)

    p = sub.add_parser("export-ellipses", help="1-sigma ellipses of every 2-D projection")
    _common(p)
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--classes", type=_positive_int, nargs="+", help="default: every class")
    p.add_argument("--out", type=Path, help="default: OUT_DIR/ellipses.csv")
    return parser


def _apply_config(parser: argparse.ArgumentParser, argv) -> None:
    """Install config-file values as defaults of the chosen subparser."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config", type=Path)
    known, rest = pre.parse_known_args(argv)
    if known.config is None:
        return
    cp = configparser.ConfigParser()
    cp.optionxform = str  # keep case so K maps to --K
    try:
        with open(known.config) as fh:
            cp.read_file(fh)
    except (OSError, configparser.Error) as exc:
        parser.error(f"cannot read config {known.config}: {exc}")
    command = next((a for a in rest if not a.startswith("-")), None)
    subparsers = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    sp = subparsers.choices.get(command)
    if sp is None:
        return
    actions = {a.dest: a for a in sp._actions}
    # case-insensitive lookup unless the exact spelling exists
    actions.update({d.lower(): a for d, a in list(actions.items()) if d.lower() not in actions})
    values = {}
    if cp.has_section("common"):
        # shared keys only apply where the subcommand has that option
        values.update((k, v) for k, v in cp["common"].items() if k.replace("-", "_") in actions)
    if cp.has_section(command):
        values.update(cp[command])
    for key, raw in values.items():
        dest = key.replace("-", "_")
        if dest in ("config", "help") or dest not in actions:
            sp.error(f"unknown config key {key!r} for {command}")
        act = actions[dest]
        conv = act.type or str
        try:
            if isinstance(act, argparse._StoreTrueAction):
                value = cp.BOOLEAN_STATES[raw.strip().lower()]
            elif act.nargs in ("+", "*"):
                value = [conv(v) for v in raw.split()]
            else:
                value = conv(raw.strip())
        except (KeyError, ValueError, argparse.ArgumentTypeError) as exc:
            sp.error(f"config key {key!r}: bad value {raw!r} ({exc})")
        act.default = value
        act.required = False


# -- helpers ---------------------------------------------------------------------

def _load_table(features: Path | None, images: Path | None, labels: Path | None, flag: str = ""):
    if features is not None:
        return read_feature_csv(features)
    if images is not None and labels is not None:
        return build_feature_table(read_idx(images, labels))
    raise ValueError(f"need --{flag}features, or --{flag}images with --{flag}labels")


def _spec(name: str, table) -> VariantSpec:
    if name == "all":
        return VariantSpec("all", (tuple(range(table.dimension)),))
    if table.dimension != len(FEATURE_NAMES):
        raise ValueError(f"variant {name} needs the {len(FEATURE_NAMES)}-column feature table, "
                         f"got {table.dimension} columns")
    return VARIANTS[name]


def _load_any_model(path: Path) -> CompositeModel:
    text = path.read_text()
    if text.lstrip().startswith(COMPOSITE_HEADER):
        return parse_composite(text)
    return CompositeModel.single(parse_model(text))


def _out(args, explicit: Path | None, name: str) -> Path:
    if explicit is not None:
        return explicit
    args.out_dir.mkdir(parents=True, exist_ok=True)
    return args.out_dir / name


def _check_width(model: CompositeModel, table) -> None:
    need = max(model.feature_indices) + 1
    if table.dimension < need:
        raise ValueError(f"model uses feature column {need - 1} but the table has {table.dimension} columns")


def _classes_match(model: CompositeModel, table) -> None:
    if table.num_classes > model.num_classes:
        raise ValueError(f"table has labels up to {table.num_classes}, model has {model.num_classes} classes")


# -- commands --------------------------------------------------------------------

def cmd_gen_data(args) -> int:
    geom = SegmentGeometry(args.D, args.d, args.nsig)
    ds = generate_dataset(geom, args.per_digit, args.samples_per_segment, np.random.default_rng(args.seed))
    img = _out(args, args.out_images, "images.idx")
    lbl = _out(args, args.out_labels, "labels.idx")
    write_idx(ds, img, lbl)
    print(f"wrote {10 * args.per_digit} images to {img} and labels to {lbl}")
    return 0


def cmd_extract_features(args) -> int:
    table = build_feature_table(read_idx(args.images, args.labels), args.standardize)
    path = write_feature_csv(table, _out(args, args.out, "features.csv"))
    print(f"wrote {len(table)} feature rows to {path}")
    return 0


def cmd_train(args) -> int:
    table = _load_table(args.features, args.images, args.labels)
    spec = _spec(args.variant, table)
    table = ex.prepare_table(table, spec, args.seed, "train")
    cfg = TrainingConfig(num_components=args.K, max_passes=args.max_passes,
                         loglik_tolerance=args.tol, seed=args.seed)
    groups = [table.columns(g) for g in spec.groups]
    inits = None
    if args.init is not None:
        init = _load_any_model(args.init)
        inits = [m for _, m in init.groups]
        cfg = replace(cfg, num_components=inits[0].num_components)
    trace = sys.stderr if args.verbose else None
    model, reports = ex.train_variant(groups, spec, cfg, np.random.default_rng(args.seed),
                                      trace=trace, inits=inits)
    path = save_composite(model, _out(args, args.out, "model.txt"))
    lines = [f"group {g} features {','.join(map(str, idx))}: passes_used = {r.passes_used} "
             f"converged = {r.converged} loglik = {r.final_total_loglik:.6f}"
             for g, ((idx, _), r) in enumerate(zip(model.groups, reports), start=1)]
    report = "\n".join(lines) + "\n"
    (path.parent / (path.stem + "_report.txt")).write_text(report)
    sys.stdout.write(report)
    print(f"wrote model to {path}")
    return 0


def _test_table(args):
    table = _load_table(args.features, args.images, args.labels)
    if args.variant:
        table = ex.prepare_table(table, _spec(args.variant, table), args.seed, "test")
    return table


def cmd_classify(args) -> int:
    model = _load_any_model(args.model)
    table = _test_table(args)
    _check_width(model, table)
    pred = classify_batch(model, table.samples)
    path = _out(args, args.out, "predictions.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["row", "predicted"])
        w.writerows(enumerate(pred.tolist()))
    print(f"wrote {pred.size} predictions to {path}")
    return 0


def cmd_evaluate(args) -> int:
    model = _load_any_model(args.model)
    table = _test_table(args)
    _check_width(model, table)
    _classes_match(model, table)
    cm, summary = ex.evaluate_model(model, table)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    write_confusion_grid(cm, args.out_dir / "confusion.txt")
    with open(args.out_dir / "metrics.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["class", "tp", "fp", "fn", "tn"])
        for c in range(cm.num_classes):
            w.writerow([c + 1, summary.tp[c], summary.fp[c], summary.fn[c], summary.tn[c]])
        w.writerow(["accuracy", repr(summary.accuracy)])
        w.writerow(["miou", repr(summary.miou)])
    print(f"accuracy {summary.accuracy:.4f}  miou {summary.miou:.4f}")
    if summary.zero_support:
        print(f"classes with no support (IoU counted as 0): {summary.zero_support}")
    return 0


def _train_test(args):
    train = _load_table(args.train_features, args.train_images, args.train_labels, "train-")
    test = _load_table(args.test_features, args.test_images, args.test_labels, "test-")
    return train, test


def cmd_experiment(args) -> int:
    if args.variant == "all":
        raise ValueError("experiment needs a named variant")
    train, test = _train_test(args)
    cfg = ex.ExperimentConfig(variant=args.variant, K=args.K, n_runs=args.runs, seed=args.seed,
                              accuracy_floor=args.accuracy_floor, max_passes=args.max_passes,
                              loglik_tolerance=args.tol, jobs=args.jobs)
    result = ex.run_experiment(train, test, cfg)
    ex.write_experiment(result, args.out_dir)
    f = result.filtered
    print(f"{cfg.variant} K={cfg.K}: accepted {f.n_accepted}/{cfg.n_runs} "
          f"(diverged {result.n_diverged}, below floor {result.n_below_floor}); "
          f"mean accuracy {f.mean_accuracy:.4f} std {f.std_accuracy:.4f}")
    if args.verbose:
        for r in result.runs:
            status = f"diverged: {r.error}" if r.diverged else f"accuracy {r.summary.accuracy:.4f}"
            print(f"run {r.run} seed {r.seed}: {status}", file=sys.stderr)
    return 0


def cmd_kstudy(args) -> int:
    if "all" in args.variants:
        raise ValueError("kstudy needs named variants")
    train, test = _train_test(args)
    base = ex.ExperimentConfig(n_runs=args.runs, seed=args.seed, accuracy_floor=args.accuracy_floor,
                               max_passes=args.max_passes, loglik_tolerance=args.tol, jobs=args.jobs)
    rows = ex.kstudy(train, test, args.K, args.variants, base)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    path = ex.write_kstudy(rows, args.out_dir / "kstudy.csv")
    sys.stdout.write(path.with_name(path.stem + "_table.txt").read_text())
    return 0


def cmd_export_ellipses(args) -> int:
    model = _load_any_model(args.model)
    if args.classes and max(args.classes) > model.num_classes:
        raise ValueError(f"model has {model.num_classes} classes")
    ellipses = ex.export_ellipses(model, args.classes)
    path = ex.write_ellipses(ellipses, _out(args, args.out, "ellipses.csv"))
    print(f"wrote {len(ellipses)} ellipses to {path}")
    return 0


COMMANDS = {
    "gen-data": cmd_gen_data,
    "extract-features": cmd_extract_features,
    "train": cmd_train,
    "classify": cmd_classify,
    "evaluate": cmd_evaluate,
    "experiment": cmd_experiment,
    "kstudy": cmd_kstudy,
    "export-ellipses": cmd_export_ellipses,
}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        _apply_config(parser, argv)
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args)
    except (DivergenceError, CovarianceError) as exc:
        print(f"skem {args.command}: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (SkemError, OSError, ValueError) as exc:
        print(f"skem {args.command}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
