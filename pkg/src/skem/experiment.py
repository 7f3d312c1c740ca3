"""Monte Carlo experiments, the K-sweep study and ellipse export.

A Monte Carlo run trains one shared-kernel model per feature group of a
variant, starting from random uniform means, and scores the composite classifier on
the test table. Run ``i`` draws its initial means from ``seed + i``; the
datasets and any dither are fixed across runs. Runs that diverge are
recorded but feed neither the filtered nor the unfiltered statistics.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from itertools import combinations
from pathlib import Path
from typing import Sequence

import numpy as np

from .classifier import CompositeModel, classify_batch
from .em import TrainingConfig, TrainingReport, init_parameters, skem_train
from .errors import SkemError
from .features import VARIANTS, VariantSpec, apply_dither
from .metrics import (
    AggregateSummary,
    ConfusionMatrix,
    RunSummary,
    aggregate,
    confusion,
    metrics,
    write_aggregate_table,
    write_confusion_grid,
)
from .mixture import LabeledDataset, SharedKernelModel, marginal_projection

__all__ = [
    "ExperimentConfig",
    "RunResult",
    "ExperimentResult",
    "dither_rng",
    "prepare_table",
    "train_variant",
    "evaluate_model",
    "run_experiment",
    "write_experiment",
    "kstudy",
    "write_kstudy",
    "WEIGHT_BANDS",
    "weight_band",
    "ellipse_axes",
    "Ellipse",
    "export_ellipses",
    "write_ellipses",
]


@dataclass(frozen=True)
class ExperimentConfig:
    variant: str = "2Dx3D"
    K: int = 10
    n_runs: int = 500
    seed: int = 0
    accuracy_floor: float = 0.5
    max_passes: int = 100
    loglik_tolerance: float = 0.1
    init_cov_scale: float = 0.3
    jobs: int = 1

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; choose from {list(VARIANTS)}")
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if self.n_runs < 1:
            raise ValueError("n_runs must be >= 1")

    def training_config(self, seed: int) -> TrainingConfig:
        return TrainingConfig(
            num_components=self.K,
            max_passes=self.max_passes,
            loglik_tolerance=self.loglik_tolerance,
            seed=seed,
            init_cov_scale=self.init_cov_scale,
        )


@dataclass
class RunResult:
    run: int
    seed: int
    summary: RunSummary | None
    confusion: ConfusionMatrix | None
    passes_used: int = 0
    error: str = ""

    @property
    def diverged(self) -> bool:
        return self.summary is None


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    runs: list
    filtered: AggregateSummary
    unfiltered: AggregateSummary

    @property
    def n_diverged(self) -> int:
        return sum(r.diverged for r in self.runs)

    @property
    def n_below_floor(self) -> int:
        return sum(
            1 for r in self.runs
            if not r.diverged and not r.summary.accuracy > self.config.accuracy_floor
        )

    def best_run(self) -> RunResult | None:
        ok = [r for r in self.runs if not r.diverged]
        # max() keeps the first of equal maxima: lowest run index wins
        return max(ok, key=lambda r: r.summary.accuracy) if ok else None


def train_variant(train_groups: Sequence[LabeledDataset], spec: VariantSpec,
                  cfg: TrainingConfig, rng: np.random.Generator | None = None,
                  trace=None, inits: Sequence[SharedKernelModel] | None = None,
                  ) -> tuple[CompositeModel, list[TrainingReport]]:
    """Train one shared-kernel model per feature group of ``spec``.

    Group feature indices in the returned model refer to the full 14-column
    table, so it classifies table rows directly. ``inits`` replaces the random
    starting models, one per group.
    """
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    if inits is not None and len(inits) != len(spec.groups):
        raise ValueError(f"{len(inits)} initial models for {len(spec.groups)} feature groups")
    groups, reports = [], []
    for g, (cols, data) in enumerate(zip(spec.groups, train_groups)):
        if inits is None:
            init = init_parameters(cfg, data.dimension, data.num_classes, rng)
        else:
            init = inits[g]
        model, report = skem_train(data, init, cfg, trace=trace)
        groups.append((tuple(cols), model))
        reports.append(report)
    return CompositeModel(tuple(groups)), reports


def evaluate_model(model: CompositeModel, table: LabeledDataset,
                   converged: bool = True) -> tuple[ConfusionMatrix, RunSummary]:
    pred = classify_batch(model, table.samples)
    cm = confusion(table.labels, pred, model.num_classes)
    return cm, metrics(cm, converged)


def dither_rng(seed: int, split: str) -> np.random.Generator:
    """Dither stream for the ``"train"`` or ``"test"`` table of an experiment seed.

    Kept apart from the per-run initialization streams so that dither and
    initial means never share draws.
    """
    return np.random.default_rng([{"train": 1, "test": 2}[split], seed])


def prepare_table(table: LabeledDataset, spec: VariantSpec, seed: int, split: str) -> LabeledDataset:
    """Full-width table with the variant's dither (if any) applied."""
    if not spec.dither:
        return table
    X = apply_dither(table.samples, rng=dither_rng(seed, split))
    return LabeledDataset(X, table.labels, table.num_classes)


def _one_run(args):
    run, seed, cfg, spec, train_groups, test_table = args
    tcfg = cfg.training_config(seed)
    try:
        model, reports = train_variant(train_groups, spec, tcfg, np.random.default_rng(seed))
        converged = all(r.converged for r in reports)
        cm, summary = evaluate_model(model, test_table, converged)
    except SkemError as exc:
        return RunResult(run, seed, None, None, error=str(exc))
    return RunResult(run, seed, summary, cm, max(r.passes_used for r in reports))


def run_experiment(train: LabeledDataset, test: LabeledDataset,
                   cfg: ExperimentConfig) -> ExperimentResult:
    """``cfg.n_runs`` independent train/evaluate cycles on fixed feature tables."""
    spec = VARIANTS[cfg.variant]
    train_table = prepare_table(train, spec, cfg.seed, "train")
    train_groups = [train_table.columns(g) for g in spec.groups]
    test_table = prepare_table(test, spec, cfg.seed, "test")
    jobs = [(i, cfg.seed + i, cfg, spec, train_groups, test_table) for i in range(cfg.n_runs)]
    if cfg.jobs > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            runs = list(pool.map(_one_run, jobs))
    else:
        runs = [_one_run(j) for j in jobs]
    runs.sort(key=lambda r: r.run)
    ok = [r.summary for r in runs if not r.diverged]
    if ok:
        filtered, unfiltered = aggregate(ok, cfg.accuracy_floor)
        filtered = replace(filtered, n_runs=cfg.n_runs)
        unfiltered = replace(unfiltered, n_runs=cfg.n_runs)
    else:
        nan = float("nan")
        filtered = unfiltered = AggregateSummary(cfg.n_runs, 0, nan, nan, nan, nan, nan, nan)
    return ExperimentResult(cfg, runs, filtered, unfiltered)


def write_experiment(result: ExperimentResult, out_dir) -> dict[str, Path]:
    """Write ``runs.csv``, both aggregate tables and the best run's confusion grid."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    name = result.config.variant
    paths = {"runs": out / "runs.csv"}
    with open(paths["runs"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["run", "seed", "accuracy", "miou", "converged", "diverged", "passes_used", "error"])
        for r in result.runs:
            if r.diverged:
                w.writerow([r.run, r.seed, "", "", 0, 1, r.passes_used, r.error])
            else:
                w.writerow([r.run, r.seed, repr(r.summary.accuracy), repr(r.summary.miou),
                            int(r.summary.converged), 0, r.passes_used, ""])
    paths["filtered"] = write_aggregate_table({name: result.filtered}, out / "aggregate_filtered.csv")
    paths["unfiltered"] = write_aggregate_table({name: result.unfiltered}, out / "aggregate_all.csv")
    paths["summary"] = out / "summary.txt"
    paths["summary"].write_text(
        f"variant {name}\nK {result.config.K}\nn_runs {result.config.n_runs}\n"
        f"n_accepted {result.filtered.n_accepted}\nn_diverged {result.n_diverged}\n"
        f"n_below_floor {result.n_below_floor}\n"
    )
    best = result.best_run()
    if best is not None:
        paths["best_confusion"] = write_confusion_grid(best.confusion, out / "best_confusion.txt")
    return paths


# -- K study -------------------------------------------------------------------

@dataclass(frozen=True)
class KStudyRow:
    variant: str
    K: int
    mean_accuracy: float
    std_accuracy: float
    n_accepted: int
    n_runs: int
    filtered: bool  # False when no run passed the floor and all runs are reported
    results: ExperimentResult = field(repr=False, compare=False, default=None)


def kstudy(train: LabeledDataset, test: LabeledDataset, Ks: Sequence[int],
           variants: Sequence[str], base: ExperimentConfig) -> list[KStudyRow]:
    """Mean accuracy per (variant, K); falls back to all runs when none pass the floor."""
    rows = []
    for v in variants:
        for K in Ks:
            res = run_experiment(train, test, replace(base, variant=v, K=K))
            use = res.filtered if not res.filtered.empty else res.unfiltered
            rows.append(KStudyRow(v, K, use.mean_accuracy, use.std_accuracy,
                                  res.filtered.n_accepted, base.n_runs,
                                  not res.filtered.empty, res))
    return rows


def write_kstudy(rows: Sequence[KStudyRow], path) -> Path:
    """Long-format CSV plus a K-by-variant ``mean±std`` table next to it."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["variant", "K", "mean_accuracy", "std_accuracy", "n_accepted", "n_runs", "filtered"])
        for r in rows:
            w.writerow([r.variant, r.K, f"{r.mean_accuracy:.4f}", f"{r.std_accuracy:.4f}",
                        r.n_accepted, r.n_runs, int(r.filtered)])
    variants = list(dict.fromkeys(r.variant for r in rows))
    Ks = list(dict.fromkeys(r.K for r in rows))
    cell = {(r.variant, r.K): r for r in rows}
    table = path.with_name(path.stem + "_table.txt")
    lines = ["Alg\t" + "\t".join(f"{v}\tNr" for v in variants)]
    for K in Ks:
        parts = [f"K={K}"]
        for v in variants:
            r = cell.get((v, K))
            parts += [f"{r.mean_accuracy:.2f}±{r.std_accuracy:.3f}", str(r.n_accepted)] if r else ["", ""]
        lines.append("\t".join(parts))
    table.write_text("\n".join(lines) + "\n")
    return path


# -- ellipses --------------------------------------------------------------------

# (lower bound, label, line width in points, colour); a weight takes the last band it reaches
WEIGHT_BANDS = (
    (0.0, "<0.01", 0.5, "yellow"),
    (0.01, "0.01-0.1", 0.5, "green"),
    (0.1, "0.1-0.2", 1.0, "cyan"),
    (0.2, "0.2-0.3", 2.0, "magenta"),
    (0.3, "0.3-0.4", 3.0, "red"),
    (0.4, "0.4-0.5", 4.0, "blue"),
    (0.5, ">=0.5", 5.0, "black"),
)


def weight_band(weight: float) -> tuple[str, float, str, bool]:
    """``(label, line_width, colour, dashed)`` for a mixture weight in [0, 1]."""
    if not 0.0 <= weight <= 1.0:
        raise ValueError(f"weight {weight} outside [0, 1]")
    chosen = WEIGHT_BANDS[0]
    for band in WEIGHT_BANDS:
        if weight >= band[0]:
            chosen = band
    return chosen[1], chosen[2], chosen[3], chosen is WEIGHT_BANDS[0]


def ellipse_axes(cov2: np.ndarray) -> tuple[float, float, float]:
    """One-sigma semi-axes ``(a >= b)`` and major-axis angle in ``(-pi/2, pi/2]``."""
    cov2 = 0.5 * (np.asarray(cov2, dtype=float) + np.asarray(cov2, dtype=float).T)
    vals, vecs = np.linalg.eigh(cov2)
    if vals[0] <= 0:
        raise ValueError("projected covariance is not positive definite")
    a, b = math.sqrt(vals[1]), math.sqrt(vals[0])
    if math.isclose(vals[0], vals[1], rel_tol=1e-12, abs_tol=0.0):
        return a, b, 0.0
    vx, vy = vecs[:, 1]
    angle = math.atan2(vy, vx)
    if angle <= -math.pi / 2:
        angle += math.pi
    elif angle > math.pi / 2:
        angle -= math.pi
    return a, b, angle


@dataclass(frozen=True)
class Ellipse:
    group: int
    cls: int
    component: int
    dim_x: int
    dim_y: int
    center_x: float
    center_y: float
    a: float
    b: float
    angle_rad: float
    weight: float
    band: str


def export_ellipses(model: SharedKernelModel | CompositeModel,
                    classes: Sequence[int] | None = None) -> list[Ellipse]:
    """1-sigma ellipses for every 2-D projection pair, component and requested class.

    ``dim_x``/``dim_y`` are positions within the group's own feature vector.
    """
    if isinstance(model, SharedKernelModel):
        groups = ((tuple(range(model.dimension)), model),)
    else:
        groups = model.groups
    out = []
    for g, (_, sub) in enumerate(groups, start=1):
        cls_list = range(1, sub.num_classes + 1) if classes is None else classes
        for i, j in combinations(range(sub.dimension), 2):
            proj = marginal_projection(sub, (i, j))
            for k, comp in enumerate(proj.components):
                a, b, ang = ellipse_axes(comp.covariance)
                for c in cls_list:
                    w = float(proj.weights[k, c - 1])
                    out.append(Ellipse(g, c, k + 1, i, j, float(comp.mean[0]), float(comp.mean[1]),
                                       a, b, ang, w, weight_band(min(max(w, 0.0), 1.0))[0]))
    return out


def write_ellipses(ellipses: Sequence[Ellipse], path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["group", "class", "component", "dim_x", "dim_y",
                    "center_x", "center_y", "a", "b", "angle_rad", "weight", "band"])
        for e in ellipses:
            w.writerow([e.group, e.cls, e.component, e.dim_x, e.dim_y,
                        repr(e.center_x), repr(e.center_y), repr(e.a), repr(e.b),
                        repr(e.angle_rad), repr(e.weight), e.band])
    return path
