"""Confusion matrices, accuracy / mean IoU, and Monte Carlo aggregation."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

__all__ = [
    "ConfusionMatrix",
    "RunSummary",
    "AggregateSummary",
    "confusion",
    "metrics",
    "aggregate",
    "write_confusion_grid",
    "read_confusion_grid",
    "write_aggregate_table",
]


@dataclass(frozen=True)
class ConfusionMatrix:
    """``counts[i, j]`` = samples of true class ``i + 1`` predicted as ``j + 1``."""

    counts: np.ndarray

    def __post_init__(self):
        c = np.array(self.counts, dtype=np.int64)
        if c.ndim != 2 or c.shape[0] != c.shape[1]:
            raise ValueError(f"confusion matrix must be square, got {c.shape}")
        if np.any(c < 0):
            raise ValueError("negative counts")
        c.setflags(write=False)
        object.__setattr__(self, "counts", c)

    @property
    def num_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def tp(self) -> np.ndarray:
        return np.diag(self.counts).copy()

    @property
    def fp(self) -> np.ndarray:
        return self.counts.sum(axis=0) - self.tp

    @property
    def fn(self) -> np.ndarray:
        return self.counts.sum(axis=1) - self.tp

    @property
    def tn(self) -> np.ndarray:
        return self.total - self.tp - self.fp - self.fn

    def recall(self) -> np.ndarray:
        rows = self.counts.sum(axis=1)
        return np.divide(self.tp, rows, out=np.zeros(self.num_classes), where=rows > 0)


@dataclass
class RunSummary:
    accuracy: float
    miou: float
    tp: np.ndarray
    fp: np.ndarray
    fn: np.ndarray
    tn: np.ndarray
    converged: bool = True
    zero_support: list = field(default_factory=list)  # classes whose IoU term was forced to 0


@dataclass(frozen=True)
class AggregateSummary:
    n_runs: int
    n_accepted: int
    median_accuracy: float
    mean_accuracy: float
    std_accuracy: float
    median_miou: float
    mean_miou: float
    std_miou: float

    @property
    def empty(self) -> bool:
        return self.n_accepted == 0


def confusion(truth, pred, L: int) -> ConfusionMatrix:
    """Count (truth, prediction) pairs; both hold 1-based labels in ``1..L``."""
    truth = np.asarray(truth).reshape(-1)
    pred = np.asarray(pred).reshape(-1)
    if truth.size != pred.size:
        raise ValueError("Number of predicted samples differs from number of truth samples")
    for name, v in (("truth", truth), ("predicted", pred)):
        if v.size and (v.min() < 1 or v.max() > L):
            raise ValueError(f"{name} values must be in the range [1:{L}]")
    counts = np.zeros((L, L), dtype=np.int64)
    np.add.at(counts, (truth.astype(int) - 1, pred.astype(int) - 1), 1)
    return ConfusionMatrix(counts)


def metrics(cm: ConfusionMatrix, converged: bool = True) -> RunSummary:
    """Prediction accuracy ``trace / total`` and mean IoU over classes.

    IoU of class ``i`` is ``C_ii / (row_i + col_i - C_ii)``. A class with no
    truth and no predictions contributes 0 and is listed in ``zero_support``.
    """
    C = cm.counts
    total = cm.total
    if total == 0:
        raise ValueError("confusion matrix is empty")
    tp = cm.tp
    union = C.sum(axis=1) + C.sum(axis=0) - tp
    zero = [i + 1 for i in np.flatnonzero(union == 0)]
    iou = np.divide(tp, union, out=np.zeros(cm.num_classes), where=union > 0)
    return RunSummary(
        accuracy=float(np.trace(C) / total),
        miou=float(iou.sum() / cm.num_classes),
        tp=tp, fp=cm.fp, fn=cm.fn, tn=cm.tn,
        converged=converged,
        zero_support=zero,
    )


def _stats(values: Sequence[float]) -> tuple[float, float, float]:
    if len(values) == 0:
        return (float("nan"),) * 3
    v = np.asarray(values, dtype=float)
    std = float(np.std(v, ddof=1)) if v.size > 1 else 0.0
    return float(np.median(v)), float(np.mean(v)), std


def _summary(runs: Sequence[RunSummary], n_runs: int) -> AggregateSummary:
    acc = _stats([r.accuracy for r in runs])
    miou = _stats([r.miou for r in runs])
    return AggregateSummary(n_runs, len(runs), *acc, *miou)


def aggregate(runs: Sequence[RunSummary], accuracy_floor: float = 0.5
              ) -> tuple[AggregateSummary, AggregateSummary]:
    """``(filtered, unfiltered)`` statistics; filtered keeps runs with accuracy above the floor.

    Standard deviations use the ``n - 1`` divisor (0 for a single run).
    """
    if not runs:
        raise ValueError("need at least one run")
    kept = [r for r in runs if r.accuracy > accuracy_floor]
    return _summary(kept, len(runs)), _summary(list(runs), len(runs))


def write_confusion_grid(cm: ConfusionMatrix, path) -> Path:
    """Whitespace-aligned integer grid, one row per true class."""
    width = max(len(str(int(cm.counts.max()))), 1)
    lines = [" ".join(f"{int(v):>{width}d}" for v in row) for row in cm.counts]
    path = Path(path)
    path.write_text("\n".join(lines) + "\n")
    return path


def read_confusion_grid(path) -> ConfusionMatrix:
    rows = [line.split() for line in Path(path).read_text().splitlines() if line.strip()]
    return ConfusionMatrix(np.array([[int(v) for v in r] for r in rows]))


_TABLE_ROWS = (
    ("Med Acc", "median_accuracy"),
    ("Mean Acc", "mean_accuracy"),
    ("Std Acc", "std_accuracy"),
    ("Med MIoU", "median_miou"),
    ("Mean MIoU", "mean_miou"),
    ("Std MIoU", "std_miou"),
    ("OK runs", "n_accepted"),
)


def write_aggregate_table(summaries: Mapping[str, AggregateSummary], path) -> Path:
    """Metrics as rows, algorithms as columns."""
    path = Path(path)
    names = list(summaries)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["Algorithm"] + names)
        for label, attr in _TABLE_ROWS:
            vals = [getattr(summaries[n], attr) for n in names]
            w.writerow([label] + [v if isinstance(v, int) else f"{v:.3f}" for v in vals])
    return path
