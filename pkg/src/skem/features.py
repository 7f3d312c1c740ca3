"""Feature extraction from digit images.

The feature table has 14 columns: the entries 11..20 of the first principal
direction of the image (``pca1..pca10``), then the binarized quadrant
masses ``q1..q4``. ``q1`` is dependent on the other three and no variant
uses it.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .digits import DIGIT_ORDER, DigitDataset
from .mixture import LabeledDataset

__all__ = [
    "FEATURE_NAMES",
    "PCA_WINDOW",
    "VariantSpec",
    "VARIANTS",
    "pca_loading",
    "pca_features",
    "quadrant_counts",
    "quadrant_mass",
    "apply_dither",
    "extract_features",
    "build_feature_table",
    "select_variant",
    "write_feature_csv",
    "read_feature_csv",
]

FEATURE_NAMES = tuple(f"pca{i}" for i in range(1, 11)) + ("q1", "q2", "q3", "q4")
PCA_WINDOW = slice(10, 20)  # entries 11..20 of the 28-entry loading
DITHER_SIGMA = 0.01


def _pca(k: int) -> int:
    return k - 1


def _q(k: int) -> int:
    return 9 + k


@dataclass(frozen=True)
class VariantSpec:
    name: str
    groups: tuple  # tuple of tuples of column indices into the 14-column table
    dither: bool = False

    def __post_init__(self):
        flat = [i for g in self.groups for i in g]
        if len(flat) != len(set(flat)):
            raise ValueError(f"variant {self.name}: feature groups overlap")
        if any(not 0 <= i < len(FEATURE_NAMES) for i in flat):
            raise ValueError(f"variant {self.name}: column index out of range")

    @property
    def dimension(self) -> int:
        return sum(len(g) for g in self.groups)

    def group_names(self) -> list[list[str]]:
        return [[FEATURE_NAMES[i] for i in g] for g in self.groups]


_Q234 = (_q(2), _q(3), _q(4))

VARIANTS = {
    v.name: v
    for v in (
        VariantSpec("3D", (_Q234,)),
        VariantSpec("3x1D", ((_q(2),), (_q(3),), (_q(4),))),
        VariantSpec("4D", (_Q234 + (_pca(4),),)),
        VariantSpec("5D", (_Q234 + (_pca(4), _pca(5)),)),
        VariantSpec("2Dx3D", ((_pca(4), _pca(5)), _Q234)),
        VariantSpec("6D", (_Q234 + (_pca(2), _pca(4), _pca(5)),)),
        VariantSpec("3Dx3D", ((_pca(2), _pca(4), _pca(5)), _Q234)),
        VariantSpec("9D", (_Q234 + tuple(_pca(k) for k in range(2, 8)),)),
        VariantSpec("10D", (tuple(_pca(k) for k in range(1, 11)),), dither=True),
        VariantSpec("13D", (tuple(_pca(k) for k in range(1, 11)) + _Q234,), dither=True),
    )
}


def pca_loading(pixels: np.ndarray, standardize: bool = False) -> np.ndarray:
    """First principal direction (unit 28-vector) of the image, columns as variables.

    Columns are centred (and scaled to unit variance when ``standardize``).
    The sign is fixed so the entry of largest magnitude is positive.

    Raises:
        ValueError: the image has no variance.
    """
    X = np.asarray(pixels, dtype=float)
    Xc = X - X.mean(axis=0)
    if standardize:
        sd = Xc.std(axis=0, ddof=1)
        Xc = Xc / np.where(sd > 0, sd, 1.0)
    _, s, vt = np.linalg.svd(Xc, full_matrices=False)
    if s.size == 0 or s[0] <= 0:
        raise ValueError("image has zero variance; principal direction undefined")
    v = vt[0]
    if v[np.argmax(np.abs(v))] < 0:
        v = -v
    return v


def pca_features(pixels: np.ndarray, standardize: bool = False) -> np.ndarray:
    return pca_loading(pixels, standardize)[PCA_WINDOW]


def quadrant_counts(pixels: np.ndarray) -> tuple[int, int, int, int]:
    """On-pixel counts (top-right, top-left, bottom-left, bottom-right)."""
    B = np.asarray(pixels) > 0
    m, n = B.shape
    m2, n2 = m // 2, n // 2
    return (
        int(B[:m2, n2:].sum()),
        int(B[:m2, :n2].sum()),
        int(B[m2:, :n2].sum()),
        int(B[m2:, n2:].sum()),
    )


def quadrant_mass(pixels: np.ndarray) -> tuple[float, float, float, float]:
    """Fractions of binarized on-pixels per quadrant, ordered as :func:`quadrant_counts`."""
    counts = quadrant_counts(pixels)
    total = sum(counts)
    if total == 0:
        raise ValueError("blank image has no quadrant mass")
    return tuple(c / total for c in counts)


def apply_dither(features, sigma: float = DITHER_SIGMA, rng: np.random.Generator | None = None):
    """Add N(0, sigma^2) noise to entries that are exactly zero."""
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    rng = np.random.default_rng() if rng is None else rng
    out = np.array(features, dtype=float)
    zero = out == 0
    out[zero] = sigma * rng.standard_normal(int(zero.sum()))
    return out


def extract_features(pixels: np.ndarray, standardize: bool = False) -> np.ndarray:
    """14-entry feature row for one image."""
    return np.concatenate([pca_features(pixels, standardize), quadrant_mass(pixels)])


def build_feature_table(dataset: DigitDataset, standardize: bool = False) -> LabeledDataset:
    """One row per image, looping samples outermost and classes innermost."""
    n = dataset.n_per_digit
    if n == 0:
        raise ValueError("empty dataset")
    rows = np.empty((10 * n, len(FEATURE_NAMES)))
    labels = np.empty(10 * n, dtype=int)
    r = 0
    for s in range(n):
        for c in range(len(DIGIT_ORDER)):
            rows[r] = extract_features(dataset.images[c, s], standardize)
            labels[r] = c + 1
            r += 1
    return LabeledDataset(rows, labels, num_classes=len(DIGIT_ORDER))


def select_variant(table: LabeledDataset, spec: VariantSpec,
                   rng: np.random.Generator | None = None,
                   sigma: float = DITHER_SIGMA) -> list[LabeledDataset]:
    """Column subsets for each group of ``spec``; dither is applied to the full table first."""
    X = table.samples
    if spec.dither:
        X = apply_dither(X, sigma, rng)
    return [LabeledDataset(X[:, list(g)], table.labels, table.num_classes) for g in spec.groups]


def write_feature_csv(table: LabeledDataset, path, names: Sequence[str] = FEATURE_NAMES):
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(list(names) + ["label"])
        for row, lab in zip(table.samples, table.labels):
            w.writerow([repr(float(v)) for v in row] + [int(lab)])
    return path


def read_feature_csv(path, num_classes: int | None = None) -> LabeledDataset:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if not header or header[-1] != "label":
            raise ValueError(f"{path}: last column must be 'label'")
        rows = [r for r in reader if r]
    if not rows:
        raise ValueError(f"{path}: no data rows")
    data = np.array([[float(v) for v in r[:-1]] for r in rows])
    labels = np.array([int(r[-1]) for r in rows])
    return LabeledDataset(data, labels, num_classes)
