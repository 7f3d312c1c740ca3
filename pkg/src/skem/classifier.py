"""Maximum-likelihood shared-kernel classification.

A :class:`CompositeModel` factorizes the class likelihood as a product of
shared-kernel mixtures over disjoint feature subsets. A single group covering
every feature is the plain joint classifier. All scores are log domain; ties
go to the lowest class label.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .mixture import SharedKernelModel, class_loglikelihoods

__all__ = ["CompositeModel", "uniform_priors", "class_log_scores", "classify", "classify_batch"]


@dataclass(frozen=True)
class CompositeModel:
    """Ordered ``(feature_indices, model)`` groups sharing a class count."""

    groups: tuple

    def __post_init__(self):
        groups = tuple((tuple(int(i) for i in idx), model) for idx, model in self.groups)
        if not groups:
            raise ValueError("composite model needs at least one group")
        seen: set[int] = set()
        for idx, model in groups:
            if len(set(idx)) != len(idx):
                raise ValueError(f"duplicate feature index in group {idx}")
            if seen & set(idx):
                raise ValueError(f"feature groups overlap on {sorted(seen & set(idx))}")
            seen |= set(idx)
            if model.dimension != len(idx):
                raise ValueError(
                    f"group {idx} has {len(idx)} features but model dimension {model.dimension}"
                )
        if len({m.num_classes for _, m in groups}) != 1:
            raise ValueError("all groups must share the same number of classes")
        object.__setattr__(self, "groups", groups)

    @classmethod
    def single(cls, model: SharedKernelModel, features: Sequence[int] | None = None):
        features = range(model.dimension) if features is None else features
        return cls(((tuple(features), model),))

    @property
    def num_classes(self) -> int:
        return self.groups[0][1].num_classes

    @property
    def feature_indices(self) -> list[int]:
        return [i for idx, _ in self.groups for i in idx]


def uniform_priors(L: int) -> np.ndarray:
    return np.full(L, 1.0 / L)


def _check_priors(priors, L):
    if priors is None:
        return uniform_priors(L)
    priors = np.asarray(priors, dtype=float).reshape(-1)
    if priors.size != L:
        raise ValueError(f"expected {L} priors, got {priors.size}")
    if np.any(priors < 0) or abs(priors.sum() - 1.0) > 1e-9:
        raise ValueError("priors must be non-negative and sum to 1")
    return priors


def class_log_scores(model: CompositeModel, X, priors=None) -> np.ndarray:
    """``(N, L)`` matrix of ``log prior_j + sum_groups log p(x_group | j)``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    L = model.num_classes
    priors = _check_priors(priors, L)
    needed = max(model.feature_indices)
    if X.shape[1] <= needed:
        raise ValueError(f"feature vector has {X.shape[1]} entries, model needs index {needed}")
    with np.errstate(divide="ignore"):
        scores = np.tile(np.log(priors), (X.shape[0], 1))
    for idx, sub in model.groups:
        scores += class_loglikelihoods(sub, X[:, list(idx)])
    return scores


def _argmax_labels(scores: np.ndarray) -> np.ndarray:
    if np.any(np.isnan(scores)):
        raise ValueError("NaN class score (non-finite input?)")
    if scores.size and np.any(np.all(np.isneginf(scores), axis=1)):
        raise ValueError("sample has zero likelihood under every class")
    # np.argmax returns the first maximum: lowest class label wins ties
    return np.argmax(scores, axis=1) + 1


def classify(model: CompositeModel, x, priors=None) -> tuple[int, np.ndarray]:
    """Most likely class label for one feature vector, plus per-class log scores."""
    x = np.asarray(x, dtype=float).reshape(1, -1)
    scores = class_log_scores(model, x, priors)
    return int(_argmax_labels(scores)[0]), scores[0]


def classify_batch(model: CompositeModel, X, priors=None) -> np.ndarray:
    """Class labels for each row of ``X``."""
    X = np.asarray(X, dtype=float)
    if X.size == 0:
        return np.zeros(0, dtype=int)
    return _argmax_labels(class_log_scores(model, X, priors))
