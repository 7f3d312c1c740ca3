"""Gaussian kernels, shared-kernel models and the labelled dataset container.

Class labels are 1-based (``1..L``) everywhere in the public API, matching
how the digit datasets are labelled. Feature indices are ordinary 0-based
numpy indices.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import logsumexp

from .errors import CovarianceError

__all__ = [
    "GaussianComponent",
    "SharedKernelModel",
    "MixtureModel",
    "LabeledDataset",
    "cholesky_factor",
    "gaussian_pdf",
    "gaussian_logpdf",
    "sample_component",
    "sample_shared_kernel",
    "class_likelihood",
    "class_loglikelihood",
    "class_loglikelihoods",
    "marginal_projection",
]

_LOG_2PI = np.log(2.0 * np.pi)


def cholesky_factor(cov: np.ndarray) -> np.ndarray:
    """Lower-triangular Cholesky factor of the symmetrized covariance.

    Raises:
        CovarianceError: if the matrix is not positive definite.
    """
    cov = np.asarray(cov, dtype=float)
    sym = 0.5 * (cov + cov.T)
    if not np.all(np.isfinite(sym)):
        raise CovarianceError("covariance contains non-finite entries")
    try:
        return np.linalg.cholesky(sym)
    except np.linalg.LinAlgError as exc:
        raise CovarianceError(f"covariance is not positive definite: {exc}") from exc


@dataclass(frozen=True)
class GaussianComponent:
    """One multivariate normal kernel N(mu, P)."""

    mean: np.ndarray
    covariance: np.ndarray
    chol: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        mean = np.array(self.mean, dtype=float).reshape(-1)
        cov = np.array(self.covariance, dtype=float)
        if cov.ndim == 0:
            cov = cov.reshape(1, 1)
        if cov.shape != (mean.size, mean.size):
            raise ValueError(
                f"covariance shape {cov.shape} does not match mean length {mean.size}"
            )
        cov = 0.5 * (cov + cov.T)
        mean.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)
        chol = cholesky_factor(cov)
        chol.setflags(write=False)
        object.__setattr__(self, "chol", chol)

    @property
    def dimension(self) -> int:
        return self.mean.size

    def log_det(self) -> float:
        return 2.0 * float(np.sum(np.log(np.diag(self.chol))))


def gaussian_logpdf(x, comp: GaussianComponent) -> np.ndarray | float:
    """Log density of ``comp`` at ``x`` (a vector, or an ``(N, M)`` batch)."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    xs = np.atleast_2d(x)
    if xs.shape[1] != comp.dimension:
        raise ValueError(f"expected {comp.dimension}-dimensional input, got {xs.shape[1]}")
    diff = (xs - comp.mean).T
    z = solve_triangular(comp.chol, diff, lower=True, check_finite=False)
    maha = np.sum(z * z, axis=0)
    out = -0.5 * (comp.dimension * _LOG_2PI + comp.log_det() + maha)
    return float(out[0]) if single else out


def gaussian_pdf(x, comp: GaussianComponent):
    """Density of ``comp`` at ``x``; see :func:`gaussian_logpdf`."""
    return np.exp(gaussian_logpdf(x, comp))


def sample_component(comp: GaussianComponent, rng: np.random.Generator, size: int | None = None):
    """Draw ``g = T z + mu`` with ``T`` the lower Cholesky factor and ``z`` standard normal."""
    if size is None:
        z = rng.standard_normal(comp.dimension)
        return comp.chol @ z + comp.mean
    z = rng.standard_normal((comp.dimension, size))
    return (comp.chol @ z).T + comp.mean


@dataclass(frozen=True)
class SharedKernelModel:
    """K Gaussian kernels shared by L classes, with a ``(K, L)`` weight matrix.

    ``weights[k, j]`` is the probability that a sample of class ``j + 1`` was
    produced by kernel ``k``; each column sums to one.
    """

    components: tuple
    weights: np.ndarray

    def __post_init__(self):
        comps = tuple(self.components)
        if not comps:
            raise ValueError("a model needs at least one component")
        weights = np.array(self.weights, dtype=float)
        if weights.ndim == 1:
            weights = weights.reshape(-1, 1)
        if weights.shape[0] != len(comps):
            raise ValueError(
                f"weights have {weights.shape[0]} rows for {len(comps)} components"
            )
        dims = {c.dimension for c in comps}
        if len(dims) != 1:
            raise ValueError(f"components disagree on dimension: {sorted(dims)}")
        if np.any(weights < 0) or not np.all(np.isfinite(weights)):
            raise ValueError("weights must be finite and non-negative")
        col_sums = weights.sum(axis=0)
        if np.any(np.abs(col_sums - 1.0) > 1e-9):
            raise ValueError(f"weight columns must sum to 1, got {col_sums}")
        weights.setflags(write=False)
        object.__setattr__(self, "components", comps)
        object.__setattr__(self, "weights", weights)

    @property
    def num_components(self) -> int:
        return len(self.components)

    @property
    def num_classes(self) -> int:
        return self.weights.shape[1]

    @property
    def dimension(self) -> int:
        return self.components[0].dimension

    @property
    def means(self) -> np.ndarray:
        """``(K, M)`` array of kernel means."""
        return np.stack([c.mean for c in self.components])

    @property
    def covariances(self) -> np.ndarray:
        """``(K, M, M)`` array of kernel covariances."""
        return np.stack([c.covariance for c in self.components])

    @classmethod
    def from_arrays(cls, means, covariances, weights) -> "SharedKernelModel":
        means = np.atleast_2d(np.asarray(means, dtype=float))
        covs = np.asarray(covariances, dtype=float)
        if covs.ndim == 1:
            covs = covs.reshape(-1, 1, 1)
        comps = tuple(GaussianComponent(m, p) for m, p in zip(means, covs))
        return cls(comps, weights)

    def component_logpdfs(self, X) -> np.ndarray:
        """``(K, N)`` matrix of kernel log densities at each row of ``X``."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.stack([np.atleast_1d(gaussian_logpdf(X, c)) for c in self.components])

    def _check_class(self, cls_label: int) -> int:
        if not 1 <= int(cls_label) <= self.num_classes:
            raise ValueError(f"class {cls_label} outside 1..{self.num_classes}")
        return int(cls_label) - 1


@dataclass(frozen=True)
class MixtureModel:
    """Ordinary (unsupervised) Gaussian mixture with a length-K weight vector."""

    components: tuple
    weights: np.ndarray

    def __post_init__(self):
        comps = tuple(self.components)
        weights = np.array(self.weights, dtype=float).reshape(-1)
        if weights.size != len(comps):
            raise ValueError("one weight per component required")
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-9:
            raise ValueError("weights must be non-negative and sum to 1")
        weights.setflags(write=False)
        object.__setattr__(self, "components", comps)
        object.__setattr__(self, "weights", weights)

    @property
    def num_components(self) -> int:
        return len(self.components)

    @property
    def dimension(self) -> int:
        return self.components[0].dimension

    def as_shared_kernel(self) -> SharedKernelModel:
        return SharedKernelModel(self.components, self.weights.reshape(-1, 1))


def sample_shared_kernel(model: SharedKernelModel, cls_label: int, n: int,
                         rng: np.random.Generator) -> np.ndarray:
    """``n`` i.i.d. draws from the class-conditional mixture of ``cls_label``.

    The kernel index is chosen by inverting the cumulative class weights with
    a uniform variate, then that kernel is sampled.
    """
    j = model._check_class(cls_label)
    cum = np.cumsum(model.weights[:, j])
    out = np.empty((n, model.dimension))
    for i in range(n):
        u = rng.random()
        k = min(int(np.searchsorted(cum, u, side="right")), model.num_components - 1)
        out[i] = sample_component(model.components[k], rng)
    return out


def class_loglikelihood(model: SharedKernelModel, x, cls_label: int):
    """``log sum_k pi_kj N(x; mu_k, P_k)`` via log-sum-exp; ``x`` may be a batch."""
    j = model._check_class(cls_label)
    x = np.asarray(x, dtype=float)
    logp = model.component_logpdfs(x)
    with np.errstate(divide="ignore"):
        logw = np.log(model.weights[:, j])
    out = logsumexp(logp + logw[:, None], axis=0)
    return float(out[0]) if x.ndim == 1 else out


def class_loglikelihoods(model: SharedKernelModel, X) -> np.ndarray:
    """``(N, L)`` log class-conditional densities for every row of ``X``."""
    logp = model.component_logpdfs(X)
    with np.errstate(divide="ignore"):
        logw = np.log(model.weights)
    return logsumexp(logp[:, None, :] + logw[:, :, None], axis=0).T


def class_likelihood(model: SharedKernelModel, x, cls_label: int):
    """Class-conditional density ``sum_k pi_kj N(x; mu_k, P_k)``."""
    return np.exp(class_loglikelihood(model, x, cls_label))


def marginal_projection(model: SharedKernelModel, dims: Sequence[int]) -> SharedKernelModel:
    """Restrict every kernel to the coordinates ``dims``; weights are unchanged."""
    dims = [int(d) for d in dims]
    if len(set(dims)) != len(dims):
        raise ValueError(f"duplicate projection indices: {dims}")
    if not dims or min(dims) < 0 or max(dims) >= model.dimension:
        raise ValueError(f"projection indices {dims} outside 0..{model.dimension - 1}")
    idx = np.asarray(dims)
    comps = tuple(
        GaussianComponent(c.mean[idx], c.covariance[np.ix_(idx, idx)])
        for c in model.components
    )
    return SharedKernelModel(comps, model.weights)


@dataclass(frozen=True)
class LabeledDataset:
    """``N`` feature vectors with 1-based class labels."""

    samples: np.ndarray
    labels: np.ndarray
    num_classes: int | None = None

    def __post_init__(self):
        X = np.array(self.samples, dtype=float)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        labels = np.array(self.labels).reshape(-1)
        if labels.size and not np.all(np.equal(np.mod(labels, 1), 0)):
            raise ValueError("labels must be integers")
        labels = labels.astype(int)
        if labels.size != X.shape[0]:
            raise ValueError(f"{X.shape[0]} samples but {labels.size} labels")
        L = self.num_classes if self.num_classes is not None else int(labels.max(initial=0))
        if labels.size and (labels.min() < 1 or labels.max() > L):
            raise ValueError(f"labels must lie in 1..{L}")
        X.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "samples", X)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "num_classes", int(L))

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def dimension(self) -> int:
        return self.samples.shape[1]

    def class_indices(self) -> list[np.ndarray]:
        """Positions of each class's samples, in order of appearance."""
        return [np.flatnonzero(self.labels == c) for c in range(1, self.num_classes + 1)]

    def columns(self, cols: Sequence[int]) -> "LabeledDataset":
        # C order keeps BLAS reductions identical to a freshly built array
        return LabeledDataset(np.ascontiguousarray(self.samples[:, list(cols)]), self.labels, self.num_classes)
