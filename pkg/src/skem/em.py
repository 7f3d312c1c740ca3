"""Training: supervised shared-kernel EM (SKEM) and standard unsupervised EM.

Both loops evaluate the kernel densities in the linear domain, falling back
to log-sum-exp for a pass in which any normalizer underflows. The per-pass
log-likelihood is the incomplete-data log-likelihood of the parameters that
entered that pass, exactly as the responsibilities are computed.

Trace lines (``trace=`` stream) are tab separated::

    pass<TAB>ll_class_1<TAB>...<TAB>ll_class_L<TAB>max_abs_delta
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, TextIO

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import logsumexp

from .errors import CovarianceError, DivergenceError
from .mixture import (
    GaussianComponent,
    LabeledDataset,
    MixtureModel,
    SharedKernelModel,
    class_loglikelihood,
)

__all__ = [
    "TrainingConfig",
    "TrainingReport",
    "init_parameters",
    "init_mixture",
    "skem_train",
    "em_train",
    "e_step",
    "total_loglikelihood",
]

# a kernel whose summed responsibility drops below this fraction of N is degenerate
DEGENERATE_FRACTION = 1e-12


@dataclass(frozen=True)
class TrainingConfig:
    num_components: int = 10
    max_passes: int = 100
    loglik_tolerance: float = 0.1
    seed: int = 0
    init_mean_low: float = 0.0
    init_mean_high: float = 1.0
    init_cov_scale: float = 0.3

    def __post_init__(self):
        if self.num_components < 1:
            raise ValueError("num_components must be >= 1")
        if self.max_passes < 1:
            raise ValueError("max_passes must be >= 1")
        if not self.loglik_tolerance > 0:
            raise ValueError("loglik_tolerance must be positive")
        if not self.init_cov_scale > 0:
            raise ValueError("init_cov_scale must be positive")


@dataclass
class TrainingReport:
    passes_used: int
    per_class_loglik_history: np.ndarray  # (passes_used, L)
    converged: bool
    final_total_loglik: float
    used_log_domain: list = field(default_factory=list)

    @property
    def total_loglik_history(self) -> np.ndarray:
        return self.per_class_loglik_history.sum(axis=1)


def init_parameters(cfg: TrainingConfig, M: int, L: int,
                    rng: np.random.Generator | None = None) -> SharedKernelModel:
    """Random initial shared-kernel model.

    Means are i.i.d. uniform on ``[init_mean_low, init_mean_high]``, every
    covariance is ``init_cov_scale * I`` and every weight is ``1/K``. Only the
    means consume random numbers.
    """
    if M < 1 or L < 1:
        raise ValueError("M and L must be >= 1")
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    K = cfg.num_components
    means = rng.uniform(cfg.init_mean_low, cfg.init_mean_high, size=(K, M))
    cov = cfg.init_cov_scale * np.eye(M)
    comps = tuple(GaussianComponent(m, cov) for m in means)
    return SharedKernelModel(comps, np.full((K, L), 1.0 / K))


def init_mixture(cfg: TrainingConfig, M: int,
                 rng: np.random.Generator | None = None) -> MixtureModel:
    skm = init_parameters(cfg, M, 1, rng)
    return MixtureModel(skm.components, skm.weights[:, 0])


def _log_densities(X, means, chols) -> np.ndarray:
    K, M = means.shape
    out = np.empty((K, X.shape[0]))
    log2pi = np.log(2.0 * np.pi)
    for k in range(K):
        diff = (X - means[k]).T
        z = solve_triangular(chols[k], diff, lower=True, check_finite=False)
        logdet = 2.0 * np.sum(np.log(np.diag(chols[k])))
        out[k] = -0.5 * (M * log2pi + logdet + np.sum(z * z, axis=0))
    return out


def e_step(X, model_weights, means, chols):
    """Responsibilities for samples whose prior column is ``model_weights[:, n]``.

    Args:
        X: ``(N, M)`` samples.
        model_weights: ``(K, N)`` prior kernel weights per sample (the class
            column for SKEM, the shared vector for EM).
        means, chols: kernel means ``(K, M)`` and lower Cholesky factors.

    Returns:
        ``(W, loglik, log_domain)`` with ``W`` of shape ``(K, N)`` whose columns
        sum to one, per-sample log normalizers, and whether the log-domain
        fallback was needed.
    """
    logG = _log_densities(X, means, chols)
    with np.errstate(over="ignore", under="ignore"):
        G = np.exp(logG)
        W = model_weights * G
        sumk = W.sum(axis=0)
    if np.all(np.isfinite(sumk)) and np.all(sumk > 0):
        return W / sumk, np.log(sumk), False
    with np.errstate(divide="ignore"):
        logW = np.log(model_weights) + logG
    lse = logsumexp(logW, axis=0)
    if not np.all(np.isfinite(lse)):
        raise DivergenceError("sample with zero likelihood under every kernel")
    return np.exp(logW - lse), lse, True


def _update_kernels(X, W, pass_no):
    """Responsibility-weighted means and covariances pooled over all samples."""
    N = X.shape[0]
    Nk = W.sum(axis=1)
    bad = np.flatnonzero(~(Nk >= DEGENERATE_FRACTION * N))
    if bad.size:
        raise DivergenceError(
            f"kernel {int(bad[0]) + 1} lost all responsibility at pass {pass_no}",
            pass_number=pass_no,
        )
    means = (W @ X) / Nk[:, None]
    K, M = means.shape
    covs = np.empty((K, M, M))
    chols = np.empty((K, M, M))
    for k in range(K):
        d = X - means[k]
        P = (W[k][:, None] * d).T @ d / Nk[k]
        P = 0.5 * (P + P.T)
        covs[k] = P
        try:
            chols[k] = np.linalg.cholesky(P)
        except np.linalg.LinAlgError as exc:
            raise CovarianceError(
                f"covariance of kernel {k + 1} not positive definite at pass {pass_no}",
                component=k + 1,
                pass_number=pass_no,
            ) from exc
    if not (np.all(np.isfinite(means)) and np.all(np.isfinite(covs))):
        raise DivergenceError(f"non-finite kernel parameters at pass {pass_no}",
                              pass_number=pass_no)
    return means, covs, chols


def _write_trace(trace, pass_no, class_ll, delta):
    fields = [str(pass_no)] + [repr(float(v)) for v in class_ll]
    fields.append(repr(float(np.max(np.abs(delta)))))
    trace.write("\t".join(fields) + "\n")


def _run(X, labels0, L, means, covs, chols, weights, cfg, update_weights,
         on_pass, trace):
    """Shared EM driver. ``labels0`` holds 0-based class indices per sample."""
    history = []
    log_flags = []
    prev = np.full(L, -np.inf)
    converged = np.zeros(L, dtype=bool)
    pass_no = 0
    for pass_no in range(1, cfg.max_passes + 1):
        W, ll, used_log = e_step(X, weights[:, labels0], means, chols)
        log_flags.append(used_log)
        class_ll = np.bincount(labels0, weights=ll, minlength=L)
        weights = update_weights(W)
        means, covs, chols = _update_kernels(X, W, pass_no)

        delta = class_ll - prev
        if pass_no > 1:
            # flags are sticky once set
            converged |= np.abs(delta) < cfg.loglik_tolerance
        prev = class_ll
        history.append(class_ll)
        if trace is not None:
            _write_trace(trace, pass_no, class_ll, delta)
        if on_pass is not None:
            on_pass(pass_no, means, covs, weights, class_ll)
        if converged.all():
            break
    return means, covs, weights, np.array(history), bool(converged.all()), pass_no, log_flags


def skem_train(data: LabeledDataset, init: SharedKernelModel, cfg: TrainingConfig,
               on_pass: Callable | None = None,
               trace: TextIO | None = None) -> tuple[SharedKernelModel, TrainingReport]:
    """Fit a shared-kernel model to labelled data.

    Each pass computes responsibilities with the weight column of each
    sample's own class, re-estimates every weight column as the mean
    responsibility over that class's samples, and re-estimates the kernel
    means and covariances from all samples regardless of class. Stops once
    every class log-likelihood has moved by less than ``cfg.loglik_tolerance``
    between consecutive passes, or after ``cfg.max_passes`` passes.

    ``on_pass(pass_no, means, covs, weights, class_ll)`` is called after each
    M-step with the updated parameters.

    Raises:
        ValueError: dimension or class-count mismatch, or an empty class.
        DivergenceError: a kernel lost all responsibility.
        CovarianceError: an updated covariance is not positive definite.
    """
    if init.dimension != data.dimension:
        raise ValueError(f"model dimension {init.dimension} != data dimension {data.dimension}")
    L = data.num_classes
    if init.num_classes != L:
        raise ValueError(f"model has {init.num_classes} classes, data has {L}")
    groups = data.class_indices()
    for c, idx in enumerate(groups, start=1):
        if idx.size == 0:
            raise ValueError(f"class {c} has no training samples")
    X = data.samples
    labels0 = data.labels - 1
    K = init.num_components

    def update_weights(W):
        pi = np.empty((K, L))
        for c, idx in enumerate(groups):
            pi[:, c] = W[:, idx].sum(axis=1) / idx.size
        return pi

    means, covs, weights, hist, conv, passes, flags = _run(
        X, labels0, L, init.means, init.covariances,
        np.stack([c.chol for c in init.components]), np.array(init.weights),
        cfg, update_weights, on_pass, trace,
    )
    model = SharedKernelModel.from_arrays(means, covs, weights)
    report = TrainingReport(passes, hist, conv, total_loglikelihood(model, data), flags)
    return model, report


def em_train(X, init: MixtureModel, cfg: TrainingConfig,
             on_pass: Callable | None = None,
             trace: TextIO | None = None) -> tuple[MixtureModel, TrainingReport]:
    """Standard EM for an unlabelled Gaussian mixture.

    Weights are updated as ``pi_k = (1/N) sum_n w_nk``; means and covariances
    are responsibility-weighted averages. Convergence uses the same rule as
    :func:`skem_train` applied to the single total log-likelihood.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    if X.shape[1] != init.dimension:
        raise ValueError(f"data dimension {X.shape[1]} != model dimension {init.dimension}")
    N = X.shape[0]
    if N < init.num_components:
        raise ValueError("need at least as many samples as components")
    labels0 = np.zeros(N, dtype=int)
    all_idx = np.arange(N)

    def update_weights(W):
        return (W[:, all_idx].sum(axis=1) / N).reshape(-1, 1)

    means, covs, weights, hist, conv, passes, flags = _run(
        X, labels0, 1, np.stack([c.mean for c in init.components]),
        np.stack([c.covariance for c in init.components]),
        np.stack([c.chol for c in init.components]),
        np.asarray(init.weights, dtype=float).reshape(-1, 1),
        cfg, update_weights, on_pass, trace,
    )
    comps = tuple(GaussianComponent(m, p) for m, p in zip(means, covs))
    model = MixtureModel(comps, weights[:, 0])
    final = total_loglikelihood(model.as_shared_kernel(), LabeledDataset(X, labels0 + 1, 1))
    return model, TrainingReport(passes, hist, conv, final, flags)


def total_loglikelihood(model: SharedKernelModel, data: LabeledDataset) -> float:
    """``sum_i sum_{n in class i} log p(x_n | class i)``, computed in log domain."""
    if model.dimension != data.dimension:
        raise ValueError("model and data dimensions differ")
    total = 0.0
    for c, idx in enumerate(data.class_indices(), start=1):
        if idx.size:
            total += float(np.sum(class_loglikelihood(model, data.samples[idx], c)))
    return total
