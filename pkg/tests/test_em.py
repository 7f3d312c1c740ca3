import io
import math

import numpy as np
import pytest

from skem.em import (
    TrainingConfig,
    e_step,
    em_train,
    init_mixture,
    init_parameters,
    skem_train,
    total_loglikelihood,
)
from skem.errors import CovarianceError, DivergenceError
from skem.mixture import GaussianComponent, LabeledDataset, MixtureModel, SharedKernelModel, sample_shared_kernel

from conftest import MU_TRUE, PI_TRUE


def normal(x, mu, var):
    return math.exp(-0.5 * (x - mu) ** 2 / var) / math.sqrt(2 * math.pi * var)


def worked_example_oracle(x, c, pi, mu, var):
    """One supervised pass written out term by term for K=2, scalar data."""
    w = []
    for xn, cn in zip(x, c):
        a = [pi[k][cn - 1] * normal(xn, mu[k], var[k]) for k in range(2)]
        w.append([a[0] / sum(a), a[1] / sum(a)])
    in1 = [n for n, cn in enumerate(c) if cn == 1]
    in2 = [n for n, cn in enumerate(c) if cn == 2]
    new_pi = [[sum(w[n][k] for n in in1) / len(in1), sum(w[n][k] for n in in2) / len(in2)] for k in range(2)]
    new_mu = [sum(w[n][k] * x[n] for n in range(5)) / sum(w[n][k] for n in range(5)) for k in range(2)]
    new_var = [
        sum(w[n][k] * (x[n] - new_mu[k]) ** 2 for n in range(5)) / sum(w[n][k] for n in range(5))
        for k in range(2)
    ]
    return new_pi, new_mu, new_var, w


def one_pass(data, init):
    captured = {}

    def grab(p, means, covs, weights, ll):
        if p == 1:
            captured.update(means=means.copy(), covs=covs.copy(), weights=weights.copy())

    skem_train(data, init, TrainingConfig(num_components=2, max_passes=1), on_pass=grab)
    return captured


class TestWorkedExample:
    X = [0.3, -1.1, 2.4, 0.9, 1.7]
    C = [1, 1, 2, 1, 2]
    PI0 = [[0.6, 0.3], [0.4, 0.7]]
    MU0 = [0.0, 2.0]
    VAR0 = [1.0, 0.5]

    def test_closed_form_updates(self):
        data = LabeledDataset(np.array(self.X)[:, None], self.C)
        init = SharedKernelModel.from_arrays(np.array(self.MU0)[:, None], self.VAR0, self.PI0)
        got = one_pass(data, init)
        pi, mu, var, w = worked_example_oracle(self.X, self.C, self.PI0, self.MU0, self.VAR0)
        np.testing.assert_allclose(got["weights"], pi, rtol=0, atol=1e-12)
        np.testing.assert_allclose(got["means"][:, 0], mu, rtol=0, atol=1e-12)
        np.testing.assert_allclose(got["covs"][:, 0, 0], var, rtol=0, atol=1e-12)
        # implicit multipliers: summed responsibilities over each class equal its size
        assert sum(w[n][0] + w[n][1] for n in (0, 1, 3)) == pytest.approx(3, abs=1e-12)
        assert sum(w[n][0] + w[n][1] for n in (2, 4)) == pytest.approx(2, abs=1e-12)


class TestInit:
    def test_defaults(self):
        cfg = TrainingConfig(num_components=4, seed=3)
        m = init_parameters(cfg, 3, 2)
        assert np.all(m.weights == 0.25)
        for c in m.components:
            np.testing.assert_array_equal(c.covariance, 0.3 * np.eye(3))
        assert np.all((m.means >= 0) & (m.means <= 1))
        again = init_parameters(cfg, 3, 2)
        np.testing.assert_array_equal(m.means, again.means)

    def test_seeds_only_change_means(self):
        a = init_parameters(TrainingConfig(num_components=3, seed=1), 2, 4)
        b = init_parameters(TrainingConfig(num_components=3, seed=2), 2, 4)
        assert not np.array_equal(a.means, b.means)
        np.testing.assert_array_equal(a.covariances, b.covariances)
        np.testing.assert_array_equal(a.weights, b.weights)

    def test_custom_range(self):
        cfg = TrainingConfig(num_components=50, init_mean_low=-2, init_mean_high=-1)
        m = init_parameters(cfg, 2, 1)
        assert m.means.min() >= -2 and m.means.max() <= -1

    @pytest.mark.parametrize("kw", [{"max_passes": 0}, {"loglik_tolerance": 0}, {"init_cov_scale": -1},
                                    {"num_components": 0}])
    def test_invalid_config(self, kw):
        with pytest.raises(ValueError):
            TrainingConfig(**kw)


def sample_reference(n, seed, reference_model):
    rng = np.random.default_rng(seed)
    X = np.vstack([sample_shared_kernel(reference_model, c, n, rng) for c in (1, 2, 3)])
    return LabeledDataset(X, np.repeat([1, 2, 3], n))


class TestSkem:
    def test_reference_recovery(self, reference_model):
        data = sample_reference(2000, 21, reference_model)
        init = SharedKernelModel.from_arrays(
            np.array([[-1.0, 0.0], [2.0, 1.0], [7.0, 2.0]]), np.stack([2 * np.eye(2)] * 3), np.full((3, 3), 1 / 3)
        )
        model, report = skem_train(data, init, TrainingConfig(num_components=3, max_passes=50))
        assert report.converged
        # init means sit nearest their true counterparts, so no relabelling is needed here
        np.testing.assert_allclose(model.means, MU_TRUE.T, atol=0.1)
        np.testing.assert_allclose(model.weights, PI_TRUE.T, atol=0.05)

    def test_report_bookkeeping(self, reference_model):
        data = sample_reference(200, 1, reference_model)
        init = init_parameters(TrainingConfig(num_components=3, seed=4), 2, 3)
        model, report = skem_train(data, init, TrainingConfig(num_components=3, max_passes=7))
        assert report.per_class_loglik_history.shape == (report.passes_used, 3)
        assert report.passes_used <= 7
        assert report.final_total_loglik == pytest.approx(total_loglikelihood(model, data))
        assert len(report.used_log_domain) == report.passes_used

    def test_max_passes_one(self, reference_model):
        data = sample_reference(100, 2, reference_model)
        init = init_parameters(TrainingConfig(num_components=3), 2, 3)
        _, report = skem_train(data, init, TrainingConfig(num_components=3, max_passes=1))
        assert report.passes_used == 1 and not report.converged

    def test_stops_once_every_class_settles(self, reference_model):
        data = sample_reference(300, 3, reference_model)
        init = init_parameters(TrainingConfig(num_components=3, seed=2), 2, 3)
        _, report = skem_train(data, init, TrainingConfig(num_components=3, max_passes=500))
        assert report.converged and report.passes_used < 500
        h = report.per_class_loglik_history
        settled = np.abs(np.diff(h, axis=0)) < 0.1
        # the last pass is the first at which every class has settled at least once
        first_settle = [np.flatnonzero(settled[:, j])[0] + 2 for j in range(3)]
        assert report.passes_used == max(first_settle)

    def test_responsibility_and_weight_columns_normalized(self, reference_model):
        data = sample_reference(150, 5, reference_model)
        init = init_parameters(TrainingConfig(num_components=3, seed=9), 2, 3)
        sums = []
        skem_train(data, init, TrainingConfig(num_components=3, max_passes=20),
                   on_pass=lambda p, m, c, w, ll: sums.append(w.sum(axis=0)))
        np.testing.assert_allclose(np.array(sums), 1.0, atol=1e-9)

    def test_trace_format(self, reference_model):
        data = sample_reference(50, 5, reference_model)
        init = init_parameters(TrainingConfig(num_components=3), 2, 3)
        buf = io.StringIO()
        _, report = skem_train(data, init, TrainingConfig(num_components=3, max_passes=4), trace=buf)
        lines = buf.getvalue().splitlines()
        assert len(lines) == report.passes_used
        fields = lines[1].split("\t")
        assert fields[0] == "2" and len(fields) == 1 + 3 + 1
        np.testing.assert_allclose([float(f) for f in fields[1:4]], report.per_class_loglik_history[1])

    def test_permutation_equivariance(self, reference_model):
        data = sample_reference(200, 8, reference_model)
        perm = np.random.default_rng(0).permutation(len(data))
        shuffled = LabeledDataset(data.samples[perm], data.labels[perm])
        init = init_parameters(TrainingConfig(num_components=3, seed=5), 2, 3)
        cfg = TrainingConfig(num_components=3, max_passes=30)
        a, _ = skem_train(data, init, cfg)
        b, _ = skem_train(shuffled, init, cfg)
        np.testing.assert_allclose(a.means, b.means, atol=1e-10)
        np.testing.assert_allclose(a.weights, b.weights, atol=1e-10)

    def test_empty_class_rejected(self):
        data = LabeledDataset([[0.0], [1.0], [2.0]], [1, 1, 3], num_classes=3)
        init = init_parameters(TrainingConfig(num_components=2), 1, 3)
        with pytest.raises(ValueError, match="class 2"):
            skem_train(data, init, TrainingConfig(num_components=2))

    def test_shape_mismatch_rejected(self):
        data = LabeledDataset([[0.0], [1.0]], [1, 2])
        with pytest.raises(ValueError):
            skem_train(data, init_parameters(TrainingConfig(num_components=2), 2, 2), TrainingConfig())
        with pytest.raises(ValueError):
            skem_train(data, init_parameters(TrainingConfig(num_components=2), 1, 3), TrainingConfig())

    def test_collapsed_kernel_reports_pass(self):
        # a kernel centred on a single isolated point collapses onto it
        X = np.r_[np.random.default_rng(0).normal(size=40), 50.0][:, None]
        data = LabeledDataset(X, np.ones(41, dtype=int))
        init = SharedKernelModel.from_arrays([[0.0], [50.0]], [1.0, 1.0], [[0.5], [0.5]])
        with pytest.raises(CovarianceError) as info:
            skem_train(data, init, TrainingConfig(num_components=2, max_passes=50))
        assert info.value.pass_number >= 1

    def test_starved_kernel_is_divergence(self):
        X = np.random.default_rng(0).normal(size=(30, 1))
        data = LabeledDataset(X, np.ones(30, dtype=int))
        init = SharedKernelModel.from_arrays([[0.0], [1e4]], [1.0, 1.0], [[0.5], [0.5]])
        with pytest.raises(DivergenceError) as info:
            skem_train(data, init, TrainingConfig(num_components=2))
        assert info.value.pass_number == 1


class TestLogDomainFallback:
    def test_underflowing_normalizer_uses_log_sum_exp(self):
        X = np.array([[0.0], [40.0]])
        means = np.array([[0.0], [1.0]])
        chols = np.array([[[0.1]], [[0.1]]])
        W, ll, used_log = e_step(X, np.full((2, 2), 0.5), means, chols)
        assert used_log
        np.testing.assert_allclose(W.sum(axis=0), 1.0, atol=1e-12)
        assert W[1, 1] == pytest.approx(1.0)
        # direct log-sum-exp reference for the far sample
        a = [math.log(0.5) - 0.5 * math.log(2 * math.pi * 0.01) - 0.5 * (40 - m) ** 2 / 0.01 for m in (0, 1)]
        ref = max(a) + math.log(sum(math.exp(v - max(a)) for v in a))
        assert ll[1] == pytest.approx(ref, rel=1e-13)

    def test_linear_domain_when_representable(self):
        X = np.array([[0.1], [0.5]])
        W, ll, used_log = e_step(X, np.full((2, 2), 0.5), np.array([[0.0], [1.0]]), np.array([[[1.0]], [[1.0]]]))
        assert not used_log
        expected = [math.log(0.5 * normal(x, 0, 1) + 0.5 * normal(x, 1, 1)) for x in (0.1, 0.5)]
        np.testing.assert_allclose(ll, expected, rtol=1e-14)


class TestStandardEm:
    def test_single_component_gives_sample_moments(self):
        X = np.random.default_rng(2).normal(size=(60, 2)) @ np.array([[1.0, 0.4], [0.0, 0.7]])
        init = MixtureModel((GaussianComponent([0.0, 0.0], np.eye(2)),), [1.0])
        captured = []
        em_train(X, init, TrainingConfig(num_components=1, max_passes=1),
                 on_pass=lambda p, m, c, w, ll: captured.append((m.copy(), c.copy())))
        mean, cov = captured[0]
        np.testing.assert_allclose(mean[0], X.mean(axis=0), atol=1e-13)
        np.testing.assert_allclose(cov[0], np.cov(X.T, bias=True), atol=1e-13)

    def test_separated_clusters(self):
        rng = np.random.default_rng(6)
        a, b = rng.normal(0, 1, 300), rng.normal(10, 1, 300)
        X = np.r_[a, b]
        init = MixtureModel((GaussianComponent([1.0], [[4.0]]), GaussianComponent([8.0], [[4.0]])), [0.5, 0.5])
        model, report = em_train(X, init, TrainingConfig(num_components=2))
        assert report.converged
        hard = X > 5
        got = sorted(c.mean[0] for c in model.components)
        assert got[0] == pytest.approx(X[~hard].mean(), abs=0.1)
        assert got[1] == pytest.approx(X[hard].mean(), abs=0.1)

    def test_matches_skem_with_single_class(self):
        rng = np.random.default_rng(12)
        X = np.r_[rng.normal(size=(80, 2)), rng.normal(3, 1, size=(80, 2))]
        cfg = TrainingConfig(num_components=3, seed=7, max_passes=40)
        runs = []
        for train in ("em", "skem"):
            hist = []
            hook = lambda p, m, c, w, ll: hist.append((m.copy(), c.copy(), w.copy(), ll.copy()))
            if train == "em":
                em_train(X, init_mixture(cfg, 2), cfg, on_pass=hook)
            else:
                skem_train(LabeledDataset(X, np.ones(160, dtype=int)), init_parameters(cfg, 2, 1), cfg, on_pass=hook)
            runs.append(hist)
        assert len(runs[0]) == len(runs[1]) > 1
        for a, b in zip(*runs):
            for u, v in zip(a, b):
                np.testing.assert_array_equal(u, v)

    def test_too_few_samples(self):
        init = init_mixture(TrainingConfig(num_components=3), 1)
        with pytest.raises(ValueError):
            em_train(np.zeros(2), init, TrainingConfig(num_components=3))


class TestTotalLoglikelihood:
    def test_single_sample_at_mean(self):
        m = SharedKernelModel((GaussianComponent([1.0, 2.0, 3.0], np.eye(3)),), [[1.0]])
        data = LabeledDataset([[1.0, 2.0, 3.0]], [1])
        assert total_loglikelihood(m, data) == pytest.approx(-1.5 * math.log(2 * math.pi), rel=1e-14)

    def test_matches_linear_domain(self, reference_model):
        data = sample_reference(40, 3, reference_model)
        naive = 0.0
        for x, c in zip(data.samples, data.labels):
            naive += math.log(sum(
                reference_model.weights[k, c - 1] * normal(x[0], MU_TRUE[0, k], 0.5) * normal(x[1], MU_TRUE[1, k], 0.5)
                for k in range(3)
            ))
        assert total_loglikelihood(reference_model, data) == pytest.approx(naive, rel=1e-12)
