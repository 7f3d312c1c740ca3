import csv
import math
from itertools import combinations

import numpy as np
import pytest

from skem.classifier import CompositeModel
from skem.em import TrainingConfig
from skem.experiment import (
    ExperimentConfig,
    ellipse_axes,
    evaluate_model,
    export_ellipses,
    kstudy,
    prepare_table,
    run_experiment,
    train_variant,
    weight_band,
    write_ellipses,
    write_experiment,
    write_kstudy,
)
from skem.features import VARIANTS
from skem.mixture import GaussianComponent, LabeledDataset, SharedKernelModel


class TestEllipses:
    def test_isotropic(self):
        a, b, ang = ellipse_axes(0.09 * np.eye(2))
        assert (a, b, ang) == (pytest.approx(0.3), pytest.approx(0.3), 0.0)

    def test_axis_aligned(self):
        assert ellipse_axes(np.diag([4.0, 1.0])) == (pytest.approx(2.0), pytest.approx(1.0), pytest.approx(0.0))
        a, b, ang = ellipse_axes(np.diag([1.0, 4.0]))
        assert (a, b) == (pytest.approx(2.0), pytest.approx(1.0))
        assert ang == pytest.approx(math.pi / 2)

    def test_rotated(self):
        t = 0.6
        R = np.array([[math.cos(t), -math.sin(t)], [math.sin(t), math.cos(t)]])
        a, b, ang = ellipse_axes(R @ np.diag([9.0, 0.25]) @ R.T)
        assert (a, b, ang) == (pytest.approx(3.0), pytest.approx(0.5), pytest.approx(t))
        _, _, ang = ellipse_axes(R.T @ np.diag([9.0, 0.25]) @ R)
        assert ang == pytest.approx(-t)

    def test_bands_literal(self):
        cases = {
            0.0: ("<0.01", 0.5, "yellow", True), 0.0099: ("<0.01", 0.5, "yellow", True),
            0.01: ("0.01-0.1", 0.5, "green", False), 0.1: ("0.1-0.2", 1.0, "cyan", False),
            0.25: ("0.2-0.3", 2.0, "magenta", False), 0.3: ("0.3-0.4", 3.0, "red", False),
            0.45: ("0.4-0.5", 4.0, "blue", False), 0.5: (">=0.5", 5.0, "black", False),
            1.0: (">=0.5", 5.0, "black", False),
        }
        for w, expected in cases.items():
            assert weight_band(w) == expected, w

    def test_bands_total_on_unit_interval(self):
        labels = [weight_band(w)[0] for w in np.linspace(0, 1, 10001)]
        assert len(set(labels)) == 7
        with pytest.raises(ValueError):
            weight_band(1.01)

    def test_six_dimensions_give_fifteen_pairs(self, tmp_path):
        rng = np.random.default_rng(0)
        comps = tuple(GaussianComponent(rng.normal(size=6), np.eye(6) * (k + 1)) for k in range(4))
        model = SharedKernelModel(comps, np.full((4, 3), 0.25))
        ells = export_ellipses(model, classes=[2])
        pairs = {(e.dim_x, e.dim_y) for e in ells}
        assert pairs == set(combinations(range(6), 2)) and len(pairs) == 15
        assert len(ells) == 15 * 4
        assert all(e.a >= e.b > 0 for e in ells)
        path = write_ellipses(ells, tmp_path / "e.csv")
        with open(path) as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 60
        for key in ("center_x", "center_y", "a", "b", "angle_rad", "weight", "band"):
            assert key in rows[0]

    def test_composite_export_per_group(self):
        m2 = SharedKernelModel((GaussianComponent([0, 0], np.eye(2)),), [[1.0, 1.0]])
        m3 = SharedKernelModel((GaussianComponent([0, 0, 0], np.diag([4.0, 1, 1])),), [[1.0, 1.0]])
        ells = export_ellipses(CompositeModel((((3, 4), m2), ((11, 12, 13), m3))))
        assert sum(e.group == 1 for e in ells) == 1 * 2
        assert sum(e.group == 2 for e in ells) == 3 * 2
        first = next(e for e in ells if e.group == 2)
        assert (first.a, first.b, first.band) == (2.0, 1.0, ">=0.5")


@pytest.fixture(scope="module")
def small_tables(digit_tables):
    train, test = digit_tables
    # rows are sample-major, so the first 500 hold 50 images of every digit
    return train, LabeledDataset(test.samples[:500], test.labels[:500], 10)


class TestExperiment:
    def test_single_run_is_train_then_evaluate(self, small_tables):
        train, test = small_tables
        res = run_experiment(train, test, ExperimentConfig(variant="2Dx3D", n_runs=1, seed=3))
        spec = VARIANTS["2Dx3D"]
        model, _ = train_variant([train.columns(g) for g in spec.groups], spec, TrainingConfig(seed=3),
                                 np.random.default_rng(3))
        cm, summary = evaluate_model(model, test)
        run = res.runs[0]
        assert not run.diverged
        np.testing.assert_array_equal(run.confusion.counts, cm.counts)
        assert run.summary.accuracy == summary.accuracy

    def test_seeded_outputs_are_identical_across_parallelism(self, small_tables, tmp_path):
        train, test = small_tables
        cfg = ExperimentConfig(variant="3D", K=4, n_runs=4, seed=11)
        write_experiment(run_experiment(train, test, cfg), tmp_path / "a")
        write_experiment(run_experiment(train, test, cfg), tmp_path / "b")
        write_experiment(run_experiment(train, test, ExperimentConfig(variant="3D", K=4, n_runs=4, seed=11, jobs=2)),
                         tmp_path / "c")
        for name in ("runs.csv", "aggregate_filtered.csv", "aggregate_all.csv", "best_confusion.txt"):
            a = (tmp_path / "a" / name).read_bytes()
            assert a == (tmp_path / "b" / name).read_bytes() == (tmp_path / "c" / name).read_bytes(), name

    def test_runs_file_lists_every_run(self, small_tables, tmp_path):
        train, test = small_tables
        res = run_experiment(train, test, ExperimentConfig(variant="3D", K=3, n_runs=3, seed=0))
        paths = write_experiment(res, tmp_path)
        with open(paths["runs"]) as fh:
            rows = list(csv.DictReader(fh))
        assert [int(r["seed"]) for r in rows] == [0, 1, 2]
        accs = [float(r["accuracy"]) for r in rows]
        assert np.mean(accs) == pytest.approx(res.unfiltered.mean_accuracy)

    def test_diverged_runs_tallied_separately(self, small_tables):
        # with ten kernels on two pca features some random starts collapse a kernel
        train, test = small_tables
        res = run_experiment(train, test, ExperimentConfig(variant="2Dx3D", K=10, n_runs=10, seed=0))
        n_ok = sum(not r.diverged for r in res.runs)
        assert res.n_diverged > 0 and n_ok > 0
        assert res.n_diverged + n_ok == 10
        assert res.unfiltered.n_accepted == n_ok
        assert res.filtered.n_accepted == n_ok - res.n_below_floor
        for r in res.runs:
            if r.diverged:
                assert r.error and r.summary is None and r.confusion is None

    def test_best_run_prefers_lowest_index(self, small_tables):
        train, test = small_tables
        res = run_experiment(train, test, ExperimentConfig(variant="3D", K=3, n_runs=3, seed=0))
        best = res.best_run()
        top = max(r.summary.accuracy for r in res.runs)
        assert best.run == min(r.run for r in res.runs if r.summary.accuracy == top)

    def test_single_kernel_cannot_separate(self, small_tables):
        train, test = small_tables
        res = run_experiment(train, test, ExperimentConfig(variant="3D", K=1, n_runs=2, seed=0))
        for r in res.runs:
            assert r.summary.accuracy == pytest.approx(0.1)
            assert np.all(r.confusion.counts[:, 1:] == 0)

    def test_dither_streams_are_fixed_per_seed(self, digit_tables):
        train, _ = digit_tables
        a = prepare_table(train, VARIANTS["10D"], 5, "train")
        b = prepare_table(train, VARIANTS["10D"], 5, "train")
        c = prepare_table(train, VARIANTS["10D"], 5, "test")
        np.testing.assert_array_equal(a.samples, b.samples)
        assert not np.array_equal(a.samples, c.samples)
        assert prepare_table(train, VARIANTS["3D"], 5, "train") is train

    def test_config_validation(self):
        with pytest.raises(ValueError):
            ExperimentConfig(variant="7D")
        with pytest.raises(ValueError):
            ExperimentConfig(K=0)
        with pytest.raises(ValueError):
            ExperimentConfig(n_runs=0)


def test_kstudy_table(small_tables, tmp_path):
    train, test = small_tables
    rows = kstudy(train, test, [3], ["3D"], ExperimentConfig(n_runs=3, seed=0))
    (row,) = rows
    assert row.K == 3 and row.variant == "3D"
    # three of ten digits recognized is below the floor, so all runs are reported
    assert not row.filtered and row.n_accepted == 0
    assert row.mean_accuracy == pytest.approx(0.3, abs=0.03)
    path = write_kstudy(rows, tmp_path / "k.csv")
    table = (tmp_path / "k_table.txt").read_text().splitlines()
    assert table[0] == "Alg\t3D\tNr"
    assert table[1].startswith("K=3\t0.30±")
    assert path.read_text().splitlines()[1].startswith("3D,3,0.3")
