"""Tests for fold construction, CV selection, grids, and bootstrap stability."""

import numpy as np
import pytest

import compcov as cc
from compcov.tuning import _fold_variation


@pytest.fixture(scope="module")
def small_dataset():
    truth = cc.CovarianceTensor(np.stack([np.eye(4), np.eye(4)]))
    return cc.simulate_dataset(truth, [12, 12], seed=31)


class TestMakeFolds:
    def test_equal_split(self):
        folds = cc.make_folds((10, 10), 5, seed=1)
        for labels in folds:
            counts = np.bincount(labels, minlength=5)
            assert np.array_equal(counts, [2, 2, 2, 2, 2])

    def test_deterministic(self):
        a = cc.make_folds((9, 14), 3, seed=7)
        b = cc.make_folds((9, 14), 3, seed=7)
        for x, y in zip(a, b):
            assert np.array_equal(x, y)

    def test_every_sample_in_exactly_one_fold(self):
        folds = cc.make_folds((11,), 4, seed=2)
        assert sorted(np.bincount(folds[0], minlength=4).tolist(), reverse=True)[0] <= 3
        assert folds[0].shape == (11,)

    def test_rejects_single_fold(self):
        with pytest.raises(ValueError, match="at least 2"):
            cc.make_folds((10,), 1, seed=0)

    def test_rejects_too_many_folds(self):
        with pytest.raises(ValueError, match="exceed"):
            cc.make_folds((4, 10), 5, seed=0)


class TestTuningGrid:
    def test_validation(self):
        cc.TuningGrid((1.0, 0.5), (0.3, 0.0), folds=2)
        with pytest.raises(ValueError, match="descending"):
            cc.TuningGrid((0.5, 1.0), (0.3,), folds=2)
        with pytest.raises(ValueError, match="strictly positive"):
            cc.TuningGrid((1.0, 0.0), (0.3,), folds=2)
        cc.TuningGrid((1.0, 0.0), (0.3,), folds=2, pure_group=True)
        with pytest.raises(ValueError, match="nonempty"):
            cc.TuningGrid((), (0.3,), folds=2)

    def test_default_grids_descend_from_gradient_scale(self):
        rng = np.random.default_rng(0)
        raw = rng.uniform(0.1, 2.0, (2, 5, 5))
        theta = (raw + raw.transpose(0, 2, 1)) / 2.0
        for h in range(2):
            np.fill_diagonal(theta[h], 0.0)
        lams = cc.default_lambda_grid(theta, 10)
        assert len(lams) == 10
        assert lams[0] == pytest.approx(4.0 * np.abs(theta).max())
        assert lams[-1] == pytest.approx(lams[0] * 1e-3)
        assert list(lams) == sorted(lams, reverse=True)
        gams = cc.default_gamma_grid(theta, 7)
        fiber = np.sqrt(((4.0 * theta) ** 2).sum(axis=0))
        assert gams[0] == pytest.approx(fiber.max())


class TestCvSelect:
    def test_single_cell_selected_and_score_matches_manual(self, small_dataset):
        grid = cc.TuningGrid((0.5,), (0.2,), folds=3, seed=5)
        cfg = cc.SolverConfig(epsilon=1e-4, tol=1e-7)
        report = cc.cv_select(small_dataset, grid, cfg)
        assert (report.selected_lambda, report.selected_gamma) == (0.5, 0.2)
        assert report.score_surface.shape == (1, 1)

        assignments = cc.make_folds(small_dataset.sizes, 3, seed=5)
        manual = 0.0
        for v in range(3):
            train, held = _fold_variation(small_dataset, assignments, v)
            from dataclasses import replace
            result = cc.fit(train, replace(cfg, lam=0.5, gamma=0.2))
            manual += cc.loss(result.estimate, held)
        assert report.score_surface[0, 0] == pytest.approx(manual, rel=1e-12)

    def test_smoke_on_model1(self):
        truth = cc.model_truth(cc.GroundTruthSpec(1, 20))
        data = cc.simulate_dataset(truth, [50, 50, 50, 50], seed=3)
        theta = cc.variation_tensor(data)
        grid = cc.TuningGrid(
            lambdas=cc.default_lambda_grid(theta, 3),
            gammas=cc.default_gamma_grid(theta, 2),
            folds=2,
            seed=0,
        )
        report = cc.cv_select(data, grid, cc.SolverConfig(epsilon=1e-4, tol=1e-6))
        assert np.isfinite(report.score_surface).all()
        assert report.selected_lambda > 0

    def test_duplicate_best_cell_tie_break(self, small_dataset):
        cfg = cc.SolverConfig(epsilon=1e-4, tol=1e-7)
        base = cc.cv_select(small_dataset, cc.TuningGrid((0.8, 0.4), (0.1,), folds=2, seed=1), cfg)
        best = (base.selected_lambda, base.selected_gamma)
        doubled = cc.TuningGrid((best[0], best[0] * (1 - 1e-16), 0.4 if best[0] != 0.4 else 0.8), (0.1,),
                                folds=2, seed=1)
        # duplicated numeric value collapses to the same float; selection is
        # deterministic and unchanged
        again = cc.cv_select(small_dataset, doubled, cfg)
        assert (again.selected_lambda, again.selected_gamma) == best

    def test_fold_relabel_invariance(self, small_dataset):
        cfg = cc.SolverConfig(epsilon=1e-4, tol=1e-7)
        grid = cc.TuningGrid((0.6,), (0.2, 0.05), folds=3, seed=9)
        report = cc.cv_select(small_dataset, grid, cfg)
        # the surface is a sum over folds: any permutation of fold scores
        # leaves it unchanged
        assert np.allclose(report.per_fold_scores.sum(axis=0), report.score_surface)


class TestValidationSelect:
    def test_picks_minimum_and_tie_breaks_sparser(self):
        truth = cc.model_truth(cc.GroundTruthSpec(1, 8))
        train = cc.variation_tensor(cc.simulate_dataset(truth, [25] * 4, seed=1)).theta
        val = cc.variation_tensor(cc.simulate_dataset(truth, [25] * 4, seed=2)).theta
        cfg = cc.SolverConfig(epsilon=1e-4, tol=1e-6)
        lam, gam, surface = cc.validation_select(train, val, (2.0, 1.0), (0.5, 0.1), cfg)
        i = [2.0, 1.0].index(lam)
        j = [0.5, 0.1].index(gam)
        assert surface[i, j] == surface.min()


class TestBootstrapStability:
    def test_strong_edge_always_selected(self):
        cov = np.eye(5)
        cov[0, 1] = cov[1, 0] = 0.8
        truth = cc.CovarianceTensor(cov[None])
        data = cc.simulate_dataset(truth, [2000], seed=13)
        cfg = cc.SolverConfig(lam=0.5, gamma=0.0, epsilon=1e-4, tol=1e-7)
        report = cc.bootstrap_stability(data, b=8, cfg_point=cfg, seed=3)
        assert report.edge_frequency[0, 0, 1] == 8
        assert report.failed_replicates == 0

    def test_b_one_gives_binary_frequencies(self):
        truth = cc.CovarianceTensor(np.stack([np.eye(4)]))
        data = cc.simulate_dataset(truth, [30], seed=5)
        cfg = cc.SolverConfig(lam=0.5, gamma=0.0, epsilon=1e-4)
        report = cc.bootstrap_stability(data, b=1, cfg_point=cfg, seed=1)
        assert set(np.unique(report.edge_frequency)) <= {0, 1}
        # per-edge selection percentages are binary when b = 1
        per_edge = 100.0 * report.edge_frequency / report.b
        assert set(np.unique(per_edge)) <= {0.0, 100.0}
        for s in report.per_population_stability:
            assert np.isnan(s) or 0.0 <= s <= 100.0

    def test_identical_sparsity_patterns_have_no_distinct_edges(self):
        truth = cc.model_truth(cc.GroundTruthSpec(1, 8))
        data = cc.simulate_dataset(truth, [60] * 4, seed=11)
        cfg = cc.SolverConfig(lam=0.8, gamma=2.0, epsilon=1e-4, tol=1e-6)
        report = cc.bootstrap_stability(data, b=2, cfg_point=cfg, seed=2)
        # a strong fiber penalty forces one shared support across populations
        assert report.distinct_counts == (0, 0, 0, 0)

    def test_reproducible_given_seed(self):
        truth = cc.CovarianceTensor(np.stack([np.eye(4), np.eye(4)]))
        data = cc.simulate_dataset(truth, [15, 18], seed=21)
        cfg = cc.SolverConfig(lam=0.4, gamma=0.1, epsilon=1e-4, tol=1e-6)
        a = cc.bootstrap_stability(data, b=4, cfg_point=cfg, seed=17)
        b = cc.bootstrap_stability(data, b=4, cfg_point=cfg, seed=17)
        assert np.array_equal(a.edge_frequency, b.edge_frequency)
        assert a.positive_counts == b.positive_counts
        assert a.shared_stability == b.shared_stability or (
            np.isnan(a.shared_stability) and np.isnan(b.shared_stability)
        )

    def test_sign_counts_match_support_size(self):
        truth = cc.model_truth(cc.GroundTruthSpec(1, 8))
        data = cc.simulate_dataset(truth, [40] * 4, seed=4)
        cfg = cc.SolverConfig(lam=0.5, gamma=0.5, epsilon=1e-4, tol=1e-6)
        report = cc.bootstrap_stability(data, b=1, cfg_point=cfg, seed=0)
        theta = cc.variation_tensor(data)
        point = cc.fit(theta, cfg).estimate.omega
        upper = np.triu(np.ones((8, 8), dtype=bool), k=1)
        for h in range(4):
            support = int((np.abs(point[h][upper]) > 1e-8).sum())
            assert report.positive_counts[h] + report.negative_counts[h] == support

    def test_rejects_zero_replicates(self):
        truth = cc.CovarianceTensor(np.stack([np.eye(3)]))
        data = cc.simulate_dataset(truth, [10], seed=1)
        with pytest.raises(ValueError, match="at least one"):
            cc.bootstrap_stability(data, b=0, cfg_point=cc.SolverConfig(), seed=0)


class TestThreading:
    def test_thread_pool_matches_serial(self, small_dataset, monkeypatch):
        cfg = cc.SolverConfig(epsilon=1e-4, tol=1e-6)
        grid = cc.TuningGrid((0.8, 0.3), (0.2, 0.05), folds=2, seed=3)
        serial = cc.cv_select(small_dataset, grid, cfg)
        monkeypatch.setenv("COMPCOV_THREADS", "4")
        threaded = cc.cv_select(small_dataset, grid, cfg)
        assert np.array_equal(serial.score_surface, threaded.score_surface)
        assert (serial.selected_lambda, serial.selected_gamma) == (
            threaded.selected_lambda, threaded.selected_gamma)
