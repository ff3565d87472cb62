"""Tests for the compositional data model and synthetic ground truths."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import compcov as cc
from oracles import diagonal_least_squares

# the 3x3 sample variation matrix from the worked negative-variance example
THETA_3X3 = np.array([
    [0.00, 3.83, 2.45],
    [3.83, 0.00, 1.24],
    [2.45, 1.24, 0.00],
])


def simplex_rows(matrix):
    arr = np.asarray(matrix, dtype=float)
    return arr / arr.sum(axis=1, keepdims=True)


class TestCompositionDataset:
    def test_valid_construction(self):
        block = simplex_rows(np.random.default_rng(0).uniform(0.1, 1.0, (5, 4)))
        ds = cc.CompositionDataset((block,), labels=("a", "b", "c", "d"))
        assert ds.h_count == 1
        assert ds.p == 4
        assert ds.sizes == (5,)
        assert ds.population_names == ("pop1",)

    def test_rejects_nonpositive_entries(self):
        block = simplex_rows(np.ones((3, 3)))
        block[0, 0] = 0.0
        block[0, 1] += block[0, 0]
        with pytest.raises(ValueError, match="nonpositive"):
            cc.CompositionDataset((np.maximum(block, 0.0),))

    def test_rejects_bad_row_sums(self):
        block = np.full((3, 3), 0.4)
        with pytest.raises(ValueError, match="sum to 1"):
            cc.CompositionDataset((block,))

    def test_rejects_single_sample(self):
        block = simplex_rows(np.ones((1, 3)))
        with pytest.raises(ValueError, match="fewer than 2"):
            cc.CompositionDataset((block,))

    def test_rejects_mismatched_p(self):
        b1 = simplex_rows(np.ones((3, 3)))
        b2 = simplex_rows(np.ones((3, 4)))
        with pytest.raises(ValueError, match="same number of variables"):
            cc.CompositionDataset((b1, b2))


class TestVariationTensor:
    def test_constant_rows_give_zero_matrix(self):
        block = np.tile(simplex_rows(np.array([[0.2, 0.3, 0.5]])), (4, 1))
        ds = cc.CompositionDataset((block,))
        vt = cc.variation_tensor(ds)
        assert np.array_equal(vt.theta, np.zeros((1, 3, 3)))

    def test_scaled_first_coordinate_matches_hand_variance(self):
        # rows proportional to (c_i * w1, w2, w3): entry (1, k) is the
        # divisor-n variance of log c, pairs among the fixed coordinates are 0
        w = np.array([0.5, 1.5, 2.0])
        c = np.array([1.0, 2.0, 4.0])
        raw = np.stack([np.array([ci * w[0], w[1], w[2]]) for ci in c])
        ds = cc.CompositionDataset((simplex_rows(raw),))
        theta = cc.variation_tensor(ds).theta[0]

        logc = np.log(c)
        var_logc = ((logc - logc.mean()) ** 2).mean()
        assert theta[0, 1] == pytest.approx(var_logc, abs=1e-12)
        assert theta[0, 2] == pytest.approx(var_logc, abs=1e-12)
        assert theta[1, 2] == pytest.approx(0.0, abs=1e-12)

    def test_matches_per_definition_loop(self):
        rng = np.random.default_rng(42)
        block = simplex_rows(rng.uniform(0.05, 1.0, (7, 4)))
        theta = cc.variation_matrix(block)
        # direct definition: divisor-n variance of the pairwise log-ratios
        for j in range(4):
            for k in range(4):
                z = np.log(block[:, j] / block[:, k])
                expected = ((z - z.mean()) ** 2).mean()
                assert theta[j, k] == pytest.approx(expected, abs=1e-12)

    def test_invariants_bit_exact(self):
        rng = np.random.default_rng(3)
        block = simplex_rows(rng.uniform(0.05, 1.0, (20, 6)))
        theta = cc.variation_matrix(block)
        assert np.array_equal(theta, theta.T)
        assert np.array_equal(np.diag(theta), np.zeros(6))
        assert (theta >= 0).all()

    @settings(max_examples=25, deadline=None)
    @given(st.integers(min_value=0, max_value=10_000))
    def test_row_scale_invariance(self, seed):
        rng = np.random.default_rng(seed)
        raw = rng.uniform(0.05, 1.0, (6, 4))
        scales = rng.uniform(0.1, 10.0, (6, 1))
        base = cc.variation_matrix(simplex_rows(raw))
        rescaled = cc.variation_matrix(simplex_rows(raw * scales))
        assert np.abs(base - rescaled).max() < 1e-12

    def test_fixture_shape_witness(self):
        # n=10 draws with standard normal log-basis at p=3, like the worked
        # example that produced the 3x3 matrix above; shape and invariants
        # are the contract, not the exact numbers
        truth = cc.CovarianceTensor(np.eye(3)[None])
        ds = cc.simulate_dataset(truth, [10], seed=2)
        theta = cc.variation_tensor(ds).theta
        assert theta.shape == (1, 3, 3)
        assert np.array_equal(theta[0], theta[0].T)
        assert (theta >= 0).all()


class TestClosedFormDiagonal:
    def test_worked_example_third_entry(self):
        w = cc.closed_form_diagonal(THETA_3X3)
        assert abs(w[2] - (-0.07)) < 1e-10

    def test_worked_example_other_entries_match_least_squares(self):
        w = cc.closed_form_diagonal(THETA_3X3)
        reference = diagonal_least_squares(THETA_3X3)
        assert np.abs(w - reference).max() < 1e-10
        assert w[0] == pytest.approx(2.52, abs=1e-10)
        assert w[1] == pytest.approx(1.31, abs=1e-10)

    def test_matches_least_squares_on_random_matrices(self):
        rng = np.random.default_rng(11)
        for p in (3, 4, 7):
            theta = rng.uniform(0.0, 3.0, (p, p))
            theta = (theta + theta.T) / 2.0
            np.fill_diagonal(theta, 0.0)
            assert np.abs(cc.closed_form_diagonal(theta) - diagonal_least_squares(theta)).max() < 1e-9

    def test_identity_reconstruction(self):
        p = 6
        theta = 2.0 * (np.ones((p, p)) - np.eye(p))
        assert np.abs(cc.closed_form_diagonal(theta) - 1.0).max() < 1e-12

    def test_diagonal_reconstruction(self):
        rng = np.random.default_rng(5)
        diag = rng.uniform(0.5, 3.0, 8)
        theta = diag[:, None] + diag[None, :] - 2.0 * np.diag(diag)
        np.fill_diagonal(theta, 0.0)
        assert np.abs(cc.closed_form_diagonal(theta) - diag).max() < 1e-10

    def test_rejects_small_p(self):
        with pytest.raises(ValueError, match="p >= 3"):
            cc.closed_form_diagonal(np.zeros((2, 2)))


class TestModelTruth:
    def test_model1_entries(self):
        omega = cc.model_truth(cc.GroundTruthSpec(1, 8)).omega
        assert omega.shape == (4, 8, 8)
        assert omega[0, 0, 1] == 0.3
        assert omega[2, 0, 1] == -0.2
        assert omega[0, 0, 3] == 0.0
        assert np.array_equal(np.diagonal(omega, axis1=1, axis2=2), np.ones((4, 8)))

    def test_model2_entries(self):
        omega = cc.model_truth(cc.GroundTruthSpec(2, 8)).omega
        assert omega[0, 0, 1] == pytest.approx(0.8)
        assert omega[1, 0, 1] == 0.0
        assert omega[1, 2, 3] == pytest.approx(0.8)  # block {3, 4} in 1-based terms
        assert np.array_equal(np.diagonal(omega, axis1=1, axis2=2), np.ones((4, 8)))

    def test_model3_entries(self):
        spec = cc.GroundTruthSpec(3, 6)
        assert np.allclose(spec.scale(), [3.0, 2.6, 2.2, 1.8, 1.4, 1.0])
        omega = cc.model_truth(spec).omega
        assert omega[0, 0, 1] == pytest.approx(3.0 * 2.6 * 0.9, abs=1e-12)

    @pytest.mark.parametrize("model_id,p", [(1, 8), (1, 12), (2, 8), (2, 16), (3, 6), (3, 12)])
    def test_slices_symmetric_positive_definite(self, model_id, p):
        omega = cc.model_truth(cc.GroundTruthSpec(model_id, p)).omega
        for s in omega:
            assert np.array_equal(s, s.T)
            assert np.linalg.eigvalsh(s)[0] > 0

    def test_divisibility_errors(self):
        with pytest.raises(ValueError, match="divisible by 4"):
            cc.GroundTruthSpec(2, 10)
        with pytest.raises(ValueError, match="divisible by 6"):
            cc.GroundTruthSpec(3, 8)


class TestSimulateDataset:
    def test_identity_truth_gives_offdiag_near_two(self):
        truth = cc.CovarianceTensor(np.eye(3)[None])
        ds = cc.simulate_dataset(truth, [10_000], seed=123)
        theta = cc.variation_tensor(ds).theta[0]
        off = theta[~np.eye(3, dtype=bool)]
        assert abs(off.mean() - 2.0) < 0.1

    def test_deterministic_given_seed(self):
        truth = cc.model_truth(cc.GroundTruthSpec(1, 8))
        a = cc.simulate_dataset(truth, [5, 6, 7, 8], seed=9)
        b = cc.simulate_dataset(truth, [5, 6, 7, 8], seed=9)
        for x, y in zip(a.populations, b.populations):
            assert np.array_equal(x, y)

    def test_rejects_tiny_sizes(self):
        truth = cc.CovarianceTensor(np.eye(3)[None])
        with pytest.raises(ValueError, match="at least 2"):
            cc.simulate_dataset(truth, [0], seed=1)

    def test_rejects_indefinite_truth(self):
        bad = np.eye(3)
        bad[0, 0] = -1.0
        with pytest.raises(ValueError, match="positive definite"):
            cc.simulate_dataset(cc.CovarianceTensor(bad[None]), [5], seed=1)


class TestCovarianceTensor:
    def test_feasibility_check(self):
        good = np.stack([2.0 * np.eye(3)])
        cc.CovarianceTensor(good, feasible_floor=1.0)
        with pytest.raises(ValueError, match="violates floor"):
            cc.CovarianceTensor(good, feasible_floor=3.0)

    def test_rejects_asymmetric(self):
        bad = np.arange(9, dtype=float).reshape(1, 3, 3)
        with pytest.raises(ValueError, match="symmetric"):
            cc.CovarianceTensor(bad)
