import json
import math

import numpy as np
import pytest

from stabilab.datagen import DataSpec, Dataset, SeedSpec, sample_dataset
from stabilab.learners import (
    CostKind,
    KnnAlgorithm,
    KnnParams,
    RidgeAlgorithm,
    RidgeModel,
    cost,
    knn_classify,
    loo_estimate,
    predict,
    prediction_error_mc,
    ridge_fit,
    ridge_loo_fast,
    ridge_objective,
)


def random_instance(seed, max_d=8, max_n=64, y_scale=1.0):
    rng = np.random.default_rng(seed)
    d = int(rng.integers(1, max_d + 1))
    n = int(rng.integers(max(2, d), max_n + 1))
    xs = rng.uniform(-1.0, 1.0, size=(n, d))
    ys = y_scale * rng.standard_normal(n)
    return Dataset(xs, ys)


class TestRidgeFit:
    def test_constant_design_forced_coefficient(self):
        # d=1, all x=1, all y=2, lam=1: (1 + 1) beta = 2 so beta = 1.
        data = Dataset(np.ones((5, 1)), np.full(5, 2.0))
        model = ridge_fit(data, 1.0)
        assert model.beta[0] == pytest.approx(1.0, rel=1e-12)

    def test_heavy_shrinkage_limit(self):
        data = random_instance(0)
        model = ridge_fit(data, 1e9)
        scale = float(np.max(np.abs(data.ys)))
        assert np.linalg.norm(model.beta) <= 1e-6 * scale

    def test_hand_solved_two_dim_instance(self):
        # X = ((1,0),(0,1),(1,1)), Y = (1,2,3), lam = 0.5.
        # Normal equations (X'X + n*lam*I) beta = X'Y with X'X = [[2,1],[1,2]],
        # X'Y = (4,5), n*lam = 1.5; Cramer on [[3.5,1],[1,3.5]] gives
        # beta = ((3.5*4 - 5)/11.25, (3.5*5 - 4)/11.25) = (0.8, 1.2).
        data = Dataset(
            np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]), np.array([1.0, 2.0, 3.0])
        )
        model = ridge_fit(data, 0.5)
        np.testing.assert_allclose(model.beta, [0.8, 1.2], rtol=1e-10)

    def test_permutation_invariance(self):
        data = random_instance(1)
        rng = np.random.default_rng(99)
        perm = rng.permutation(data.n)
        shuffled = Dataset(data.xs[perm], data.ys[perm])
        b1 = ridge_fit(data, 0.3).beta_array()
        b2 = ridge_fit(shuffled, 0.3).beta_array()
        np.testing.assert_allclose(b1, b2, rtol=1e-12, atol=1e-12)

    def test_rejects_bad_lambda(self):
        data = random_instance(2)
        with pytest.raises(ValueError):
            ridge_fit(data, 0.0)
        with pytest.raises(ValueError):
            ridge_fit(data, -1.0)

    def test_gradient_vanishes_on_fifty_seeded_instances(self):
        # Central finite differences of the (1/n)-normalised objective; the
        # objective is quadratic, so the only error is roundoff.
        for seed in range(50):
            data = random_instance(seed, max_n=256)
            lam = float(np.random.default_rng(seed + 1000).uniform(0.05, 2.0))
            beta = ridge_fit(data, lam).beta_array()
            obj = ridge_objective(data, lam, beta)
            h = 1e-6
            grad = np.empty_like(beta)
            for i in range(beta.size):
                up, down = beta.copy(), beta.copy()
                up[i] += h
                down[i] -= h
                grad[i] = (
                    ridge_objective(data, lam, up) - ridge_objective(data, lam, down)
                ) / (2 * h)
            assert np.linalg.norm(grad) <= 1e-6 * (1.0 + obj)

    def test_coefficient_norm_bound_under_feature_bound(self):
        # ||beta|| <= (b_x/(n*lam)) * sum |y_i| whenever ||x_i|| <= b_x.
        spec = DataSpec(
            d=3,
            x_family="uniform_ball",
            b_x=1.5,
            y_model="linear_clipped",
            beta_star=(0.4, 0.1, -0.2),
            noise_scale=0.3,
            b_y=1.0,
        )
        for seed in range(30):
            data = sample_dataset(spec, 40, SeedSpec(seed))
            lam = 0.25
            beta = ridge_fit(data, lam).beta_array()
            bound = spec.b_x / (data.n * lam) * float(np.sum(np.abs(data.ys)))
            assert np.linalg.norm(beta) <= bound * (1 + 1e-10)


class TestPredictAndCost:
    def test_zero_coefficients(self):
        model = RidgeModel(beta=(0.0, 0.0), lam=1.0, n_fit=3)
        assert predict(model, np.array([5.0, -2.0])) == 0.0

    def test_simple_inner_product(self):
        model = RidgeModel(beta=(1.0, 1.0), lam=1.0, n_fit=3)
        assert predict(model, np.array([2.0, 3.0])) == 5.0

    def test_matches_manual_dot(self):
        rng = np.random.default_rng(3)
        beta = rng.standard_normal(4)
        x = rng.standard_normal(4)
        model = RidgeModel(beta=tuple(beta), lam=0.5, n_fit=10)
        manual = sum(b * xi for b, xi in zip(beta, x))
        assert predict(model, x) == pytest.approx(manual, rel=1e-12)

    def test_dimension_mismatch(self):
        model = RidgeModel(beta=(1.0,), lam=1.0, n_fit=2)
        with pytest.raises(ValueError):
            predict(model, np.array([1.0, 2.0]))

    def test_cost_values(self):
        assert cost(CostKind.SQUARED, 3.0, 1.0) == 4.0
        assert cost(CostKind.ZERO_ONE, 1.0, 1.0) == 0.0
        assert cost(CostKind.ZERO_ONE, 0.0, 1.0) == 1.0

    def test_zero_one_requires_binary(self):
        with pytest.raises(ValueError):
            cost(CostKind.ZERO_ONE, 0.5, 1.0)
        with pytest.raises(ValueError):
            cost(CostKind.ZERO_ONE, 1.0, 2.0)


class TestKnnClassify:
    def test_exact_match_single_neighbor(self):
        data = Dataset(np.array([[0.0], [5.0], [9.0]]), np.array([1.0, 0.0, 0.0]))
        assert knn_classify(data, KnnParams(1), np.array([0.0])) == 1.0

    def test_boundary_vote_goes_positive(self):
        # k=2 with neighbor labels {1, 0}: sum 1 >= k/2 classifies as 1.
        data = Dataset(np.array([[0.0], [1.0], [50.0]]), np.array([1.0, 0.0, 0.0]))
        assert knn_classify(data, KnnParams(2), np.array([0.5])) == 1.0

    def test_five_point_line_against_brute_force(self):
        xs = np.array([[0.0], [1.0], [2.5], [4.0], [6.0]])
        ys = np.array([1.0, 1.0, 0.0, 0.0, 1.0])
        data = Dataset(xs, ys)
        for x0 in (0.4, 2.0, 3.4, 5.0):
            x = np.array([x0])
            dists = [(abs(xs[i, 0] - x0), i) for i in range(5)]
            dists.sort()
            vote = sum(ys[i] for _, i in dists[:3])
            expected = 1.0 if vote >= 1.5 else 0.0
            assert knn_classify(data, KnnParams(3), x) == expected

    def test_distance_ties_break_to_lowest_index(self):
        data = Dataset(np.array([[1.0], [1.0], [2.0]]), np.array([0.0, 1.0, 0.0]))
        # Both of the first two points are at distance zero; index 0 wins.
        assert knn_classify(data, KnnParams(1), np.array([1.0])) == 0.0

    def test_prediction_invariant_under_permutation(self):
        rng = np.random.default_rng(11)
        data = Dataset(rng.uniform(-1, 1, (20, 2)), (rng.random(20) < 0.5) * 1.0)
        x = rng.uniform(-1, 1, 2)
        base = knn_classify(data, KnnParams(5), x)
        for seed in range(10):
            perm = np.random.default_rng(seed).permutation(20)
            shuffled = Dataset(data.xs[perm], data.ys[perm])
            assert knn_classify(shuffled, KnnParams(5), x) == base

    def test_errors(self):
        data = Dataset(np.array([[0.0], [1.0]]), np.array([0.0, 1.0]))
        with pytest.raises(ValueError):
            knn_classify(data, KnnParams(2), np.array([0.0]))  # k > n-1
        bad = Dataset(np.array([[0.0], [1.0], [2.0]]), np.array([0.0, 2.0, 1.0]))
        with pytest.raises(ValueError):
            knn_classify(bad, KnnParams(1), np.array([0.0]))


class TestLooEstimate:
    def test_ridge_zero_labels(self):
        data = Dataset(np.random.default_rng(4).uniform(-1, 1, (6, 2)), np.zeros(6))
        assert loo_estimate(RidgeAlgorithm(1.0), data, CostKind.SQUARED) == 0.0

    def test_two_point_hand_case(self):
        # d=1, X=(1,1), Y=(0,2), lam=1.  A one-point fit solves
        # (x^2 + lam) b = x y, so each refit gives b = y_other / 2 and the
        # held-out costs are (0 - 1)^2 and (2 - 0)^2, averaging to 2.5.
        data = Dataset(np.array([[1.0], [1.0]]), np.array([0.0, 2.0]))
        b_without_1 = 2.0 / 2.0
        b_without_2 = 0.0 / 2.0
        expected = ((0.0 - b_without_1 * 1.0) ** 2 + (2.0 - b_without_2 * 1.0) ** 2) / 2
        assert expected == 2.5
        assert loo_estimate(RidgeAlgorithm(1.0), data, CostKind.SQUARED) == pytest.approx(
            expected, rel=1e-12
        )

    def test_knn_clustered_labels(self):
        xs = np.array([[0.0], [0.1], [10.0], [10.1]])
        ys = np.array([0.0, 0.0, 1.0, 1.0])
        data = Dataset(xs, ys)
        assert loo_estimate(KnnAlgorithm(1), data, CostKind.ZERO_ONE) == 0.0

    def test_invariant_under_permutation(self):
        rng = np.random.default_rng(17)
        data = Dataset(rng.uniform(-1, 1, (12, 2)), rng.standard_normal(12))
        base = loo_estimate(RidgeAlgorithm(0.4), data, CostKind.SQUARED)
        labels = (rng.random(12) < 0.5) * 1.0
        knn_data = Dataset(data.xs, labels)
        knn_base = loo_estimate(KnnAlgorithm(3), knn_data, CostKind.ZERO_ONE)
        for seed in range(5):
            perm = np.random.default_rng(seed).permutation(12)
            shuffled = Dataset(data.xs[perm], data.ys[perm])
            assert loo_estimate(
                RidgeAlgorithm(0.4), shuffled, CostKind.SQUARED
            ) == pytest.approx(base, rel=1e-12)
            knn_shuffled = Dataset(knn_data.xs[perm], knn_data.ys[perm])
            assert (
                loo_estimate(KnnAlgorithm(3), knn_shuffled, CostKind.ZERO_ONE)
                == knn_base
            )

    def test_preconditions(self):
        single = Dataset(np.array([[1.0]]), np.array([1.0]))
        with pytest.raises(ValueError):
            loo_estimate(RidgeAlgorithm(1.0), single, CostKind.SQUARED)
        small = Dataset(np.array([[0.0], [1.0]]), np.array([0.0, 1.0]))
        with pytest.raises(ValueError):
            loo_estimate(KnnAlgorithm(1), small, CostKind.ZERO_ONE)


class TestRidgeLooFast:
    def test_hand_case(self):
        data = Dataset(np.array([[1.0], [1.0]]), np.array([0.0, 2.0]))
        assert ridge_loo_fast(data, 1.0) == pytest.approx(2.5, rel=1e-12)

    def test_zero_labels(self):
        data = Dataset(np.random.default_rng(5).uniform(-1, 1, (8, 3)), np.zeros(8))
        assert ridge_loo_fast(data, 0.7) == 0.0

    def test_matches_naive_on_seeded_instances(self):
        worst = 0.0
        for seed in range(100):
            data = random_instance(seed)
            lam = float(np.random.default_rng(seed + 500).uniform(0.05, 3.0))
            fast = ridge_loo_fast(data, lam)
            naive = loo_estimate(RidgeAlgorithm(lam), data, CostKind.SQUARED)
            worst = max(worst, abs(fast - naive) / max(naive, 1e-300))
        assert worst <= 1e-9

    def test_near_singular_downdate_falls_back_to_naive(self):
        # At lam ~ 1e-14 the downdate denominator 1 - s_j underflows the
        # condition guard, so the fast path must refit naively and still
        # agree with the reference estimator.
        from stabilab.learners import _downdate_core

        data = Dataset(np.array([[1.0], [1e-9]]), np.array([0.5, 2.0]))
        lam = 1e-14
        _, _, _, _, unstable = _downdate_core(data, lam)
        assert unstable.any()
        fast = ridge_loo_fast(data, lam)
        naive = loo_estimate(RidgeAlgorithm(lam), data, CostKind.SQUARED)
        assert fast == pytest.approx(naive, rel=1e-9)


class TestPredictionErrorMc:
    def test_true_model_no_noise(self):
        spec = DataSpec(
            d=2,
            x_family="uniform_ball",
            b_x=1.0,
            y_model="linear_gaussian",
            beta_star=(0.5, -0.25),
            noise_scale=0.0,
        )
        model = RidgeModel(beta=(0.5, -0.25), lam=1.0, n_fit=10)
        est, se = prediction_error_mc(model, spec, 100, CostKind.SQUARED, SeedSpec(6))
        assert est == pytest.approx(0.0, abs=1e-25)

    def test_constant_labels_constant_cost(self):
        # |Y| identically 2 via a sign feature with coefficient 2; the zero
        # model then incurs squared cost exactly 4 on every draw.
        spec = DataSpec(
            d=1,
            x_family="rademacher_coords",
            b_x=1.0,
            y_model="linear_clipped",
            beta_star=(2.0,),
            noise_scale=0.0,
            b_y=2.0,
        )
        model = RidgeModel(beta=(0.0,), lam=1.0, n_fit=10)
        est, se = prediction_error_mc(model, spec, 64, CostKind.SQUARED, SeedSpec(7))
        assert est == 4.0
        assert se == 0.0

    def test_rerun_is_bit_identical(self):
        spec = DataSpec(
            d=2,
            x_family="uniform_cube",
            b_x=1.0,
            y_model="linear_clipped",
            beta_star=(0.3, 0.3),
            noise_scale=0.2,
            b_y=1.0,
        )
        model = RidgeModel(beta=(0.1, 0.2), lam=0.5, n_fit=20)
        first = prediction_error_mc(model, spec, 500, CostKind.SQUARED, SeedSpec(8))
        second = prediction_error_mc(model, spec, 500, CostKind.SQUARED, SeedSpec(8))
        assert first == second

    def test_callable_predictor(self):
        spec = DataSpec(
            d=1,
            x_family="uniform_ball",
            b_x=1.0,
            y_model="bernoulli_label",
            beta_star=(0.0,),
            noise_scale=0.5,
            b_y=1.0,
        )
        est, se = prediction_error_mc(
            lambda x: 1.0, spec, 400, CostKind.ZERO_ONE, SeedSpec(9)
        )
        # Misclassification rate of the constant-1 predictor is P(Y=0) = 0.5.
        assert est == pytest.approx(0.5, abs=0.1)

    def test_rejects_tiny_m(self):
        spec = DataSpec(
            d=1,
            x_family="uniform_ball",
            b_x=1.0,
            y_model="linear_gaussian",
            beta_star=(0.0,),
            noise_scale=1.0,
        )
        model = RidgeModel(beta=(0.0,), lam=1.0, n_fit=5)
        with pytest.raises(ValueError):
            prediction_error_mc(model, spec, 1, CostKind.SQUARED, SeedSpec(10))


class TestRidgeModelJson:
    def test_round_trip(self, tmp_path):
        model = RidgeModel(beta=(0.125, -2.5, 1e-17), lam=0.75, n_fit=33)
        text = model.to_json()
        obj = json.loads(text)
        assert set(obj) == {"lambda", "n_fit", "beta"}
        assert RidgeModel.from_json(text) == model
        path = model.save(tmp_path / "model.json")
        assert RidgeModel.from_json(path.read_text()) == model
