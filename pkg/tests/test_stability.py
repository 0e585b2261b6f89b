import itertools
import math

import numpy as np
import pytest

from stabilab.datagen import DataSpec, Dataset, SeedSpec, leave_one_out, sample_dataset
from stabilab.learners import (
    CostKind,
    KnnAlgorithm,
    KnnParams,
    RidgeAlgorithm,
    knn_classify,
)
from stabilab.stability import (
    RidgeStabilityInputs,
    StabilityConfig,
    check_ridge_corollary_domain,
    check_ridge_stability_domain,
    empirical_lq_stability,
    knn_gamma_1,
    ridge_gamma_q,
    ridge_param_diff_check,
    ridge_stability_violations,
    stability_profile,
    y_norm,
)

BERNOULLI_SPEC = DataSpec(
    d=2,
    x_family="uniform_ball",
    b_x=1.0,
    y_model="bernoulli_label",
    beta_star=(0.2, 0.1),
    noise_scale=0.5,
    b_y=1.0,
)

NOISY_RIDGE_SPEC = DataSpec(
    d=2,
    x_family="uniform_ball",
    b_x=1.0,
    y_model="linear_clipped",
    beta_star=(0.4, 0.2),
    noise_scale=0.2,
    b_y=0.6,
)


class TestValidityDomain:
    def test_valid_configuration_passes(self):
        check_ridge_stability_domain(1.0, 1.0, 0.5, 100)
        check_ridge_corollary_domain(1.0, 1.0, 0.5, 100)

    def test_violations_are_named(self):
        with pytest.raises(ValueError, match=r"n \* eta > 1"):
            check_ridge_stability_domain(1.0, 1.0, 0.01, 50)
        with pytest.raises(ValueError, match=r"b_x\^2 / \(n\*eta - 1\)"):
            check_ridge_stability_domain(2.0, 0.05, 0.5, 50)
        with pytest.raises(ValueError, match="eta in"):
            check_ridge_stability_domain(1.0, 1.0, 1.5, 50)

    def test_reciprocal_condition_is_also_enforced(self):
        # n*eta - 1 is large here, but 1/(eta*(n-1)) still exceeds lam.
        violations = ridge_stability_violations(0.01, 0.005, 0.9, 120)
        assert any("1 / (eta*(n-1))" in v for v in violations)

    def test_corollary_needs_three_points(self):
        with pytest.raises(ValueError, match="n >= 3"):
            check_ridge_corollary_domain(1.0, 1.0, 0.5, 2)


class TestEmpiricalStability:
    def test_degenerate_spec_gives_zero(self):
        spec = DataSpec(
            d=2,
            x_family="uniform_ball",
            b_x=1.0,
            y_model="linear_clipped",
            beta_star=(0.0, 0.0),
            noise_scale=0.0,
            b_y=1.0,
        )
        cfg = StabilityConfig(q=2.0, n=10, reps=20, seed=SeedSpec(1))
        est = empirical_lq_stability(RidgeAlgorithm(1.0), spec, CostKind.SQUARED, cfg)
        assert est.s_q_hat == 0.0
        assert est.std_error == 0.0

    def test_knn_q1_equals_disagreement_frequency(self):
        # The L^1 statistic for the 0-1 cost is exactly the probability that
        # the full-sample and leave-one-out predictions differ; recount it
        # by refitting on explicit reduced datasets over the same draws.
        k, n, reps = 3, 20, 150
        cfg = StabilityConfig(q=1.0, n=n, reps=reps, seed=SeedSpec(21))
        est = empirical_lq_stability(
            KnnAlgorithm(k), BERNOULLI_SPEC, CostKind.ZERO_ONE, cfg
        )
        params = KnnParams(k)
        total = 0.0
        for r in range(reps):
            seed_r = cfg.seed.child(r)
            data = sample_dataset(BERNOULLI_SPEC, n, seed_r.child(0))
            test = sample_dataset(BERNOULLI_SPEC, 1, seed_r.child(1))
            x = test.xs[0]
            full = knn_classify(data, params, x)
            disagreements = 0
            for j in range(1, n + 1):
                if knn_classify(leave_one_out(data, j), params, x) != full:
                    disagreements += 1
            total += disagreements / n
        assert est.s_q_hat == pytest.approx(total / reps, abs=1e-12)

    def test_two_point_discrete_instance_matches_enumeration(self):
        # d=1 sign feature with Bernoulli labels: (X, Y) takes 4 values with
        # known probabilities, so the population stability at n=2 is an
        # exact finite sum over (Z1, Z2, test) outcomes.
        spec = DataSpec(
            d=1,
            x_family="rademacher_coords",
            b_x=1.0,
            y_model="bernoulli_label",
            beta_star=(0.25,),
            noise_scale=0.5,
            b_y=1.0,
        )
        lam, q = 1.0, 2.0

        outcomes = []
        for x in (-1.0, 1.0):
            p1 = 0.5 + 0.25 * x
            outcomes.append(((x, 1.0), 0.5 * p1))
            outcomes.append(((x, 0.0), 0.5 * (1.0 - p1)))

        def beta_two(z1, z2):
            return (z1[0] * z1[1] + z2[0] * z2[1]) / (2.0 + 2.0 * lam)

        def beta_one(z):
            return z[0] * z[1] / (1.0 + lam)

        exact_pow = 0.0
        for (z1, p1), (z2, p2), (zt, pt) in itertools.product(outcomes, repeat=3):
            x, y = zt
            c_full = (beta_two(z1, z2) * x - y) ** 2
            inner = 0.0
            for kept in (z2, z1):  # remove point 1, then point 2
                inner += abs(c_full - (beta_one(kept) * x - y) ** 2) ** q
            exact_pow += p1 * p2 * pt * inner / 2.0
        exact = exact_pow ** (1.0 / q)

        cfg = StabilityConfig(q=q, n=2, reps=4000, seed=SeedSpec(22))
        est = empirical_lq_stability(RidgeAlgorithm(lam), spec, CostKind.SQUARED, cfg)
        assert est.s_q_hat == pytest.approx(exact, abs=4 * est.std_error + 1e-12)

    def test_monotone_in_q_on_shared_draws(self):
        cfg = StabilityConfig(q=1.0, n=20, reps=100, seed=SeedSpec(23))
        profile = stability_profile(
            RidgeAlgorithm(0.5), NOISY_RIDGE_SPEC, CostKind.SQUARED, cfg, (1.0, 2.0, 4.0, 8.0)
        )
        values = [profile[q].s_q_hat for q in (1.0, 2.0, 4.0, 8.0)]
        for lo, hi in zip(values, values[1:]):
            assert lo <= hi * (1 + 1e-12)

    def test_fixed_last_policy_runs(self):
        cfg = StabilityConfig(q=1.0, n=12, reps=50, j_policy="fixed_last", seed=SeedSpec(24))
        est = empirical_lq_stability(
            RidgeAlgorithm(1.0), NOISY_RIDGE_SPEC, CostKind.SQUARED, cfg
        )
        assert est.s_q_hat >= 0.0

    def test_cost_mismatch_rejected(self):
        cfg = StabilityConfig(q=1.0, n=10, reps=10, seed=SeedSpec(25))
        with pytest.raises(ValueError, match="squared"):
            empirical_lq_stability(RidgeAlgorithm(1.0), NOISY_RIDGE_SPEC, CostKind.ZERO_ONE, cfg)
        with pytest.raises(ValueError, match="0-1"):
            empirical_lq_stability(KnnAlgorithm(3), BERNOULLI_SPEC, CostKind.SQUARED, cfg)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            StabilityConfig(q=0.5, n=10, reps=10)
        with pytest.raises(ValueError):
            StabilityConfig(q=1.0, n=10, reps=1)
        with pytest.raises(ValueError):
            StabilityConfig(q=1.0, n=10, reps=10, j_policy="sometimes")


class TestRidgeGamma:
    def test_reference_value(self):
        inputs = RidgeStabilityInputs(b_x=1.0, lam=1.0, eta=0.5, n=100, y_norm_2q=1.0)
        # 2 * 1 * (1/100) * (1 + 2/0.5) * (1 + 1) = 0.2
        assert ridge_gamma_q(inputs) == pytest.approx(0.2, rel=1e-12)

    def test_zero_norm_gives_zero(self):
        inputs = RidgeStabilityInputs(b_x=1.0, lam=1.0, eta=0.5, n=100, y_norm_2q=0.0)
        assert ridge_gamma_q(inputs) == 0.0

    def test_doubling_n_halves(self):
        a = ridge_gamma_q(RidgeStabilityInputs(1.0, 1.0, 0.5, 100, 1.0))
        b = ridge_gamma_q(RidgeStabilityInputs(1.0, 1.0, 0.5, 200, 1.0))
        assert b == pytest.approx(a / 2.0, rel=1e-12)
        assert b == pytest.approx(0.1, rel=1e-12)

    def test_infinite_norm_gives_infinity(self):
        inputs = RidgeStabilityInputs(1.0, 1.0, 0.5, 100, math.inf)
        assert ridge_gamma_q(inputs) == math.inf

    def test_invalid_domain_raises_at_construction(self):
        with pytest.raises(ValueError, match=r"n \* eta"):
            RidgeStabilityInputs(b_x=1.0, lam=1.0, eta=0.005, n=100, y_norm_2q=1.0)

    def test_strictly_decreasing_in_lambda(self):
        values = [
            ridge_gamma_q(RidgeStabilityInputs(1.0, lam, 0.5, 100, 1.0))
            for lam in (0.2, 0.5, 1.0, 2.0, 5.0)
        ]
        for hi, lo in zip(values, values[1:]):
            assert lo < hi


class TestKnnGamma:
    def test_reference_values(self):
        assert knn_gamma_1(4, 100) == pytest.approx(0.031915382432114614, rel=1e-12)
        assert knn_gamma_1(1, 2) == pytest.approx(0.7978845608028654, rel=1e-12)

    def test_scaling_in_n(self):
        assert knn_gamma_1(1, 200) == pytest.approx(knn_gamma_1(1, 100) / 2.0, rel=1e-12)

    def test_k_range(self):
        with pytest.raises(ValueError):
            knn_gamma_1(0, 10)
        with pytest.raises(ValueError):
            knn_gamma_1(10, 10)


class TestParamDiffCheck:
    def test_zero_labels(self):
        data = Dataset(np.random.default_rng(0).uniform(-0.5, 0.5, (10, 2)), np.zeros(10))
        lhs, rhs = ridge_param_diff_check(data, 3, lam=1.0, eta=0.5, b_x=1.0)
        assert lhs == 0.0 and rhs == 0.0

    def test_two_point_hand_arithmetic(self):
        # X=(1,1), Y=(0,2), lam=6, eta=0.6 (valid: 2*0.6>1, 6 > 1/0.2).
        # Full fit: beta = 2/14 = 1/7; without point 1: beta = 2/7.
        # lhs = 1/7.  rhs = (1/12)(0 + (7/2.4)*2) = 35/72.
        data = Dataset(np.array([[1.0], [1.0]]), np.array([0.0, 2.0]))
        lhs, rhs = ridge_param_diff_check(data, 1, lam=6.0, eta=0.6, b_x=1.0)
        assert lhs == pytest.approx(1.0 / 7.0, rel=1e-12)
        assert rhs == pytest.approx(35.0 / 72.0, rel=1e-12)
        assert lhs <= rhs

    def test_seeded_instances_never_violate(self):
        spec = NOISY_RIDGE_SPEC
        rng = np.random.default_rng(42)
        for seed in range(100):
            n = int(rng.integers(5, 40))
            data = sample_dataset(spec, n, SeedSpec(seed))
            eta = 0.5
            lam = float(rng.uniform(spec.b_x**2 / (n * eta - 1.0) + 0.05, 3.0))
            j = int(rng.integers(1, n + 1))
            lhs, rhs = ridge_param_diff_check(data, j, lam=lam, eta=eta, b_x=spec.b_x)
            assert lhs <= rhs * (1 + 1e-12)

    def test_domain_violation_raises(self):
        data = Dataset(np.array([[1.0], [1.0]]), np.array([0.0, 2.0]))
        with pytest.raises(ValueError, match=r"n \* eta"):
            ridge_param_diff_check(data, 1, lam=6.0, eta=0.4, b_x=1.0)

    def test_feature_bound_checked(self):
        data = Dataset(np.array([[3.0], [1.0], [1.0]]), np.zeros(3))
        with pytest.raises(ValueError, match="feature bound"):
            ridge_param_diff_check(data, 1, lam=6.0, eta=0.8, b_x=1.0)


class TestYNorm:
    CONSTANT_SPEC = DataSpec(
        d=1,
        x_family="rademacher_coords",
        b_x=1.0,
        y_model="linear_clipped",
        beta_star=(2.0,),
        noise_scale=0.0,
        b_y=2.0,
    )

    def test_constant_magnitude_all_q(self):
        for q in (1.0, 2.0, 3.5, 8.0):
            assert y_norm(self.CONSTANT_SPEC, q) == pytest.approx(2.0, rel=1e-12)

    def test_constant_magnitude_mc_exact_at_q2(self):
        val = y_norm(self.CONSTANT_SPEC, 2.0, method="mc", m=100, seed=SeedSpec(31))
        assert val == 2.0

    def test_bernoulli_moments(self):
        spec = DataSpec(
            d=1,
            x_family="uniform_ball",
            b_x=1.0,
            y_model="bernoulli_label",
            beta_star=(0.0,),
            noise_scale=0.25,
            b_y=1.0,
        )
        assert y_norm(spec, 2.0) == pytest.approx(0.5, rel=1e-12)
        assert y_norm(spec, 1.0) == pytest.approx(0.25, rel=1e-12)

    def test_enumerated_two_level_labels(self):
        # |Y| is (|0.6 s1 + 0.3 s2|)/sqrt(2) over signs: {0.9, 0.3}/sqrt(2)
        # each with probability 1/2.
        spec = DataSpec(
            d=2,
            x_family="rademacher_coords",
            b_x=1.0,
            y_model="linear_clipped",
            beta_star=(0.6, 0.3),
            noise_scale=0.0,
            b_y=0.7,
        )
        q = 2.0
        expected = ((0.9**2 + 0.3**2) / 2.0 / 2.0) ** 0.5
        assert y_norm(spec, q) == pytest.approx(expected, rel=1e-12)

    def test_no_closed_form_raises(self):
        with pytest.raises(ValueError, match="closed-form"):
            y_norm(NOISY_RIDGE_SPEC, 2.0)

    def test_mc_needs_seed_and_size(self):
        with pytest.raises(ValueError):
            y_norm(self.CONSTANT_SPEC, 2.0, method="mc", m=1, seed=SeedSpec(1))
        with pytest.raises(ValueError):
            y_norm(self.CONSTANT_SPEC, 2.0, method="mc", m=100)


class TestDominanceSmoke:
    def test_ridge_dominated_at_one_configuration(self):
        spec = DataSpec(
            d=2,
            x_family="rademacher_coords",
            b_x=1.0,
            y_model="linear_clipped",
            beta_star=(0.6, 0.3),
            noise_scale=0.0,
            b_y=0.7,
        )
        n, lam, eta, q = 50, 1.0, 0.5, 2.0
        cfg = StabilityConfig(q=q, n=n, reps=300, seed=SeedSpec(33))
        est = empirical_lq_stability(RidgeAlgorithm(lam), spec, CostKind.SQUARED, cfg)
        gamma = ridge_gamma_q(
            RidgeStabilityInputs(1.0, lam, eta, n, y_norm(spec, 2 * q))
        )
        assert est.s_q_hat <= gamma + 3.0 * est.std_error

    def test_knn_dominated_at_one_configuration(self):
        k, n = 3, 50
        cfg = StabilityConfig(q=1.0, n=n, reps=400, seed=SeedSpec(34))
        est = empirical_lq_stability(KnnAlgorithm(k), BERNOULLI_SPEC, CostKind.ZERO_ONE, cfg)
        assert est.s_q_hat <= knn_gamma_1(k, n) + 3.0 * est.std_error
