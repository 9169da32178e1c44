"""Tests for active-learning strategies, the acquisition loop, and AULC."""

import math

import numpy as np
import pytest
from scipy.optimize import minimize

from drulearn.active import (
    AULC_REPORT_FIELDS,
    CURVE_REPORT_FIELDS,
    ActiveState,
    DR_STRONG,
    DR_WEAK,
    EMC,
    MAX_MC,
    MIN_MC,
    RANDOM,
    StrategyConfig,
    aulc,
    aulc_report_rows,
    curve_report_rows,
    erm_train_l2,
    evaluation_likelihood,
    impact_gradient_norm,
    initial_state,
    run_active_loop,
    score_dr,
    score_emc,
    score_max_mc,
    score_min_mc,
    select_next,
)
from drulearn.dual import InfeasibleRadiusError, LabelPrior, SolverConfig
from drulearn.model import (
    LabeledDataset,
    TransportCost,
    UnlabeledDataset,
    logistic_loss,
    logistic_predict,
    loss_grad_theta,
    make_rng,
)

COST = TransportCost()

INNER_CONFIG = SolverConfig(
    radius_eps=0.5,
    step_size=0.05,
    convergence_tol=1e-5,
    max_steps=40000,
    lr_decay_factor=10.0,
    lr_decay_every=5000,
)


def two_cluster_data(rng, n, spread=1.5, noise=0.4):
    half = n // 2
    features = np.concatenate(
        [
            rng.normal(scale=noise, size=(half, 2)) + spread,
            rng.normal(scale=noise, size=(n - half, 2)) - spread,
        ]
    )
    labels = np.array([1] * half + [0] * (n - half))
    return LabeledDataset(features, labels)


class TestErmTrainL2:
    def test_symmetric_data_gives_a_stationary_aligned_separator(self):
        features = np.array([[1.0, 0.5], [-1.0, -0.5], [2.0, 1.0], [-2.0, -1.0]])
        data = LabeledDataset(features, np.array([1, 0, 1, 0]))
        theta = erm_train_l2(data, 0.01)
        gradient = loss_grad_theta(theta, features, data.labels).mean(
            axis=0
        ) + 2 * 0.01 * theta
        assert np.linalg.norm(gradient) <= 1e-6
        assert features[0] @ theta > 0

    def test_single_sample_stays_finite_under_ridge(self):
        data = LabeledDataset(np.array([[2.0, 1.0]]), np.array([1]))
        theta = erm_train_l2(data, 0.001)
        assert np.all(np.isfinite(theta))
        assert logistic_predict(theta, data.features[0]) < 1.0

    def test_matches_an_independent_convex_solver(self):
        rng = make_rng(0)
        data = two_cluster_data(rng, 20)
        gamma = 0.001
        theta = erm_train_l2(data, gamma)

        def objective(candidate):
            return float(
                np.mean(logistic_loss(candidate, data.features, data.labels))
                + gamma * candidate @ candidate
            )

        reference = minimize(objective, np.zeros(2), method="BFGS")
        assert objective(theta) <= reference.fun + 1e-6

    def test_unregularized_degenerate_fit_raises(self):
        # a single point with no ridge has a rank-one curvature matrix, so the
        # damped Newton step cannot proceed
        data = LabeledDataset(np.array([[1.0, 2.0]]), np.array([1]))
        with pytest.raises(RuntimeError):
            erm_train_l2(data, 0.0)

    def test_rejects_negative_ridge(self):
        data = LabeledDataset(np.array([[1.0, 2.0]]), np.array([1]))
        with pytest.raises(ValueError):
            erm_train_l2(data, -0.1)


class TestImpactGradientNorm:
    def test_zero_model_halves_the_feature_norm(self):
        assert impact_gradient_norm(np.zeros(2), [1.2, 1.6], 1) == 1.0

    def test_vanishes_when_the_label_agrees_with_a_saturated_prediction(self):
        theta = np.array([20.0, 0.0])
        assert impact_gradient_norm(theta, [2.0, 0.0], 1) <= 1e-8

    def test_equals_the_gradient_norm_and_its_closed_form(self):
        rng = make_rng(1)
        for _ in range(50):
            theta = rng.normal(size=3)
            x = rng.normal(size=3)
            y = int(rng.integers(0, 2))
            value = impact_gradient_norm(theta, x, y)
            assert value == np.linalg.norm(loss_grad_theta(theta, x, y))
            closed = np.linalg.norm(x) * abs(logistic_predict(theta, x) - y)
            assert value == pytest.approx(closed, rel=1e-12)


class TestChangeScores:
    def test_zero_model_values(self):
        x = np.array([3.0, 0.0])
        assert score_emc(np.zeros(2), x) == 1.5
        assert score_min_mc(np.zeros(2), x) == 0.5
        assert score_max_mc(np.zeros(2), x) == 0.5

    def test_emc_is_the_posterior_weighted_mean_impact(self):
        rng = make_rng(2)
        for _ in range(100):
            theta = rng.normal(size=2)
            x = rng.normal(size=2) * rng.uniform(0.1, 3.0)
            p = logistic_predict(theta, x)
            expected = p * impact_gradient_norm(theta, x, 1) + (
                1.0 - p
            ) * impact_gradient_norm(theta, x, 0)
            assert score_emc(theta, x) == pytest.approx(expected, rel=1e-12)

    def test_min_and_max_bracket_a_half_and_sum_to_one(self):
        rng = make_rng(3)
        for _ in range(30):
            theta = rng.normal(size=2)
            x = rng.normal(size=2)
            low = score_min_mc(theta, x)
            high = score_max_mc(theta, x)
            assert low <= 0.5 <= high
            assert low + high == pytest.approx(1.0, abs=1e-12)

    def test_norm_switch_scales_both_posterior_scores(self):
        theta = np.array([0.4, -0.7])
        x = np.array([1.5, 2.0])
        norm = np.linalg.norm(x)
        assert score_min_mc(theta, x, include_norm=True) == pytest.approx(
            norm * score_min_mc(theta, x), rel=1e-15
        )
        assert score_max_mc(theta, x, include_norm=True) == pytest.approx(
            norm * score_max_mc(theta, x), rel=1e-15
        )


class TestScoreDr:
    def test_singleton_decision_set_returns_the_forced_label_impact(self):
        # one atom, matching support, and a point prior pin the distribution,
        # so the worst-case impact is the impact of the forced label
        x0 = np.array([0.8, -0.4])
        data = LabeledDataset(x0[None], np.array([1]))
        unlabeled = UnlabeledDataset(x0[None])
        prior = LabelPrior.point([0.0, 1.0])
        theta = np.array([0.5, 0.3])
        score = score_dr(x0, data, unlabeled, prior, 0.5, COST, theta, INNER_CONFIG)
        assert score == pytest.approx(impact_gradient_norm(theta, x0, 1), abs=1e-3)

    def test_free_labels_price_at_the_pessimistic_impact(self):
        # with an uninformative prior and a huge radius only the feature
        # marginal binds, so the adversary puts the impact-minimizing label
        # on the candidate
        rng = make_rng(3)
        data = LabeledDataset(rng.normal(size=(3, 2)), np.array([1, 0, 1]))
        pool = rng.normal(size=(4, 2))
        unlabeled = UnlabeledDataset(pool)
        theta = np.array([0.5, 0.3])
        x_star = pool[2]
        score = score_dr(
            x_star, data, unlabeled, LabelPrior.uninformative(), 6.0, COST, theta,
            INNER_CONFIG,
        )
        floor = min(
            impact_gradient_norm(theta, x_star, 0),
            impact_gradient_norm(theta, x_star, 1),
        )
        assert score <= floor + 1e-3
        assert score == pytest.approx(floor, abs=1e-2)

    def test_zero_impact_candidate_scores_zero(self):
        rng = make_rng(3)
        data = LabeledDataset(rng.normal(size=(3, 2)), np.array([1, 0, 1]))
        pool = np.vstack([rng.normal(size=(2, 2)), np.zeros(2)])
        unlabeled = UnlabeledDataset(pool)
        theta = np.array([0.5, 0.3])
        score = score_dr(
            np.zeros(2), data, unlabeled, LabelPrior.uninformative(), 6.0, COST,
            theta, INNER_CONFIG,
        )
        assert score == pytest.approx(0.0, abs=1e-2)

    def test_candidate_must_come_from_the_pool(self):
        data = LabeledDataset(np.zeros((1, 2)), np.array([1]))
        unlabeled = UnlabeledDataset(np.ones((2, 2)))
        with pytest.raises(ValueError):
            score_dr(
                np.array([5.0, 5.0]), data, unlabeled, LabelPrior.uninformative(),
                1.0, COST, np.zeros(2), INNER_CONFIG,
            )

    def test_empty_decision_set_raises(self):
        # the prior demands all mass on class 0 while the only atom carries
        # label 1 and the radius cannot pay for the flip
        x0 = np.array([1.0, 1.0])
        data = LabeledDataset(x0[None], np.array([1]))
        unlabeled = UnlabeledDataset(x0[None])
        prior = LabelPrior.point([1.0, 0.0])
        config = SolverConfig(
            radius_eps=0.01, step_size=0.5, objective_floor=-50.0, max_steps=30000
        )
        with pytest.raises(InfeasibleRadiusError):
            score_dr(x0, data, unlabeled, prior, 0.01, COST, np.zeros(2), config)


class TestSelectNext:
    def _state(self, pool_features, pool_labels=None, theta=None):
        labeled = LabeledDataset(
            np.array([[1.0, 1.0], [-1.0, -1.0]]), np.array([1, 0])
        )
        pool_features = np.asarray(pool_features, dtype=float)
        if pool_labels is None:
            pool_labels = np.zeros(len(pool_features), dtype=int)
        return ActiveState(
            labeled=labeled,
            pool_features=pool_features,
            pool_labels=pool_labels,
            theta=theta,
        )

    def test_singleton_pool_is_chosen_by_every_strategy(self):
        pool = np.array([[0.5, 0.5]])
        config = SolverConfig(radius_eps=1.0, max_steps=2000)
        for kind in (RANDOM, EMC, MIN_MC, MAX_MC, DR_WEAK, DR_STRONG):
            state = self._state(pool, pool_labels=np.array([1]), theta=np.zeros(2))
            strategy = StrategyConfig(kind=kind, candidate_subsample=3, seed=0)
            chosen = select_next(
                state, strategy, make_rng(0), cost=COST, solver_config=config,
                class_share=0.5,
            )
            assert chosen == 0

    def test_zero_model_emc_takes_the_largest_feature_norm(self):
        pool = np.array([[1.0, 0.0], [3.0, 0.5], [0.2, 0.1]])
        state = self._state(pool, theta=np.zeros(2))
        chosen = select_next(state, StrategyConfig(kind=EMC), make_rng(0))
        assert chosen == 1

    def test_exact_ties_break_toward_the_lower_index(self):
        pool = np.array([[2.0, 1.0], [2.0, 1.0]])
        state = self._state(pool, theta=np.array([0.3, -0.2]))
        for kind in (EMC, MIN_MC, MAX_MC):
            chosen = select_next(state, StrategyConfig(kind=kind), make_rng(0))
            assert chosen == 0

    def test_score_value_is_invariant_under_pool_permutation(self):
        rng = make_rng(4)
        pool = rng.normal(size=(6, 2))
        theta = rng.normal(size=2)
        state = self._state(pool, theta=theta)
        chosen = select_next(state, StrategyConfig(kind=EMC), make_rng(0))
        perm = rng.permutation(6)
        permuted = self._state(pool[perm], theta=theta)
        chosen_perm = select_next(permuted, StrategyConfig(kind=EMC), make_rng(0))
        assert score_emc(theta, pool[chosen]) == pytest.approx(
            score_emc(theta, pool[perm][chosen_perm]), rel=1e-12
        )

    def test_random_strategy_is_seed_deterministic(self):
        pool = np.arange(20, dtype=float).reshape(10, 2)
        state = self._state(pool)
        first = select_next(state, StrategyConfig(kind=RANDOM), make_rng(7))
        second = select_next(state, StrategyConfig(kind=RANDOM), make_rng(7))
        assert first == second

    def test_empty_pool_and_missing_model_are_rejected(self):
        state = self._state(np.empty((0, 2)))
        with pytest.raises(ValueError):
            select_next(state, StrategyConfig(kind=RANDOM), make_rng(0))
        unscored = self._state(np.array([[1.0, 1.0]]))
        with pytest.raises(ValueError):
            select_next(unscored, StrategyConfig(kind=EMC), make_rng(0))


class TestActiveStateAndInit:
    def test_initial_split_partitions_the_data_deterministically(self):
        rng = make_rng(5)
        data = two_cluster_data(rng, 30)
        first = initial_state(data, 8, seed=3)
        second = initial_state(data, 8, seed=3)
        assert np.array_equal(first.labeled.features, second.labeled.features)
        assert np.array_equal(first.pool_features, second.pool_features)
        assert first.labeled.n == 8
        assert first.pool_size == 22
        combined = np.vstack([first.labeled.features, first.pool_features])
        assert sorted(map(tuple, combined)) == sorted(map(tuple, data.features))

    def test_history_must_be_strictly_increasing(self):
        labeled = LabeledDataset(np.zeros((1, 2)), np.array([1]))
        with pytest.raises(ValueError):
            ActiveState(
                labeled=labeled,
                pool_features=np.ones((1, 2)),
                pool_labels=np.array([0]),
                history=((5, 0.5), (5, 0.6)),
            )

    def test_initial_size_bounds_are_enforced(self):
        data = LabeledDataset(np.zeros((3, 2)), np.array([0, 1, 0]))
        with pytest.raises(ValueError):
            initial_state(data, 0, seed=0)
        with pytest.raises(ValueError):
            initial_state(data, 4, seed=0)


class TestRunActiveLoop:
    def _setup(self, n=24, n_initial=6, seed=9):
        rng = make_rng(5)
        data = two_cluster_data(rng, n)
        return data, initial_state(data, n_initial, seed=seed)

    def test_random_curve_is_bitwise_reproducible(self):
        data, init = self._setup()
        strategy = StrategyConfig(kind=RANDOM, seed=21)
        first = run_active_loop(init, strategy, data, 12)
        second = run_active_loop(init, strategy, data, 12)
        assert first.history == second.history

    def test_curve_has_one_entry_per_labeled_count(self):
        data, init = self._setup()
        done = run_active_loop(init, StrategyConfig(kind=EMC, seed=1), data, 13)
        counts = [n for n, _ in done.history]
        assert counts == list(range(6, 14))
        assert done.labeled.n == 13
        assert done.pool_size == init.pool_size - 7

    def test_learning_improves_every_strategy_on_overlapping_clusters(self):
        # a weak 4-point start on noisy clusters leaves room for every
        # strategy, including the easy-point-seeking optimistic one, to gain
        rng = make_rng(6)
        data = two_cluster_data(rng, 28, spread=1.2, noise=0.8)
        init = initial_state(data, 4, seed=9)
        config = SolverConfig(
            radius_eps=1.0, max_steps=3000, lr_decay_factor=10.0, lr_decay_every=5000
        )
        for kind in (RANDOM, EMC, MIN_MC, MAX_MC, DR_WEAK):
            strategy = StrategyConfig(kind=kind, candidate_subsample=4, seed=9)
            done = run_active_loop(
                init, strategy, data, 16, cost=COST, solver_config=config
            )
            assert done.history[-1][1] >= done.history[0][1] - 1e-9

    def test_stopping_bounds_are_validated(self):
        data, init = self._setup()
        with pytest.raises(ValueError):
            run_active_loop(init, StrategyConfig(kind=RANDOM), data, 6)
        with pytest.raises(ValueError):
            run_active_loop(init, StrategyConfig(kind=RANDOM), data, 25)

    def test_evaluation_likelihood_is_the_geometric_mean(self):
        data = LabeledDataset(np.array([[1.0, 0.0], [0.0, 1.0]]), np.array([1, 0]))
        theta = np.array([0.7, -0.3])
        expected = math.exp(
            -float(np.mean(logistic_loss(theta, data.features, data.labels)))
        )
        assert evaluation_likelihood(theta, data) == expected


class TestAulc:
    def test_constant_curve_scales_to_its_level(self):
        curve = [(n, 0.954) for n in range(20, 101)]
        assert aulc(curve) == pytest.approx(95.4, abs=1e-12)
        assert aulc([(20, 0.5), (100, 0.5)]) == pytest.approx(50.0, abs=1e-12)

    def test_linear_ramp_halves_the_plateau(self):
        curve = [(n, (n - 20) / 80) for n in range(20, 101)]
        assert aulc(curve) == pytest.approx(50.0, abs=1e-12)

    def test_pointwise_domination_orders_the_areas(self):
        rng = make_rng(6)
        base = rng.uniform(0.2, 0.8, size=30)
        counts = np.arange(10, 40)
        lower = list(zip(counts, base))
        upper = list(zip(counts, base + rng.uniform(0.0, 0.2, size=30)))
        assert aulc(upper) >= aulc(lower)

    def test_unnormalized_grids_are_rejected(self):
        with pytest.raises(ValueError):
            aulc([(10, 0.5)])
        with pytest.raises(ValueError):
            aulc([(10, 0.5), (10, 0.6)])
        with pytest.raises(ValueError):
            aulc([(10, 0.5), (9, 0.6)])


class TestReports:
    def test_curve_rows_flatten_the_history(self):
        rows = curve_report_rows("emc", 3, ((20, 0.8), (21, 0.85)))
        assert len(rows) == 2
        assert tuple(rows[0]) == CURVE_REPORT_FIELDS
        assert rows[1] == {
            "strategy": "emc", "trial": 3, "n_labeled": 21, "likelihood": 0.85,
        }

    def test_aulc_rows_take_medians_in_sorted_order(self):
        rows = aulc_report_rows({"random": [50.0, 60.0, 70.0], "emc": [80.0, 90.0]})
        assert [tuple(r) for r in rows] == [AULC_REPORT_FIELDS] * 2
        assert rows[0] == {"strategy": "emc", "median_aulc": 85.0}
        assert rows[1] == {"strategy": "random", "median_aulc": 60.0}
