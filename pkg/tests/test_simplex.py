"""Tests for the dense two-phase simplex.

Randomized instances are cross-checked against scipy.optimize.linprog (HiGHS),
an independent implementation; hand-built corner cases pin statuses.
"""

import numpy as np
import pytest
from scipy.optimize import linprog

from drulearn.simplex import (
    INFEASIBLE,
    OPTIMAL,
    UNBOUNDED,
    solve_lp,
    solve_transportation,
)


def scipy_reference(c, a_eq=None, b_eq=None, a_ub=None, b_ub=None):
    res = linprog(c, A_ub=a_ub, b_ub=b_ub, A_eq=a_eq, b_eq=b_eq, method="highs")
    if res.status == 0:
        return OPTIMAL, res.fun
    if res.status == 2:
        return INFEASIBLE, None
    if res.status == 3:
        return UNBOUNDED, None
    raise RuntimeError(f"unexpected scipy status {res.status}")


class TestHandExamples:
    def test_simple_bounded(self):
        res = solve_lp([-1.0], a_ub=[[1.0]], b_ub=[5.0])
        assert res.status == OPTIMAL
        assert res.value == pytest.approx(-5.0, abs=1e-12)
        np.testing.assert_allclose(res.x, [5.0])

    def test_two_variable(self):
        res = solve_lp([-1.0, -1.0], a_ub=[[1.0, 1.0]], b_ub=[1.0])
        assert res.status == OPTIMAL
        assert res.value == pytest.approx(-1.0, abs=1e-12)

    def test_equality(self):
        res = solve_lp([1.0, 2.0], a_eq=[[1.0, 1.0]], b_eq=[1.0])
        assert res.status == OPTIMAL
        assert res.value == pytest.approx(1.0, abs=1e-12)
        np.testing.assert_allclose(res.x, [1.0, 0.0], atol=1e-12)

    def test_infeasible(self):
        res = solve_lp([1.0], a_eq=[[1.0], [1.0]], b_eq=[1.0, 2.0])
        assert res.status == INFEASIBLE

    def test_unbounded(self):
        res = solve_lp([-1.0, 0.0], a_ub=[[0.0, 1.0]], b_ub=[1.0])
        assert res.status == UNBOUNDED

    def test_redundant_equalities(self):
        res = solve_lp(
            [1.0, 1.0],
            a_eq=[[1.0, 1.0], [1.0, 1.0], [2.0, 2.0]],
            b_eq=[1.0, 1.0, 2.0],
        )
        assert res.status == OPTIMAL
        assert res.value == pytest.approx(1.0, abs=1e-10)

    def test_negative_rhs(self):
        # -x1 <= -2 means x1 >= 2
        res = solve_lp([1.0], a_ub=[[-1.0]], b_ub=[-2.0])
        assert res.status == OPTIMAL
        assert res.value == pytest.approx(2.0, abs=1e-12)

    def test_no_constraints(self):
        assert solve_lp([1.0, 0.0]).status == OPTIMAL
        assert solve_lp([-1.0, 0.0]).status == UNBOUNDED


class TestAgainstScipy:
    def test_random_feasible_instances(self):
        rng = np.random.default_rng(42)
        for _ in range(60):
            n = int(rng.integers(2, 8))
            m_eq = int(rng.integers(0, 3))
            m_ub = int(rng.integers(0, 4))
            x0 = rng.uniform(0, 2, size=n)
            a_eq = rng.normal(size=(m_eq, n)) if m_eq else None
            b_eq = a_eq @ x0 if m_eq else None
            a_ub = rng.normal(size=(m_ub, n)) if m_ub else None
            b_ub = a_ub @ x0 + rng.uniform(0, 1, size=m_ub) if m_ub else None
            c = rng.normal(size=n)
            mine = solve_lp(c, a_eq=a_eq, b_eq=b_eq, a_ub=a_ub, b_ub=b_ub)
            ref_status, ref_value = scipy_reference(c, a_eq, b_eq, a_ub, b_ub)
            assert mine.status == ref_status
            if ref_status == OPTIMAL:
                assert mine.value == pytest.approx(ref_value, rel=1e-7, abs=1e-7)
                # the reported x must be feasible and achieve the value
                if m_eq:
                    np.testing.assert_allclose(a_eq @ mine.x, b_eq, atol=1e-7)
                if m_ub:
                    assert np.all(a_ub @ mine.x <= b_ub + 1e-7)
                assert np.all(mine.x >= -1e-9)

    def test_random_possibly_infeasible(self):
        rng = np.random.default_rng(7)
        statuses = set()
        for _ in range(60):
            n = int(rng.integers(2, 6))
            m_eq = int(rng.integers(1, 4))
            a_eq = rng.normal(size=(m_eq, n))
            b_eq = rng.normal(size=m_eq)
            c = np.abs(rng.normal(size=n))  # bounded below on the nonneg orthant
            mine = solve_lp(c, a_eq=a_eq, b_eq=b_eq)
            ref_status, ref_value = scipy_reference(c, a_eq, b_eq)
            assert mine.status == ref_status
            statuses.add(mine.status)
            if ref_status == OPTIMAL:
                assert mine.value == pytest.approx(ref_value, rel=1e-7, abs=1e-7)
        assert {OPTIMAL, INFEASIBLE} <= statuses  # both branches exercised

    def test_random_transportation(self):
        rng = np.random.default_rng(13)
        for _ in range(20):
            n_src = int(rng.integers(2, 5))
            n_dst = int(rng.integers(2, 5))
            mu = rng.uniform(0.1, 1.0, size=n_src)
            mu /= mu.sum()
            nu = rng.uniform(0.1, 1.0, size=n_dst)
            nu /= nu.sum()
            cost = rng.uniform(0, 3, size=(n_src, n_dst))
            n = n_src * n_dst
            a_eq = np.zeros((n_src + n_dst, n))
            for i in range(n_src):
                a_eq[i, i * n_dst : (i + 1) * n_dst] = 1.0
            for j in range(n_dst):
                a_eq[n_src + j, j::n_dst] = 1.0
            b_eq = np.concatenate([mu, nu])
            mine = solve_lp(cost.ravel(), a_eq=a_eq, b_eq=b_eq)
            ref_status, ref_value = scipy_reference(cost.ravel(), a_eq, b_eq)
            assert mine.status == ref_status == OPTIMAL
            assert mine.value == pytest.approx(ref_value, rel=1e-8, abs=1e-9)

    def test_determinism(self):
        rng = np.random.default_rng(3)
        c = rng.normal(size=6)
        a_ub = rng.normal(size=(4, 6))
        b_ub = np.abs(rng.normal(size=4)) + 0.5
        first = solve_lp(c, a_ub=a_ub, b_ub=b_ub)
        second = solve_lp(c, a_ub=a_ub, b_ub=b_ub)
        assert first.value == second.value
        np.testing.assert_array_equal(first.x, second.x)


class TestTransportation:
    def test_singleton_pair(self):
        value, plan = solve_transportation([[3.5]], [1.0], [1.0])
        assert value == 3.5
        np.testing.assert_array_equal(plan, [[1.0]])

    def test_single_row_ships_everything(self):
        value, plan = solve_transportation([[2.0, 1.0, 4.0]], [1.0], [0.5, 0.25, 0.25])
        assert value == pytest.approx(2.0 * 0.5 + 1.0 * 0.25 + 4.0 * 0.25)
        np.testing.assert_allclose(plan, [[0.5, 0.25, 0.25]])

    def test_identity_costs_prefer_diagonal(self):
        # zero-cost diagonal: the optimal plan keeps all mass in place
        cost = 1.0 - np.eye(4)
        value, plan = solve_transportation(cost, np.full(4, 0.25), np.full(4, 0.25))
        assert value == pytest.approx(0.0, abs=1e-12)
        np.testing.assert_allclose(plan, np.eye(4) * 0.25, atol=1e-12)

    def test_matches_dense_solver_on_small_instances(self):
        rng = np.random.default_rng(11)
        for _ in range(25):
            m, n = rng.integers(2, 6, size=2)
            cost = rng.uniform(0.0, 3.0, size=(m, n))
            mu = rng.uniform(0.2, 1.0, size=m)
            mu /= mu.sum()
            nu = rng.uniform(0.2, 1.0, size=n)
            nu /= nu.sum()
            a_eq = np.zeros((m + n, m * n))
            for i in range(m):
                a_eq[i, i * n:(i + 1) * n] = 1.0
            for j in range(n):
                a_eq[m + j, j::n] = 1.0
            dense = solve_lp(cost.ravel(), a_eq=a_eq, b_eq=np.r_[mu, nu])
            value, plan = solve_transportation(cost, mu, nu)
            assert dense.status == OPTIMAL
            assert value == pytest.approx(dense.value, abs=1e-9)

    def test_matches_scipy_including_cost_ties(self):
        rng = np.random.default_rng(12)
        for trial in range(20):
            m, n = rng.integers(2, 10, size=2)
            # integer costs create many ties and degenerate pivots
            cost = rng.integers(0, 4, size=(m, n)).astype(float)
            mu = rng.integers(1, 5, size=m).astype(float)
            mu /= mu.sum()
            nu = rng.integers(1, 5, size=n).astype(float)
            nu /= nu.sum()
            ref_status, ref_value = scipy_reference(
                cost.ravel(), *transport_equalities(m, n, mu, nu)
            )
            value, plan = solve_transportation(cost, mu, nu)
            assert ref_status == OPTIMAL
            assert value == pytest.approx(ref_value, abs=1e-9)
            np.testing.assert_allclose(plan.sum(axis=1), mu, atol=1e-12)
            np.testing.assert_allclose(plan.sum(axis=0), nu, atol=1e-12)
            assert plan.min() >= 0.0

    def test_large_instance_is_fast_and_exact(self):
        rng = np.random.default_rng(13)
        a = rng.normal(size=(15, 3))
        b = rng.normal(size=(200, 3))
        cost = np.linalg.norm(a[:, None, :] - b[None, :, :], axis=-1)
        mu = np.full(15, 1.0 / 15)
        nu = np.full(200, 1.0 / 200)
        value, plan = solve_transportation(cost, mu, nu)
        ref_status, ref_value = scipy_reference(
            cost.ravel(), *transport_equalities(15, 200, mu, nu)
        )
        assert value == pytest.approx(ref_value, abs=1e-9)
        np.testing.assert_allclose(plan.sum(axis=1), mu, atol=1e-12)
        np.testing.assert_allclose(plan.sum(axis=0), nu, atol=1e-12)

    def test_rejects_unbalanced_marginals(self):
        with pytest.raises(ValueError):
            solve_transportation([[1.0, 2.0]], [1.0], [0.4, 0.4])

    def test_rejects_negative_marginals(self):
        with pytest.raises(ValueError):
            solve_transportation([[1.0], [1.0]], [1.5, -0.5], [1.0])

    def test_deterministic_across_runs(self):
        rng = np.random.default_rng(14)
        cost = rng.integers(0, 3, size=(6, 9)).astype(float)
        mu = np.full(6, 1.0 / 6)
        nu = np.full(9, 1.0 / 9)
        first = solve_transportation(cost, mu, nu)
        second = solve_transportation(cost, mu, nu)
        assert first[0] == second[0]
        np.testing.assert_array_equal(first[1], second[1])


def transport_equalities(m, n, mu, nu):
    """Equality system of the transportation polytope for the dense solvers."""
    a_eq = np.zeros((m + n, m * n))
    for i in range(m):
        a_eq[i, i * n:(i + 1) * n] = 1.0
    for j in range(n):
        a_eq[m + j, j::n] = 1.0
    return a_eq, np.r_[mu, nu]
