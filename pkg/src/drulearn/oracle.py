"""Exact small-scale ground truth for the worst-case risk machinery.

Solves the worst-case expected-loss linear program over a finite support,
computes exact transport distances between finitely supported distributions,
finds the smallest transport radius with a nonempty decision set, and
certifies that the stochastic dual solver attains the primal LP value.
Everything here is deterministic and exact up to simplex tolerances, which
is what makes it usable as the reference side of two-route checks.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .model import (
    N_CLASSES,
    LabeledDataset,
    TransportCost,
    UnlabeledDataset,
    both_class_losses,
    feature_distances,
    make_rng,
)
from .dual import LabelPrior, SolverConfig, sgd_solve
from .simplex import INFEASIBLE, OPTIMAL, solve_lp, solve_transportation

# slack added to the transport-budget right-hand side so feasibility does not
# flap at the boundary radius
BUDGET_SLACK = 1e-9


@dataclass(frozen=True)
class DiscreteDistribution:
    """Finitely supported distribution over labeled points."""

    features: np.ndarray
    labels: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        features = np.atleast_2d(np.asarray(self.features, dtype=float))
        labels = np.asarray(self.labels, dtype=int)
        weights = np.asarray(self.weights, dtype=float)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "weights", weights)
        n = features.shape[0]
        if labels.shape != (n,) or weights.shape != (n,):
            raise ValueError("labels and weights must match the number of atoms")
        if n == 0:
            raise ValueError("distribution needs at least one atom")
        if not np.all(np.isin(labels, (0, 1))):
            raise ValueError("labels must be 0 or 1")
        if np.any(weights < 0.0):
            raise ValueError("weights must be nonnegative")
        if abs(weights.sum() - 1.0) > 1e-12:
            raise ValueError("weights must sum to 1")

    @property
    def n(self):
        return self.features.shape[0]

    @staticmethod
    def from_dataset(data: LabeledDataset) -> "DiscreteDistribution":
        """Uniform empirical distribution of a labeled dataset."""
        return DiscreteDistribution(
            features=data.features,
            labels=data.labels,
            weights=np.full(data.n, 1.0 / data.n),
        )


@dataclass(frozen=True)
class CouplingPlan:
    """Joint mass matrix between two atom lists, with its marginals."""

    matrix: np.ndarray
    row_marginals: np.ndarray
    col_marginals: np.ndarray

    @staticmethod
    def from_matrix(matrix) -> "CouplingPlan":
        matrix = np.maximum(np.asarray(matrix, dtype=float), 0.0)
        return CouplingPlan(
            matrix=matrix,
            row_marginals=matrix.sum(axis=1),
            col_marginals=matrix.sum(axis=0),
        )


@dataclass(frozen=True)
class WorstCaseLpResult:
    """Outcome of a worst-case LP solve; value and plan exist iff optimal."""

    value: float | None
    plan: CouplingPlan | None
    status: str


def _labeled_pair_cost(features_a, labels_a, features_b, labels_b, cost: TransportCost):
    """Pairwise transport costs between two labeled atom lists."""
    dist = feature_distances(features_a, features_b)
    flip = cost.label_flip_cost * (labels_a[:, None] != labels_b[None, :])
    return dist + flip


def discrete_wasserstein(
    mu: DiscreteDistribution, nu: DiscreteDistribution, cost: TransportCost
):
    """Exact transport distance between two finitely supported distributions.

    Returns the optimal value and an optimal coupling whose marginals
    reproduce the two weight vectors.
    """
    pair = _labeled_pair_cost(mu.features, mu.labels, nu.features, nu.labels, cost)
    value, plan = solve_transportation(pair, mu.weights, nu.weights)
    return value, CouplingPlan.from_matrix(plan)


def _move_costs(support, data: LabeledDataset, cost: TransportCost):
    """Cost tensor (support point j, candidate label k, labeled atom i)."""
    support = np.atleast_2d(np.asarray(support, dtype=float))
    dist = feature_distances(support, data.features)
    flip = cost.label_flip_cost * (
        np.arange(N_CLASSES)[:, None] != data.labels[None, :]
    )
    return support, dist[:, None, :] + flip[None, :, :]


def _atom_marginal_rows(m, n_l):
    """Equality rows fixing the labeled-atom marginal of the (j,k,i) mass."""
    rows = np.zeros((n_l, m, N_CLASSES, n_l))
    for i in range(n_l):
        rows[i, :, :, i] = 1.0
    return rows.reshape(n_l, -1)


def _support_marginal_rows(m, n_l):
    """Equality rows fixing the feature marginal over the support points."""
    rows = np.zeros((m, m, N_CLASSES, n_l))
    for j in range(m):
        rows[j, j, :, :] = 1.0
    return rows.reshape(m, -1)


def _label_mass_rows(m, n_l):
    """Total-mass-per-label rows, one per class."""
    rows = np.zeros((N_CLASSES, m, N_CLASSES, n_l))
    for k in range(N_CLASSES):
        rows[k, :, k, :] = 1.0
    return rows.reshape(N_CLASSES, -1)


def _solve_mass_lp(
    objective,
    move,
    data: LabeledDataset,
    prior: LabelPrior | None,
    eps: float | None,
    with_support_marginal: bool,
    maximize: bool,
):
    """Shared LP over the joint mass variables pi[j, k, i].

    Always pins the labeled-atom marginal to uniform; optionally pins the
    support marginal to uniform, bounds per-label mass by the prior box, and
    caps the total transport cost by eps.  Returns the simplex result with
    the (sign-corrected) objective value left to the caller.
    """
    m, _, n_l = move.shape
    a_eq = [_atom_marginal_rows(m, n_l)]
    b_eq = [np.full(n_l, 1.0 / n_l)]
    if with_support_marginal:
        a_eq.append(_support_marginal_rows(m, n_l))
        b_eq.append(np.full(m, 1.0 / m))
    a_ub = []
    b_ub = []
    if eps is not None:
        a_ub.append(move.reshape(1, -1))
        b_ub.append(np.array([eps + BUDGET_SLACK]))
    if prior is not None:
        label_rows = _label_mass_rows(m, n_l)
        a_ub.append(label_rows)
        b_ub.append(prior.upper)
        a_ub.append(-label_rows)
        b_ub.append(-prior.lower)
    sign = -1.0 if maximize else 1.0
    return solve_lp(
        sign * objective.ravel(),
        a_eq=np.vstack(a_eq),
        b_eq=np.concatenate(b_eq),
        a_ub=np.vstack(a_ub) if a_ub else None,
        b_ub=np.concatenate(b_ub) if b_ub else None,
    )


def _plan_from_solution(x, m, n_l):
    """Reshape a mass vector into a (support x label, labeled atom) coupling."""
    return CouplingPlan.from_matrix(x.reshape(m * N_CLASSES, n_l))


def solve_worst_case_lp(
    theta,
    support,
    data: LabeledDataset,
    prior: LabelPrior,
    eps: float,
    cost: TransportCost,
) -> WorstCaseLpResult:
    """Exact worst-case expected logistic loss over the full decision set.

    The adversary places mass on (support point, candidate label) pairs,
    subject to: total transport cost to the labeled atoms at most `eps`,
    labeled-atom marginal uniform, support marginal uniform, and per-label
    mass inside the prior box.
    """
    theta = np.asarray(theta, dtype=float)
    support, move = _move_costs(support, data, cost)
    losses = both_class_losses(theta, support)
    objective = np.broadcast_to(losses[:, :, None], move.shape)
    result = _solve_mass_lp(objective, move, data, prior, eps, True, maximize=True)
    if result.status != OPTIMAL:
        return WorstCaseLpResult(value=None, plan=None, status=result.status)
    value = float(objective.ravel() @ result.x)
    return WorstCaseLpResult(
        value=value, plan=_plan_from_solution(result.x, support.shape[0], data.n),
        status=OPTIMAL,
    )


def ball_worst_case_lp(
    theta,
    support,
    data: LabeledDataset,
    eps: float,
    cost: TransportCost,
) -> WorstCaseLpResult:
    """Worst-case expected loss over the transport ball alone.

    Same LP as `solve_worst_case_lp` but with only the budget and the
    labeled-atom marginal — no support-marginal or label-mass constraints —
    so it lower-bounds the unconstrained-domain ball worst case from within
    the given support.
    """
    theta = np.asarray(theta, dtype=float)
    support, move = _move_costs(support, data, cost)
    losses = both_class_losses(theta, support)
    objective = np.broadcast_to(losses[:, :, None], move.shape)
    result = _solve_mass_lp(objective, move, data, None, eps, False, maximize=True)
    if result.status != OPTIMAL:
        return WorstCaseLpResult(value=None, plan=None, status=result.status)
    value = float(objective.ravel() @ result.x)
    return WorstCaseLpResult(
        value=value, plan=_plan_from_solution(result.x, support.shape[0], data.n),
        status=OPTIMAL,
    )


def min_feasible_radius(
    data: LabeledDataset,
    support,
    prior: LabelPrior,
    cost: TransportCost,
) -> float:
    """Smallest transport budget for which the decision set is nonempty.

    Minimizes the total transport cost over all mass assignments satisfying
    the marginal and label constraints; the optimum is the radius below
    which the constrained ball is empty.
    """
    support, move = _move_costs(support, data, cost)
    result = _solve_mass_lp(move, move, data, prior, None, True, maximize=False)
    if result.status != OPTIMAL:
        raise ValueError("marginal and label constraints are mutually unsatisfiable")
    return max(float(move.ravel() @ result.x), 0.0)


def min_feasible_radius_bisect(
    data: LabeledDataset,
    support,
    prior: LabelPrior,
    cost: TransportCost,
    tol: float = 1e-7,
) -> float:
    """Cross-check path: bisect the radius on worst-case-LP feasibility.

    Doubles an upper bracket until the LP reports feasible, then bisects the
    feasibility boundary to width `tol` and returns the feasible end.
    """
    zero_theta = np.zeros(data.dim)

    def feasible(eps):
        return (
            solve_worst_case_lp(zero_theta, support, data, prior, eps, cost).status
            == OPTIMAL
        )

    lo, hi = 0.0, 1.0
    while not feasible(hi):
        lo, hi = hi, 2.0 * hi
        if hi > 1e9:
            raise ValueError("no feasible radius found below 1e9")
    if feasible(lo):
        return lo
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if feasible(mid):
            hi = mid
        else:
            lo = mid
    return hi


@dataclass(frozen=True)
class DualityGapReport:
    """Primal-versus-dual comparison at one fixed classifier."""

    primal: float
    dual: float
    gap: float
    relint_violated: bool


def duality_gap_check(
    theta,
    data: LabeledDataset,
    unlabeled: UnlabeledDataset,
    prior: LabelPrior,
    eps: float,
    cost: TransportCost,
    solver_config: SolverConfig,
) -> DualityGapReport:
    """Certify strong duality at a fixed classifier.

    Solves the exact worst-case LP (with the unlabeled features as the
    support) and the stochastic dual with the weights frozen, and reports
    dual minus primal.  The gap is only guaranteed to vanish for radii
    strictly above the minimal feasible radius; at or below it the report
    carries `relint_violated=True`.
    """
    theta = np.asarray(theta, dtype=float)
    primal = solve_worst_case_lp(theta, unlabeled.features, data, prior, eps, cost)
    if primal.status != OPTIMAL:
        raise ValueError("instance infeasible at this radius; nothing to compare")
    eps0 = min_feasible_radius(data, unlabeled.features, prior, cost)
    config = replace(solver_config, radius_eps=eps)
    dual = sgd_solve(
        data, unlabeled, prior, cost, config, theta0=theta, update_theta=False
    )
    if dual.objective is None:
        raise ValueError("dual solve reported infeasible on a primal-feasible instance")
    return DualityGapReport(
        primal=primal.value,
        dual=dual.objective,
        gap=dual.objective - primal.value,
        relint_violated=eps <= eps0 + 1e-9,
    )


def feasible_distributions(
    data: LabeledDataset,
    support,
    prior: LabelPrior,
    eps: float,
    cost: TransportCost,
    count: int = 10,
    seed: int = 0,
):
    """Enumerate vertices of the decision set by optimizing random objectives.

    Each draw maximizes a random linear functional of the joint mass over
    the same constraint set as `solve_worst_case_lp`; the support marginal
    of the solution is a feasible distribution (a vertex of the decision
    set).  Returns `count` such distributions; raises if the set is empty.
    """
    support, move = _move_costs(support, data, cost)
    m, n_l = support.shape[0], data.n
    rng = make_rng(seed)
    out = []
    for _ in range(count):
        direction = rng.normal(size=(m, N_CLASSES))
        objective = np.broadcast_to(direction[:, :, None], move.shape)
        result = _solve_mass_lp(objective, move, data, prior, eps, True, maximize=True)
        if result.status == INFEASIBLE:
            raise ValueError("decision set is empty at this radius")
        mass = result.x.reshape(m, N_CLASSES, n_l).sum(axis=2)
        weights = np.maximum(mass.ravel(), 0.0)
        out.append(
            DiscreteDistribution(
                features=np.repeat(support, N_CLASSES, axis=0),
                labels=np.tile(np.arange(N_CLASSES), m),
                weights=weights / weights.sum(),
            )
        )
    return out
