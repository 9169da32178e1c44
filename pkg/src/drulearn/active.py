"""Model-change active learning with a distributionally-robust scoring option.

Strategies score each unlabeled candidate by how much acquiring its label
would change the fitted model; the robust variants price the score against
the worst label distribution the decision set allows instead of trusting the
current model's posterior.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np

from .bounds import make_prior, prior_feasible_radius
from .dual import (
    InfeasibleRadiusError,
    LabelPrior,
    SolverConfig,
    INFEASIBLE,
    sgd_solve,
)
from .model import (
    LabeledDataset,
    TransportCost,
    UnlabeledDataset,
    logistic_loss,
    logistic_predict,
    loss_grad_theta,
    make_rng,
)

RANDOM = "random"
EMC = "emc"
MIN_MC = "min_mc"
MAX_MC = "max_mc"
DR_STRONG = "dr_strong"
DR_WEAK = "dr_weak"
STRATEGY_KINDS = (RANDOM, EMC, MIN_MC, MAX_MC, DR_STRONG, DR_WEAK)

GRADIENT_TOL = 1e-6
NEWTON_MAX_ITER = 100

CURVE_REPORT_FIELDS = ("strategy", "trial", "n_labeled", "likelihood")
AULC_REPORT_FIELDS = ("strategy", "median_aulc")


@dataclasses.dataclass(frozen=True)
class StrategyConfig:
    """Which acquisition rule to run and its knobs."""

    kind: str
    candidate_subsample: int = 100
    ridge_gamma: float = 0.001
    delta_margin: float = 1e-3
    seed: int = 0
    mc_include_norm: bool = False

    def __post_init__(self):
        if self.kind not in STRATEGY_KINDS:
            raise ValueError(f"unknown strategy kind {self.kind!r}")
        if self.candidate_subsample < 1:
            raise ValueError("candidate_subsample must be at least 1")
        if self.ridge_gamma < 0:
            raise ValueError("ridge_gamma must be nonnegative")
        if self.delta_margin <= 0:
            raise ValueError("delta_margin must be positive")


@dataclasses.dataclass(frozen=True)
class ActiveState:
    """Labeled set, the remaining pool with its held-back labels, and history."""

    labeled: LabeledDataset
    pool_features: np.ndarray
    pool_labels: np.ndarray
    theta: np.ndarray | None = None
    history: tuple = ()

    def __post_init__(self):
        features = np.asarray(self.pool_features, dtype=float)
        labels = np.asarray(self.pool_labels)
        object.__setattr__(self, "pool_features", features)
        object.__setattr__(self, "pool_labels", labels)
        if features.ndim != 2 or len(features) != len(labels):
            raise ValueError("pool features and labels must align")
        if features.shape[1] != self.labeled.dim:
            raise ValueError("pool and labeled feature dimensions differ")
        counts = [n for n, _ in self.history]
        if any(b <= a for a, b in zip(counts, counts[1:])):
            raise ValueError("history must be strictly increasing in n_labeled")

    @property
    def pool_size(self) -> int:
        return len(self.pool_features)


def initial_state(data: LabeledDataset, n_initial: int, seed: int) -> ActiveState:
    """Split off a uniformly chosen starting labeled set; the rest is the pool.

    The split depends only on the seed, so every strategy run from the same
    seed starts from the identical labeled set.
    """
    if not 0 < n_initial <= data.n:
        raise ValueError("n_initial must be in (0, dataset size]")
    rng = make_rng(seed)
    chosen = np.sort(rng.choice(data.n, size=n_initial, replace=False))
    mask = np.zeros(data.n, dtype=bool)
    mask[chosen] = True
    labeled = LabeledDataset(data.features[mask], data.labels[mask])
    return ActiveState(
        labeled=labeled,
        pool_features=data.features[~mask],
        pool_labels=data.labels[~mask],
    )


def erm_train_l2(data: LabeledDataset, ridge_gamma: float) -> np.ndarray:
    """Ridge-regularized logistic fit by damped Newton to tight stationarity.

    Minimizes mean logistic loss plus ``ridge_gamma * |theta|^2`` (the whole
    vector, intercept included) until the gradient norm is at most 1e-6.
    """
    if ridge_gamma < 0:
        raise ValueError("ridge_gamma must be nonnegative")
    features = data.features
    n, dim = features.shape
    theta = np.zeros(dim)

    def objective(candidate):
        return float(
            np.mean(logistic_loss(candidate, features, data.labels))
            + ridge_gamma * candidate @ candidate
        )

    value = objective(theta)
    for _ in range(NEWTON_MAX_ITER):
        gradient = loss_grad_theta(theta, features, data.labels).mean(
            axis=0
        ) + 2.0 * ridge_gamma * theta
        if np.linalg.norm(gradient) <= GRADIENT_TOL:
            return theta
        p = logistic_predict(theta, features)
        weights = p * (1.0 - p)
        hessian = (features.T * weights) @ features / n + 2.0 * ridge_gamma * np.eye(
            dim
        )
        try:
            direction = np.linalg.solve(hessian, -gradient)
        except np.linalg.LinAlgError as error:
            raise RuntimeError(
                "ridge logistic fit hit a singular step; the objective is "
                "likely unbounded without regularization"
            ) from error
        slope = float(gradient @ direction)
        step = 1.0
        for _ in range(60):
            candidate = theta + step * direction
            candidate_value = objective(candidate)
            if candidate_value <= value + 1e-4 * step * slope:
                break
            step *= 0.5
        theta = theta + step * direction
        value = objective(theta)
    gradient = loss_grad_theta(theta, features, data.labels).mean(
        axis=0
    ) + 2.0 * ridge_gamma * theta
    if np.linalg.norm(gradient) <= GRADIENT_TOL:
        return theta
    raise RuntimeError(
        "ridge logistic fit did not reach the gradient tolerance "
        f"(|grad| = {np.linalg.norm(gradient):.3e})"
    )


def impact_gradient_norm(theta, x, y) -> float:
    """Norm of the parameter-gradient a label observation would induce."""
    return float(np.linalg.norm(loss_grad_theta(theta, np.asarray(x, float), y)))


def score_emc(theta, x) -> float:
    """Expected model change: the posterior-weighted mean impact at x."""
    x = np.asarray(x, dtype=float)
    m = float(x @ np.asarray(theta, dtype=float))
    return 2.0 * float(np.linalg.norm(x)) / ((1.0 + math.exp(-m)) * (1.0 + math.exp(m)))


def score_min_mc(theta, x, include_norm: bool = False) -> float:
    """Conservative model change: the smaller of the two class posteriors.

    ``include_norm`` additionally scales by the feature norm, matching the
    gradient-norm impact instead of the bare posterior form.
    """
    x = np.asarray(x, dtype=float)
    m = float(x @ np.asarray(theta, dtype=float))
    value = min(1.0 / (1.0 + math.exp(-m)), 1.0 / (1.0 + math.exp(m)))
    if include_norm:
        value *= float(np.linalg.norm(x))
    return value


def score_max_mc(theta, x, include_norm: bool = False) -> float:
    """Optimistic model change: the larger of the two class posteriors."""
    x = np.asarray(x, dtype=float)
    m = float(x @ np.asarray(theta, dtype=float))
    value = max(1.0 / (1.0 + math.exp(-m)), 1.0 / (1.0 + math.exp(m)))
    if include_norm:
        value *= float(np.linalg.norm(x))
    return value


def score_dr(
    x_star,
    data: LabeledDataset,
    unlabeled: UnlabeledDataset,
    prior: LabelPrior,
    eps: float,
    cost: TransportCost,
    theta,
    config: SolverConfig,
) -> float:
    """Worst-case expected impact of labeling x_star over the decision set.

    Prices a payoff that rewards only mass sitting on x_star, weighted by the
    impact its label would have, through the same dual machinery that trains
    the robust model (weights held fixed). The result lower-bounds the
    expected impact under every distribution the decision set allows.
    """
    x_star = np.asarray(x_star, dtype=float)
    matches = np.flatnonzero((unlabeled.features == x_star).all(axis=1))
    if matches.size == 0:
        raise ValueError("x_star must be one of the unlabeled points")
    target = int(matches[0])
    payoff = np.zeros((unlabeled.n, 2))
    for label in (0, 1):
        payoff[target, label] = -unlabeled.n * impact_gradient_norm(
            theta, x_star, label
        )
    config = dataclasses.replace(config, radius_eps=float(eps))
    result = sgd_solve(data, unlabeled, prior, cost, config, theta0=theta,
                       payoff=payoff)
    if result.status == INFEASIBLE:
        raise InfeasibleRadiusError(
            "decision set is empty at the requested radius"
        )
    return -result.objective


def _dr_prior_and_radius(state, strategy, pool, cost, class_share):
    """The per-step prior and radius for the robust strategies."""
    if strategy.kind == DR_STRONG:
        prior = make_prior(
            state.labeled, mode="strong",
            probabilities=(1.0 - class_share, class_share),
        )
    else:
        prior = make_prior(state.labeled, mode="weak")
    base = prior_feasible_radius(state.labeled, pool, prior, cost)
    return prior, base + strategy.delta_margin


def select_next(
    state: ActiveState,
    strategy: StrategyConfig,
    rng,
    cost: TransportCost | None = None,
    solver_config: SolverConfig | None = None,
    class_share: float | None = None,
) -> int:
    """Pick the pool index to label next under the given strategy.

    Score-based strategies break exact ties toward the lowest pool index; the
    robust ones score a random candidate subsample instead of the whole pool.
    ``class_share`` feeds the strong-prior robust variant; it defaults to the
    share of positives among everything the run can see.
    """
    if state.pool_size == 0:
        raise ValueError("pool is empty")
    if strategy.kind == RANDOM:
        return int(rng.integers(0, state.pool_size))
    theta = state.theta
    if theta is None:
        raise ValueError("state has no trained parameters to score with")
    if strategy.kind in (EMC, MIN_MC, MAX_MC):
        if strategy.kind == EMC:
            scores = [score_emc(theta, x) for x in state.pool_features]
        elif strategy.kind == MIN_MC:
            scores = [
                score_min_mc(theta, x, strategy.mc_include_norm)
                for x in state.pool_features
            ]
        else:
            scores = [
                score_max_mc(theta, x, strategy.mc_include_norm)
                for x in state.pool_features
            ]
        return int(np.argmax(scores))
    # robust variants: subsample candidates, price each against the worst
    # label distribution, and take the best worst-case impact
    cost = cost if cost is not None else TransportCost()
    if solver_config is None:
        solver_config = SolverConfig(
            radius_eps=1.0,
            lr_decay_factor=10.0,
            lr_decay_every=5000,
            max_steps=10000,
        )
    if class_share is None:
        seen = np.concatenate([state.labeled.labels, state.pool_labels])
        class_share = float(np.mean(seen))
    size = min(strategy.candidate_subsample, state.pool_size)
    candidates = np.sort(rng.choice(state.pool_size, size=size, replace=False))
    pool = UnlabeledDataset(state.pool_features)
    prior, eps = _dr_prior_and_radius(state, strategy, pool, cost, class_share)
    scores = [
        score_dr(
            state.pool_features[j],
            state.labeled,
            pool,
            prior,
            eps,
            cost,
            theta,
            solver_config,
        )
        for j in candidates
    ]
    return int(candidates[int(np.argmax(scores))])


def evaluation_likelihood(theta, data: LabeledDataset) -> float:
    """Geometric-mean per-sample likelihood of the data under the model."""
    return math.exp(-float(np.mean(logistic_loss(theta, data.features, data.labels))))


def run_active_loop(
    initial: ActiveState,
    strategy: StrategyConfig,
    eval_data: LabeledDataset,
    stop_at: int,
    cost: TransportCost | None = None,
    solver_config: SolverConfig | None = None,
) -> ActiveState:
    """Acquire labels one at a time until the labeled set reaches stop_at.

    Each round fits the ridge model, records the evaluation likelihood,
    selects a pool point, and moves it (with its held-back label) into the
    labeled set; one final fit is recorded at stop_at. Returns the finished
    state with the full likelihood curve in its history.
    """
    if stop_at <= initial.labeled.n:
        raise ValueError("stop_at must exceed the initial labeled size")
    if stop_at > initial.labeled.n + initial.pool_size:
        raise ValueError("pool too small to reach stop_at")
    rng = make_rng(strategy.seed)
    state = initial
    class_share = float(
        np.mean(np.concatenate([initial.labeled.labels, initial.pool_labels]))
    )
    while True:
        theta = erm_train_l2(state.labeled, strategy.ridge_gamma)
        history = state.history + (
            (state.labeled.n, evaluation_likelihood(theta, eval_data)),
        )
        state = dataclasses.replace(state, theta=theta, history=history)
        if state.labeled.n >= stop_at:
            return state
        chosen = select_next(
            state, strategy, rng, cost=cost, solver_config=solver_config,
            class_share=class_share,
        )
        keep = np.ones(state.pool_size, dtype=bool)
        keep[chosen] = False
        labeled = LabeledDataset(
            np.vstack([state.labeled.features, state.pool_features[chosen]]),
            np.append(state.labeled.labels, state.pool_labels[chosen]),
        )
        state = dataclasses.replace(
            state,
            labeled=labeled,
            pool_features=state.pool_features[keep],
            pool_labels=state.pool_labels[keep],
        )


def aulc(curve) -> float:
    """Area under the likelihood curve, scaled so a constant L reads 100*L."""
    points = list(curve)
    if len(points) < 2:
        raise ValueError("need at least two curve points")
    counts = np.asarray([n for n, _ in points], dtype=float)
    values = np.asarray([value for _, value in points], dtype=float)
    if np.any(np.diff(counts) <= 0):
        raise ValueError("curve points must be strictly increasing in n")
    area = float(np.trapezoid(values, counts))
    return 100.0 * area / float(counts[-1] - counts[0])


def curve_report_rows(strategy_kind: str, trial: int, history):
    """Rows for the per-trial likelihood curve, keyed by CURVE_REPORT_FIELDS."""
    return [
        {
            "strategy": strategy_kind,
            "trial": int(trial),
            "n_labeled": int(n),
            "likelihood": float(value),
        }
        for n, value in history
    ]


def aulc_report_rows(aulc_by_strategy: dict):
    """One row per strategy with the median AULC across its trials."""
    rows = []
    for kind in sorted(aulc_by_strategy):
        values = np.asarray(aulc_by_strategy[kind], dtype=float)
        rows.append({"strategy": kind, "median_aulc": float(np.median(values))})
    return rows
