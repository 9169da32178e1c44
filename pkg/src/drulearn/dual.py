"""Dual formulation of the constrained worst-case risk and its SGD solver.

The worst case over distributions that (a) stay within a transport budget of
the labeled empirical distribution and (b) satisfy marginal/label-probability
constraints admits a finite-dimensional dual: minimize, over a transport
multiplier, one potential per labeled atom, and per-class label multipliers,

    transport_mult * radius
    + mean(atom_potentials)
    + label_upper_mult @ prior.upper - label_lower_mult @ prior.lower
    + mean over unlabeled x of  max_cell(x).

Each "cell" pairs one labeled atom with one candidate label; its value is the
logistic loss at the candidate label minus the charges the multipliers levy
for moving mass there.  All solver state lives in `DualState`; the stochastic
solver samples unlabeled minibatches and descends the dual with Adam (or
plain SGD), projecting the sign-constrained multipliers back to >= 0.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .model import (
    N_CLASSES,
    LabeledDataset,
    TransportCost,
    UnlabeledDataset,
    both_class_losses,
    feature_distances,
    logistic_loss,
    loss_grad_theta,
    make_rng,
)

CONVERGED = "converged"
MAX_STEPS = "max_steps"
INFEASIBLE = "infeasible"

TRACE_FIELDS = ("step", "lr", "objective_estimate", "alpha_value", "theta_norm", "feasible")


class InfeasibleRadiusError(RuntimeError):
    """The decision set is empty: the dual is unbounded below."""


@dataclass(frozen=True)
class LabelPrior:
    """Per-class probability intervals [lower_k, upper_k] for the label marginal.

    Some probability vector must fit inside the box, i.e. lower <= upper
    elementwise, sum(lower) <= 1 <= sum(upper).
    """

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = np.asarray(self.lower, dtype=float)
        upper = np.asarray(self.upper, dtype=float)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        if lower.shape != (N_CLASSES,) or upper.shape != (N_CLASSES,):
            raise ValueError("prior bounds must have one entry per class")
        if np.any(lower < -1e-12) or np.any(upper > 1.0 + 1e-12):
            raise ValueError("prior bounds must lie in [0, 1]")
        if np.any(lower > upper + 1e-12):
            raise ValueError("lower bounds must not exceed upper bounds")
        if lower.sum() > 1.0 + 1e-12 or upper.sum() < 1.0 - 1e-12:
            raise ValueError("no probability vector fits the prior box")

    @staticmethod
    def point(probabilities) -> "LabelPrior":
        """Degenerate prior pinning the label marginal to one vector."""
        p = np.asarray(probabilities, dtype=float)
        return LabelPrior(lower=p, upper=p)

    @staticmethod
    def uninformative() -> "LabelPrior":
        """The vacuous prior [0, 1] for every class."""
        return LabelPrior(lower=np.zeros(N_CLASSES), upper=np.ones(N_CLASSES))


@dataclass(frozen=True)
class DualState:
    """One point of the dual feasible set.

    `transport_mult` prices the transport budget, `atom_potentials` hold one
    potential per labeled atom, and the label multipliers price the upper and
    lower label-probability bounds.  The sign-constrained components must be
    nonnegative.
    """

    theta: np.ndarray
    transport_mult: float
    atom_potentials: np.ndarray
    label_upper_mult: np.ndarray
    label_lower_mult: np.ndarray

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=float)
        potentials = np.asarray(self.atom_potentials, dtype=float)
        upper = np.asarray(self.label_upper_mult, dtype=float)
        lower = np.asarray(self.label_lower_mult, dtype=float)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "atom_potentials", potentials)
        object.__setattr__(self, "label_upper_mult", upper)
        object.__setattr__(self, "label_lower_mult", lower)
        if theta.ndim != 1 or potentials.ndim != 1:
            raise ValueError("theta and atom_potentials must be vectors")
        if upper.shape != (N_CLASSES,) or lower.shape != (N_CLASSES,):
            raise ValueError("label multipliers must have one entry per class")
        if self.transport_mult < 0.0:
            raise ValueError("transport_mult must be nonnegative")
        if np.any(upper < 0.0) or np.any(lower < 0.0):
            raise ValueError("label multipliers must be nonnegative")

    @staticmethod
    def zeros(dim, n_labeled) -> "DualState":
        return DualState(
            theta=np.zeros(dim),
            transport_mult=0.0,
            atom_potentials=np.zeros(n_labeled),
            label_upper_mult=np.zeros(N_CLASSES),
            label_lower_mult=np.zeros(N_CLASSES),
        )


@dataclass(frozen=True)
class Cell:
    """One (labeled atom, candidate label) pair of the inner maximization."""

    atom_index: int
    label_index: int


@dataclass(frozen=True)
class DualSubgradient:
    """Subgradient of the per-point inner maximum at one unlabeled point."""

    theta: np.ndarray
    transport_mult: float
    atom_potentials: np.ndarray
    label_upper_mult: np.ndarray
    label_lower_mult: np.ndarray


@dataclass(frozen=True)
class SolverConfig:
    """Settings for the stochastic dual solver.

    `radius_eps` is the transport budget; the learning rate starts at
    `step_size` and is divided by `lr_decay_factor` every `lr_decay_every`
    steps.  The run stops once consecutive non-overlapping windows of
    `convergence_window` objective estimates agree to `convergence_tol`,
    or at `max_steps`.  An estimate falling below `objective_floor` (or the
    transport multiplier exceeding `alpha_ceiling`) is reported as an
    infeasible/unbounded instance.  With `tail_average` on, the returned
    state is the better of the final iterate and the mean of the last
    window of iterates — both are feasible dual points, so either value is
    a valid objective.  `trace_path`, when set, receives the iteration log
    as CSV.
    """

    radius_eps: float
    step_size: float = 0.1
    batch_size: int = 100
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    lr_decay_factor: float = 8.0
    lr_decay_every: int = 10000
    max_steps: int = 200000
    seed: int = 0
    convergence_tol: float = 1e-4
    convergence_window: int = 1000
    use_adam: bool = True
    tail_average: bool = True
    objective_floor: float = -1e6
    alpha_ceiling: float = 1e6
    trace_path: str | None = None
    trace_every: int = 100

    def __post_init__(self):
        if self.radius_eps < 0.0:
            raise ValueError("radius_eps must be nonnegative")
        if self.step_size <= 0.0:
            raise ValueError("step_size must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if not (0.0 < self.adam_beta1 < 1.0 and 0.0 < self.adam_beta2 < 1.0):
            raise ValueError("adam betas must lie strictly between 0 and 1")
        if self.lr_decay_every < 1 or self.convergence_window < 1:
            raise ValueError("decay and convergence intervals must be positive")
        if self.max_steps < 1:
            raise ValueError("max_steps must be positive")
        if self.convergence_tol <= 0.0:
            raise ValueError("convergence_tol must be positive")


@dataclass(frozen=True)
class SolveResult:
    """Outcome of one stochastic dual solve.

    `status` is "converged", "max_steps", or "infeasible"; `state` and
    `objective` are None exactly when the instance was flagged infeasible.
    `trace` rows are (step, lr, objective_estimate, alpha_value, theta_norm,
    feasible).
    """

    status: str
    state: DualState | None
    objective: float | None
    trace: list = field(default_factory=list)


def _pair_costs(data: LabeledDataset, features, cost: TransportCost):
    """Transport cost from every (feature row, candidate label) to every atom.

    Returns an (n, n_labeled, 2) tensor: Euclidean feature distance plus the
    flip cost whenever the candidate label differs from the atom's label.
    """
    dist = feature_distances(features, data.features)
    flip = cost.label_flip_cost * (
        np.arange(N_CLASSES)[None, :] != data.labels[:, None]
    )
    return dist[:, :, None] + flip[None, :, :]


def _loss_table(theta, features, payoff):
    """Per-point, per-candidate-label payoffs: logistic losses unless overridden."""
    if payoff is not None:
        return np.asarray(payoff, dtype=float)
    return both_class_losses(theta, features)


def _cell_tensor(loss_table, pair_costs, alpha, potentials, net_label_mult):
    """Cell values for a block of points: (n, n_labeled, 2)."""
    return (
        loss_table[:, None, :]
        - alpha * pair_costs
        - potentials[None, :, None]
        - net_label_mult[None, None, :]
    )


def _max_cells(cells):
    """Rowwise maximum cell and its first (atom-major) maximizer."""
    n = cells.shape[0]
    flat = cells.reshape(n, -1)
    arg = np.argmax(flat, axis=1)
    values = flat[np.arange(n), arg]
    return values, arg // N_CLASSES, arg % N_CLASSES


def cell_value(x, cell: Cell, state: DualState, data: LabeledDataset, cost: TransportCost):
    """Value of one cell at one point: loss at the candidate label minus charges."""
    i, k = cell.atom_index, cell.label_index
    if not 0 <= i < data.n:
        raise IndexError("atom index out of range")
    if not 0 <= k < N_CLASSES:
        raise IndexError("label index out of range")
    move = float(np.linalg.norm(np.asarray(x, dtype=float) - data.features[i]))
    if k != data.labels[i]:
        move += cost.label_flip_cost
    # evaluation order mirrors the vectorized cell tensor so that scalar and
    # batched paths agree to the last bit
    return (
        logistic_loss(state.theta, x, k)
        - state.transport_mult * move
        - state.atom_potentials[i]
        - (state.label_upper_mult[k] - state.label_lower_mult[k])
    )


def max_cell(x, state: DualState, data: LabeledDataset, cost: TransportCost):
    """Maximum cell value at one point and its first maximizing cell.

    Ties are broken by exact comparison toward the lowest (atom, label)
    pair, atom-major, so repeated runs pick the same cell.
    """
    x = np.asarray(x, dtype=float)
    pair = _pair_costs(data, x[None, :], cost)
    table = _loss_table(state.theta, x[None, :], None)
    cells = _cell_tensor(
        table,
        pair,
        state.transport_mult,
        state.atom_potentials,
        state.label_upper_mult - state.label_lower_mult,
    )
    _, atom, label = _max_cells(cells)
    cell = Cell(int(atom[0]), int(label[0]))
    # re-evaluate through the scalar path so the returned value equals
    # cell_value at the returned cell exactly
    return cell_value(x, cell, state, data, cost), cell


def cell_subgradients(x, state: DualState, data: LabeledDataset, cost: TransportCost):
    """Subgradient of the inner maximum at one point.

    Evaluated at the maximizing cell (i*, k*): the transport-multiplier
    component is minus the transport cost into atom i* with label k*, the
    atom-potential component is -1 at i*, the label-multiplier components
    are -1 (upper) and +1 (lower) at k*, and the weight component is the
    logistic loss gradient at candidate label k*.
    """
    x = np.asarray(x, dtype=float)
    _, cell = max_cell(x, state, data, cost)
    i, k = cell.atom_index, cell.label_index
    move = float(np.linalg.norm(x - data.features[i]))
    if k != data.labels[i]:
        move += cost.label_flip_cost
    grad_potentials = np.zeros(data.n)
    grad_potentials[i] = -1.0
    grad_upper = np.zeros(N_CLASSES)
    grad_upper[k] = -1.0
    return DualSubgradient(
        theta=loss_grad_theta(state.theta, x, k),
        transport_mult=-move,
        atom_potentials=grad_potentials,
        label_upper_mult=grad_upper,
        label_lower_mult=-grad_upper,
    )


def _linear_part(alpha, potentials, upper_mult, lower_mult, prior, eps):
    return (
        alpha * eps
        + potentials.mean()
        + upper_mult @ prior.upper
        - lower_mult @ prior.lower
    )


def max_cell_values(state: DualState, data: LabeledDataset, features, cost: TransportCost):
    """Per-point inner maxima over all cells, for a block of feature rows."""
    features = np.atleast_2d(np.asarray(features, dtype=float))
    pair = _pair_costs(data, features, cost)
    table = _loss_table(state.theta, features, None)
    cells = _cell_tensor(
        table,
        pair,
        state.transport_mult,
        state.atom_potentials,
        state.label_upper_mult - state.label_lower_mult,
    )
    values, _, _ = _max_cells(cells)
    return values


def dual_objective(
    state: DualState,
    data: LabeledDataset,
    unlabeled: UnlabeledDataset,
    prior: LabelPrior,
    eps: float,
    cost: TransportCost,
):
    """Full-sample dual objective: linear multiplier terms plus mean max cell."""
    values = max_cell_values(state, data, unlabeled.features, cost)
    return float(
        _linear_part(
            state.transport_mult,
            state.atom_potentials,
            state.label_upper_mult,
            state.label_lower_mult,
            prior,
            eps,
        )
        + values.mean()
    )


def _unpack(params, dim, n_labeled):
    theta = params[:dim]
    alpha = params[dim]
    potentials = params[dim + 1 : dim + 1 + n_labeled]
    upper = params[dim + 1 + n_labeled : dim + 1 + n_labeled + N_CLASSES]
    lower = params[dim + 1 + n_labeled + N_CLASSES :]
    return theta, alpha, potentials, upper, lower


def _state_from_params(params, dim, n_labeled):
    theta, alpha, potentials, upper, lower = _unpack(params, dim, n_labeled)
    return DualState(
        theta=theta.copy(),
        transport_mult=float(alpha),
        atom_potentials=potentials.copy(),
        label_upper_mult=upper.copy(),
        label_lower_mult=lower.copy(),
    )


def _objective_of_params(params, dim, data, unlabeled_features, payoff, pair, prior, eps):
    theta, alpha, potentials, upper, lower = _unpack(params, dim, data.n)
    table = _loss_table(theta, unlabeled_features, payoff)
    cells = _cell_tensor(table, pair, alpha, potentials, upper - lower)
    values, _, _ = _max_cells(cells)
    return float(_linear_part(alpha, potentials, upper, lower, prior, eps) + values.mean())


def sgd_solve(
    data: LabeledDataset,
    unlabeled: UnlabeledDataset,
    prior: LabelPrior,
    cost: TransportCost,
    config: SolverConfig,
    theta0=None,
    update_theta: bool = True,
    payoff=None,
):
    """Minimize the dual objective by projected stochastic subgradient steps.

    Each step draws `batch_size` unlabeled points uniformly with replacement,
    forms the batch-mean subgradient (deterministic linear terms plus the
    active-cell terms), applies an Adam or plain-SGD update, and clamps the
    sign-constrained multipliers at zero.  `update_theta` toggles descent in
    the weights; with it off the solve prices a fixed classifier.  `payoff`
    optionally replaces the logistic-loss table with a fixed (n_unlabeled, 2)
    payoff table, in which case the weights are never updated.

    Returns a `SolveResult`; an unbounded-below run (objective estimate under
    `objective_floor`, or a diverging transport multiplier) yields status
    "infeasible" with no state.
    """
    n_l, dim = data.n, data.dim
    n_u = unlabeled.n
    eps = config.radius_eps
    if payoff is not None:
        payoff = np.asarray(payoff, dtype=float)
        if payoff.shape != (n_u, N_CLASSES):
            raise ValueError("payoff table must be (n_unlabeled, n_classes)")
        update_theta = False

    pair = _pair_costs(data, unlabeled.features, cost)
    n_params = dim + 1 + n_l + 2 * N_CLASSES
    params = np.zeros(n_params)
    if theta0 is not None:
        params[:dim] = np.asarray(theta0, dtype=float)

    moment1 = np.zeros(n_params)
    moment2 = np.zeros(n_params)
    alpha_at = dim
    upper_sl = slice(dim + 1 + n_l, dim + 1 + n_l + N_CLASSES)
    lower_sl = slice(dim + 1 + n_l + N_CLASSES, n_params)

    rng = make_rng(config.seed)
    trace = []
    estimates = []
    prev_window_mean = None
    status = MAX_STEPS
    tail_sum = np.zeros(n_params)
    tail_count = 0

    for step in range(config.max_steps):
        lr = config.step_size / config.lr_decay_factor ** (step // config.lr_decay_every)
        idx = rng.integers(0, n_u, size=config.batch_size)
        batch = unlabeled.features[idx]
        theta, alpha, potentials, upper, lower = _unpack(params, dim, n_l)
        table = _loss_table(theta, batch, None if payoff is None else payoff[idx])
        cells = _cell_tensor(table, pair[idx], alpha, potentials, upper - lower)
        values, atom_star, label_star = _max_cells(cells)
        estimate = float(
            _linear_part(alpha, potentials, upper, lower, prior, eps) + values.mean()
        )
        estimates.append(estimate)

        feasible = estimate >= config.objective_floor and alpha <= config.alpha_ceiling
        if step % config.trace_every == 0 or not feasible:
            trace.append(
                (step, lr, estimate, float(alpha), float(np.linalg.norm(theta)), feasible)
            )
        if not feasible:
            status = INFEASIBLE
            break

        grad = np.zeros(n_params)
        if update_theta:
            grad[:dim] = loss_grad_theta(theta, batch, label_star).mean(axis=0)
        moved = pair[idx][np.arange(config.batch_size), atom_star, label_star]
        grad[alpha_at] = eps - moved.mean()
        atom_freq = np.bincount(atom_star, minlength=n_l) / config.batch_size
        grad[dim + 1 : dim + 1 + n_l] = 1.0 / n_l - atom_freq
        label_freq = np.bincount(label_star, minlength=N_CLASSES) / config.batch_size
        grad[upper_sl] = prior.upper - label_freq
        grad[lower_sl] = label_freq - prior.lower

        if config.use_adam:
            moment1 = config.adam_beta1 * moment1 + (1.0 - config.adam_beta1) * grad
            moment2 = config.adam_beta2 * moment2 + (1.0 - config.adam_beta2) * grad**2
            corrected1 = moment1 / (1.0 - config.adam_beta1 ** (step + 1))
            corrected2 = moment2 / (1.0 - config.adam_beta2 ** (step + 1))
            params = params - lr * corrected1 / (np.sqrt(corrected2) + config.adam_epsilon)
        else:
            params = params - lr * grad
        params[alpha_at] = max(params[alpha_at], 0.0)
        params[upper_sl] = np.maximum(params[upper_sl], 0.0)
        params[lower_sl] = np.maximum(params[lower_sl], 0.0)

        tail_sum += params
        tail_count += 1
        if tail_count > config.convergence_window:
            # restart the tail accumulator at window boundaries so the final
            # average spans at most the most recent window of iterates
            tail_sum = params.copy()
            tail_count = 1

        if (step + 1) % config.convergence_window == 0:
            window_mean = float(np.mean(estimates[-config.convergence_window :]))
            if (
                prev_window_mean is not None
                and abs(window_mean - prev_window_mean) < config.convergence_tol
            ):
                status = CONVERGED
                break
            prev_window_mean = window_mean

    if status == INFEASIBLE:
        result = SolveResult(INFEASIBLE, None, None, trace)
    else:
        final_value = _objective_of_params(
            params, dim, data, unlabeled.features, payoff, pair, prior, eps
        )
        best_params, best_value = params, final_value
        if config.tail_average and tail_count > 0:
            averaged = tail_sum / tail_count
            averaged_value = _objective_of_params(
                averaged, dim, data, unlabeled.features, payoff, pair, prior, eps
            )
            if averaged_value < best_value:
                best_params, best_value = averaged, averaged_value
        result = SolveResult(
            status, _state_from_params(best_params, dim, n_l), best_value, trace
        )

    if config.trace_path is not None:
        with open(config.trace_path, "w", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(TRACE_FIELDS)
            writer.writerows(trace)
    return result


def train_dru(
    data: LabeledDataset,
    unlabeled: UnlabeledDataset,
    prior: LabelPrior,
    cost: TransportCost,
    config: SolverConfig,
    theta0=None,
):
    """Train the distributionally robust classifier: descend weights and duals jointly.

    Returns the trained weight vector.  Raises `InfeasibleRadiusError` when
    the solve reports an empty decision set (radius below the minimal
    feasible radius for the given prior).
    """
    result = sgd_solve(data, unlabeled, prior, cost, config, theta0, update_theta=True)
    if result.status == INFEASIBLE:
        raise InfeasibleRadiusError(
            "dual unbounded below: transport radius too small for the prior"
        )
    return result.state.theta
