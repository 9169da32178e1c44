"""Command-line surface: one subcommand per training routine or experiment.

Every subcommand reads a flat config file, applies the targeted overrides,
runs deterministically from the configured seed, and writes CSV results plus
a ``<output>.meta`` sidecar recording the resolved configuration and any
per-trial errors. Exit codes: 0 success, 1 usage/configuration error,
2 infeasible instance, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import os
import sys

import numpy as np

from .active import (
    StrategyConfig,
    aulc,
    aulc_report_rows,
    curve_report_rows,
    initial_state,
    run_active_loop,
)
from .baseline import (
    SWEEP_REPORT_FIELDS,
    DivergenceError,
    baseline_train,
    robustness_sweep,
    sweep_report_rows,
)
from .bounds import (
    BOUND_REPORT_FIELDS,
    PRIOR_STRONG,
    bound_report_row,
    make_prior,
    performance_bound,
    prior_feasible_radius,
    select_radius,
)
from .config import (
    EXPERIMENT_KINDS,
    KIND_ACTIVE,
    KIND_BOUND_VS_NL,
    KIND_CONF_VS_NL,
    KIND_ORACLE_CHECK,
    KIND_RADIUS_SWEEP,
    KIND_ROBUSTNESS_SWEEP,
    ConfigError,
    ExperimentConfig,
    config_items,
    load_config,
)
from .data import (
    RawTable,
    append_intercept,
    load_csv,
    sample_split,
    standardize,
    synthetic_two_gaussians,
)
from .dual import (
    INFEASIBLE,
    DualState,
    InfeasibleRadiusError,
    LabelPrior,
    sgd_solve,
)
from .model import (
    LabeledDataset,
    TransportCost,
    UnlabeledDataset,
    confidence,
    make_rng,
)
from .oracle import (
    DiscreteDistribution,
    discrete_wasserstein,
    duality_gap_check,
    min_feasible_radius,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INFEASIBLE = 2
EXIT_NUMERICAL = 3

GAP_TOLERANCE = 1e-3


# ---------------------------------------------------------------------------
# Instance assembly


@dataclasses.dataclass(frozen=True)
class Instance:
    """Everything one run needs: the split, the prior, and the geometry."""

    table: RawTable
    labeled: LabeledDataset
    unlabeled: UnlabeledDataset | None
    full: DiscreteDistribution
    prior: LabelPrior
    cost: TransportCost


def _load_table(config: ExperimentConfig) -> RawTable:
    if config.dataset:
        table = load_csv(config.dataset, config.label_column, config.positive_label)
    else:
        table = synthetic_two_gaussians(
            config.synthetic_n,
            seed=config.seed,
            separation=config.synthetic_separation,
            noise=config.synthetic_noise,
        )
    if config.standardize:
        table, _ = standardize(table)
    return append_intercept(table)


def _build_instance(
    config: ExperimentConfig,
    table: RawTable,
    split_seed: int,
    n_labeled: int | None = None,
) -> Instance:
    n_labeled = config.n_labeled if n_labeled is None else n_labeled
    labeled, unlabeled, full = sample_split(
        table, n_labeled, split_seed, config.unlabeled_mode
    )
    if config.prior_mode == PRIOR_STRONG:
        share = (
            table.positive_share
            if config.prior_positive_share is None
            else config.prior_positive_share
        )
        prior = make_prior(
            labeled, PRIOR_STRONG, probabilities=(1.0 - share, share)
        )
    else:
        prior = make_prior(labeled, config.prior_mode, level=config.prior_level)
    cost = TransportCost(label_flip_cost=config.label_flip_cost)
    return Instance(table, labeled, unlabeled, full, prior, cost)


def _require_unlabeled(instance: Instance):
    if instance.unlabeled is None:
        raise ValueError(
            "the unlabeled remainder is empty; use unlabeled_mode=full or a "
            "smaller n_labeled"
        )
    return instance.unlabeled


def _resolve_eps(config: ExperimentConfig, instance: Instance) -> float:
    """Explicit radius if given, otherwise run the configured policy."""
    if config.eps is not None:
        return config.eps
    unlabeled = _require_unlabeled(instance)
    selection = select_radius(
        config.radius_selection(),
        instance.labeled,
        unlabeled,
        instance.prior,
        instance.cost,
        solver_config=config.solver_config(1.0),
        full_data=LabeledDataset(instance.table.features, instance.table.labels),
    )
    return selection.eps


def _median_confidence(theta, features) -> float:
    return float(np.median(confidence(theta, features)))


# ---------------------------------------------------------------------------
# Output writing


def _render_cell(value) -> str:
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return str(value)


def _write_csv(path: str, fieldnames, rows):
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(list(fieldnames))
        for row in rows:
            writer.writerow([_render_cell(row[name]) for name in fieldnames])


def _write_metadata(config: ExperimentConfig, command: str, errors):
    items = config_items(config)
    items.append(("command", command))
    for trial, error in errors:
        items.append((f"error_trial_{trial}", str(error).replace("\n", " ")))
    items.sort(key=lambda pair: pair[0])
    with open(config.output + ".meta", "w", newline="") as handle:
        for key, value in items:
            handle.write(f"{key}={value}\n")


def _aulc_output_path(output: str) -> str:
    root, extension = os.path.splitext(output)
    return f"{root}_aulc{extension or '.csv'}"


def _finish(config, command, rows_written: int, errors):
    """Record the run; if nothing succeeded, surface the first failure."""
    _write_metadata(config, command, errors)
    if errors and rows_written == 0:
        raise errors[0][1]


# ---------------------------------------------------------------------------
# One-shot subcommands


def _theta_columns(theta):
    return {f"theta_{j}": float(value) for j, value in enumerate(theta)}


def _run_train_dru(config: ExperimentConfig) -> int:
    table = _load_table(config)
    instance = _build_instance(config, table, config.seed)
    unlabeled = _require_unlabeled(instance)
    eps = _resolve_eps(config, instance)
    result = sgd_solve(
        instance.labeled,
        unlabeled,
        instance.prior,
        instance.cost,
        config.solver_config(eps),
    )
    if result.status == INFEASIBLE:
        _write_metadata(config, "train-dru", [])
        raise InfeasibleRadiusError(
            "dual unbounded below: transport radius too small for the prior"
        )
    bound = performance_bound(
        result.state,
        instance.labeled,
        unlabeled,
        instance.prior,
        eps,
        instance.cost,
        z_score=config.z_score,
    )
    theta = result.state.theta
    row = {
        "seed": config.seed,
        "n_labeled": instance.labeled.n,
        "eps": float(eps),
        "status": result.status,
        "objective": float(result.objective),
        "median_confidence": _median_confidence(theta, unlabeled.features),
        **bound_report_row(eps, bound, _median_confidence(theta, unlabeled.features)),
        **_theta_columns(theta),
    }
    fieldnames = (
        ["seed", "n_labeled", "status", "objective"]
        + list(BOUND_REPORT_FIELDS)
        + ["median_confidence"]
    )
    fieldnames = list(dict.fromkeys(fieldnames)) + sorted(
        key for key in row if key.startswith("theta_")
    )
    _write_csv(config.output, fieldnames, [row])
    _write_metadata(config, "train-dru", [])
    return EXIT_OK


def _run_train_baseline(config: ExperimentConfig) -> int:
    table = _load_table(config)
    instance = _build_instance(config, table, config.seed)
    eps = _resolve_eps(config, instance)
    result = baseline_train(
        instance.labeled, eps, instance.cost, config.solver_config(eps)
    )
    score_features = (
        instance.unlabeled.features
        if instance.unlabeled is not None
        else instance.labeled.features
    )
    row = {
        "seed": config.seed,
        "n_labeled": instance.labeled.n,
        "eps": float(eps),
        "alpha": float(result.alpha),
        "worst_case_value": float(result.worst_case_value),
        "worst_case_likelihood": float(np.exp(-result.worst_case_value)),
        "median_confidence": _median_confidence(result.theta, score_features),
        **_theta_columns(result.theta),
    }
    fieldnames = [
        "seed",
        "n_labeled",
        "eps",
        "alpha",
        "worst_case_value",
        "worst_case_likelihood",
        "median_confidence",
    ] + sorted(key for key in row if key.startswith("theta_"))
    _write_csv(config.output, fieldnames, [row])
    _write_metadata(config, "train-baseline", [])
    return EXIT_OK


def _run_min_radius(config: ExperimentConfig) -> int:
    table = _load_table(config)
    instance = _build_instance(config, table, config.seed)
    unlabeled = _require_unlabeled(instance)
    eps_min = prior_feasible_radius(
        instance.labeled, unlabeled, instance.prior, instance.cost
    )
    row = {
        "seed": config.seed,
        "n_labeled": instance.labeled.n,
        "eps_min": float(eps_min),
        "eps_selected": float(eps_min + config.delta_margin),
    }
    _write_csv(
        config.output, ["seed", "n_labeled", "eps_min", "eps_selected"], [row]
    )
    _write_metadata(config, "min-radius", [])
    return EXIT_OK


def _run_wasserstein(config: ExperimentConfig) -> int:
    table = _load_table(config)
    instance = _build_instance(config, table, config.seed)
    sample = DiscreteDistribution.from_dataset(instance.labeled)
    distance, _ = discrete_wasserstein(sample, instance.full, instance.cost)
    row = {
        "seed": config.seed,
        "n_labeled": instance.labeled.n,
        "distance": float(distance),
    }
    _write_csv(config.output, ["seed", "n_labeled", "distance"], [row])
    _write_metadata(config, "wasserstein", [])
    return EXIT_OK


# ---------------------------------------------------------------------------
# Multi-trial experiment kinds


def _certify_instance(config: ExperimentConfig, instance: Instance, eps: float):
    """Train (or take the zero model) and certify its likelihood bound."""
    unlabeled = _require_unlabeled(instance)
    if config.force_zero_state:
        state = DualState.zeros(instance.labeled.dim, instance.labeled.n)
    else:
        result = sgd_solve(
            instance.labeled,
            unlabeled,
            instance.prior,
            instance.cost,
            config.solver_config(eps),
        )
        if result.status == INFEASIBLE:
            raise InfeasibleRadiusError(
                "dual unbounded below: transport radius too small for the prior"
            )
        state = result.state
    bound = performance_bound(
        state,
        instance.labeled,
        unlabeled,
        instance.prior,
        eps,
        instance.cost,
        z_score=config.z_score,
    )
    median_conf = _median_confidence(state.theta, unlabeled.features)
    return bound_report_row(eps, bound, median_conf)


def _run_bound_experiment(config: ExperimentConfig) -> int:
    kind = config.kind or KIND_BOUND_VS_NL
    if kind not in (KIND_BOUND_VS_NL, KIND_CONF_VS_NL):
        raise ConfigError(
            f"the bound subcommand expects kind {KIND_BOUND_VS_NL} or "
            f"{KIND_CONF_VS_NL}, got {kind!r}"
        )
    table = _load_table(config)
    grid = config.n_labeled_grid or (config.n_labeled,)
    rows, errors = [], []
    for n_labeled in grid:
        for trial in range(config.trials):
            split_seed = config.seed + trial
            try:
                instance = _build_instance(
                    config, table, split_seed, n_labeled=int(n_labeled)
                )
                eps = _resolve_eps(config, instance)
                report = _certify_instance(config, instance, eps)
            except Exception as error:  # noqa: BLE001 - recorded, run continues
                errors.append((f"{trial}_n_{n_labeled}", error))
                continue
            rows.append(
                {
                    "kind": kind,
                    "n_labeled": int(n_labeled),
                    "trial": trial,
                    "seed": split_seed,
                    **report,
                }
            )
    fieldnames = ["kind", "n_labeled", "trial", "seed"] + list(BOUND_REPORT_FIELDS)
    _write_csv(config.output, fieldnames, rows)
    _finish(config, "bound", len(rows), errors)
    return EXIT_OK


def _run_radius_sweep(config: ExperimentConfig) -> int:
    table = _load_table(config)
    if not config.eps_grid:
        raise ConfigError("radius-sweep requires a nonempty eps_grid")
    rows, errors = [], []
    for trial in range(config.trials):
        split_seed = config.seed + trial
        for eps in config.eps_grid:
            try:
                instance = _build_instance(config, table, split_seed)
                report = _certify_instance(config, instance, float(eps))
            except Exception as error:  # noqa: BLE001 - recorded, run continues
                errors.append((f"{trial}_eps_{render_float(eps)}", error))
                continue
            rows.append({"trial": trial, "seed": split_seed, **report})
    fieldnames = ["trial", "seed"] + list(BOUND_REPORT_FIELDS)
    _write_csv(config.output, fieldnames, rows)
    _finish(config, "radius-sweep", len(rows), errors)
    return EXIT_OK


def render_float(value) -> str:
    return repr(float(value))


def _run_robustness_sweep(config: ExperimentConfig) -> int:
    table = _load_table(config)
    if not config.eps_grid or not config.delta_grid:
        raise ConfigError(
            "robustness-sweep requires nonempty eps_grid and delta_grid"
        )
    rows, errors = [], []
    for trial in range(config.trials):
        split_seed = config.seed + trial
        try:
            instance = _build_instance(config, table, split_seed)
            theta_by_eps = {
                float(eps): baseline_train(
                    instance.labeled,
                    float(eps),
                    instance.cost,
                    config.solver_config(float(eps)),
                ).theta
                for eps in config.eps_grid
            }
            matrix = robustness_sweep(
                theta_by_eps,
                instance.labeled,
                config.eps_grid,
                config.delta_grid,
                instance.cost,
            )
        except Exception as error:  # noqa: BLE001 - recorded, run continues
            errors.append((str(trial), error))
            continue
        for row in sweep_report_rows(config.eps_grid, config.delta_grid, matrix):
            rows.append({"trial": trial, "seed": split_seed, **row})
    fieldnames = ["trial", "seed"] + list(SWEEP_REPORT_FIELDS)
    _write_csv(config.output, fieldnames, rows)
    _finish(config, "robustness-sweep", len(rows), errors)
    return EXIT_OK


def _run_active(config: ExperimentConfig) -> int:
    table = _load_table(config)
    pool = LabeledDataset(table.features, table.labels)
    stop_at = config.stop_at if config.stop_at else config.n_labeled
    rows, errors = [], []
    aulc_values = []
    for trial in range(config.trials):
        trial_seed = config.seed + trial
        try:
            strategy = StrategyConfig(
                kind=config.strategy,
                candidate_subsample=config.candidate_subsample,
                ridge_gamma=config.ridge_gamma,
                delta_margin=config.delta_margin,
                seed=trial_seed,
                mc_include_norm=config.mc_include_norm,
            )
            state = run_active_loop(
                initial_state(pool, config.n_initial, trial_seed),
                strategy,
                eval_data=pool,
                stop_at=stop_at,
                cost=TransportCost(label_flip_cost=config.label_flip_cost),
            )
            aulc_values.append(aulc(state.history))
        except Exception as error:  # noqa: BLE001 - recorded, run continues
            errors.append((str(trial), error))
            continue
        for row in curve_report_rows(config.strategy, trial, state.history):
            rows.append({"seed": trial_seed, **row})
    fieldnames = ["seed", "strategy", "trial", "n_labeled", "likelihood"]
    _write_csv(config.output, fieldnames, rows)
    if aulc_values:
        _write_csv(
            _aulc_output_path(config.output),
            ["strategy", "median_aulc"],
            aulc_report_rows({config.strategy: aulc_values}),
        )
    _finish(config, "active", len(rows), errors)
    return EXIT_OK


def _oracle_instance(seed: int):
    """Small random labeled/unlabeled instance with a feasible radius."""
    rng = make_rng(seed)
    dim = int(rng.integers(1, 4))
    n_labeled = int(rng.integers(1, 4))
    n_unlabeled = int(rng.integers(2, 6))
    labeled = LabeledDataset(
        np.round(rng.normal(size=(n_labeled, dim)), 3),
        rng.integers(0, 2, size=n_labeled),
    )
    unlabeled_features = np.round(rng.normal(size=(n_unlabeled, dim)), 3)
    if rng.integers(0, 2) == 0:
        share = float(rng.uniform(0.2, 0.8))
        prior = make_prior(labeled, PRIOR_STRONG, probabilities=(1 - share, share))
    else:
        lower = rng.uniform(0.0, 0.3, size=2)
        upper = np.minimum(1.0, lower + rng.uniform(0.5, 0.9, size=2))
        prior = LabelPrior(lower=lower, upper=upper)
    theta = rng.normal(scale=0.7, size=dim)
    return labeled, unlabeled_features, prior, theta


def _run_oracle_check(config: ExperimentConfig) -> int:
    cost = TransportCost(label_flip_cost=config.label_flip_cost)
    rows, errors = [], []
    for index in range(config.trials):
        seed = config.seed + index
        try:
            labeled, support, prior, theta = _oracle_instance(seed)
            eps = min_feasible_radius(labeled, support, prior, cost) + 0.1
            solver = dataclasses.replace(
                config.solver_config(eps), seed=seed, radius_eps=eps
            )
            report = duality_gap_check(
                theta,
                labeled,
                UnlabeledDataset(support),
                prior,
                eps,
                cost,
                solver,
            )
        except Exception as error:  # noqa: BLE001 - recorded, run continues
            errors.append((str(index), error))
            continue
        tolerance = GAP_TOLERANCE * (1.0 + abs(report.primal))
        rows.append(
            {
                "instance": index,
                "seed": seed,
                "primal": float(report.primal),
                "dual": float(report.dual),
                "gap": float(report.gap),
                "within_tol": int(abs(report.gap) <= tolerance),
            }
        )
    fieldnames = ["instance", "seed", "primal", "dual", "gap", "within_tol"]
    _write_csv(config.output, fieldnames, rows)
    _finish(config, "oracle-check", len(rows), errors)
    return EXIT_OK


def run_experiment(config: ExperimentConfig) -> int:
    """Dispatch a configured experiment kind to its runner."""
    runners = {
        KIND_BOUND_VS_NL: _run_bound_experiment,
        KIND_CONF_VS_NL: _run_bound_experiment,
        KIND_RADIUS_SWEEP: _run_radius_sweep,
        KIND_ROBUSTNESS_SWEEP: _run_robustness_sweep,
        KIND_ACTIVE: _run_active,
        KIND_ORACLE_CHECK: _run_oracle_check,
    }
    if config.kind not in runners:
        raise ConfigError(
            f"experiment kind must be one of {', '.join(EXPERIMENT_KINDS)}; "
            f"got {config.kind!r}"
        )
    return runners[config.kind](config)


# ---------------------------------------------------------------------------
# Argument parsing and dispatch

_SUBCOMMANDS = {
    "train-dru": _run_train_dru,
    "train-baseline": _run_train_baseline,
    "bound": _run_bound_experiment,
    "min-radius": _run_min_radius,
    "wasserstein": _run_wasserstein,
    "radius-sweep": _run_radius_sweep,
    "robustness-sweep": _run_robustness_sweep,
    "active": _run_active,
    "oracle-check": _run_oracle_check,
}

_KIND_BY_SUBCOMMAND = {
    "radius-sweep": KIND_RADIUS_SWEEP,
    "robustness-sweep": KIND_ROBUSTNESS_SWEEP,
    "active": KIND_ACTIVE,
    "oracle-check": KIND_ORACLE_CHECK,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="drulearn",
        description=(
            "Distributionally robust learning with unlabeled data: training, "
            "certification, and experiment sweeps."
        ),
    )
    subparsers = parser.add_subparsers(dest="command", required=True)
    for name in _SUBCOMMANDS:
        sub = subparsers.add_parser(name, help=f"run the {name} routine")
        sub.add_argument("--config", required=True, help="path to a key=value config file")
        sub.add_argument("--eps", type=float, default=None, help="override the transport radius")
        sub.add_argument("--seed", type=int, default=None, help="override the base seed")
        sub.add_argument("--n-labeled", type=int, default=None, help="override the labeled sample size")
        sub.add_argument("--strategy", default=None, help="override the acquisition strategy")
        sub.add_argument("--output", default=None, help="override the output CSV path")
    return parser


def _apply_overrides(config: ExperimentConfig, args) -> ExperimentConfig:
    updates = {}
    if args.eps is not None:
        updates["eps"] = args.eps
    if args.seed is not None:
        updates["seed"] = args.seed
    if args.n_labeled is not None:
        updates["n_labeled"] = args.n_labeled
    if args.strategy is not None:
        updates["strategy"] = args.strategy
    if args.output is not None:
        updates["output"] = args.output
    if args.command in _KIND_BY_SUBCOMMAND:
        updates["kind"] = _KIND_BY_SUBCOMMAND[args.command]
    return dataclasses.replace(config, **updates) if updates else config


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exit_request:
        code = exit_request.code or 0
        return EXIT_OK if code == 0 else EXIT_USAGE
    try:
        config = _apply_overrides(load_config(args.config), args)
        return _SUBCOMMANDS[args.command](config)
    except InfeasibleRadiusError as error:
        print(f"infeasible instance: {error}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (DivergenceError, np.linalg.LinAlgError, ArithmeticError, RuntimeError) as error:
        print(f"numerical failure: {error}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ConfigError, ValueError, OSError) as error:
        print(f"error: {error}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
