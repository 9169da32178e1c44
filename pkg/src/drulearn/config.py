"""Experiment configuration: a flat, typed key=value file format.

Every key has a default, every value is type-checked on parse, and unknown
keys are hard errors so a typo cannot silently fall back to a default and
invalidate a sweep.
"""

from __future__ import annotations

import dataclasses

from .active import STRATEGY_KINDS
from .bounds import (
    MIN_RADIUS_PLUS_DELTA,
    PRIOR_STRONG,
    PRIOR_WEAK,
    RADIUS_POLICIES,
    RadiusSelection,
)
from .data import UNLABELED_FULL, UNLABELED_REMAINDER
from .dual import SolverConfig

KIND_BOUND_VS_NL = "bound-vs-nl"
KIND_CONF_VS_NL = "conf-vs-nl"
KIND_RADIUS_SWEEP = "radius-sweep"
KIND_ROBUSTNESS_SWEEP = "robustness-sweep"
KIND_ACTIVE = "active"
KIND_ORACLE_CHECK = "oracle-check"
EXPERIMENT_KINDS = (
    KIND_BOUND_VS_NL,
    KIND_CONF_VS_NL,
    KIND_RADIUS_SWEEP,
    KIND_ROBUSTNESS_SWEEP,
    KIND_ACTIVE,
    KIND_ORACLE_CHECK,
)


class ConfigError(ValueError):
    """Raised when a config file cannot be parsed or validated."""


@dataclasses.dataclass(frozen=True)
class ExperimentConfig:
    """Fully resolved settings for one command-line run."""

    # Data source; an empty dataset path selects the bundled synthetic
    # two-cluster generator.
    dataset: str = ""
    label_column: str = "label"
    positive_label: str = "1"
    standardize: bool = True
    synthetic_n: int = 200
    synthetic_separation: float = 1.5
    synthetic_noise: float = 0.5

    # Sampling.
    seed: int = 0
    n_labeled: int = 20
    unlabeled_mode: str = UNLABELED_FULL
    n_labeled_grid: tuple = ()

    # Geometry and label prior.
    label_flip_cost: float = 1.0
    prior_mode: str = PRIOR_WEAK
    prior_positive_share: float | None = None
    prior_level: float = 0.95
    z_score: float = 1.96

    # Radius policy; an explicit eps bypasses the policy.
    eps: float | None = None
    eps_policy: str = MIN_RADIUS_PLUS_DELTA
    delta_margin: float = 1e-3
    confidence_threshold: float = 0.7
    fraction: float = 1.0
    grid_points: int = 20
    grid_span: float = 10.0

    # Stochastic solver.
    step_size: float = 0.1
    batch_size: int = 100
    max_steps: int = 200000
    convergence_tol: float = 1e-4
    convergence_window: int = 1000
    lr_decay_factor: float = 8.0
    lr_decay_every: int = 10000
    objective_floor: float = -1e6
    alpha_ceiling: float = 1e6
    use_adam: bool = True
    tail_average: bool = True
    solver_seed: int = 0
    # Skip training and certify the all-zeros model instead; its likelihood
    # bound is the coin-flip floor, which makes a useful smoke check.
    force_zero_state: bool = False

    # Experiment orchestration.
    kind: str = ""
    trials: int = 1
    output: str = "results.csv"
    eps_grid: tuple = (0.1, 0.2, 0.5, 1.0, 2.0)
    delta_grid: tuple = (0.0, 0.05, 0.1, 0.2, 0.5)

    # Label acquisition.
    strategy: str = "random"
    n_initial: int = 2
    stop_at: int = 0
    candidate_subsample: int = 100
    ridge_gamma: float = 1e-3
    mc_include_norm: bool = False

    def __post_init__(self):
        if self.trials < 1:
            raise ConfigError("trials must be at least 1")
        if self.kind and self.kind not in EXPERIMENT_KINDS:
            raise ConfigError(
                f"unknown experiment kind {self.kind!r}; "
                f"expected one of {', '.join(EXPERIMENT_KINDS)}"
            )
        if self.prior_mode not in (PRIOR_STRONG, PRIOR_WEAK):
            raise ConfigError(f"unknown prior_mode {self.prior_mode!r}")
        if self.unlabeled_mode not in (UNLABELED_FULL, UNLABELED_REMAINDER):
            raise ConfigError(f"unknown unlabeled_mode {self.unlabeled_mode!r}")
        if self.eps_policy not in RADIUS_POLICIES:
            raise ConfigError(f"unknown eps_policy {self.eps_policy!r}")
        if self.strategy not in STRATEGY_KINDS:
            raise ConfigError(f"unknown strategy {self.strategy!r}")
        if self.n_labeled < 1 or self.n_initial < 1:
            raise ConfigError("n_labeled and n_initial must be at least 1")
        if self.synthetic_n < 2:
            raise ConfigError("synthetic_n must be at least 2")
        if self.eps is not None and self.eps < 0:
            raise ConfigError("eps must be nonnegative")
        if self.label_flip_cost <= 0:
            raise ConfigError("label_flip_cost must be positive")

    def solver_config(self, eps: float) -> SolverConfig:
        """Instantiate the stochastic solver settings at a given radius."""
        return SolverConfig(
            radius_eps=eps,
            step_size=self.step_size,
            batch_size=self.batch_size,
            max_steps=self.max_steps,
            convergence_tol=self.convergence_tol,
            convergence_window=self.convergence_window,
            lr_decay_factor=self.lr_decay_factor,
            lr_decay_every=self.lr_decay_every,
            objective_floor=self.objective_floor,
            alpha_ceiling=self.alpha_ceiling,
            use_adam=self.use_adam,
            tail_average=self.tail_average,
            seed=self.solver_seed,
        )

    def radius_selection(self) -> RadiusSelection:
        """Instantiate the radius policy (without the chosen radius)."""
        return RadiusSelection(
            policy=self.eps_policy,
            delta_margin=self.delta_margin,
            confidence_threshold=self.confidence_threshold,
            fraction=self.fraction,
            grid_points=self.grid_points,
            grid_span=self.grid_span,
        )


_FIELD_TYPES = {
    field.name: field.type for field in dataclasses.fields(ExperimentConfig)
}


def _parse_bool(raw: str, key: str) -> bool:
    lowered = raw.strip().lower()
    if lowered in ("true", "1", "yes", "on"):
        return True
    if lowered in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"{key}: expected a boolean, got {raw!r}")


def _parse_value(key: str, raw: str):
    kind = _FIELD_TYPES[key]
    raw = raw.strip()
    try:
        if kind == "bool":
            return _parse_bool(raw, key)
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "float | None":
            if raw == "" or raw.lower() == "none":
                return None
            return float(raw)
        if kind == "tuple":
            if raw == "":
                return ()
            parts = [part.strip() for part in raw.split(",")]
            if key == "n_labeled_grid":
                return tuple(int(part) for part in parts)
            return tuple(float(part) for part in parts)
        return raw
    except ValueError as error:
        raise ConfigError(f"{key}: {error}") from error


def parse_config_text(text: str) -> ExperimentConfig:
    """Parse ``key = value`` lines (# comments allowed) into a config."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        if key not in _FIELD_TYPES:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = _parse_value(key, raw)
    return ExperimentConfig(**values)


def load_config(path: str) -> ExperimentConfig:
    """Read and parse a config file."""
    with open(path) as handle:
        return parse_config_text(handle.read())


def render_value(value) -> str:
    """Canonical text form of a config value, inverse of the parser."""
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(render_value(item) for item in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def config_items(config: ExperimentConfig):
    """Sorted (key, rendered value) pairs, for the metadata sidecar."""
    return [
        (field.name, render_value(getattr(config, field.name)))
        for field in sorted(dataclasses.fields(ExperimentConfig), key=lambda f: f.name)
    ]
