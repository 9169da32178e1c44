"""Linear logistic model: prediction, loss, gradients, transport cost, confidence.

Conventions used across the package:

* Feature vectors live in R^q x {1}: a constant 1 is appended as the last
  coordinate at ingestion time, so the bias is an ordinary weight.  The model
  functions accept arbitrary vectors; the constant coordinate is only enforced
  by the data pipeline.
* Binary labels carry two numeric views in fixed bijection: the loss view
  y in {0, 1} and the cost view s in {-1, +1} (0 <-> -1, 1 <-> +1).  Loss
  computations use the loss view; the transport cost uses the cost view, where
  a label flip contributes exactly the configured flip cost.  The class index
  k coincides with the loss view (k=0 negative class, k=1 positive class).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

N_CLASSES = 2


def to_cost_view(y):
    """Map loss-view labels {0, 1} to cost-view labels {-1, +1}."""
    return 2 * np.asarray(y) - 1


def to_loss_view(s):
    """Map cost-view labels {-1, +1} to loss-view labels {0, 1}."""
    return (np.asarray(s) + 1) // 2


@dataclass(frozen=True)
class TransportCost:
    """Ground transport cost: Euclidean distance on features plus a label term.

    The label term is half the flip weight times the absolute cost-view
    difference, so moving mass across the label boundary costs exactly
    ``label_flip_cost`` and keeping the label costs nothing.
    """

    label_flip_cost: float = 1.0

    def __post_init__(self):
        if not self.label_flip_cost >= 0:
            raise ValueError("label_flip_cost must be nonnegative")


def _check_dim(theta, x):
    theta = np.asarray(theta, dtype=float)
    x = np.asarray(x, dtype=float)
    if theta.shape[-1] != x.shape[-1]:
        raise ValueError(
            f"dimension mismatch: weights have {theta.shape[-1]} coordinates, "
            f"features have {x.shape[-1]}"
        )
    return theta, x


def margin(theta, x):
    """Inner product <theta, x>; x may be a single vector or a matrix of rows."""
    theta, x = _check_dim(theta, x)
    return x @ theta


def logistic_predict(theta, x):
    """Predicted probability of the positive class, sigma(<theta, x>)."""
    return expit(margin(theta, x))


def logistic_loss(theta, x, y):
    """Negative log-likelihood of loss-view label(s) y under the logistic model.

    Computed as log(1 + exp(-m)) for y=1 and log(1 + exp(m)) for y=0 via
    logaddexp, which branches on the sign of the margin internally and is
    stable for |m| far beyond 700.
    """
    m = margin(theta, x)
    y = np.asarray(y)
    return np.logaddexp(0.0, (1 - 2 * y) * m)


def both_class_losses(theta, features):
    """Losses for both labels at each row: column k holds the loss of label k.

    Returns an (n, 2) array for an (n, d) feature matrix.
    """
    m = margin(theta, features)
    return np.stack([np.logaddexp(0.0, m), np.logaddexp(0.0, -m)], axis=-1)


def loss_grad_theta(theta, x, y):
    """Gradient of logistic_loss in theta: (sigma(<theta, x>) - y) * x."""
    m = margin(theta, x)
    resid = expit(m) - np.asarray(y)
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        return resid * x
    return resid[..., None] * x


def confidence(theta, x):
    """Confidence of the prediction at x: max of the two class probabilities."""
    p = logistic_predict(theta, x)
    return np.maximum(p, 1.0 - p)


def feature_distances(a, b):
    """Pairwise Euclidean distances between rows of a (n, d) and b (m, d)."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    if a.shape[1] != b.shape[1]:
        raise ValueError("dimension mismatch between point sets")
    diff = a[:, None, :] - b[None, :, :]
    return np.sqrt((diff * diff).sum(axis=-1))


def transport_cost(x1, y1, x2, y2, cost: TransportCost):
    """Ground cost between labeled points (x1, y1) and (x2, y2).

    Labels are loss-view {0, 1}; a flip contributes exactly cost.label_flip_cost
    (half the flip weight times the cost-view difference of 2).
    """
    x1, x2 = np.asarray(x1, dtype=float), np.asarray(x2, dtype=float)
    if x1.shape != x2.shape:
        raise ValueError("dimension mismatch between labeled points")
    flip = cost.label_flip_cost * (np.asarray(y1) != np.asarray(y2))
    return np.sqrt(((x1 - x2) ** 2).sum(axis=-1)) + flip


@dataclass
class LabeledDataset:
    """Empirical labeled sample with implied uniform weights 1/n.

    features: (n, d) float matrix, one row per sample.
    labels: (n,) integer array of loss-view labels in {0, 1}.
    """

    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.features = np.atleast_2d(np.asarray(self.features, dtype=float))
        self.labels = np.asarray(self.labels, dtype=int).ravel()
        if self.features.shape[0] != self.labels.shape[0]:
            raise ValueError("features and labels disagree on sample count")
        if self.features.shape[0] < 1:
            raise ValueError("dataset must contain at least one sample")
        if not np.all(np.isfinite(self.features)):
            raise ValueError("features must be finite")
        if not np.all((self.labels == 0) | (self.labels == 1)):
            raise ValueError("labels must be 0 or 1 (loss view)")

    @property
    def n(self):
        return self.features.shape[0]

    @property
    def dim(self):
        return self.features.shape[1]

    @property
    def cost_labels(self):
        return to_cost_view(self.labels)


@dataclass
class UnlabeledDataset:
    """Empirical distribution over features only."""

    features: np.ndarray

    def __post_init__(self):
        self.features = np.atleast_2d(np.asarray(self.features, dtype=float))
        if self.features.shape[0] < 1:
            raise ValueError("dataset must contain at least one point")
        if not np.all(np.isfinite(self.features)):
            raise ValueError("features must be finite")

    @property
    def n(self):
        return self.features.shape[0]

    @property
    def dim(self):
        return self.features.shape[1]


def make_rng(seed):
    """Seeded counter-based generator used everywhere randomness is drawn.

    Philox is counter-based, so streams are reproducible bit-for-bit across
    platforms and runs for the same 64-bit seed.
    """
    return np.random.Generator(np.random.Philox(int(seed)))
