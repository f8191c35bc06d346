"""Flat-vector binary classifiers, local SGD, clipping and the Gaussian mechanism.

Every model is a single 1-D float64 parameter vector so that clipping,
noising, hashing and aggregation all operate on the same object.

Parameter layouts:

* ``logistic``: ``[w_0 .. w_{d-1}, b]``
* ``mlp``: ``[W1 (hidden x d, row-major), b1 (hidden), w2 (hidden), b2]``
  with a tanh hidden layer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np

from .datagen import LabeledDataset

ARCHS = ("logistic", "mlp")


def n_params(arch: str, dim: int, hidden: int | None = None) -> int:
    if arch == "logistic":
        return dim + 1
    if arch == "mlp":
        if not hidden or hidden < 1:
            raise ValueError("mlp requires a positive hidden width")
        return hidden * dim + 2 * hidden + 1
    raise ValueError(f"unknown arch {arch!r}")


@dataclass
class ModelParams:
    """Weights of a binary classifier plus the metadata needed to interpret them."""

    weights: np.ndarray
    dim: int
    arch: str = "logistic"
    hidden: int | None = None

    def __post_init__(self) -> None:
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.dim < 1:
            raise ValueError("dim must be positive")
        expected = n_params(self.arch, self.dim, self.hidden)
        if self.weights.shape != (expected,):
            raise ValueError(
                f"weights length {self.weights.size} does not match {self.arch} "
                f"with dim={self.dim} (expected {expected})"
            )
        if not np.all(np.isfinite(self.weights)):
            raise ValueError("model weights must be finite")

    @classmethod
    def zeros(cls, dim: int, arch: str = "logistic", hidden: int | None = None) -> "ModelParams":
        return cls(np.zeros(n_params(arch, dim, hidden)), dim, arch, hidden)

    @classmethod
    def init(
        cls, dim: int, arch: str = "logistic", hidden: int | None = None, seed: int = 0
    ) -> "ModelParams":
        """Logistic starts at zero; the MLP gets small random first-layer weights
        so the hidden units are not symmetric."""
        model = cls.zeros(dim, arch, hidden)
        if arch == "mlp":
            rng = np.random.default_rng(seed)
            w = model.weights.copy()
            w[: hidden * dim] = rng.normal(0.0, 1.0 / math.sqrt(dim), hidden * dim)
            w[hidden * dim + hidden : hidden * dim + 2 * hidden] = rng.normal(
                0.0, 1.0 / math.sqrt(hidden), hidden
            )
            model = replace(model, weights=w)
        return model

    @property
    def size(self) -> int:
        return int(self.weights.size)

    def with_weights(self, weights: np.ndarray) -> "ModelParams":
        return ModelParams(np.asarray(weights, dtype=np.float64), self.dim, self.arch, self.hidden)


@dataclass
class UpdateDelta:
    """A client's model update for one round."""

    delta: np.ndarray
    client_id: int = 0
    round: int = 0
    clipped: bool = False
    noised: bool = False

    def __post_init__(self) -> None:
        self.delta = np.asarray(self.delta, dtype=np.float64)

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.delta))


@dataclass
class DpConfig:
    """Clipping and Gaussian-noise settings.

    Exactly one of ``noise_multiplier`` (sigma / C) and ``per_round_epsilon``
    drives the noise scale; the other is derived by the classic calibration.
    """

    clip_bound: float = 1.0
    noise_multiplier: float | None = None
    delta_dp: float = 1e-5
    per_round_epsilon: float | None = None

    def __post_init__(self) -> None:
        if self.noise_multiplier is None and self.per_round_epsilon is None:
            self.noise_multiplier = 8.0
        if not self.clip_bound > 0:
            raise ValueError("clip_bound must be positive")
        if not 0.0 < self.delta_dp < 1.0:
            raise ValueError("delta_dp must lie in (0, 1)")
        if self.noise_multiplier is not None and self.per_round_epsilon is not None:
            raise ValueError("noise_multiplier and per_round_epsilon are mutually exclusive")
        if self.noise_multiplier is not None and self.noise_multiplier < 0:
            raise ValueError("noise_multiplier must be non-negative")
        if self.per_round_epsilon is not None and not self.per_round_epsilon > 0:
            raise ValueError("per_round_epsilon must be positive")

    @property
    def sigma(self) -> float:
        if self.noise_multiplier is not None:
            return self.noise_multiplier * self.clip_bound
        return dp_sigma(self.clip_bound, self.per_round_epsilon, self.delta_dp)

    @property
    def epsilon(self) -> float:
        """Per-round epsilon, implied from sigma when only mu is configured.

        Infinite when sigma is zero (no privacy).
        """
        if self.per_round_epsilon is not None:
            return self.per_round_epsilon
        return dp_epsilon(self.clip_bound, self.sigma, self.delta_dp)


# ---------------------------------------------------------------------------
# forward / backward


def _as_2d(features: np.ndarray, dim: int) -> np.ndarray:
    x = np.asarray(features, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != dim:
        raise ValueError(f"feature dimension mismatch: expected {dim}, got {x.shape[-1]}")
    return x


def logits(model: ModelParams, features: np.ndarray) -> np.ndarray:
    """Pre-sigmoid scores for a batch (or a single row) of features."""
    x = _as_2d(features, model.dim)
    w = model.weights
    d = model.dim
    if model.arch == "logistic":
        return x @ w[:d] + w[d]
    h = model.hidden
    W1 = w[: h * d].reshape(h, d)
    b1 = w[h * d : h * d + h]
    w2 = w[h * d + h : h * d + 2 * h]
    b2 = w[h * d + 2 * h]
    return np.tanh(x @ W1.T + b1) @ w2 + b2


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def predict_proba(model: ModelParams, features: np.ndarray) -> np.ndarray | float:
    """Event probability for one feature vector (returns float) or a matrix (returns array)."""
    single = np.ndim(features) == 1
    p = sigmoid(logits(model, features))
    return float(p[0]) if single else p


def loss(model: ModelParams, features: np.ndarray, labels: np.ndarray) -> float:
    """Mean binary cross-entropy, computed from logits for stability."""
    z = logits(model, features)
    y = np.asarray(labels, dtype=np.float64)
    return float(np.mean(np.logaddexp(0.0, z) - y * z))


def loss_grad(model: ModelParams, features: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Analytic gradient of :func:`loss` with respect to the flat weights."""
    x = _as_2d(features, model.dim)
    y = np.asarray(labels, dtype=np.float64)
    n = x.shape[0]
    w = model.weights
    d = model.dim
    if model.arch == "logistic":
        r = (sigmoid(x @ w[:d] + w[d]) - y) / n
        return np.concatenate([x.T @ r, [r.sum()]])
    h = model.hidden
    W1 = w[: h * d].reshape(h, d)
    b1 = w[h * d : h * d + h]
    w2 = w[h * d + h : h * d + 2 * h]
    b2 = w[h * d + 2 * h]
    a = np.tanh(x @ W1.T + b1)
    r = (sigmoid(a @ w2 + b2) - y) / n
    g_w2 = a.T @ r
    g_b2 = r.sum()
    back = np.outer(r, w2) * (1.0 - a * a)
    g_W1 = back.T @ x
    g_b1 = back.sum(axis=0)
    return np.concatenate([g_W1.ravel(), g_b1, g_w2, [g_b2]])


# ---------------------------------------------------------------------------
# training and update handling


def local_train(
    model: ModelParams,
    dataset: LabeledDataset,
    lr: float,
    epochs: int,
    rng_seed,
    *,
    batch_size: int = 32,
    client_id: int = 0,
    round: int = 0,
) -> UpdateDelta:
    """Run mini-batch SGD on ``dataset`` and return ``trained - initial`` weights.

    The mini-batch order is drawn from ``rng_seed`` (anything accepted by
    :func:`numpy.random.default_rng`), so the result is a pure function of
    its inputs. ``model`` is not modified.

    Raises:
        ValueError: ``"empty local dataset"`` or ``"diverged"``.
    """
    if dataset.n == 0:
        raise ValueError("empty local dataset")
    if not lr > 0:
        raise ValueError("lr must be positive")
    if epochs < 0:
        raise ValueError("epochs must be non-negative")
    rng = np.random.default_rng(rng_seed)
    w0 = model.weights
    work = ModelParams(w0.copy(), model.dim, model.arch, model.hidden)
    x, y = dataset.features, dataset.labels
    for _ in range(epochs):
        order = rng.permutation(dataset.n)
        for start in range(0, dataset.n, batch_size):
            idx = order[start : start + batch_size]
            work.weights -= lr * loss_grad(work, x[idx], y[idx])
        if not np.all(np.isfinite(work.weights)) or not math.isfinite(loss(work, x, y)):
            raise ValueError("diverged")
    return UpdateDelta(work.weights - w0, client_id=client_id, round=round)


def clip_update(delta: UpdateDelta, C: float) -> UpdateDelta:
    """Scale ``delta`` so that its l2 norm is ``min(norm, C)``."""
    if not C > 0:
        raise ValueError("clip bound must be positive")
    v = delta.delta
    if not np.all(np.isfinite(v)):
        raise ValueError("cannot clip a non-finite update")
    norm = float(np.linalg.norm(v))
    if norm > C:
        v = v * (C / norm)
        # rounding can leave the scaled norm a few ulps above C
        while np.linalg.norm(v) > C:
            v = v * np.nextafter(1.0, 0.0)
    else:
        v = v.copy()
    return replace(delta, delta=v, clipped=True)


def gaussianize(delta: UpdateDelta, sigma: float, rng_seed) -> UpdateDelta:
    """Add isotropic N(0, sigma^2) noise to a clipped update."""
    if not delta.clipped:
        raise ValueError("noise before clip")
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if sigma == 0:
        return replace(delta, delta=delta.delta.copy(), noised=True)
    z = np.random.default_rng(rng_seed).normal(0.0, sigma, size=delta.delta.shape)
    return replace(delta, delta=delta.delta + z, noised=True)


def dp_sigma(C: float, epsilon: float, delta_dp: float) -> float:
    """Classic Gaussian-mechanism calibration ``C * sqrt(2 ln(1.25/delta)) / epsilon``."""
    if not C > 0:
        raise ValueError("C must be positive")
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    if not 0.0 < delta_dp < 1.0:
        raise ValueError("delta_dp must lie in (0, 1)")
    return C * math.sqrt(2.0 * math.log(1.25 / delta_dp)) / epsilon


def dp_epsilon(C: float, sigma: float, delta_dp: float) -> float:
    """Inverse of :func:`dp_sigma`: the epsilon a given sigma buys."""
    if not 0.0 < delta_dp < 1.0:
        raise ValueError("delta_dp must lie in (0, 1)")
    if sigma <= 0:
        return math.inf
    return C * math.sqrt(2.0 * math.log(1.25 / delta_dp)) / sigma


def dp_account(
    rounds: Sequence[tuple[float, float]], mode: str = "per_client_sequential"
) -> tuple[float, float]:
    """Basic composition.

    ``per_client_sequential`` sums one client's per-round budgets.
    ``across_disjoint_clients`` takes the per-client totals and returns the
    coordinate-wise maximum (parallel composition over disjoint data).

    Sums use :func:`math.fsum`, which is correctly rounded and therefore
    independent of the order of ``rounds``.
    """
    pairs = list(rounds)
    if not pairs:
        raise ValueError("empty privacy ledger")
    for eps, dlt in pairs:
        if not (eps > 0 and dlt > 0):
            raise ValueError("privacy parameters must be positive")
    if mode == "per_client_sequential":
        return math.fsum(e for e, _ in pairs), math.fsum(d for _, d in pairs)
    if mode == "across_disjoint_clients":
        return max(e for e, _ in pairs), max(d for _, d in pairs)
    raise ValueError(f"unknown accounting mode {mode!r}")


def apply_update(model: ModelParams, agg_delta: np.ndarray, eta: float) -> ModelParams:
    """``weights + eta * agg_delta`` as a new model."""
    agg = np.asarray(agg_delta, dtype=np.float64)
    if agg.shape != model.weights.shape:
        raise ValueError(
            f"dimension mismatch: model has {model.size} weights, update has {agg.size}"
        )
    return model.with_weights(model.weights + eta * agg)


def weighted_sum(vectors: Iterable[np.ndarray], weights: Iterable[float], size: int) -> np.ndarray:
    """Sum ``w_i * v_i`` in iteration order (fixed order keeps results bit-stable)."""
    out = np.zeros(size)
    for v, w in zip(vectors, weights):
        out += w * v
    return out
