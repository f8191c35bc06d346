"""Synthetic rare-event data, non-IID partitioning and scenario validation sets."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

QUALITY_BANDS = {
    "honest_high": (0.0, 0.05),
    "honest_low": (0.2, 0.6),
    "free_rider": (0.0, 0.05),
    "poisoner": (0.0, 0.05),
}


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5 + 1e-9))


@dataclass
class LabeledDataset:
    """Binary-labelled feature matrix.

    ``index`` records, for each row, its position in the dataset it was carved
    from, so partitions can be checked as exact set partitions.
    """

    features: np.ndarray
    labels: np.ndarray
    index: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise ValueError("features must be an (n, d) matrix")
        if self.labels.shape != (self.features.shape[0],):
            raise ValueError("labels must have one entry per row")
        if self.labels.size and not np.all((self.labels == 0) | (self.labels == 1)):
            raise ValueError("labels must be 0/1")
        if self.index is None:
            self.index = np.arange(self.n)
        else:
            self.index = np.asarray(self.index, dtype=np.int64)

    @property
    def n(self) -> int:
        return int(self.labels.size)

    @property
    def d(self) -> int:
        return int(self.features.shape[1])

    @property
    def positive_rate(self) -> float:
        return float(self.labels.mean()) if self.n else 0.0

    @property
    def n_positive(self) -> int:
        return int(self.labels.sum())

    def subset(self, rows: np.ndarray) -> "LabeledDataset":
        rows = np.asarray(rows, dtype=np.int64)
        return LabeledDataset(self.features[rows], self.labels[rows], self.index[rows])

    def positive_index(self) -> set[int]:
        return set(self.index[self.labels == 1].tolist())

    def to_csv(self, path: str | Path) -> None:
        """Header ``f0..f{d-1},label``; floats written with ``repr`` so they round-trip."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"f{j}" for j in range(self.d)] + ["label"])
            for row, y in zip(self.features, self.labels):
                w.writerow([repr(float(v)) for v in row] + [int(y)])

    @classmethod
    def from_csv(cls, path: str | Path) -> "LabeledDataset":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        if header[-1] != "label":
            raise ValueError("last CSV column must be 'label'")
        x = np.array([[float(v) for v in r[:-1]] for r in body]).reshape(len(body), len(header) - 1)
        y = np.array([int(r[-1]) for r in body], dtype=np.int64)
        return cls(x, y)


@dataclass
class ScenarioSet:
    """R disjoint validation subsets with their positive fractions and weights."""

    scenarios: list[LabeledDataset]
    omega: np.ndarray
    pi: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        if not self.scenarios:
            raise ValueError("need at least one scenario")
        self.omega = normalize_weights(self.omega, len(self.scenarios))
        self.pi = np.array([s.positive_rate for s in self.scenarios])

    @property
    def R(self) -> int:
        return len(self.scenarios)

    @property
    def total(self) -> int:
        return sum(s.n for s in self.scenarios)


@dataclass
class QualityRates:
    miss_rate: float
    outlier_rate: float
    sync_rate: float

    def __post_init__(self) -> None:
        for name in ("miss_rate", "outlier_rate", "sync_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.miss_rate, self.outlier_rate, self.sync_rate)


def normalize_weights(weights, n: int) -> np.ndarray:
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=np.float64)
    if w.shape != (n,):
        raise ValueError(f"expected {n} weights, got {w.size}")
    if np.any(w < 0) or not w.sum() > 0:
        raise ValueError("weights must be non-negative with positive sum")
    return w / w.sum()


def gen_rare_event_dataset(
    n: int,
    d: int,
    positive_rate: float,
    noise: float,
    seed,
    *,
    separation: float = 1.5,
) -> LabeledDataset:
    """Two-cluster rare-event data.

    Classes sit at ``+/- separation`` along a random unit direction; ``noise``
    is the per-class standard deviation along that direction, so ``noise=0``
    gives a linearly separable set. All orthogonal directions carry unit
    Gaussian nuisance. Exactly ``round(n * positive_rate)`` rows are positive.
    """
    if not 0.0 < positive_rate < 0.5:
        raise ValueError("positive_rate must lie in (0, 0.5)")
    n_pos = round_half_up(n * positive_rate)
    if n_pos < 1 or n_pos >= n:
        raise ValueError("infeasible positive count")
    if d < 1:
        raise ValueError("d must be positive")
    rng = np.random.default_rng(seed)
    direction = rng.normal(size=d)
    direction /= np.linalg.norm(direction)
    labels = np.zeros(n, dtype=np.int64)
    labels[rng.permutation(n)[:n_pos]] = 1
    nuisance = rng.normal(size=(n, d))
    nuisance -= np.outer(nuisance @ direction, direction)
    along = np.where(labels == 1, separation, -separation) + noise * rng.normal(size=n)
    features = nuisance + np.outer(along, direction)
    return LabeledDataset(features, labels)


def split_dataset(dataset: LabeledDataset, sizes: Sequence[int], seed) -> list[LabeledDataset]:
    """Random disjoint split into consecutive chunks of the given sizes."""
    if sum(sizes) > dataset.n:
        raise ValueError("split sizes exceed dataset size")
    order = np.random.default_rng(seed).permutation(dataset.n)
    out, start = [], 0
    for s in sizes:
        out.append(dataset.subset(np.sort(order[start : start + s])))
        start += s
    return out


def _largest_remainder(total: int, proportions: np.ndarray) -> np.ndarray:
    raw = proportions / proportions.sum() * total
    base = np.floor(raw).astype(np.int64)
    short = total - int(base.sum())
    if short:
        # stable tie-break by position
        order = np.argsort(-(raw - base), kind="stable")
        base[order[:short]] += 1
    return base


def dirichlet_partition(
    dataset: LabeledDataset,
    n_clients: int,
    alpha: float,
    lognormal_sigma: float,
    seed,
) -> list[LabeledDataset]:
    """Label-skewed, size-imbalanced partition.

    Client size weights are log-normal(0, ``lognormal_sigma``) draws. For each
    class, the class's rows are shuffled and dealt to clients in proportion to
    ``size_weight * Dirichlet(alpha)`` (largest-remainder rounding), so the
    result is an exact partition of the input.

    Raises:
        ValueError: ``"partition infeasible"`` if any client ends up empty.
    """
    if n_clients < 1:
        raise ValueError("n_clients must be at least 1")
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    if lognormal_sigma < 0:
        raise ValueError("lognormal_sigma must be non-negative")
    if n_clients == 1:
        return [dataset.subset(np.arange(dataset.n))]
    rng = np.random.default_rng(seed)
    size_w = rng.lognormal(0.0, lognormal_sigma, size=n_clients)
    shards: list[list[np.ndarray]] = [[] for _ in range(n_clients)]
    for cls in (0, 1):
        rows = np.flatnonzero(dataset.labels == cls)
        rows = rows[rng.permutation(rows.size)]
        props = size_w * rng.dirichlet(np.full(n_clients, alpha))
        counts = _largest_remainder(rows.size, props)
        start = 0
        for c in range(n_clients):
            shards[c].append(rows[start : start + counts[c]])
            start += counts[c]
    out = []
    for parts in shards:
        rows = np.sort(np.concatenate(parts))
        if rows.size == 0:
            raise ValueError("partition infeasible")
        out.append(dataset.subset(rows))
    return out


def build_scenarios(dataset: LabeledDataset, R: int, omega=None, seed=0) -> ScenarioSet:
    """Split a validation set into ``R`` disjoint scenarios.

    Positives and negatives are shuffled separately and dealt into R
    near-equal chunks, so every scenario gets its share of the rare class.
    """
    if R < 1:
        raise ValueError("R must be at least 1")
    if R == 1:
        return ScenarioSet([dataset.subset(np.arange(dataset.n))], omega)
    rng = np.random.default_rng(seed)
    pos = np.flatnonzero(dataset.labels == 1)
    neg = np.flatnonzero(dataset.labels == 0)
    pos_chunks = np.array_split(pos[rng.permutation(pos.size)], R)
    neg_chunks = np.array_split(neg[rng.permutation(neg.size)], R)
    scenarios = []
    for p, q in zip(pos_chunks, neg_chunks):
        if p.size == 0:
            raise ValueError("scenario without positives")
        if q.size == 0:
            raise ValueError("scenario without negatives")
        scenarios.append(dataset.subset(np.sort(np.concatenate([p, q]))))
    return ScenarioSet(scenarios, omega)


def stratify_validation(scenarios: ScenarioSet, rho_neg: float, seed) -> ScenarioSet:
    """Keep every positive and ``min(floor(rho_neg * |P|), |N|)`` random negatives per scenario."""
    if not rho_neg > 0:
        raise ValueError("rho_neg must be positive")
    rng = np.random.default_rng(seed)
    out = []
    for s in scenarios.scenarios:
        pos = np.flatnonzero(s.labels == 1)
        neg = np.flatnonzero(s.labels == 0)
        k = min(int(math.floor(rho_neg * pos.size + 1e-9)), neg.size)
        keep = neg[np.sort(rng.choice(neg.size, size=k, replace=False))] if k else neg[:0]
        out.append(s.subset(np.sort(np.concatenate([pos, keep]))))
    return ScenarioSet(out, scenarios.omega)


def corrupt_labels(dataset: LabeledDataset, flip_frac: float, seed) -> LabeledDataset:
    """Flip ``round(flip_frac * n)`` uniformly chosen labels."""
    if not 0.0 <= flip_frac <= 1.0:
        raise ValueError("flip_frac must lie in [0, 1]")
    k = round_half_up(flip_frac * dataset.n)
    labels = dataset.labels.copy()
    if k:
        rows = np.random.default_rng(seed).choice(dataset.n, size=k, replace=False)
        labels[rows] = 1 - labels[rows]
    return LabeledDataset(dataset.features.copy(), labels, dataset.index.copy())


def assign_quality(profile_kind: str, seed, band: tuple[float, float] | None = None) -> QualityRates:
    """Draw missing/outlier/sync-error rates uniformly from the kind's band."""
    if band is None:
        if profile_kind not in QUALITY_BANDS:
            raise ValueError(f"unknown profile kind {profile_kind!r}")
        band = QUALITY_BANDS[profile_kind]
    lo, hi = band
    if not 0.0 <= lo <= hi <= 1.0:
        raise ValueError("quality band must satisfy 0 <= lo <= hi <= 1")
    r = np.random.default_rng(seed).uniform(lo, hi, size=3)
    return QualityRates(*(float(v) for v in r))


def feature_summary(dataset: LabeledDataset) -> np.ndarray:
    """Unit-normalised mean feature vector (zero vector if the mean vanishes)."""
    m = dataset.features.mean(axis=0)
    norm = np.linalg.norm(m)
    return m / norm if norm > 0 else m
