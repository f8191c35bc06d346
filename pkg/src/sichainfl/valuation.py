"""Multi-objective coalition value and exact Shapley values.

The coalition value fuses three terms:

* rare-event utility: per-scenario normalised AUPRC and FPR-budgeted MCC,
  blended geometrically and then combined across scenarios by a weighted
  geometric mean;
* diversity: one minus the mean pairwise (1 + cos) / 2 similarity of the
  members' feature summaries;
* data quality: ``1 - prod(1 - C_i L_i)`` over members.

:func:`exact_shapley` is the brute-force reference used to validate the
grouped permutation estimator in :mod:`sichainfl.approx`.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Hashable, Iterable, Mapping, Sequence

import numpy as np

from .datagen import LabeledDataset, QualityRates, ScenarioSet
from .model import ModelParams, UpdateDelta, predict_proba

MAX_EXACT_PLAYERS = 20
DEFAULT_GRID = tuple(round(0.01 * k, 2) for k in range(1, 100))


@dataclass
class ValuationConfig:
    alpha_blend: float = 0.5
    beta_r: np.ndarray | None = None
    eps_stab: float = 1e-8
    rho_fpr: float = 0.1
    gamma1: float = 1.0
    gamma2: float = 1.0
    gamma3: float = 1.0
    gamma4: float = 1.0
    lambda_acc: float = 0.6
    lambda_div: float = 0.2
    lambda_qua: float = 0.2
    lambda_decay: float = 0.1
    threshold_grid: tuple[float, ...] = DEFAULT_GRID

    def __post_init__(self) -> None:
        if not 0.0 <= self.alpha_blend <= 1.0:
            raise ValueError("alpha_blend must lie in [0, 1]")
        if not self.eps_stab > 0:
            raise ValueError("eps_stab must be positive")
        if not 0.0 < self.rho_fpr < 1.0:
            raise ValueError("rho_fpr must lie in (0, 1)")
        lam = (self.lambda_acc, self.lambda_div, self.lambda_qua)
        if min(lam) < 0 or abs(sum(lam) - 1.0) > 1e-12:
            raise ValueError("lambda_acc + lambda_div + lambda_qua must equal 1")
        if min(self.gamma1, self.gamma2, self.gamma3, self.gamma4, self.lambda_decay) < 0:
            raise ValueError("gamma and lambda_decay must be non-negative")
        grid = np.asarray(self.threshold_grid, dtype=np.float64)
        if grid.size == 0:
            raise ValueError("empty threshold grid")
        if np.any(np.diff(grid) <= 0) or grid[0] <= 0 or grid[-1] >= 1:
            raise ValueError("threshold_grid must be strictly increasing inside (0, 1)")
        if self.beta_r is not None:
            b = np.asarray(self.beta_r, dtype=np.float64)
            if np.any(b < 0) or abs(b.sum() - 1.0) > 1e-12:
                raise ValueError("beta_r must be a probability vector")
            self.beta_r = b

    def beta(self, R: int) -> np.ndarray:
        if self.beta_r is None:
            return np.full(R, 1.0 / R)
        if self.beta_r.size != R:
            raise ValueError(f"beta_r has {self.beta_r.size} entries, expected {R}")
        return self.beta_r


# ---------------------------------------------------------------------------
# classification metrics


def _check_binary(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if s.shape != y.shape or s.ndim != 1:
        raise ValueError("scores and labels must be equal-length vectors")
    return s, y


def auprc(scores, labels) -> float:
    """Step-wise area under the precision-recall curve (average precision).

    Each distinct score is one threshold; the area is
    ``sum_k (R_k - R_{k-1}) * P_k`` over thresholds in decreasing order.
    """
    s, y = _check_binary(scores, labels)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise ValueError("undefined AUPRC")
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    tp = np.cumsum(y)
    fp = np.cumsum(1 - y)
    # last index of every run of tied scores
    last = np.r_[np.flatnonzero(np.diff(s) != 0), s.size - 1]
    tp, fp = tp[last], fp[last]
    precision = tp / (tp + fp)
    recall = tp / n_pos
    return float(np.sum(np.diff(np.r_[0.0, recall]) * precision))


def normalized_auprc(a: float, pi_r: float) -> float:
    if not 0.0 < pi_r < 1.0:
        raise ValueError("positive fraction must lie in (0, 1)")
    return (a - pi_r) / (1.0 - pi_r)


def confusion(scores, labels, tau: float) -> tuple[int, int, int, int]:
    """(TP, FP, FN, TN) when predicting positive for ``score >= tau``."""
    s, y = _check_binary(scores, labels)
    pred = s >= tau
    tp = int(np.sum(pred & (y == 1)))
    fp = int(np.sum(pred & (y == 0)))
    fn = int(np.sum(~pred & (y == 1)))
    tn = int(np.sum(~pred & (y == 0)))
    return tp, fp, fn, tn


def mcc(tp: int, fp: int, fn: int, tn: int) -> float:
    denom = math.sqrt((tp + fp) * (tp + fn) * (tn + fp) * (tn + fn))
    if denom == 0:
        return 0.0
    return (tp * tn - fp * fn) / denom


def mcc_budgeted(scores, labels, grid: Sequence[float], rho_fpr: float) -> float:
    """Best MCC over grid thresholds whose FPR stays within ``rho_fpr``, mapped to [0, 1].

    No feasible threshold counts as MCC = -1.
    """
    s, y = _check_binary(scores, labels)
    if len(grid) == 0:
        raise ValueError("empty threshold grid")
    if y.sum() == 0 or y.sum() == y.size:
        raise ValueError("need at least one positive and one negative")
    pos, neg = s[y == 1], s[y == 0]
    best = -1.0
    for tau in grid:
        fp = int(np.sum(neg >= tau))
        tn = neg.size - fp
        if fp / neg.size > rho_fpr:
            continue
        tp = int(np.sum(pos >= tau))
        best = max(best, mcc(tp, fp, pos.size - tp, tn))
    return (best + 1.0) / 2.0


def rare_event_utility(A_tilde: float, M_tilde: float, alpha_blend: float) -> float:
    """``A^alpha * M^(1 - alpha)`` with inputs clamped to [0, 1] and ``0**0 = 1``."""
    a = min(max(A_tilde, 0.0), 1.0)
    m = min(max(M_tilde, 0.0), 1.0)
    return _pow(a, alpha_blend) * _pow(m, 1.0 - alpha_blend)


def _pow(base: float, exp: float) -> float:
    return 1.0 if exp == 0 else base**exp


def acc_utility(v_r_vec, beta_r, eps_stab: float) -> float:
    v = np.asarray(v_r_vec, dtype=np.float64)
    b = np.asarray(beta_r, dtype=np.float64)
    if v.shape != b.shape:
        raise ValueError("one weight per scenario")
    with np.errstate(divide="ignore"):
        return float(np.exp(np.sum(b * np.log(v + eps_stab))))


def diversity(S: Iterable[Hashable], feature_summaries: Mapping) -> float:
    members = sorted(S)
    if len(members) < 2:
        return 0.0
    z = []
    for i in members:
        v = np.asarray(feature_summaries[i], dtype=np.float64)
        norm = np.linalg.norm(v)
        if norm == 0:
            raise ValueError("degenerate summary")
        z.append(v / norm)
    Z = np.vstack(z)
    cos = np.clip(Z @ Z.T, -1.0, 1.0)
    iu = np.triu_indices(len(members), k=1)
    k_bar = float(np.mean((1.0 + cos[iu]) / 2.0))
    return min(max(1.0 - k_bar, 0.0), 1.0)


def cleanliness(rates: QualityRates, gammas: tuple[float, float, float]) -> float:
    g1, g2, g3 = gammas
    return math.exp(-g1 * rates.miss_rate - g2 * rates.outlier_rate - g3 * rates.sync_rate)


def label_credibility(dataset: LabeledDataset, global_model: ModelParams, gamma4: float) -> float:
    if dataset.n == 0:
        raise ValueError("empty dataset")
    p = predict_proba(global_model, dataset.features)
    ell = float(np.mean((dataset.labels - p) ** 2))
    return math.exp(-gamma4 * ell)


def data_quality(S: Iterable[Hashable], quality: Mapping) -> float:
    prod = 1.0
    for i in sorted(S):
        c, l = quality[i]
        prod *= 1.0 - c * l
    return 1.0 - prod


def time_decay_weights(T: int, lambda_decay: float) -> np.ndarray:
    """Normalised ``exp(-lambda (T - t))`` for t = 1..T (most recent round last)."""
    if T < 1:
        raise ValueError("T must be at least 1")
    if lambda_decay < 0:
        raise ValueError("lambda_decay must be non-negative")
    t = np.arange(1, T + 1)
    w = np.exp(-lambda_decay * (T - t))
    return w / w.sum()


# ---------------------------------------------------------------------------
# coalition value


@dataclass
class CoalitionContext:
    """Everything the coalition value needs for one round.

    ``quality`` maps client id to the pair (C_i, L_i).
    """

    base_model: ModelParams
    client_updates: Mapping[int, UpdateDelta]
    scenarios: ScenarioSet
    feature_summaries: Mapping[int, np.ndarray]
    quality: Mapping[int, tuple[float, float]]
    _base_scores: list[np.ndarray] = field(default_factory=list, repr=False)
    _deltas: dict = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        ids = set(self.client_updates)
        if ids != set(self.feature_summaries) or ids != set(self.quality):
            raise ValueError("client ids must agree across updates, summaries and quality")
        for c, l in self.quality.values():
            if not (0.0 < c <= 1.0 and 0.0 < l <= 1.0):
                raise ValueError("C_i and L_i must lie in (0, 1]")

    @property
    def clients(self) -> list[int]:
        return sorted(self.client_updates)

    def base_scores(self) -> list[np.ndarray]:
        if not self._base_scores:
            self._base_scores = [
                predict_proba(self.base_model, s.features) for s in self.scenarios.scenarios
            ]
        return self._base_scores

    def score_delta(self, client: int) -> list[np.ndarray]:
        if client not in self._deltas:
            model = self.base_model.with_weights(
                self.base_model.weights + self.client_updates[client].delta
            )
            self._deltas[client] = [
                predict_proba(model, s.features) - b
                for s, b in zip(self.scenarios.scenarios, self.base_scores())
            ]
        return self._deltas[client]

    def coalition_scores(self, S: Iterable[int], mode: str = "full") -> list[np.ndarray]:
        """Per-scenario scores of the coalition model ``theta + sum of member updates``.

        ``full`` re-evaluates that model; ``additive`` clips the base scores plus
        the members' individual score changes to [0, 1].
        """
        members = sorted(S)
        if not members:
            return self.base_scores()
        if mode == "full":
            w = self.base_model.weights.copy()
            for i in members:
                w = w + self.client_updates[i].delta
            model = self.base_model.with_weights(w)
            return [predict_proba(model, s.features) for s in self.scenarios.scenarios]
        if mode == "additive":
            out = []
            for r, b in enumerate(self.base_scores()):
                acc = b.copy()
                for i in members:
                    acc = acc + self.score_delta(i)[r]
                out.append(np.clip(acc, 0.0, 1.0))
            return out
        raise ValueError(f"unknown evaluation mode {mode!r}")


def acc_value(scores: Sequence[np.ndarray], scenarios: ScenarioSet, cfg: ValuationConfig) -> float:
    v_r = []
    for s, sc, pi in zip(scores, scenarios.scenarios, scenarios.pi):
        a = max(normalized_auprc(auprc(s, sc.labels), pi), 0.0)
        m = mcc_budgeted(s, sc.labels, cfg.threshold_grid, cfg.rho_fpr)
        v_r.append(rare_event_utility(a, m, cfg.alpha_blend))
    return acc_utility(v_r, cfg.beta(scenarios.R), cfg.eps_stab)


def coalition_value(
    S: Iterable[int], ctx: CoalitionContext, cfg: ValuationConfig, mode: str = "full"
) -> float:
    members = sorted(S)
    unknown = set(members) - set(ctx.client_updates)
    if unknown:
        raise ValueError(f"unknown clients in coalition: {sorted(unknown)}")
    value = cfg.lambda_acc * acc_value(ctx.coalition_scores(members, mode), ctx.scenarios, cfg)
    if members:
        value += cfg.lambda_div * diversity(members, ctx.feature_summaries)
        value += cfg.lambda_qua * data_quality(members, ctx.quality)
    return value


# ---------------------------------------------------------------------------
# exact Shapley


def exact_shapley(value_fn: Callable[[frozenset], float], players: Iterable[Hashable]) -> dict:
    """Shapley values by enumerating all ``2**n`` coalitions.

    ``value_fn`` is called once per subset (as a frozenset), in canonical
    bitmask order, so the result does not depend on the iteration order of
    ``players``.
    """
    plist = sorted(players)
    n = len(plist)
    if n > MAX_EXACT_PLAYERS:
        raise ValueError("use approximation")
    if n == 0:
        return {}
    values = np.empty(1 << n)
    for mask in range(1 << n):
        values[mask] = value_fn(frozenset(plist[j] for j in range(n) if mask >> j & 1))
    sizes = np.array([bin(m).count("1") for m in range(1 << n)])
    # weight[k] = k! (n-k-1)! / n!
    weight = np.array(
        [math.factorial(k) * math.factorial(n - k - 1) / math.factorial(n) for k in range(n)]
    )
    masks = np.arange(1 << n)
    phi = {}
    for j, p in enumerate(plist):
        without = masks[(masks >> j & 1) == 0]
        marg = values[without | (1 << j)] - values[without]
        phi[p] = float(math.fsum(weight[sizes[without]] * marg))
    return phi


def shapley_by_permutations(value_fn: Callable[[frozenset], float], players: Iterable[Hashable]) -> dict:
    """Average marginal contribution over all ``n!`` orderings (independent oracle, tiny n only)."""
    plist = sorted(players)
    totals = {p: 0.0 for p in plist}
    cache: dict[frozenset, float] = {}

    def v(s):
        if s not in cache:
            cache[s] = value_fn(s)
        return cache[s]

    count = 0
    for perm in itertools.permutations(plist):
        prefix: frozenset = frozenset()
        for p in perm:
            nxt = prefix | {p}
            totals[p] += v(nxt) - v(prefix)
            prefix = nxt
        count += 1
    return {p: t / count for p, t in totals.items()}
