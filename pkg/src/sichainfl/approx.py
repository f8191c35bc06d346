"""Positive-example-driven approximate Shapley values for one training round.

Pipeline per round:

1. score the (stratified) validation scenarios with the incoming model;
2. pick hard positives, critical negatives and the threshold ``tau`` per
   scenario;
3. compute every client's score deltas, impact and ``eta``;
4. keep the top-K clients as singleton units and merge the rest by cosine
   similarity of their impact vectors;
5. estimate unit-level Shapley values of the hinge game by permutation
   sampling, then split merged-group values by ``eta`` share;
6. fold the round's values into the running EMA score.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Hashable, Iterable, Mapping, Sequence

import numpy as np

from .datagen import ScenarioSet
from .model import ModelParams, UpdateDelta, predict_proba


@dataclass
class ApproxConfig:
    K_top: int = 5
    M_hard: int = 20
    H_crit: int = 20
    delta_q: float = 0.05
    lambda_fp: float = 1.0
    kappa: float = 0.85
    K_perm: int = 50
    gamma_ema: float = 0.8
    eps_share: float = 1e-8
    rho_neg: float = 3.0
    mode: str = "additive"
    exhaustive: bool = False

    def __post_init__(self) -> None:
        for name in ("K_top", "M_hard", "H_crit", "K_perm"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1")
        if not 0.0 < self.delta_q < 1.0:
            raise ValueError("delta_q must lie in (0, 1)")
        if not self.lambda_fp >= 0:
            raise ValueError("lambda_fp must be non-negative")
        if not 0.0 < self.gamma_ema <= 1.0:
            raise ValueError("gamma_ema must lie in (0, 1]")
        if not self.eps_share >= 0:
            raise ValueError("eps_share must be non-negative")
        if not self.rho_neg > 0:
            raise ValueError("rho_neg must be positive")
        if self.mode not in ("additive", "full"):
            raise ValueError(f"unknown evaluation mode {self.mode!r}")


# ---------------------------------------------------------------------------
# scores and sample selection


def coalition_score(base_scores, deltas: Sequence[np.ndarray] = ()) -> np.ndarray:
    """``clip(base + sum(deltas), 0, 1)`` elementwise."""
    out = np.array(base_scores, dtype=np.float64)
    for d in deltas:
        d = np.asarray(d, dtype=np.float64)
        if d.shape != out.shape:
            raise ValueError("score vectors must have equal length")
        out = out + d
    return np.clip(out, 0.0, 1.0)


def score_deltas(model: ModelParams, update: UpdateDelta, samples: np.ndarray) -> np.ndarray:
    """Per-sample probability change caused by applying ``update`` to ``model``."""
    moved = model.with_weights(model.weights + update.delta)
    return np.atleast_1d(predict_proba(moved, samples) - predict_proba(model, samples))


def quantile_lower(values, q: float) -> float:
    """Order statistic ``sorted(values)[min(floor(q n), n - 1)]``."""
    v = np.sort(np.asarray(values, dtype=np.float64))
    if v.size == 0:
        raise ValueError("quantile of an empty set")
    return float(v[min(int(math.floor(q * v.size + 1e-12)), v.size - 1)])


@dataclass
class Selection:
    """Row indices (into one stratified scenario) of the decision-relevant samples."""

    hard_pos: np.ndarray
    crit_neg: np.ndarray
    tau: float

    @property
    def rows(self) -> np.ndarray:
        return np.concatenate([self.hard_pos, self.crit_neg])


def select_hard_and_critical(
    base_scores: Sequence[np.ndarray],
    stratified: ScenarioSet,
    M: int,
    H: int,
    delta_q: float,
) -> list[Selection]:
    """Bottom-M positives, top-H negatives and the ``(1 - delta_q)`` negative-score quantile.

    Ties in score are broken by ascending row index.
    """
    if M < 1 or H < 1:
        raise ValueError("M and H must be at least 1")
    out = []
    for s0, sc in zip(base_scores, stratified.scenarios):
        s0 = np.asarray(s0, dtype=np.float64)
        pos = np.flatnonzero(sc.labels == 1)
        neg = np.flatnonzero(sc.labels == 0)
        if pos.size == 0:
            raise ValueError("scenario without positives")
        if neg.size == 0:
            raise ValueError("scenario without negatives")
        hard = pos[np.lexsort((pos, s0[pos]))][:M]
        crit = neg[np.lexsort((neg, -s0[neg]))][:H]
        out.append(Selection(hard, crit, quantile_lower(s0[neg], 1.0 - delta_q)))
    return out


def hinge_utility(scores_hard, scores_crit, tau: float, lambda_fp: float) -> float:
    """Mean hinge lift of hard positives above ``tau`` minus the penalised lift of critical negatives."""
    hp = np.maximum(np.asarray(scores_hard, dtype=np.float64) - tau, 0.0)
    cn = np.maximum(np.asarray(scores_crit, dtype=np.float64) - tau, 0.0)
    if hp.size == 0 or cn.size == 0:
        raise ValueError("hard positives and critical negatives must be non-empty")
    return float(hp.mean() - lambda_fp * cn.mean())


def impact_score(singleton_scores, tau: float, hard_pos, crit_neg, lambda_fp: float) -> float:
    """Scenario impact of one client from its singleton-coalition scores."""
    s = np.asarray(singleton_scores, dtype=np.float64)
    return hinge_utility(s[np.asarray(hard_pos)], s[np.asarray(crit_neg)], tau, lambda_fp)


# ---------------------------------------------------------------------------
# impact profiles and grouping


@dataclass
class ImpactProfile:
    client_id: int
    per_scenario_imp: np.ndarray
    eta: float
    impact_vector: np.ndarray


def eta_from_impacts(per_scenario_imp, omega) -> float:
    return float(np.sum(np.asarray(omega) * np.maximum(np.asarray(per_scenario_imp), 0.0)))


@dataclass
class Grouping:
    top_clients: list[int]
    merged_groups: list[list[int]]
    kappa: float
    inert: list[int] = field(default_factory=list)

    def units(self) -> list[tuple[int, ...]]:
        """Every head as a singleton unit, then the merged groups, then the inert group."""
        out = [(c,) for c in self.top_clients]
        out += [tuple(g) for g in self.merged_groups]
        if self.inert:
            out.append(tuple(self.inert))
        return out

    def members(self) -> list[int]:
        return sorted(c for u in self.units() for c in u)


def _cosine(a: np.ndarray, b: np.ndarray) -> float:
    return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))


def merge_clients(profiles: Sequence[ImpactProfile], K_top: int, kappa: float) -> Grouping:
    """Keep the top-K clients by ``eta`` as heads and cluster the rest.

    Non-heads are visited in descending ``eta`` (ties by ascending id) and
    join the first group whose first member has cosine similarity of at
    least ``kappa``; otherwise they open a new group. Clients with an
    all-zero impact vector go to a single inert group.
    """
    if not profiles:
        raise ValueError("no profiles to merge")
    ordered = sorted(profiles, key=lambda p: (-p.eta, p.client_id))
    heads = [p.client_id for p in ordered[:K_top]]
    groups: list[list[ImpactProfile]] = []
    inert: list[int] = []
    for p in ordered[K_top:]:
        if not np.any(p.impact_vector):
            inert.append(p.client_id)
            continue
        for g in groups:
            if _cosine(g[0].impact_vector, p.impact_vector) >= kappa:
                g.append(p)
                break
        else:
            groups.append([p])
    return Grouping(heads, [[p.client_id for p in g] for g in groups], kappa, inert)


# ---------------------------------------------------------------------------
# group game


class HingeGame:
    """The round's hinge-utility game over client coalitions.

    Coalition scores are only needed on the hard/critical rows, so every
    evaluation touches at most ``R * (M + H)`` samples. ``evaluations`` counts
    those sample scorings for non-empty coalitions; the baseline scoring of
    the empty coalition is tracked separately in ``baseline_evaluations``.
    """

    def __init__(
        self,
        base_model: ModelParams,
        updates: Mapping[int, UpdateDelta],
        stratified: ScenarioSet,
        cfg: ApproxConfig,
    ):
        self.base_model = base_model
        self.updates = dict(updates)
        self.cfg = cfg
        self.omega = stratified.omega
        full_scores = [
            np.atleast_1d(predict_proba(base_model, s.features)) for s in stratified.scenarios
        ]
        self.selections = select_hard_and_critical(
            full_scores, stratified, cfg.M_hard, cfg.H_crit, cfg.delta_q
        )
        # all selected rows of all scenarios, concatenated scenario by scenario
        self.samples = np.vstack(
            [sc.features[sel.rows] for sc, sel in zip(stratified.scenarios, self.selections)]
        )
        self.base = np.concatenate([s[sel.rows] for s, sel in zip(full_scores, self.selections)])
        sizes = [sel.rows.size for sel in self.selections]
        self.bounds = np.cumsum([0] + sizes)
        self.n_hard = [sel.hard_pos.size for sel in self.selections]
        self.taus = [sel.tau for sel in self.selections]
        self.deltas = {c: score_deltas(base_model, u, self.samples) for c, u in self.updates.items()}
        self.sample_count = int(self.bounds[-1])
        self.evaluations = 0
        self.baseline_evaluations = self.sample_count

    def scores(self, clients: Iterable[int]) -> np.ndarray:
        """Coalition scores on the selected rows (concatenated over scenarios)."""
        members = sorted(clients)
        if not members:
            return self.base
        if self.cfg.mode == "additive":
            acc = self.base.copy()
            for c in members:
                acc += self.deltas[c]
            return np.clip(acc, 0.0, 1.0)
        w = self.base_model.weights.copy()
        for c in members:
            w = w + self.updates[c].delta
        return np.atleast_1d(predict_proba(self.base_model.with_weights(w), self.samples))

    def _utilities(self, s: np.ndarray) -> np.ndarray:
        out = np.empty(len(self.n_hard))
        for r, h in enumerate(self.n_hard):
            seg = s[self.bounds[r] : self.bounds[r + 1]]
            out[r] = hinge_utility(seg[:h], seg[h:], self.taus[r], self.cfg.lambda_fp)
        return out

    def scenario_utilities(self, clients: Iterable[int]) -> np.ndarray:
        members = sorted(clients)
        if members:
            self.evaluations += self.sample_count
        return self._utilities(self.scores(members))

    def value(self, clients: Iterable[int]) -> float:
        return float(np.sum(self.omega * self.scenario_utilities(clients)))

    def profile(self, client: int) -> ImpactProfile:
        """Impact of one client, using its singleton additive scores."""
        imp = self._utilities(np.clip(self.base + self.deltas[client], 0.0, 1.0))
        return ImpactProfile(client, imp, eta_from_impacts(imp, self.omega), self.deltas[client].copy())


def group_utility(units: Iterable[Sequence[int]], game: HingeGame) -> float:
    """Game value of a set of units (the union of their members)."""
    members = sorted({c for u in units for c in u})
    return game.value(members)


def perm_shapley(
    units: Sequence[Hashable],
    value_fn: Callable[[frozenset], float],
    K_perm: int,
    seed,
    exhaustive: bool = False,
) -> dict:
    """Permutation-sampled Shapley values over ``units``.

    ``value_fn`` receives a frozenset of units and is memoised per prefix
    set. With ``exhaustive`` every ordering is enumerated instead of
    sampling ``K_perm`` of them, which gives the exact Shapley value.
    """
    if K_perm < 1:
        raise ValueError("K_perm must be at least 1")
    units = list(units)
    n = len(units)
    if n == 0:
        return {}
    cache: dict[frozenset, float] = {}

    def v(s: frozenset) -> float:
        if s not in cache:
            cache[s] = value_fn(s)
        return cache[s]

    if exhaustive:
        orders: Iterable = itertools.permutations(range(n))
    else:
        rng = np.random.default_rng(seed)
        orders = (rng.permutation(n) for _ in range(K_perm))
    totals = np.zeros(n)
    count = 0
    for order in orders:
        prefix: frozenset = frozenset()
        prev = v(prefix)
        for j in order:
            nxt = prefix | {units[j]}
            cur = v(nxt)
            totals[j] += cur - prev
            prefix, prev = nxt, cur
        count += 1
    return {u: float(totals[j] / count) for j, u in enumerate(units)}


def redistribute(
    group_values: Mapping[tuple[int, ...], float],
    grouping: Grouping,
    eta: Mapping[int, float],
    eps_share: float,
) -> dict[int, float]:
    """Split each unit's value among its members.

    Singleton units keep their whole value. Inside a multi-member group,
    member ``i`` receives ``eta_i / (sum eta + eps_share)`` of the group value.
    """
    out: dict[int, float] = {}
    for unit in grouping.units():
        val = group_values[unit]
        if len(unit) == 1:
            out[unit[0]] = val
            continue
        total = sum(eta[c] for c in unit) + eps_share
        for c in unit:
            out[c] = eta[c] / total * val if total > 0 else 0.0
    return out


def accumulate(
    prev: Mapping[int, float], round_values: Mapping[int, float], gamma_ema: float
) -> dict[int, float]:
    """EMA update ``gamma * Phi + (1 - gamma) * phi``; absent clients decay to ``gamma * Phi``."""
    if not 0.0 <= gamma_ema <= 1.0:
        raise ValueError("gamma_ema must lie in [0, 1]")
    out = {c: gamma_ema * p for c, p in prev.items()}
    for c, phi in round_values.items():
        out[c] = gamma_ema * prev.get(c, 0.0) + (1.0 - gamma_ema) * phi
    return out


# ---------------------------------------------------------------------------
# one round end to end


@dataclass
class RoundShapley:
    profiles: dict[int, ImpactProfile]
    grouping: Grouping
    group_values: dict[tuple[int, ...], float]
    phi_hat: dict[int, float]
    evaluations: int
    baseline_evaluations: int
    grouped_bound: int
    naive_bound: int
    v_empty: float
    v_all: float


def round_shapley(
    base_model: ModelParams,
    updates: Mapping[int, UpdateDelta],
    stratified: ScenarioSet,
    cfg: ApproxConfig,
    seed,
    val_size: int | None = None,
) -> RoundShapley:
    """Run the full approximation for one round's participants.

    ``val_size`` is the unstratified validation size used for the naive
    evaluation bound (defaults to the stratified size).
    """
    if not updates:
        raise ValueError("no participants")
    game = HingeGame(base_model, updates, stratified, cfg)
    profiles = {c: game.profile(c) for c in sorted(updates)}
    grouping = merge_clients([profiles[c] for c in sorted(updates)], cfg.K_top, cfg.kappa)
    units = grouping.units()
    game.evaluations = 0
    values = perm_shapley(
        units,
        lambda s: group_utility(s, game),
        cfg.K_perm,
        seed,
        exhaustive=cfg.exhaustive,
    )
    evaluations = game.evaluations
    eta = {c: p.eta for c, p in profiles.items()}
    phi_hat = redistribute(values, grouping, eta, cfg.eps_share)
    R = stratified.R
    n_val = stratified.total if val_size is None else val_size
    return RoundShapley(
        profiles=profiles,
        grouping=grouping,
        group_values=values,
        phi_hat=phi_hat,
        evaluations=evaluations,
        baseline_evaluations=game.baseline_evaluations,
        grouped_bound=cfg.K_perm * len(units) * R * (cfg.M_hard + cfg.H_crit),
        naive_bound=cfg.K_perm * len(updates) * n_val,
        v_empty=game.value([]),
        v_all=game.value(list(updates)),
    )


SHAPLEY_COLUMNS = ("round", "client_id", "participated", "eta", "phi_hat", "Phi_accum", "Phi_increment")


def write_shapley_csv(rows: Sequence[Mapping], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SHAPLEY_COLUMNS)
        for row in rows:
            w.writerow([_fmt(row[k]) for k in SHAPLEY_COLUMNS])


def _fmt(v) -> str:
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float):
        return repr(v)
    return str(v)
