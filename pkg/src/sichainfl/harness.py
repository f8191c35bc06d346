"""Experiment orchestration: data setup, the contribution-gated training loop,
the FedAvg baseline, per-round monitors and report files."""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Mapping

import numpy as np

from . import __version__
from .adversary import (
    TAG_NOISE,
    BehaviorKind,
    ClientProfile,
    TrainSpec,
    behave,
    client_seed,
    honest_update,
)
from .approx import ApproxConfig, accumulate, round_shapley, write_shapley_csv
from .consensus import (
    ConsensusConfig,
    Ledger,
    build_committee,
    deviation_report,
    aggregate_checks,
    make_block,
    shapley_aggregate,
    threshold_sign,
    block_digest,
    validator_vote,
    verify_signature,
    weighted_votes,
    admission,
)
from .datagen import (
    LabeledDataset,
    ScenarioSet,
    assign_quality,
    build_scenarios,
    corrupt_labels,
    dirichlet_partition,
    gen_rare_event_dataset,
    round_half_up,
    split_dataset,
    stratify_validation,
)
from .model import (
    DpConfig,
    ModelParams,
    UpdateDelta,
    apply_update,
    clip_update,
    dp_account,
    gaussianize,
    predict_proba,
)
from .valuation import (
    CoalitionContext,
    ValuationConfig,
    auprc,
    cleanliness,
    coalition_value,
    label_credibility,
    time_decay_weights,
)

ATTACKS = {"none": None, "fr": "free_rider", "pa": "poisoner"}
PARTITION_RETRIES = 20

TAG_DATA, TAG_PARTITION, TAG_ROLES, TAG_PARTICIPATION, TAG_SHAPLEY, TAG_SCENARIO = range(10, 16)


@dataclass
class DataSpec:
    n_train: int = 20000
    n_val: int = 4000
    n_validator: int = 2000
    n_test: int = 4000
    d: int = 10
    positive_rate: float = 0.05
    noise: float = 0.5
    separation: float = 1.5
    dirichlet_alpha: float = 0.5
    lognormal_sigma: float = 0.5
    R: int = 4
    honest_low_frac: float = 0.2
    label_noise: float = 0.2
    arch: str = "logistic"
    hidden: int | None = None

    def __post_init__(self) -> None:
        if min(self.n_train, self.n_val, self.n_validator, self.n_test, self.d, self.R) < 1:
            raise ValueError("data sizes, d and R must be positive")
        if not 0.0 <= self.honest_low_frac <= 1.0:
            raise ValueError("honest_low_frac must lie in [0, 1]")


@dataclass
class ExperimentConfig:
    n_clients: int = 100
    rounds: int = 100
    participation_frac: float = 0.7
    malicious_frac: float = 0.1
    attack: str = "none"
    validator_count: int = 10
    byzantine_validators: int = 2
    seed: int = 0
    flip_frac: float = 1.0
    phi_threshold: float = 0.0
    data: DataSpec = field(default_factory=DataSpec)
    train: TrainSpec = field(default_factory=TrainSpec)
    dp: DpConfig = field(default_factory=DpConfig)
    valuation: ValuationConfig = field(default_factory=ValuationConfig)
    approx: ApproxConfig = field(default_factory=ApproxConfig)
    consensus: ConsensusConfig = field(default_factory=ConsensusConfig)

    def __post_init__(self) -> None:
        if self.n_clients < 1:
            raise ValueError("n_clients must be at least 1")
        if self.rounds < 1:
            raise ValueError("rounds must be at least 1")
        for name in ("participation_frac", "malicious_frac"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.participation_frac == 0:
            raise ValueError("participation_frac must be positive")
        if self.attack not in ATTACKS:
            raise ValueError(f"attack must be one of {sorted(ATTACKS)}")
        if not 0 <= self.byzantine_validators <= self.validator_count:
            raise ValueError("byzantine_validators must lie in [0, validator_count]")
        if self.validator_count < 1:
            raise ValueError("validator_count must be at least 1")

    def to_dict(self) -> dict:
        return _plain(asdict(self))


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


NESTED = {
    "data": DataSpec,
    "train": TrainSpec,
    "dp": DpConfig,
    "valuation": ValuationConfig,
    "approx": ApproxConfig,
    "consensus": ConsensusConfig,
}


def config_from_dict(raw: Mapping) -> ExperimentConfig:
    """Build a config from nested plain data; unknown keys are errors."""
    top = {f.name for f in fields(ExperimentConfig)}
    unknown = set(raw) - top
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    kwargs = {}
    for key, value in raw.items():
        if key in NESTED:
            cls = NESTED[key]
            if not isinstance(value, Mapping):
                raise ValueError(f"[{key}] must be a table")
            allowed = {f.name for f in fields(cls) if f.init}
            bad = set(value) - allowed
            if bad:
                raise ValueError(f"unknown keys in [{key}]: {sorted(bad)}")
            sub = dict(value)
            if key == "valuation" and "threshold_grid" in sub:
                sub["threshold_grid"] = tuple(sub["threshold_grid"])
            kwargs[key] = cls(**sub)
        else:
            kwargs[key] = value
    return ExperimentConfig(**kwargs)


# ---------------------------------------------------------------------------
# setup shared by both pipelines


@dataclass
class Setup:
    cfg: ExperimentConfig
    clients: list[ClientProfile]
    scenarios: ScenarioSet
    stratified: ScenarioSet
    val: LabeledDataset
    test: LabeledDataset
    committee: list
    init_model: ModelParams
    secret: bytes

    @property
    def behaviors(self) -> dict[int, str]:
        return {c.client_id: c.behavior.kind for c in self.clients}

    def malicious(self) -> set[int]:
        return {c.client_id for c in self.clients if c.behavior.malicious}

    def participants(self, round: int) -> list[int]:
        n = self.cfg.n_clients
        m = min(n, max(1, round_half_up(self.cfg.participation_frac * n)))
        rng = np.random.default_rng([self.cfg.seed, round, TAG_PARTICIPATION])
        return sorted(int(i) for i in rng.choice(n, size=m, replace=False))


def run_secret(seed: int) -> bytes:
    """Per-run signing secret, derived from the seed so runs are reproducible."""
    return hashlib.sha256(b"sichainfl-run-secret:" + str(int(seed)).encode()).digest()


def build_setup(cfg: ExperimentConfig) -> Setup:
    ds = cfg.data
    total = ds.n_train + ds.n_val + ds.n_validator + ds.n_test
    pool = gen_rare_event_dataset(
        total, ds.d, ds.positive_rate, ds.noise, [cfg.seed, TAG_DATA], separation=ds.separation
    )
    train, val, vpool, test = split_dataset(
        pool, [ds.n_train, ds.n_val, ds.n_validator, ds.n_test], [cfg.seed, TAG_DATA, 1]
    )
    shards = None
    for attempt in range(PARTITION_RETRIES):
        try:
            shards = dirichlet_partition(
                train, cfg.n_clients, ds.dirichlet_alpha, ds.lognormal_sigma,
                [cfg.seed, TAG_PARTITION, attempt],
            )
            break
        except ValueError as exc:
            if "partition infeasible" not in str(exc):
                raise
    if shards is None:
        raise ValueError("partition infeasible after retries; use fewer clients")

    rng = np.random.default_rng([cfg.seed, TAG_ROLES])
    order = rng.permutation(cfg.n_clients)
    kind = ATTACKS[cfg.attack]
    n_mal = round_half_up(cfg.malicious_frac * cfg.n_clients) if kind else 0
    mal = set(order[:n_mal].tolist())
    honest_order = order[n_mal:]
    n_low = round_half_up(ds.honest_low_frac * honest_order.size)
    low = set(honest_order[:n_low].tolist())

    clients = []
    for i, shard in enumerate(shards):
        if i in mal:
            beh = BehaviorKind(kind, flip_frac=cfg.flip_frac)
        elif i in low:
            beh = BehaviorKind("honest_low", label_noise=ds.label_noise)
        else:
            beh = BehaviorKind("honest_high")
        data = shard
        if beh.kind == "honest_low":
            data = corrupt_labels(shard, beh.label_noise, [cfg.seed, TAG_ROLES, i])
        quality = assign_quality(beh.kind, [cfg.seed, TAG_ROLES, i, 1])
        clients.append(ClientProfile(i, data, quality, beh, clean=shard))

    scenarios = build_scenarios(val, ds.R, seed=[cfg.seed, TAG_SCENARIO])
    stratified = stratify_validation(scenarios, cfg.approx.rho_neg, [cfg.seed, TAG_SCENARIO, 1])
    v_order = np.random.default_rng([cfg.seed, TAG_ROLES, 2]).permutation(vpool.n)
    v_shards = [vpool.subset(np.sort(c)) for c in np.array_split(v_order, cfg.validator_count)]
    byz = [k < cfg.byzantine_validators for k in range(cfg.validator_count)]
    committee = build_committee(
        [1.0] * cfg.validator_count,
        byz,
        v_shards,
        xi=cfg.consensus.xi,
        override=cfg.consensus.allow_byzantine_override,
    )
    model = ModelParams.init(ds.d, ds.arch, ds.hidden, seed=cfg.seed)
    return Setup(cfg, clients, scenarios, stratified, val, test, committee, model, run_secret(cfg.seed))


# ---------------------------------------------------------------------------
# reporting


METRIC_COLUMNS = (
    "round",
    "participants",
    "admitted",
    "malicious_admitted",
    "aborted",
    "accuracy",
    "mae",
    "auprc",
    "update_norm",
    "weight_sum",
    "min_weight",
    "alpha_t",
    "deviation",
    "deviation_bound",
    "deviation_ok",
    "removal_deviation",
    "removal_ok",
    "weights_ok",
    "norm_ok",
    "units",
    "eval_count",
    "grouped_bound",
    "naive_bound",
    "evals_ok",
    "nu_admitted",
    "malicious_phi_above",
)


@dataclass
class MetricsReport:
    pipeline: str
    config: dict
    rounds: list[dict]
    shapley_rows: list[dict]
    final_phi: dict[int, float]
    behaviors: dict[int, str]
    ledger: Ledger
    dp_total: tuple[float, float] | None
    dp_per_client: dict[int, tuple[float, float]]
    secret: bytes = b""

    @property
    def final_accuracy(self) -> float:
        return self.rounds[-1]["accuracy"]

    @property
    def monitors_ok(self) -> bool:
        keys = ("deviation_ok", "removal_ok", "weights_ok", "norm_ok", "evals_ok")
        return all(r.get(k, True) for r in self.rounds for k in keys)

    def offline_phi(self, scheme: str = "geometric", gamma: float | None = None, lambda_decay: float = 0.1) -> dict[int, float]:
        """Re-weight the per-round values after the fact.

        ``geometric``: ``sum_t gamma^(T-t) phi_t``. ``normalized``: weights
        ``exp(-lambda (T-t))`` normalised to sum to one.
        """
        T = len(self.rounds)
        per_client: dict[int, np.ndarray] = {}
        for row in self.shapley_rows:
            per_client.setdefault(row["client_id"], np.zeros(T))[row["round"]] = row["phi_hat"]
        if scheme == "geometric":
            g = self.config["approx"]["gamma_ema"] if gamma is None else gamma
            w = g ** (T - 1 - np.arange(T))
        elif scheme == "normalized":
            w = time_decay_weights(T, lambda_decay)
        else:
            raise ValueError(f"unknown scheme {scheme!r}")
        return {c: float(v @ w) for c, v in sorted(per_client.items())}


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_metrics_csv(rounds: list[dict], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRIC_COLUMNS)
        for row in rounds:
            w.writerow([_fmt(row.get(k, "")) for k in METRIC_COLUMNS])


def _json_num(x: float):
    return x if math.isfinite(x) else ("inf" if x > 0 else "-inf")


def emit_report(report: MetricsReport, out_dir: str | Path) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "metrics": out / "metrics.csv",
        "shapley": out / "shapley.csv",
        "ledger": out / "ledger.ndjson",
        "manifest": out / "manifest.json",
    }
    write_metrics_csv(report.rounds, paths["metrics"])
    write_shapley_csv(report.shapley_rows, paths["shapley"])
    report.ledger.write(paths["ledger"])
    manifest = {
        "version": f"v{__version__}",
        "pipeline": report.pipeline,
        "seed": report.config["seed"],
        "config": report.config,
        "behaviors": {str(k): v for k, v in sorted(report.behaviors.items())},
        "final_phi": {str(k): v for k, v in sorted(report.final_phi.items())},
        "dp_total": None if report.dp_total is None else [_json_num(x) for x in report.dp_total],
        "ledger_length": len(report.ledger),
        "monitors_ok": report.monitors_ok,
        "signing_secret": report.secret.hex(),
        "validator_stakes": [1.0] * report.config["validator_count"],
        "byzantine_validators": report.config["byzantine_validators"],
    }
    paths["manifest"].write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return paths


# ---------------------------------------------------------------------------
# pipelines


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("SICHAINFL_THREADS", "1")))
    except ValueError:
        return 1


def _fan_out(fn: Callable, items: list) -> list:
    """Map ``fn`` over ``items``, in a thread pool if SICHAINFL_THREADS > 1; order is preserved."""
    n = _threads()
    if n == 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


def evaluate(model: ModelParams, test: LabeledDataset) -> dict[str, float]:
    p = predict_proba(model, test.features)
    y = test.labels
    return {
        "accuracy": float(np.mean((p >= 0.5).astype(np.int64) == y)),
        "mae": float(np.mean(np.abs(p - y))),
        "auprc": auprc(p, y),
    }


def _raw_updates(setup: Setup, model: ModelParams, t: int, part: list[int], history: dict) -> dict[int, UpdateDelta]:
    cfg = setup.cfg
    ups = _fan_out(
        lambda i: behave(setup.clients[i], model, t, history.get(i, []), cfg.train, cfg.seed), part
    )
    return dict(zip(part, ups))


def run_experiment(cfg: ExperimentConfig, setup: Setup | None = None) -> MetricsReport:
    """Contribution-gated federated training for ``cfg.rounds`` rounds."""
    setup = setup or build_setup(cfg)
    C = cfg.dp.clip_bound
    sigma = cfg.dp.sigma
    eps_round = cfg.dp.epsilon
    psi = cfg.consensus.psi
    model = setup.init_model
    n_weights = model.size
    noise_slack = sigma * (math.sqrt(n_weights) + 6.0)
    malicious = setup.malicious()
    stakes = {v.id: v.stake for v in setup.committee}
    W = sum(stakes.values())
    ledger = Ledger()
    Phi = {c.client_id: 0.0 for c in setup.clients}
    history: dict[int, list[UpdateDelta]] = {}
    dp_rounds: dict[int, list[tuple[float, float]]] = {}
    rows, shapley_rows = [], []

    for t in range(cfg.rounds):
        try:
            part = setup.participants(t)
            raw = _raw_updates(setup, model, t, part, history)
            for i in part:
                history.setdefault(i, []).append(raw[i])
            noise_seed = {i: client_seed(cfg.seed, t, i, TAG_NOISE) for i in part}
            sent = {i: gaussianize(clip_update(raw[i], C), sigma, noise_seed[i]) for i in part}
            # what each malicious participant would have sent had it been honest
            mal_part = [i for i in part if i in malicious]
            honest_raw = _fan_out(
                lambda i: honest_update(setup.clients[i], model, t, cfg.train, cfg.seed), mal_part
            )
            counterfactual = dict(sent)
            for i, u in zip(mal_part, honest_raw):
                counterfactual[i] = gaussianize(clip_update(u, C), sigma, noise_seed[i])
            for i in part:
                dp_rounds.setdefault(i, []).append((eps_round, cfg.dp.delta_dp))

            rs = round_shapley(
                model, sent, setup.stratified, cfg.approx, [cfg.seed, t, TAG_SHAPLEY], val_size=setup.val.n
            )
            prev_phi = Phi
            Phi = accumulate(Phi, rs.phi_hat, cfg.approx.gamma_ema)
            for c in sorted(Phi):
                inp = c in rs.phi_hat
                shapley_rows.append(
                    {
                        "round": t,
                        "client_id": c,
                        "participated": inp,
                        "eta": rs.profiles[c].eta if inp else 0.0,
                        "phi_hat": rs.phi_hat[c] if inp else 0.0,
                        "Phi_accum": Phi[c],
                        "Phi_increment": Phi[c] - prev_phi[c],
                    }
                )

            votes = {}
            for v in setup.committee:
                bits = _fan_out(
                    lambda i: validator_vote(v, sent[i], model, C, cfg.consensus.loss_margin, noise_slack),
                    part,
                )
                for i, b in zip(part, bits):
                    votes[(v.id, i)] = b
            B = weighted_votes(votes, stakes, {i: Phi[i] for i in part}, psi)
            admitted = admission(B, W, cfg.consensus.zeta)

            Delta, w = shapley_aggregate(admitted, sent, Phi, psi, cfg.consensus.eps_agg, C, n_weights)
            Delta_H, _ = shapley_aggregate(admitted, counterfactual, Phi, psi, cfg.consensus.eps_agg, C, n_weights)
            honest_adm = [k for k, i in enumerate(admitted) if i not in malicious]
            Delta_R = np.zeros(n_weights)
            for k in honest_adm:
                Delta_R += w[k] * clip_update(sent[admitted[k]], C).delta
            alpha_t = float(sum(w[k] for k, i in enumerate(admitted) if i in malicious))
            dev = deviation_report(Delta, Delta_H, alpha_t, C)
            rem = deviation_report(Delta, Delta_R, alpha_t, C)
            weights_ok, norm_ok = aggregate_checks(w, Delta, C)

            adm_updates = [sent[i] for i in admitted]
            msg = block_digest(t, admitted, adm_updates)
            sig = threshold_sign(setup.committee, msg, cfg.consensus.tau_sign, setup.secret)
            aborted = sig is None
            if not aborted:
                model = apply_update(model, Delta, cfg.consensus.server_lr)
                ledger.append(make_block(t, admitted, adm_updates, w, model, sig, ledger.head_hash))

            nu = admitted_value(setup, model, admitted, cfg.valuation) if admitted else float("nan")

            mal_scores = [Phi[i] for i in sorted(malicious)]
            row = {
                "round": t,
                "participants": len(part),
                "admitted": len(admitted),
                "malicious_admitted": sum(i in malicious for i in admitted),
                "aborted": aborted,
                **evaluate(model, setup.test),
                "update_norm": float(np.linalg.norm(Delta)),
                "weight_sum": float(np.sum(w)),
                "min_weight": float(np.min(w)) if w.size else 0.0,
                "alpha_t": alpha_t,
                "deviation": dev.measured,
                "deviation_bound": dev.bound,
                "deviation_ok": dev.ok,
                "removal_deviation": rem.measured,
                "removal_ok": rem.ok,
                "weights_ok": weights_ok,
                "norm_ok": norm_ok,
                "units": len(rs.grouping.units()),
                "eval_count": rs.evaluations,
                "grouped_bound": rs.grouped_bound,
                "naive_bound": rs.naive_bound,
                "evals_ok": rs.evaluations <= rs.grouped_bound,
                "nu_admitted": nu,
                "malicious_phi_above": (
                    float(np.mean([p > cfg.phi_threshold for p in mal_scores])) if mal_scores else 0.0
                ),
            }
            rows.append(row)
        except Exception as exc:
            raise RuntimeError(f"round {t}: {exc}") from exc

    per_client = {i: dp_account(r, "per_client_sequential") for i, r in sorted(dp_rounds.items())}
    dp_total = dp_account(list(per_client.values()), "across_disjoint_clients") if per_client else None
    return MetricsReport(
        pipeline="sichainfl",
        config=cfg.to_dict(),
        rounds=rows,
        shapley_rows=shapley_rows,
        final_phi=dict(sorted(Phi.items())),
        behaviors=setup.behaviors,
        ledger=ledger,
        dp_total=dp_total,
        dp_per_client=per_client,
        secret=setup.secret,
    )


def admitted_value(
    setup: Setup, model: ModelParams, admitted: list[int], vcfg: ValuationConfig
) -> float:
    """Multi-objective value of the admitted set, with accuracy measured on the updated model."""
    gammas = (vcfg.gamma1, vcfg.gamma2, vcfg.gamma3)
    clients = [setup.clients[i] for i in admitted]
    ctx = CoalitionContext(
        base_model=model,
        client_updates={c.client_id: UpdateDelta(np.zeros(model.size), c.client_id) for c in clients},
        scenarios=setup.scenarios,
        feature_summaries={c.client_id: c.summary for c in clients},
        quality={
            c.client_id: (
                cleanliness(c.quality, gammas),
                label_credibility(c.data, model, vcfg.gamma4),
            )
            for c in clients
        },
    )
    return coalition_value(admitted, ctx, vcfg, mode="additive")


def run_fedavg(cfg: ExperimentConfig, setup: Setup | None = None) -> MetricsReport:
    """Sample-count weighted averaging of every participant's raw update."""
    setup = setup or build_setup(cfg)
    model = setup.init_model
    history: dict[int, list[UpdateDelta]] = {}
    rows = []
    for t in range(cfg.rounds):
        part = setup.participants(t)
        raw = _raw_updates(setup, model, t, part, history)
        for i in part:
            history.setdefault(i, []).append(raw[i])
        Delta, w = fedavg_aggregate([raw[i] for i in part], [setup.clients[i].n for i in part])
        model = apply_update(model, Delta, cfg.consensus.server_lr)
        rows.append(
            {
                "round": t,
                "participants": len(part),
                "admitted": len(part),
                "malicious_admitted": sum(i in setup.malicious() for i in part),
                "aborted": False,
                **evaluate(model, setup.test),
                "update_norm": float(np.linalg.norm(Delta)),
                "weight_sum": float(np.sum(w)),
                "min_weight": float(np.min(w)),
            }
        )
    return MetricsReport(
        pipeline="fedavg",
        config=cfg.to_dict(),
        rounds=rows,
        shapley_rows=[],
        final_phi={},
        behaviors=setup.behaviors,
        ledger=Ledger(),
        dp_total=None,
        dp_per_client={},
        secret=setup.secret,
    )


def fedavg_aggregate(updates: list[UpdateDelta], sizes: list[int]) -> tuple[np.ndarray, np.ndarray]:
    if not updates:
        raise ValueError("no updates to average")
    n = np.asarray(sizes, dtype=np.float64)
    w = n / n.sum()
    out = np.zeros(updates[0].delta.size)
    for wi, u in zip(w, updates):
        out += wi * u.delta
    return out, w


@dataclass
class EvalCounters:
    naive_bound: int
    grouped_bound: int
    actual: int

    @property
    def ratio(self) -> float:
        return self.naive_bound / self.actual if self.actual else math.inf


def count_evaluations(report: MetricsReport) -> list[EvalCounters]:
    """Per-round complexity counters; raises if any round exceeded its grouped bound."""
    out = []
    for r in report.rounds:
        c = EvalCounters(r["naive_bound"], r["grouped_bound"], r["eval_count"])
        if c.actual > c.grouped_bound:
            raise AssertionError(f"round {r['round']}: {c.actual} evaluations exceed bound {c.grouped_bound}")
        out.append(c)
    return out


def verify_ledger_file(path: str | Path, manifest: Mapping | None = None) -> list[str]:
    """Re-check a persisted ledger; signature tags are checked when a manifest is supplied."""
    from .consensus import SignatureRecord, Validator, verify_ndjson

    check = None
    if manifest is not None:
        secret = bytes.fromhex(manifest["signing_secret"])
        stakes = manifest["validator_stakes"]
        nbyz = manifest["byzantine_validators"]
        empty = LabeledDataset(np.zeros((1, 1)), np.zeros(1))
        committee = [Validator(k, s, k < nbyz, empty) for k, s in enumerate(stakes)]
        tau = manifest["config"]["consensus"]["tau_sign"]

        def check(digest: bytes, sig: SignatureRecord) -> bool:
            return verify_signature(committee, digest, sig, tau, secret)

    try:
        text = Path(path).read_bytes().decode("utf-8")
    except UnicodeDecodeError as exc:
        return [f"ledger is not valid UTF-8: {exc.reason}"]
    return verify_ndjson(text, check)
