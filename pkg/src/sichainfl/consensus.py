"""Simulated validator committee and hash-chained ledger.

The threshold signature here is a simulation: each honest validator's
"signature" is an HMAC tag keyed from a per-run secret. It demonstrates the
quorum logic and is not cryptographically meaningful.
"""

from __future__ import annotations

import hashlib
import hmac
import json
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .datagen import LabeledDataset
from .model import ModelParams, UpdateDelta, clip_update, loss

GENESIS_HASH = "0" * 64
BLOCK_FIELDS = (
    "round",
    "admitted",
    "updates",
    "weights",
    "model",
    "msg_digest",
    "signature",
    "prev_hash",
    "model_hash",
    "block_hash",
)


@dataclass
class Validator:
    id: int
    stake: float
    byzantine: bool
    shard: LabeledDataset

    def __post_init__(self) -> None:
        if not self.stake > 0:
            raise ValueError("validator stake must be positive")


@dataclass
class ConsensusConfig:
    zeta: float = 1e-6
    tau_sign: float = 2.0 / 3.0
    psi_kind: str = "identity"
    eps_agg: float = 1e-12
    loss_margin: float = 0.05
    xi: float = 0.01
    allow_byzantine_override: bool = False
    server_lr: float = 1.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.zeta <= 1.0:
            raise ValueError("zeta must lie in [0, 1]")
        if not 0.0 < self.tau_sign <= 1.0:
            raise ValueError("tau_sign must lie in (0, 1]")
        if self.psi_kind not in PSI:
            raise ValueError(f"unknown psi {self.psi_kind!r}")
        if self.eps_agg < 0 or self.loss_margin < 0 or self.xi < 0:
            raise ValueError("eps_agg, loss_margin and xi must be non-negative")
        if not self.server_lr > 0:
            raise ValueError("server_lr must be positive")

    @property
    def psi(self) -> Callable[[float], float]:
        return PSI[self.psi_kind]


def _softplus(x: float) -> float:
    return max(x, 0.0) + math.log1p(math.exp(-abs(x)))


PSI: dict[str, Callable[[float], float]] = {"identity": lambda x: x, "softplus": _softplus}


def byzantine_share(committee: Sequence[Validator]) -> float:
    total = sum(v.stake for v in committee)
    return sum(v.stake for v in committee if v.byzantine) / total


def build_committee(
    stakes: Sequence[float],
    byzantine: Sequence[bool],
    shards: Sequence[LabeledDataset],
    xi: float = 0.01,
    override: bool = False,
) -> list[Validator]:
    """Create validators, refusing a Byzantine stake share above ``1/3 - xi``.

    Raises:
        ValueError: if the share bound fails and ``override`` is not set.
    """
    if not stakes:
        raise ValueError("empty committee")
    if not (len(stakes) == len(byzantine) == len(shards)):
        raise ValueError("stakes, byzantine flags and shards must align")
    committee = [Validator(i, float(s), bool(b), d) for i, (s, b, d) in enumerate(zip(stakes, byzantine, shards))]
    share = byzantine_share(committee)
    if share > 1.0 / 3.0 - xi and not override:
        raise ValueError(f"Byzantine stake share {share:.4f} exceeds 1/3 - xi = {1/3 - xi:.4f}")
    return committee


# ---------------------------------------------------------------------------
# voting and admission


def validator_vote(
    v: Validator,
    update: UpdateDelta,
    base_model: ModelParams,
    C: float,
    loss_margin: float,
    noise_slack: float = 0.0,
) -> int:
    """Accept iff the update respects the norm bound and does not raise shard loss by more than ``loss_margin``.

    ``noise_slack`` widens the norm bound to admit the DP noise added after
    clipping. A Byzantine validator returns the opposite bit.
    """
    if v.shard.n == 0:
        raise ValueError("validator shard is empty")
    ok = update.norm <= C + noise_slack + 1e-9
    if ok:
        moved = base_model.with_weights(base_model.weights + update.delta)
        before = loss(base_model, v.shard.features, v.shard.labels)
        after = loss(moved, v.shard.features, v.shard.labels)
        ok = after <= before + loss_margin
    bit = int(ok)
    return 1 - bit if v.byzantine else bit


def weighted_votes(
    bits: Mapping[tuple[int, int], int],
    stakes: Mapping[int, float],
    Phi: Mapping[int, float],
    psi: Callable[[float], float],
) -> dict[int, float]:
    """``B_i = psi(max(Phi_i, 0)) * sum_v s_v b_{v,i}`` for every client with a score."""
    out = {}
    for i in sorted(Phi):
        vote = sum(stakes[v] * b for (v, c), b in sorted(bits.items()) if c == i)
        out[i] = vote * psi(max(Phi[i], 0.0))
    return out


def admission(B: Mapping[int, float], W_t: float, zeta: float) -> list[int]:
    if not W_t > 0:
        raise ValueError("total stake must be positive")
    return sorted(i for i, b in B.items() if b >= zeta * W_t)


# ---------------------------------------------------------------------------
# digests and signatures


def _floats_be(values) -> bytes:
    arr = np.asarray(values, dtype=np.float64)
    return arr.astype(">f8").tobytes()


def block_digest(round: int, admitted: Sequence[int], updates: Sequence[UpdateDelta | np.ndarray]) -> bytes:
    """SHA-256 of round, ids and update coordinates, all as 8-byte big-endian fields."""
    if len(admitted) != len(updates):
        raise ValueError("one update per admitted client")
    h = hashlib.sha256()
    h.update(struct.pack(">q", round))
    for cid in admitted:
        h.update(struct.pack(">q", cid))
    for u in updates:
        h.update(_floats_be(u.delta if isinstance(u, UpdateDelta) else u))
    return h.digest()


def model_digest(weights) -> bytes:
    return hashlib.sha256(_floats_be(weights)).digest()


def _validator_key(secret: bytes, vid: int) -> bytes:
    return hmac.new(secret, b"validator:" + struct.pack(">q", vid), hashlib.sha256).digest()


def _tag(secret: bytes, vid: int, msg: bytes) -> str:
    return hmac.new(_validator_key(secret, vid), msg, hashlib.sha256).hexdigest()


@dataclass
class SignatureRecord:
    signers: list[int]
    tags: list[str]
    stake: float
    total_stake: float


def threshold_sign(
    committee: Sequence[Validator], msg: bytes, tau_sign: float, secret: bytes
) -> SignatureRecord | None:
    """Collect tags from honest validators; ``None`` if their stake is below ``tau_sign * W``."""
    if not committee:
        raise ValueError("empty committee")
    signers = [v for v in sorted(committee, key=lambda v: v.id) if not v.byzantine]
    stake = math.fsum(v.stake for v in signers)
    total = math.fsum(v.stake for v in committee)
    if stake < tau_sign * total:
        return None
    return SignatureRecord(
        [v.id for v in signers], [_tag(secret, v.id, msg) for v in signers], stake, total
    )


def verify_signature(
    committee: Sequence[Validator],
    msg: bytes,
    sig: SignatureRecord,
    tau_sign: float,
    secret: bytes,
) -> bool:
    by_id = {v.id: v for v in committee}
    if len(sig.signers) != len(sig.tags) or len(set(sig.signers)) != len(sig.signers):
        return False
    if any(s not in by_id for s in sig.signers):
        return False
    for s, t in zip(sig.signers, sig.tags):
        if not hmac.compare_digest(_tag(secret, s, msg), t):
            return False
    stake = math.fsum(by_id[s].stake for s in sig.signers)
    total = math.fsum(v.stake for v in committee)
    return stake == sig.stake and total == sig.total_stake and stake >= tau_sign * total


# ---------------------------------------------------------------------------
# aggregation and monitors


def aggregation_weights(
    admitted: Sequence[int], Phi: Mapping[int, float], psi: Callable[[float], float], eps_agg: float
) -> np.ndarray:
    raw = np.array([psi(max(Phi[i], 0.0)) for i in admitted], dtype=np.float64)
    if raw.size == 0:
        return raw
    return raw / (raw.sum() + eps_agg) if raw.sum() + eps_agg > 0 else np.zeros_like(raw)


def shapley_aggregate(
    admitted: Sequence[int],
    updates: Mapping[int, UpdateDelta],
    Phi: Mapping[int, float],
    psi: Callable[[float], float],
    eps_agg: float,
    C: float,
    size: int | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Score-weighted sum of clipped updates; returns ``(Delta, weights)``."""
    if not admitted:
        if size is None:
            raise ValueError("size required when nothing is admitted")
        return np.zeros(size), np.zeros(0)
    w = aggregation_weights(admitted, Phi, psi, eps_agg)
    dim = updates[admitted[0]].delta.size
    out = np.zeros(dim)
    for wi, i in zip(w, admitted):
        out += wi * clip_update(updates[i], C).delta
    return out, w


@dataclass
class DeviationRecord:
    measured: float
    bound: float
    ok: bool


def deviation_report(Delta, Delta_honest, alpha_t: float, C: float) -> DeviationRecord:
    measured = float(np.linalg.norm(np.asarray(Delta) - np.asarray(Delta_honest)))
    bound = alpha_t * C
    return DeviationRecord(measured, bound, measured <= bound + 1e-9)


def aggregate_checks(weights: np.ndarray, Delta: np.ndarray, C: float) -> tuple[bool, bool]:
    """(weights non-negative with sum at most one, aggregate norm at most C)."""
    w = np.asarray(weights)
    weights_ok = bool(np.all(w >= 0) and w.sum() <= 1.0 + 1e-12)
    norm_ok = bool(np.linalg.norm(Delta) <= C + 1e-9)
    return weights_ok, norm_ok


# ---------------------------------------------------------------------------
# ledger


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def _hash_fields(record: Mapping) -> str:
    body = {k: record[k] for k in BLOCK_FIELDS if k != "block_hash"}
    return hashlib.sha256(_canonical(body).encode()).hexdigest()


@dataclass
class Block:
    round: int
    admitted: list[int]
    updates: list[list[float]]
    weights: list[float]
    model: list[float]
    msg_digest: str
    signature: dict
    prev_hash: str
    model_hash: str
    block_hash: str = ""

    def to_record(self) -> dict:
        return {k: getattr(self, k) for k in BLOCK_FIELDS}

    def seal(self) -> "Block":
        self.block_hash = _hash_fields(self.to_record())
        return self


def make_block(
    round: int,
    admitted: Sequence[int],
    updates: Sequence[UpdateDelta],
    weights: Sequence[float],
    model: ModelParams,
    signature: SignatureRecord,
    prev_hash: str,
) -> Block:
    return Block(
        round=int(round),
        admitted=[int(a) for a in admitted],
        updates=[[float(x) for x in u.delta] for u in updates],
        weights=[float(w) for w in weights],
        model=[float(x) for x in model.weights],
        msg_digest=block_digest(round, admitted, updates).hex(),
        signature=asdict(signature),
        prev_hash=prev_hash,
        model_hash=model_digest(model.weights).hex(),
    ).seal()


@dataclass
class Ledger:
    blocks: list[Block] = field(default_factory=list)

    @property
    def head_hash(self) -> str:
        return self.blocks[-1].block_hash if self.blocks else GENESIS_HASH

    def append(self, block: Block) -> "Ledger":
        if block.prev_hash != self.head_hash:
            raise ValueError("chain integrity")
        self.blocks.append(block)
        problems = verify_records([b.to_record() for b in self.blocks])
        if problems:
            self.blocks.pop()
            raise ValueError(f"chain integrity: {problems[0]}")
        return self

    def __len__(self) -> int:
        return len(self.blocks)

    def to_ndjson(self) -> str:
        return "".join(_canonical(b.to_record()) + "\n" for b in self.blocks)

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.to_ndjson())


def _check_record(rec: Mapping, prev_hash: str, committee_check=None) -> str | None:
    if not isinstance(rec, dict) or set(rec) != set(BLOCK_FIELDS):
        return "unexpected block fields"
    try:
        admitted = rec["admitted"]
        updates = rec["updates"]
        if len(admitted) != len(updates) or len(rec["weights"]) != len(admitted):
            return "admitted, updates and weights disagree in length"
        digest = block_digest(rec["round"], admitted, [np.asarray(u, dtype=np.float64) for u in updates])
        if digest.hex() != rec["msg_digest"]:
            return "message digest mismatch"
        if model_digest(rec["model"]).hex() != rec["model_hash"]:
            return "model hash mismatch"
        if rec["prev_hash"] != prev_hash:
            return "broken link"
        if _hash_fields(rec) != rec["block_hash"]:
            return "block hash mismatch"
        sig = SignatureRecord(**rec["signature"])
        if not sig.stake >= 0 or sig.stake > sig.total_stake:
            return "implausible signing stake"
        if committee_check is not None and not committee_check(digest, sig):
            return "signature check failed"
    except (TypeError, ValueError, KeyError, struct.error, OverflowError) as exc:
        return f"malformed block: {exc}"
    return None


def verify_records(records: Sequence[Mapping], committee_check=None) -> list[str]:
    problems = []
    prev = GENESIS_HASH
    for k, rec in enumerate(records):
        err = _check_record(rec, prev, committee_check)
        if err:
            problems.append(f"block {k}: {err}")
            return problems
        prev = rec["block_hash"]
    return problems


def verify_ndjson(text: str, committee_check=None) -> list[str]:
    """Re-check a serialised ledger; returns a list of problems (empty when valid).

    Every line must be byte-identical to the canonical serialisation of the
    record it decodes to, so formatting changes are detected as well as value
    changes.
    """
    if text and not text.endswith("\n"):
        return ["ledger does not end with a newline"]
    lines = text.split("\n")[:-1] if text else []
    records = []
    for k, line in enumerate(lines):
        try:
            rec = json.loads(line, parse_constant=_reject_constant)
        except ValueError as exc:
            return [f"block {k}: not valid JSON ({exc})"]
        try:
            canonical = _canonical(rec)
        except ValueError as exc:
            return [f"block {k}: {exc}"]
        if canonical != line:
            return [f"block {k}: non-canonical serialisation"]
        records.append(rec)
    return verify_records(records, committee_check)


def _reject_constant(name: str):
    raise ValueError(f"non-finite constant {name}")
