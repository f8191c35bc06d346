"""Client behaviours: honest (high or low quality), free-riding and label-flipping."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .datagen import LabeledDataset, QualityRates, corrupt_labels, feature_summary
from .model import ModelParams, UpdateDelta, local_train

KINDS = ("honest_high", "honest_low", "free_rider", "poisoner")
MALICIOUS = ("free_rider", "poisoner")


@dataclass
class BehaviorKind:
    kind: str = "honest_high"
    flip_frac: float = 1.0
    label_noise: float = 0.2

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown behaviour {self.kind!r}")
        if not 0.0 < self.flip_frac <= 1.0:
            raise ValueError("flip_frac must lie in (0, 1]")
        if not 0.0 <= self.label_noise <= 1.0:
            raise ValueError("label_noise must lie in [0, 1]")

    @property
    def malicious(self) -> bool:
        return self.kind in MALICIOUS


@dataclass
class TrainSpec:
    lr: float = 0.01
    epochs: int = 5
    batch_size: int = 32


@dataclass
class ClientProfile:
    """One simulated participant.

    ``data`` is what the client trains on when honest (for honest_low it
    already carries the extra label noise). ``clean`` keeps the
    uncorrupted shard for counterfactual honest training.
    """

    client_id: int
    data: LabeledDataset
    quality: QualityRates
    behavior: BehaviorKind
    clean: LabeledDataset | None = None
    summary: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        if self.clean is None:
            self.clean = self.data
        self.summary = feature_summary(self.data)

    @property
    def n(self) -> int:
        return self.data.n


def client_seed(seed: int, round: int, client_id: int, tag: int) -> list[int]:
    """Seed material for one client-round stream; ``tag`` separates purposes."""
    return [int(seed), int(round), int(client_id), int(tag)]


TAG_TRAIN, TAG_FLIP, TAG_NOISE = 1, 2, 3


def honest_update(
    profile: ClientProfile, base_model: ModelParams, round: int, train: TrainSpec, seed: int
) -> UpdateDelta:
    """The update this client would send if it followed the protocol."""
    return local_train(
        base_model,
        profile.data,
        train.lr,
        train.epochs,
        client_seed(seed, round, profile.client_id, TAG_TRAIN),
        batch_size=train.batch_size,
        client_id=profile.client_id,
        round=round,
    )


def behave(
    profile: ClientProfile,
    base_model: ModelParams,
    round: int,
    history: Sequence[UpdateDelta],
    train: TrainSpec | None = None,
    seed: int = 0,
) -> UpdateDelta:
    """Produce this client's raw (unclipped, un-noised) update for ``round``.

    Free riders replay their own previous upload (zero on their first
    round); poisoners train on labels flipped afresh every round.
    """
    train = train or TrainSpec()
    kind = profile.behavior.kind
    if kind in ("honest_high", "honest_low"):
        return honest_update(profile, base_model, round, train, seed)
    if kind == "free_rider":
        prev = history[-1].delta if history else np.zeros(base_model.size)
        return UpdateDelta(prev.copy(), client_id=profile.client_id, round=round)
    flipped = corrupt_labels(
        profile.data,
        profile.behavior.flip_frac,
        client_seed(seed, round, profile.client_id, TAG_FLIP),
    )
    return local_train(
        base_model,
        flipped,
        train.lr,
        train.epochs,
        client_seed(seed, round, profile.client_id, TAG_TRAIN),
        batch_size=train.batch_size,
        client_id=profile.client_id,
        round=round,
    )
