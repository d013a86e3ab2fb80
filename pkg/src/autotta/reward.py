"""Triplet-loss reward for sampled policies.

The reward is the negated mean hinge over (anchor, positive, negative)
triples, computed entirely from cached, policy-composed unit descriptors:
R = -(1/k) * sum max(d(a, p) - d(a, n) + margin, 0).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .policy import Policy, compose


class RewardError(Exception):
    pass


@dataclass(frozen=True)
class Triplet:
    anchor_id: int
    positive_id: int
    negative_id: int

    def __post_init__(self) -> None:
        if self.anchor_id == self.negative_id:
            raise RewardError("anchor and negative must differ")


@dataclass
class RewardConfig:
    margin: float = 0.2
    triplet_subsample: int | None = None  # None: use all triplets

    def __post_init__(self) -> None:
        if self.margin < 0:
            raise RewardError("margin must be >= 0")


def load_triplets(path) -> list[Triplet]:
    """Parse an "anchor<TAB>positive<TAB>negative" manifest."""
    triplets = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise RewardError(
                    f"{path}:{lineno}: expected three tab-separated ids, got {len(parts)}"
                )
            try:
                ids = [int(p) for p in parts]
            except ValueError:
                raise RewardError(f"{path}:{lineno}: non-integer image id") from None
            triplets.append(Triplet(*ids))
    if not triplets:
        raise RewardError(f"{path}: no triplets found")
    return triplets


def triplet_reward(
    policy: Policy,
    triplets: list[Triplet],
    cache,
    config: RewardConfig = RewardConfig(),
    rng: np.random.Generator | None = None,
) -> float:
    """Negated mean triplet hinge; always in [-(2 + margin), 0]."""
    if not triplets:
        raise RewardError("empty triplet list")
    if config.triplet_subsample is not None and config.triplet_subsample < len(triplets):
        if rng is None:
            rng = np.random.default_rng(0)
        picked = rng.choice(len(triplets), size=config.triplet_subsample, replace=False)
        triplets = [triplets[i] for i in sorted(picked)]

    # Compose each distinct image once per evaluation.
    features: dict[int, np.ndarray] = {}
    for t in triplets:
        for image_id in (t.anchor_id, t.positive_id, t.negative_id):
            if image_id not in features:
                features[image_id] = compose(policy, image_id, cache)

    hinge_sum = 0.0
    for t in triplets:
        a = features[t.anchor_id]
        d_pos = float(np.linalg.norm(a - features[t.positive_id]))
        d_neg = float(np.linalg.norm(a - features[t.negative_id]))
        hinge_sum += max(d_pos - d_neg + config.margin, 0.0)
    return -hinge_sum / len(triplets)
