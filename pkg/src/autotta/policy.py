"""Policy data model.

A policy is eight (op, magnitude, weight) slots.  Weight levels are
integers 1..10 whose L1-normalized values weight the per-slot cached
descriptors during composition.  The textual format is
"OpName: (magnitude, weight)" entries joined by commas.
"""
from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .aggregate import l2_normalize
from .transforms import OP_ALIASES, OP_NAMES, TransformOp

N_SLOTS = 8
N_WEIGHT_LEVELS = 10


class PolicyError(Exception):
    pass


class PolicyParseError(PolicyError):
    pass


@dataclass(frozen=True)
class PolicySlot:
    op: TransformOp
    magnitude: int
    weight_level: int

    def __post_init__(self) -> None:
        if not 1 <= self.magnitude <= 10:
            raise PolicyError(f"magnitude {self.magnitude} not in [1, 10]")
        if not 1 <= self.weight_level <= N_WEIGHT_LEVELS:
            raise PolicyError(f"weight level {self.weight_level} not in [1, 10]")


@dataclass(frozen=True)
class Policy:
    slots: tuple[PolicySlot, ...]

    def __post_init__(self) -> None:
        if len(self.slots) != N_SLOTS:
            raise PolicyError(f"policy must have {N_SLOTS} slots, got {len(self.slots)}")

    def weights(self) -> np.ndarray:
        return normalize_weights([s.weight_level for s in self.slots])


def normalize_weights(levels: list[int]) -> np.ndarray:
    """L1-normalize integer weight levels."""
    levels = list(levels)
    if any(not 1 <= lv <= N_WEIGHT_LEVELS for lv in levels):
        raise PolicyError(f"weight levels {levels} outside [1, 10]")
    arr = np.asarray(levels, dtype=np.float64)
    return arr / arr.sum()


def compose(policy: Policy, image_id: int, cache) -> np.ndarray:
    """Weighted sum of the policy's cached per-slot descriptors, then L2
    normalization.  Raises on missing keys or a zero-sum vector."""
    weights = policy.weights()
    slots = [
        (int(s.op), s.magnitude, w) for s, w in zip(policy.slots, weights)
    ]
    return l2_normalize(cache.accumulate_weighted(image_id, slots))


_ENTRY_RE = re.compile(
    r"\s*(?P<name>[A-Za-z\-]+)\s*:\s*\(\s*(?P<mag>-?\d+)\s*,\s*(?P<weight>-?\d+)\s*\)\s*"
)


def parse_policy(text: str) -> Policy:
    """Parse "Op: (magnitude, weight), ..." into a Policy."""
    parts = re.findall(r"[A-Za-z\-]+\s*:\s*\([^)]*\)", text)
    if not parts:
        raise PolicyParseError("no policy entries found")
    slots = []
    for i, part in enumerate(parts, 1):
        m = _ENTRY_RE.fullmatch(part)
        if m is None:
            raise PolicyParseError(f"entry {i}: cannot parse {part!r}")
        name = m.group("name").lower()
        if name not in OP_ALIASES:
            raise PolicyParseError(f"entry {i}: unknown op {m.group('name')!r}")
        op = OP_ALIASES[name]
        magnitude = int(m.group("mag"))
        weight = int(m.group("weight"))
        if not 1 <= magnitude <= 10:
            raise PolicyParseError(f"entry {i}: magnitude {magnitude} out of range")
        if not 1 <= weight <= N_WEIGHT_LEVELS:
            raise PolicyParseError(f"entry {i}: weight {weight} out of range")
        slots.append(PolicySlot(op, magnitude, weight))
    if len(slots) != N_SLOTS:
        raise PolicyParseError(f"expected {N_SLOTS} entries, got {len(slots)}")
    leftover = re.sub(r"[A-Za-z\-]+\s*:\s*\([^)]*\)", "", text)
    if leftover.strip(" ,\t\n") != "":
        raise PolicyParseError(f"unexpected trailing text {leftover.strip()!r}")
    return Policy(tuple(slots))


def format_policy(policy: Policy) -> str:
    return ", ".join(
        f"{OP_NAMES[s.op]}: ({s.magnitude}, {s.weight_level})" for s in policy.slots
    )
