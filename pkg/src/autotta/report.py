"""Occurrence-rate analysis over the policies a search run sampled."""
from __future__ import annotations

import json

from .policy import Policy, format_policy, parse_policy
from .transforms import OP_NAMES, TransformOp


class ReportError(Exception):
    pass


def read_run_log_policies(path) -> list[Policy]:
    policies = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            if record.get("type") == "iteration":
                policies.append(parse_policy(record["policy"]))
    return policies


def occurrence_rates(
    policies: list[Policy],
) -> tuple[dict[TransformOp, float], dict[TransformOp, float]]:
    """(normal, weighted) per-op occurrence rates over unique policies.

    Normal rate: share of policy slots using the op.  Weighted rate: share
    of L1-normalized weight mass the op carries.  Both sum to 1.
    """
    unique = {}
    for p in policies:
        unique[format_policy(p)] = p
    if not unique:
        raise ReportError("no policies in log")
    normal = {op: 0.0 for op in TransformOp}
    weighted = {op: 0.0 for op in TransformOp}
    n_policies = len(unique)
    for p in unique.values():
        weights = p.weights()
        for slot, w in zip(p.slots, weights):
            normal[slot.op] += 1.0 / (len(p.slots) * n_policies)
            weighted[slot.op] += float(w) / n_policies
    return normal, weighted


def format_report(
    normal: dict[TransformOp, float], weighted: dict[TransformOp, float]
) -> str:
    lines = [f"{'op':<16}{'normal':>10}{'weighted':>10}"]
    for op in TransformOp:
        lines.append(f"{OP_NAMES[op]:<16}{normal[op]:>10.4f}{weighted[op]:>10.4f}")
    return "\n".join(lines)


def write_rates_tsv(
    path, normal: dict[TransformOp, float], weighted: dict[TransformOp, float]
) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("op\tnormal_rate\tweighted_rate\n")
        for op in TransformOp:
            fh.write(f"{OP_NAMES[op]}\t{normal[op]:.9f}\t{weighted[op]:.9f}\n")
