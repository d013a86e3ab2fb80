"""Retrieval evaluation: Euclidean ranking and MAP@K."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .policy import Policy, compose

K_DEFAULTS = {"trademark": 100, "landmark": 10}


class RetrievalError(Exception):
    pass


@dataclass(frozen=True)
class RankingTask:
    queries: tuple[tuple[int, frozenset[int]], ...]  # (query_id, expected ids)
    database_ids: tuple[int, ...]
    k: int

    def __post_init__(self) -> None:
        if self.k < 1:
            raise RetrievalError(f"K must be >= 1, got {self.k}")
        for qid, expected in self.queries:
            if not expected:
                raise RetrievalError(f"query {qid} has an empty expected set")


def rank(
    query_vec: np.ndarray, db: list[tuple[int, np.ndarray]]
) -> list[tuple[int, float]]:
    """Database ids by ascending Euclidean distance; ties break by id."""
    out = []
    for item_id, vec in db:
        if vec.shape != query_vec.shape:
            raise RetrievalError(
                f"dim mismatch: query {query_vec.shape} vs item {item_id} {vec.shape}"
            )
        out.append((item_id, float(np.linalg.norm(query_vec - vec))))
    return sorted(out, key=lambda pair: (pair[1], pair[0]))


def average_precision_at_k(
    ranking: list[tuple[int, float]], expected: frozenset[int], k: int
) -> float:
    """Sum of (hits so far)/rank at each hit in the top k, divided by the
    full expected-set size."""
    hits = 0
    total = 0.0
    for j, (item_id, _) in enumerate(ranking[:k], 1):
        if item_id in expected:
            hits += 1
            total += hits / j
    return total / len(expected)


def map_at_k(task: RankingTask, rankings: dict[int, list[tuple[int, float]]]) -> float:
    values = [
        average_precision_at_k(rankings[qid], expected, task.k)
        for qid, expected in task.queries
    ]
    return float(np.mean(values))


def evaluate_policy(policy: Policy, cache, task: RankingTask) -> float:
    """Compose every query and database image through the policy, rank,
    and return MAP@K."""
    db = [(i, compose(policy, i, cache)) for i in task.database_ids]
    rankings = {}
    for qid, _ in task.queries:
        qvec = compose(policy, qid, cache)
        candidates = [(i, v) for i, v in db if i != qid]
        rankings[qid] = rank(qvec, candidates)
    return map_at_k(task, rankings)


def evaluate_baseline(cache, task: RankingTask) -> float:
    """MAP@K of the untransformed (reserved baseline key) descriptors."""
    db = [(i, cache.get(i, 0)) for i in task.database_ids]
    rankings = {}
    for qid, _ in task.queries:
        qvec = cache.get(qid, 0)
        candidates = [(i, v) for i, v in db if i != qid]
        rankings[qid] = rank(qvec, candidates)
    return map_at_k(task, rankings)


def load_ranking_task(
    path,
    all_image_ids: list[int] | None = None,
    default_k: int | None = None,
) -> RankingTask:
    """Parse a task manifest: header "K=<int>", then one
    "query_id<TAB>expected,expected,..." line per query, and an optional
    "db:id,id,..." line naming the database explicitly."""
    queries = []
    db_ids: list[int] | None = None
    k = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("K="):
                k = int(line[2:])
                continue
            if line.startswith("db:"):
                db_ids = [int(p) for p in line[3:].split(",") if p]
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise RetrievalError(
                    f"{path}:{lineno}: expected 'query_id<TAB>expected,...'"
                )
            qid = int(parts[0])
            expected = frozenset(int(p) for p in parts[1].split(",") if p)
            queries.append((qid, expected))
    if k is None:
        k = default_k
    if k is None:
        raise RetrievalError(f"{path}: missing 'K=<int>' header")
    if db_ids is None:
        if all_image_ids is None:
            raise RetrievalError(f"{path}: no db section and no cache ids supplied")
        query_ids = {q for q, _ in queries}
        db_ids = [i for i in all_image_ids if i not in query_ids]
    return RankingTask(tuple(queries), tuple(db_ids), k)
