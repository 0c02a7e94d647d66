"""All-ranking Recall@K / NDCG@K evaluation.

For every user with held-out items, all items are ranked by score with
the user's training items excluded from the candidate set. Ties break by
item index so rankings are deterministic. Per-user metrics accumulate in
rank order with plain float arithmetic, which keeps the results exactly
reproducible by a brute-force sort.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .data_io import DatasetBundle
from .graph import InteractionGraph


@dataclass
class EvalResult:
    metrics: dict[str, float]
    n_users_evaluated: int
    per_user: dict[int, dict[str, float]] | None = None

    def __getitem__(self, key: str) -> float:
        return self.metrics[key]


def _group_by_user(edges) -> dict[int, set[int]]:
    by_user: dict[int, set[int]] = {}
    for u, i in edges:
        by_user.setdefault(int(u), set()).add(int(i))
    return by_user


def ranking_metrics(scores: np.ndarray, train: InteractionGraph,
                    relevant_edges, ks=(20, 50),
                    keep_per_user: bool = False) -> EvalResult:
    """Average Recall@K and NDCG@K over users with >= 1 relevant item.

    ``scores`` is a full (n_users, n_items) matrix; rows are read, never
    written. NDCG uses binary relevance with log2 position discounts.
    """
    relevant = _group_by_user(relevant_edges)
    ks = tuple(int(k) for k in ks)
    sums = {k: [0.0, 0.0] for k in ks}  # per k: [recall, ndcg]
    per_user: dict[int, dict[str, float]] = {}
    n_eval = 0
    max_k = max(ks)
    for u in sorted(relevant):
        rel = relevant[u]
        train_items = train.user_items[u] if u < train.n_users else np.array([], dtype=np.int64)
        if train.n_items - len(train_items) == 0:
            warnings.warn(f"user {u} has no candidate items; skipped")
            continue
        row = scores[u].astype(np.float64, copy=True)
        row[train_items] = -np.inf
        # stable argsort on the negated row: descending score, ties by index
        order = np.argsort(-row, kind="stable")[:max_k]
        n_eval += 1
        detail: dict[str, float] = {}
        for k in ks:
            hits = 0
            dcg = 0.0
            for pos in range(min(k, len(order))):
                if int(order[pos]) in rel:
                    hits += 1
                    dcg += 1.0 / math.log2(pos + 2)
            idcg = 0.0
            for pos in range(min(k, len(rel))):
                idcg += 1.0 / math.log2(pos + 2)
            recall = hits / len(rel)
            ndcg = dcg / idcg if idcg > 0 else 0.0
            sums[k][0] += recall
            sums[k][1] += ndcg
            detail[f"recall@{k}"] = recall
            detail[f"ndcg@{k}"] = ndcg
        if keep_per_user:
            per_user[u] = detail
    if n_eval == 0:
        metrics = {f"{name}@{k}": 0.0 for k in ks for name in ("recall", "ndcg")}
    else:
        metrics = {}
        for k in ks:
            metrics[f"recall@{k}"] = sums[k][0] / n_eval
            metrics[f"ndcg@{k}"] = sums[k][1] / n_eval
    return EvalResult(metrics, n_eval, per_user if keep_per_user else None)


def evaluate(scores: np.ndarray, bundle: DatasetBundle, ks=(20, 50),
             split: str = "test", keep_per_user: bool = False) -> EvalResult:
    """Rank against the requested held-out split of a dataset bundle."""
    if split == "test":
        edges = bundle.test_edges
    elif split == "val":
        edges = bundle.val_edges
    else:
        raise ValueError(f"unknown split '{split}'")
    return ranking_metrics(scores, bundle.train, edges, ks, keep_per_user)
