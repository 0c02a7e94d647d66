"""Bipartite interaction graph, normalized adjacency, and the two samplers.

Everything downstream consumes either the symmetric degree-normalized
adjacency (LightGCN convention) or batches drawn by the BPR-triplet and
ranking-list samplers defined here.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from .autodiff import Tensor, spmm as tape_spmm


@dataclass(frozen=True)
class BprTriplet:
    """(user, observed item, unobserved item) for pair-wise ranking."""

    user: int
    pos: int
    neg: int


@dataclass(frozen=True)
class RankList:
    """One observed anchor at position 0 followed by K-1 distinct negatives."""

    user: int
    items: np.ndarray


class InteractionGraph:
    """Immutable bipartite user-item graph with per-node neighbor lists."""

    def __init__(self, n_users: int, n_items: int, edges: np.ndarray):
        self.n_users = int(n_users)
        self.n_items = int(n_items)
        self.edges = edges  # (E, 2) int array, unique, sorted
        by_user: list[list[int]] = [[] for _ in range(self.n_users)]
        by_item: list[list[int]] = [[] for _ in range(self.n_items)]
        for u, i in edges:
            by_user[u].append(i)
            by_item[i].append(u)
        self.user_items = [np.array(v, dtype=np.int64) for v in by_user]
        self.item_users = [np.array(v, dtype=np.int64) for v in by_item]
        self.edge_set = frozenset((int(u), int(i)) for u, i in edges)
        self._unobserved: dict[int, np.ndarray] = {}
        self._flat: tuple[np.ndarray, ...] | None = None
        self._bpr_users: np.ndarray | None = None
        self._anchor_users: np.ndarray | None = None

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def user_degree(self, u: int) -> int:
        return len(self.user_items[u])

    def item_degree(self, i: int) -> int:
        return len(self.item_users[i])

    def unobserved_items(self, u: int) -> np.ndarray:
        """Sorted complement of the user's observed items; cached (the graph
        is immutable after construction)."""
        pool = self._unobserved.get(u)
        if pool is None:
            pool = np.setdiff1d(np.arange(self.n_items, dtype=np.int64),
                                self.user_items[u], assume_unique=True)
            self._unobserved[u] = pool
        return pool

    def _bpr_eligible(self) -> np.ndarray:
        if self._bpr_users is None:
            self._bpr_users = np.array(
                [u for u in range(self.n_users)
                 if 0 < self.user_degree(u) < self.n_items], dtype=np.int64)
        return self._bpr_users

    def _anchor_eligible(self) -> np.ndarray:
        if self._anchor_users is None:
            self._anchor_users = np.array(
                [u for u in range(self.n_users) if self.user_degree(u) > 0],
                dtype=np.int64)
        return self._anchor_users

    def _flat_pools(self):
        """CSR-style concatenations of every user's observed and unobserved
        item lists, for vectorized sampling."""
        if self._flat is None:
            deg = np.array([len(v) for v in self.user_items], dtype=np.int64)
            obs_off = np.concatenate([[0], np.cumsum(deg)])
            obs_flat = (np.concatenate(self.user_items)
                        if self.n_edges else np.empty(0, dtype=np.int64))
            pools = [self.unobserved_items(u) for u in range(self.n_users)]
            un_deg = np.array([len(p) for p in pools], dtype=np.int64)
            un_off = np.concatenate([[0], np.cumsum(un_deg)])
            un_flat = (np.concatenate(pools)
                       if un_off[-1] else np.empty(0, dtype=np.int64))
            self._flat = (deg, obs_off, obs_flat, un_deg, un_off, un_flat)
        return self._flat

    def sparsity(self) -> float:
        return 1.0 - self.n_edges / (self.n_users * self.n_items)


def build_graph(interactions: Iterable[tuple[int, int]],
                n_users: int | None = None,
                n_items: int | None = None) -> InteractionGraph:
    """Deduplicate (user, item) pairs into a graph.

    Node counts default to 1 + max observed index; pass them explicitly
    when some users/items appear only in held-out splits.
    """
    pairs = sorted({(int(u), int(i)) for u, i in interactions})
    if not pairs:
        raise ValueError("cannot build a graph from an empty interaction list")
    arr = np.array(pairs, dtype=np.int64)
    if arr.min() < 0:
        raise ValueError("negative user/item index in interactions")
    max_u, max_i = int(arr[:, 0].max()), int(arr[:, 1].max())
    n_users = max_u + 1 if n_users is None else int(n_users)
    n_items = max_i + 1 if n_items is None else int(n_items)
    if max_u >= n_users or max_i >= n_items:
        raise ValueError("interaction index exceeds declared node counts")
    return InteractionGraph(n_users, n_items, arr)


def normalized_adjacency(g: InteractionGraph) -> sp.csr_matrix:
    """Symmetric block adjacency with entries 1/sqrt(deg(u) * deg(i)).

    Shape is (n_users + n_items)^2; isolated nodes keep zero rows.
    """
    n = g.n_users + g.n_items
    if g.n_edges == 0:
        return sp.csr_matrix((n, n))
    u = g.edges[:, 0]
    i = g.edges[:, 1] + g.n_users
    du = np.array([g.user_degree(int(x)) for x in g.edges[:, 0]], dtype=np.float64)
    di = np.array([g.item_degree(int(x)) for x in g.edges[:, 1]], dtype=np.float64)
    vals = 1.0 / np.sqrt(du * di)
    rows = np.concatenate([u, i])
    cols = np.concatenate([i, u])
    data = np.concatenate([vals, vals])
    return sp.coo_matrix((data, (rows, cols)), shape=(n, n)).tocsr()


def user_item_mean(g: InteractionGraph) -> sp.csr_matrix:
    """Neighbor-averaging operator: row u holds 1/deg(u) at u's items."""
    rows, cols, data = [], [], []
    for u, items in enumerate(g.user_items):
        if len(items) == 0:
            continue
        rows.extend([u] * len(items))
        cols.extend(items.tolist())
        data.extend([1.0 / len(items)] * len(items))
    return sp.coo_matrix((data, (rows, cols)),
                         shape=(g.n_users, g.n_items)).tocsr()


def propagate_mean(adj: sp.csr_matrix, z0: Tensor, n_layers: int) -> Tensor:
    """LightGCN propagation: mean of the layer-0..L embeddings.

    The adjacency is symmetric, so it serves as its own transpose in the
    backward pass.
    """
    acc = z0
    z = z0
    for _ in range(n_layers):
        z = tape_spmm(adj, z, a_transpose=adj)
        acc = acc + z
    return acc * (1.0 / (n_layers + 1))


def _as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def sample_bpr_batch(g: InteractionGraph, batch_size: int,
                     seed=0) -> list[BprTriplet]:
    """Uniform BPR triplets: user, observed positive, unobserved negative.

    Fully-observed users are never drawn (the positive pool excludes
    them); if no user has both an observed and an unobserved item,
    sampling is impossible.
    """
    rng = _as_rng(seed)
    eligible = g._bpr_eligible()
    if len(eligible) == 0:
        raise ValueError("no user has both observed and unobserved items")
    deg, obs_off, obs_flat, un_deg, un_off, un_flat = g._flat_pools()
    users = eligible[rng.integers(len(eligible), size=batch_size)]
    pos = obs_flat[obs_off[users] + rng.integers(0, deg[users])]
    neg = un_flat[un_off[users] + rng.integers(0, un_deg[users])]
    return [BprTriplet(int(u), int(p), int(n))
            for u, p, n in zip(users, pos, neg)]


def sample_rank_lists(g: InteractionGraph, n_lists: int, k: int,
                      seed=0) -> list[RankList]:
    """K-length lists: one uniform observed anchor plus K-1 negatives
    drawn uniformly without replacement from the user's unobserved items."""
    if k < 2:
        raise ValueError(f"list length must be at least 2, got {k}")
    rng = _as_rng(seed)
    eligible = g._anchor_eligible()
    if len(eligible) == 0:
        raise ValueError("no user has an observed item to anchor a list")
    deg, obs_off, obs_flat, un_deg, un_off, un_flat = g._flat_pools()
    users = eligible[rng.integers(len(eligible), size=n_lists)]
    mat = np.empty((n_lists, k), dtype=np.int64)
    mat[:, 0] = obs_flat[obs_off[users] + rng.integers(0, deg[users])]
    for row, u in enumerate(users):
        u = int(u)
        pool = g.unobserved_items(u)
        if len(pool) < k - 1:
            raise ValueError(
                f"user {u} has only {len(pool)} unobserved items, "
                f"needs {k - 1} negatives")
        mat[row, 1:] = rng.choice(pool, size=k - 1, replace=False)
    return [RankList(int(u), mat[row]) for row, u in enumerate(users)]
