"""The cumbersome teacher: prompt module, prompt-guided modality reduction,
ID and modality propagation, and fused scoring.

The prompt is a learned d-vector built from the PCA-reduced modality
features; each modality lifts a scaled copy of it back to feature space
and adds it (weighted by lambda1) to the raw features before the affine
reduction layer. Setting lambda1 = 0 makes the teacher exactly prompt-free.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp

from .autodiff import (Tensor, dropout, matmul, row_slice, spmm as tape_spmm,
                       transpose, vstack)
from .data_io import ModalityFeatureSet, PcaReducer, fit_pca
from .graph import InteractionGraph, propagate_mean, user_item_mean
from .numerics import Param, component_rng, param_leaves, xavier_init


class PromptModule:
    """Feedforward layer producing the shared prompt vector p."""

    def __init__(self, d: int, rng: np.random.Generator):
        self.weight = Param("teacher.prompt.weight", xavier_init(d, d, rng=rng))
        # bias drawn like a weight: the modality prompt is quadratic in p,
        # so a zero prompt is a stationary point it could never leave
        self.bias = Param("teacher.prompt.bias", xavier_init(1, d, rng=rng))

    def params(self) -> list[Param]:
        return [self.weight, self.bias]


class ReductionLayer:
    """Affine map from one modality's feature space down to d dims."""

    def __init__(self, name: str, d_m: int, d: int, dropout_rate: float,
                 lambda1: float, rng: np.random.Generator):
        self.name = name
        self.weight = Param(f"teacher.reduce.{name}.weight",
                            xavier_init(d_m, d, rng=rng))
        self.bias = Param(f"teacher.reduce.{name}.bias", xavier_init(1, d, rng=rng))
        self.dropout_rate = dropout_rate
        self.lambda1 = lambda1

    def params(self) -> list[Param]:
        return [self.weight, self.bias]


class TeacherOutputs(NamedTuple):
    user: Tensor
    item: Tensor
    modal: dict[str, tuple[Tensor, Tensor]]
    prompt: Tensor


def build_prompt_input(reducers: dict[str, PcaReducer],
                       features: ModalityFeatureSet) -> np.ndarray:
    """h: mean over modalities of the per-item mean of reduced features.

    Reduction is centered on the fit data, so h is numerically ~0 when
    the prompt is built from the same features the PCA saw; the prompt
    then rides almost entirely on the feedforward bias.
    """
    parts = [reducers[name].reduce(features[name]).mean(axis=0)
             for name in features.names]
    return np.mean(parts, axis=0, keepdims=True)  # (1, d)


def modality_prompt(p: np.ndarray, reducer: PcaReducer,
                    x: np.ndarray) -> np.ndarray:
    """Per-item modality prompt: s_i * (C p) with s_i = p . reduce(x_i).

    This is the PCA back-projection of the prompt scaled by its alignment
    with each item, without re-adding the feature mean.
    """
    p = np.asarray(p, dtype=np.float64).reshape(-1)
    s = reducer.reduce(x) @ p
    lifted = reducer.components @ p
    if np.ndim(s) == 0:
        return float(s) * lifted
    return s[:, None] * lifted[None, :]


def reduce_features(layer: ReductionLayer, x: np.ndarray, p_m: np.ndarray,
                    training: bool = False,
                    rng: np.random.Generator | None = None) -> np.ndarray:
    """Affine reduction of (x + lambda1 * p_m) with inverted dropout."""
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError(f"non-finite modality input for '{layer.name}'")
    pre = (x + layer.lambda1 * p_m) @ layer.weight.value + layer.bias.value
    if training and layer.dropout_rate > 0.0:
        if rng is None:
            raise ValueError("training-mode reduction needs an RNG for dropout")
        mask = (rng.random(pre.shape) >= layer.dropout_rate) / (1.0 - layer.dropout_rate)
        pre = pre * mask
    return pre


class TeacherModel:
    """Multi-modal graph recommender distilled from in stage two."""

    def __init__(self, n_users: int, n_items: int, d: int, n_layers: int,
                 features: ModalityFeatureSet, reducers: dict[str, PcaReducer],
                 dropout_rate: float = 0.25, lambda1: float = 0.1, seed: int = 0):
        self.n_users = n_users
        self.n_items = n_items
        self.d = d
        self.n_layers = n_layers
        self.features = features
        self.pca = reducers
        self.dropout_rate = dropout_rate
        self.lambda1 = lambda1
        self.seed = seed
        rng = component_rng(seed, "teacher-init")
        self.user_emb = Param("teacher.user_emb", xavier_init(n_users, d, rng=rng))
        self.item_emb = Param("teacher.item_emb", xavier_init(n_items, d, rng=rng))
        self.prompt = PromptModule(d, rng)
        self.reducers = {
            name: ReductionLayer(name, features[name].shape[1], d,
                                 dropout_rate, lambda1, rng)
            for name in features.names
        }
        # constants reused every forward pass
        self._prompt_input = build_prompt_input(reducers, features)
        self._reduced = {name: reducers[name].reduce(features[name])
                         for name in features.names}
        self._cache: tuple[int, dict] | None = None

    @classmethod
    def from_bundle(cls, bundle, d: int, n_layers: int, dropout_rate: float = 0.25,
                    lambda1: float = 0.1, seed: int = 0) -> "TeacherModel":
        reducers = {name: fit_pca(bundle.features[name], d, name=name)
                    for name in bundle.features.names}
        return cls(bundle.train.n_users, bundle.train.n_items, d, n_layers,
                   bundle.features, reducers, dropout_rate, lambda1, seed)

    # -- parameters ---------------------------------------------------------

    def params(self) -> list[Param]:
        out = [self.user_emb, self.item_emb] + self.prompt.params()
        for layer in self.reducers.values():
            out.extend(layer.params())
        return out

    def backbone_params(self) -> list[Param]:
        return [p for p in self.params() if not p.name.startswith("teacher.prompt.")]

    def freeze_backbone(self) -> None:
        """Stage-two contract: everything except the prompt module freezes."""
        for p in self.backbone_params():
            p.frozen = True

    def param_count(self, include_feature_storage: bool = False) -> int:
        total = sum(p.size for p in self.params())
        if include_feature_storage:
            total += sum(self.n_items * dm for dm in self.features.dims().values())
        return total

    # -- forward ------------------------------------------------------------

    def build_prompt(self, leaves: dict[str, Tensor] | None = None) -> Tensor:
        if leaves is None:
            leaves = param_leaves(self.prompt.params())
        h = Tensor(self._prompt_input)
        return matmul(h, leaves["teacher.prompt.weight"]) + leaves["teacher.prompt.bias"]

    def forward(self, adj: sp.csr_matrix, user_agg: sp.csr_matrix,
                training: bool = False,
                dropout_rng: np.random.Generator | None = None,
                leaves: dict[str, Tensor] | None = None) -> TeacherOutputs:
        """ID path plus one prompt-guided reduction/propagation per modality."""
        if leaves is None:
            leaves = param_leaves(self.params())
        if training and self.dropout_rate > 0.0 and dropout_rng is None:
            raise ValueError("training-mode forward needs a dropout RNG")

        p = self.build_prompt(leaves)

        z0 = vstack([leaves["teacher.user_emb"], leaves["teacher.item_emb"]])
        z = propagate_mean(adj, z0, self.n_layers)
        e_user = row_slice(z, 0, self.n_users)
        e_item = row_slice(z, self.n_users, self.n_users + self.n_items)

        modal: dict[str, tuple[Tensor, Tensor]] = {}
        for name in self.features.names:
            layer = self.reducers[name]
            x = Tensor(self.features[name])
            # s_i = p . reduce(x_i); p^m = s p C^T, assembled as rank-1 product
            s = matmul(Tensor(self._reduced[name]), transpose(p))       # (n_items, 1)
            lifted = matmul(p, Tensor(self.pca[name].components.T))     # (1, d_m)
            p_m = matmul(s, lifted)
            pre = matmul(x + layer.lambda1 * p_m,
                         leaves[layer.weight.name]) + leaves[layer.bias.name]
            f0, _ = dropout(pre, layer.dropout_rate, dropout_rng, training)
            u0 = tape_spmm(user_agg, f0)
            zm = propagate_mean(adj, vstack([u0, f0]), self.n_layers)
            modal[name] = (row_slice(zm, 0, self.n_users),
                           row_slice(zm, self.n_users, self.n_users + self.n_items))
        return TeacherOutputs(e_user, e_item, modal, p)

    # -- evaluation-mode state ----------------------------------------------

    def _fingerprint(self) -> int:
        h = 0
        for p in self.params():
            h = zlib.crc32(p.value.tobytes(), h)
        return h

    def final_state(self, adj: sp.csr_matrix, user_agg: sp.csr_matrix) -> dict:
        """Numpy snapshot of the eval-mode forward, cached on parameter values."""
        fp = self._fingerprint()
        if self._cache is None or self._cache[0] != fp:
            out = self.forward(adj, user_agg, training=False)
            state = {
                "user": out.user.value,
                "item": out.item.value,
                "modal": {name: (fu.value, fi.value)
                          for name, (fu, fi) in out.modal.items()},
            }
            self._cache = (fp, state)
        return self._cache[1]

    def score_matrix(self, adj: sp.csr_matrix, user_agg: sp.csr_matrix) -> np.ndarray:
        """Fused scores: ID inner product plus the mean modality inner product."""
        state = self.final_state(adj, user_agg)
        scores = state["user"] @ state["item"].T
        n_m = len(state["modal"])
        for fu, fi in state["modal"].values():
            scores += (fu @ fi.T) / n_m
        return scores

    def score(self, adj: sp.csr_matrix, user_agg: sp.csr_matrix,
              u: int, i: int) -> float:
        state = self.final_state(adj, user_agg)
        val = float(state["user"][u] @ state["item"][i])
        n_m = len(state["modal"])
        for fu, fi in state["modal"].values():
            val += float(fu[u] @ fi[i]) / n_m
        return val


def graph_operators(graph: InteractionGraph):
    """(normalized adjacency, user neighbor-mean) pair used by both models."""
    from .graph import normalized_adjacency
    return normalized_adjacency(graph), user_item_mean(graph)
