"""Two-stage offline distillation: train the teacher, freeze it, then
distill the student while co-tuning the prompt module.

Both stages run AdamW with early stopping on validation Recall@20 and
return the best checkpoint seen. Stage two verifies after every epoch
that no frozen teacher parameter moved.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field, replace
from typing import IO, Sequence

import numpy as np

from .autodiff import Tensor, rows, rowwise_dot
from .data_io import DatasetBundle
from .distill import (LossWeights, bpr_loss, emb_kd_loss, joint_loss,
                      list_kd_loss, list_logits, pair_kd_loss, pair_margins)
from .evaluation import EvalResult, evaluate
from .graph import normalized_adjacency, sample_bpr_batch, sample_rank_lists, user_item_mean
from .numerics import AdamW, Param, collect_grads, component_rng, param_leaves
from .student import StudentModel
from .teacher import TeacherModel

ABLATION_VARIANTS = ("full", "no_prompt", "no_pairkd", "no_listkd", "no_disentangle")


@dataclass
class TrainConfig:
    """Everything a two-stage run needs; defaults target desk-scale data."""

    d: int = 32
    n_layers: int = 2
    teacher_lr: float = 5e-3
    student_lr: float = 8.5e-4
    weight_decay: float = 2.5e-3
    teacher_epochs: int = 40
    distill_epochs: int = 60
    batch_size: int = 256
    list_len: int = 20                 # K, length of each ranking list
    lists_per_step: int | None = None  # defaults to batch_size
    dropout_rate: float = 0.25
    lambda1: float = 0.1               # prompt scale inside the reduction layer
    lambda2: float = 0.1               # pair-wise KD weight
    lambda3: float = 0.1               # list-wise KD weight
    lambda4: float = 0.01              # embedding KD weight
    tau: float = 1.0
    gamma: float = 2.0
    eval_interval: int = 5
    patience: int = 10
    seed: int = 0
    eval_ks: tuple[int, ...] = (20, 50)
    prompt_refresh: int = 1            # rebuild the teacher modality pass every N steps

    def __post_init__(self):
        if self.teacher_lr <= 0 or self.student_lr <= 0:
            raise ValueError("learning rates must be positive")
        if self.patience < 1:
            raise ValueError("patience must be at least 1")
        if self.list_len < 2:
            raise ValueError("list_len must be at least 2")
        if self.prompt_refresh < 1:
            raise ValueError("prompt_refresh must be at least 1")
        for name in ("lambda1", "lambda2", "lambda3", "lambda4"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        self.eval_ks = tuple(int(k) for k in self.eval_ks)
        if 20 not in self.eval_ks:
            raise ValueError("eval_ks must include 20 (the early-stopping metric)")

    def loss_weights(self) -> LossWeights:
        return LossWeights(self.lambda2, self.lambda3, self.lambda4)


def _snapshot(params: Sequence[Param]) -> dict[str, np.ndarray]:
    return {p.name: p.value.copy() for p in params}


def _restore(params: Sequence[Param], snap: dict[str, np.ndarray]) -> None:
    for p in params:
        if p.name in snap:
            p.value[:] = snap[p.name]


def _batch_arrays(batch):
    users = np.array([t.user for t in batch], dtype=np.intp)
    pos = np.array([t.pos for t in batch], dtype=np.intp)
    neg = np.array([t.neg for t in batch], dtype=np.intp)
    return users, pos, neg


def _teacher_pair_scores(out, users, items) -> Tensor:
    """Fused teacher score gather: ID dot plus mean modality dot."""
    s = rowwise_dot(rows(out.user, users), rows(out.item, items))
    n_m = len(out.modal)
    for fu, fi in out.modal.values():
        s = s + rowwise_dot(rows(fu, users), rows(fi, items)) * (1.0 / n_m)
    return s


class _EarlyStopper:
    """Tracks the best validation Recall@20 and the patience budget."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = -math.inf
        self.best_snap: dict[str, np.ndarray] | None = None
        self.bad_evals = 0

    def update(self, metric: float, params: Sequence[Param]) -> bool:
        """Record one evaluation; returns True when training should stop."""
        if metric > self.best:
            self.best = metric
            self.best_snap = _snapshot(params)
            self.bad_evals = 0
            return False
        self.bad_evals += 1
        return self.bad_evals >= self.patience

    def restore_best(self, params: Sequence[Param]) -> None:
        if self.best_snap is not None:
            _restore(params, self.best_snap)


def train_teacher(bundle: DatasetBundle, config: TrainConfig,
                  ) -> tuple[TeacherModel, list[dict]]:
    """Stage one: BPR on the fused teacher score over every teacher parameter
    (prompt included), dropout active, early stop on validation Recall@20."""
    graph = bundle.train
    adj = normalized_adjacency(graph)
    uagg = user_item_mean(graph)
    teacher = TeacherModel.from_bundle(bundle, config.d, config.n_layers,
                                       config.dropout_rate, config.lambda1,
                                       seed=config.seed)
    params = teacher.params()
    opt = AdamW(lr=config.teacher_lr, weight_decay=config.weight_decay)
    sample_rng = component_rng(config.seed, "teacher-sampling")
    dropout_rng = component_rng(config.seed, "teacher-dropout")
    steps_per_epoch = max(1, math.ceil(graph.n_edges / config.batch_size))
    stopper = _EarlyStopper(config.patience)
    history: list[dict] = []

    for epoch in range(1, config.teacher_epochs + 1):
        for step in range(steps_per_epoch):
            batch = sample_bpr_batch(graph, config.batch_size, sample_rng)
            users, pos, neg = _batch_arrays(batch)
            leaves = param_leaves(params)
            out = teacher.forward(adj, uagg, training=True,
                                  dropout_rng=dropout_rng, leaves=leaves)
            loss = bpr_loss(_teacher_pair_scores(out, users, pos),
                            _teacher_pair_scores(out, users, neg))
            if not np.isfinite(loss.value):
                raise RuntimeError(
                    f"teacher training diverged: non-finite loss at "
                    f"epoch {epoch}, step {step}")
            loss.backward()
            collect_grads(params, leaves)
            opt.step(params)
        if epoch % config.eval_interval == 0:
            res = evaluate(teacher.score_matrix(adj, uagg), bundle,
                           ks=config.eval_ks, split="val")
            history.append({"epoch": epoch, **res.metrics})
            if stopper.update(res.metrics["recall@20"], params):
                break
    stopper.restore_best(params)
    return teacher, history


def distill_student(teacher: TeacherModel, bundle: DatasetBundle,
                    config: TrainConfig, variant: str = "full",
                    loss_log: IO[str] | None = None,
                    ) -> tuple[StudentModel, list[dict]]:
    """Stage two: freeze the teacher backbone, optimize the student tables
    together with the prompt module under the joint KD objective."""
    if variant not in ABLATION_VARIANTS:
        raise ValueError(f"unknown variant '{variant}'; expected one of {ABLATION_VARIANTS}")
    graph = bundle.train
    adj = normalized_adjacency(graph)
    uagg = user_item_mean(graph)

    weights = config.loss_weights()
    disentangled = True
    if variant == "no_pairkd":
        weights = replace(weights, lambda2=0.0)
    elif variant == "no_listkd":
        weights = replace(weights, lambda3=0.0)
    elif variant == "no_disentangle":
        disentangled = False

    teacher.freeze_backbone()
    if variant == "no_prompt":
        teacher.lambda1 = 0.0
        for layer in teacher.reducers.values():
            layer.lambda1 = 0.0
        for p in teacher.prompt.params():
            p.frozen = True
    frozen = [p for p in teacher.params() if p.frozen]
    frozen_snapshot = _snapshot(frozen)

    student = StudentModel(graph.n_users, graph.n_items, config.d,
                           config.n_layers, seed=config.seed)
    trainable = student.params() + [p for p in teacher.prompt.params() if not p.frozen]
    all_params = student.params() + teacher.params()
    opt = AdamW(lr=config.student_lr, weight_decay=config.weight_decay)
    sample_rng = component_rng(config.seed, "distill-sampling")

    need_pair = weights.lambda2 > 0
    need_modal = weights.lambda3 > 0 or weights.lambda4 > 0
    need_lists = weights.lambda3 > 0
    n_lists = config.lists_per_step or config.batch_size

    # the teacher ID path never sees the prompt, so its finals are constant
    teacher_id: tuple[np.ndarray, np.ndarray] | None = None
    if need_pair:
        state = teacher.final_state(adj, uagg)
        teacher_id = (state["user"], state["item"])

    steps_per_epoch = max(1, math.ceil(graph.n_edges / config.batch_size))
    stopper = _EarlyStopper(config.patience)
    history: list[dict] = []
    modal_cache: dict[str, tuple[Tensor, Tensor]] | None = None
    global_step = 0

    for epoch in range(1, config.distill_epochs + 1):
        for _ in range(steps_per_epoch):
            batch = sample_bpr_batch(graph, config.batch_size, sample_rng)
            users, pos, neg = _batch_arrays(batch)
            lists = (sample_rank_lists(graph, n_lists, config.list_len, sample_rng)
                     if need_lists else None)

            leaves = param_leaves(all_params)
            su, si = student.propagate(adj, leaves)
            l_bpr = bpr_loss(rowwise_dot(rows(su, users), rows(si, pos)),
                             rowwise_dot(rows(su, users), rows(si, neg)))

            modal: dict[str, tuple[Tensor, Tensor]] | None = None
            if need_modal:
                if global_step % config.prompt_refresh == 0 or modal_cache is None:
                    out = teacher.forward(adj, uagg, training=False, leaves=leaves)
                    modal = out.modal
                    modal_cache = {name: (fu.detach(), fi.detach())
                                   for name, (fu, fi) in modal.items()}
                else:
                    modal = modal_cache  # stale prompt between refreshes

            l_pair = None
            if need_pair:
                t_margin = (teacher_id[0][users] * (teacher_id[1][pos] - teacher_id[1][neg])
                            ).sum(axis=1, keepdims=True)
                s_margin = pair_margins(su, si, users, pos, neg)
                l_pair = pair_kd_loss(Tensor(t_margin), s_margin)

            l_list = None
            if need_lists:
                list_users = np.array([r.user for r in lists], dtype=np.intp)
                list_items = np.stack([r.items for r in lists])
                s_logits = list_logits(su, si, list_users, list_items)
                t_logits = [list_logits(fu, fi, list_users, list_items)
                            for fu, fi in modal.values()]
                l_list = list_kd_loss(t_logits, s_logits, tau=config.tau,
                                      disentangled=disentangled)

            l_emb = None
            if weights.lambda4 > 0:
                l_emb = emb_kd_loss(si, [fi for _, fi in modal.values()],
                                    gamma=config.gamma)

            total = joint_loss(l_bpr, l_pair, l_list, l_emb, weights)
            if not np.isfinite(total.value):
                raise RuntimeError(
                    f"distillation diverged: non-finite loss at epoch {epoch}, "
                    f"step {global_step}")
            total.backward()
            collect_grads(trainable, leaves)
            opt.step(trainable)
            if loss_log is not None:
                loss_log.write(json.dumps({
                    "step": global_step,
                    "L_BPR": float(l_bpr.value),
                    "L_PairKD": float(l_pair.value) if l_pair is not None else 0.0,
                    "L_ListKD": float(l_list.value) if l_list is not None else 0.0,
                    "L_EmbKD": float(l_emb.value) if l_emb is not None else 0.0,
                    "total": float(total.value),
                }) + "\n")
            global_step += 1

        for p in frozen:
            if not np.array_equal(p.value, frozen_snapshot[p.name]):
                raise RuntimeError(
                    f"optimizer census violation: frozen parameter '{p.name}' "
                    f"changed during epoch {epoch}")
        if epoch % config.eval_interval == 0:
            res = evaluate(student.score_matrix(adj), bundle,
                           ks=config.eval_ks, split="val")
            history.append({"epoch": epoch, **res.metrics})
            if stopper.update(res.metrics["recall@20"], student.params()):
                break
    stopper.restore_best(student.params())
    return student, history


def run_ablation(bundle: DatasetBundle, config: TrainConfig, variant: str,
                 teacher: TeacherModel | None = None) -> EvalResult:
    """Full two-stage pipeline under one ablation variant; test-set metrics.

    A pretrained ``teacher`` may be supplied for variants that leave stage
    one untouched; 'no_prompt' always retrains it with the prompt disabled.
    """
    if variant not in ABLATION_VARIANTS:
        raise ValueError(f"unknown variant '{variant}'; expected one of {ABLATION_VARIANTS}")
    if variant == "no_prompt" or teacher is None:
        stage1_cfg = replace(config, lambda1=0.0) if variant == "no_prompt" else config
        teacher, _ = train_teacher(bundle, stage1_cfg)
    else:
        teacher = copy.deepcopy(teacher)
    student, _ = distill_student(teacher, bundle, config, variant=variant)
    adj = normalized_adjacency(bundle.train)
    return evaluate(student.score_matrix(adj), bundle, ks=config.eval_ks,
                    split="test")
