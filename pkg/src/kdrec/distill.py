"""The four training losses and the joint objective.

* BPR on the student's own scores.
* Pair-wise ranking KD: binary KL between the teacher's and student's
  pair probabilities sigmoid(margin).
* List-wise KD on K-length ranking lists, in the disentangled form
  KL(b_T || b_S) + (1 - b+_T) * KL(q_T || q_S), where b splits "positive
  vs rest" probability mass and q renormalizes within the negatives.
  The disentangled form is an exact rewrite of the vanilla list KL, so
  both routes agree to float precision on every input.
* Scaled cosine error between student item embeddings and each modality's
  teacher embeddings.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .autodiff import (Tensor, as_tensor, clip, col_slice, gather2d, hstack,
                       log, logsigmoid, matmul, maximum, power, rowwise_dot,
                       rows, sigmoid, softmax_rows, sqrt, transpose)

PROB_FLOOR = 1e-12   # probabilities are floored before every log
SIGMOID_FLOOR = 1e-9  # pair probabilities are kept away from {0, 1}


@dataclass(frozen=True)
class LossWeights:
    """Multipliers for the KD terms of the joint objective."""

    lambda2: float = 0.1   # pair-wise ranking KD
    lambda3: float = 0.1   # disentangled list-wise KD
    lambda4: float = 0.01  # embedding KD

    def __post_init__(self):
        for name in ("lambda2", "lambda3", "lambda4"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


@dataclass
class DisentangledLogits:
    """Softened list scores split into (positive vs rest, within-negatives)."""

    b_pos: float
    b_neg: float
    q: np.ndarray
    tau: float

    def __post_init__(self):
        if abs(self.b_pos + self.b_neg - 1.0) > 1e-10:
            raise ValueError("binary probabilities must sum to 1")
        if abs(self.q.sum() - 1.0) > 1e-10:
            raise ValueError("negative-list probabilities must sum to 1")


def soften_list(y: np.ndarray, tau: float = 1.0) -> DisentangledLogits:
    """Temperature-softened decomposition of one K-length logit list.

    Position 0 is the observed item. Both softmaxes are max-subtracted;
    the identity q_k = p_k / b_neg ties the two parts together.
    """
    y = np.asarray(y, dtype=np.float64)
    if y.size < 2:
        raise ValueError(f"a ranking list needs K >= 2, got {y.size}")
    z = y / tau
    z = z - z.max()
    e = np.exp(z)
    p = e / e.sum()
    zn = z[1:] - z[1:].max()
    en = np.exp(zn)
    q = en / en.sum()
    return DisentangledLogits(float(p[0]), float(1.0 - p[0]), q, tau)


def softened_probs(y: np.ndarray, tau: float = 1.0) -> np.ndarray:
    """Full softmax over one logit list (the vanilla view of soften_list)."""
    z = np.asarray(y, dtype=np.float64) / tau
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


# ---------------------------------------------------------------------------
# score gathering helpers shared by teacher and student paths

def pair_margins(emb_u: Tensor, emb_i: Tensor, users, pos, neg) -> Tensor:
    """Per-triplet score margins s(u, i+) - s(u, i-), shaped (n, 1)."""
    eu = rows(emb_u, users)
    s_pos = rowwise_dot(eu, rows(emb_i, pos))
    s_neg = rowwise_dot(eu, rows(emb_i, neg))
    return s_pos - s_neg


def list_logits(emb_u: Tensor, emb_i: Tensor, users, item_lists) -> Tensor:
    """Per-list score rows: column k holds s(u, items[k]); shape (n, K).

    Scores every item for the batched users in one matmul, then gathers
    the K list columns; far cheaper on the tape than n*K row gathers.
    """
    item_lists = np.asarray(item_lists, dtype=np.intp)
    full = matmul(rows(emb_u, users), transpose(emb_i))
    return gather2d(full, item_lists)


# ---------------------------------------------------------------------------
# loss terms

def bpr_loss(pos_scores, neg_scores) -> Tensor:
    """Mean of -log sigmoid(s+ - s-); L2 is left to decoupled weight decay."""
    pos_scores, neg_scores = as_tensor(pos_scores), as_tensor(neg_scores)
    if pos_scores.shape != neg_scores.shape:
        raise ValueError("positive/negative score shapes differ")
    if not (np.all(np.isfinite(pos_scores.value))
            and np.all(np.isfinite(neg_scores.value))):
        raise ValueError("non-finite scores in BPR batch")
    return (-logsigmoid(pos_scores - neg_scores)).mean()


def pair_kd_loss(teacher_margins, student_margins) -> Tensor:
    """Binary KL between teacher and student pair probabilities.

    Each margin is read as the logit of "the positive beats the negative";
    both probabilities are floored away from 0/1, then
    KL(Ber(sig_T) || Ber(sig_S)) is averaged over the batch. Non-negative,
    and zero exactly when the two pair distributions coincide.
    """
    t = clip(sigmoid(as_tensor(teacher_margins)), SIGMOID_FLOOR, 1.0 - SIGMOID_FLOOR)
    s = clip(sigmoid(as_tensor(student_margins)), SIGMOID_FLOOR, 1.0 - SIGMOID_FLOOR)
    one_m_t = 1.0 - t
    one_m_s = 1.0 - s
    kl = t * (log(t) - log(s)) + one_m_t * (log(one_m_t) - log(one_m_s))
    return kl.mean()


def _rowwise_kl(p: Tensor, q: Tensor) -> Tensor:
    """sum_k p_k (log p_k - log q_k) per row, floored before the logs."""
    pf = maximum(p, PROB_FLOOR)
    qf = maximum(q, PROB_FLOOR)
    return (p * (log(pf) - log(qf))).sum(axis=1, keepdims=True)


def disentangled_list_kd(teacher_logits, student_logits, tau: float = 1.0,
                         detach_reweight: bool = False) -> Tensor:
    """KL(b_T || b_S) + (1 - b+_T) KL(q_T || q_S), averaged over lists.

    ``detach_reweight`` treats the (1 - b+_T) factor as a constant weight
    instead of a differentiable quantity; the loss value is unchanged,
    only the gradient through the teacher side differs. The default keeps
    it attached so the loss is the exact gradient of its value.
    """
    yt, ys = as_tensor(teacher_logits), as_tensor(student_logits)
    if yt.shape != ys.shape or yt.shape[1] < 2:
        raise ValueError(f"bad list logit shapes: {yt.shape} vs {ys.shape}")
    k = yt.shape[1]
    inv_tau = 1.0 / tau
    pt = softmax_rows(yt * inv_tau)
    ps = softmax_rows(ys * inv_tau)
    bt_pos = col_slice(pt, 0, 1)
    bs_pos = col_slice(ps, 0, 1)
    bt = hstack([bt_pos, col_slice(pt, 1, k).sum(axis=1, keepdims=True)])
    bs = hstack([bs_pos, col_slice(ps, 1, k).sum(axis=1, keepdims=True)])
    qt = softmax_rows(col_slice(yt, 1, k) * inv_tau)
    qs = softmax_rows(col_slice(ys, 1, k) * inv_tau)
    weight = 1.0 - bt_pos
    if detach_reweight:
        weight = weight.detach()
    per_list = _rowwise_kl(bt, bs) + weight * _rowwise_kl(qt, qs)
    return per_list.mean()


def vanilla_list_kd(teacher_logits, student_logits, tau: float = 1.0) -> Tensor:
    """Plain list-wise KL over the full softened distributions."""
    yt, ys = as_tensor(teacher_logits), as_tensor(student_logits)
    if yt.shape != ys.shape or yt.shape[1] < 2:
        raise ValueError(f"bad list logit shapes: {yt.shape} vs {ys.shape}")
    pt = softmax_rows(yt * (1.0 / tau))
    ps = softmax_rows(ys * (1.0 / tau))
    return _rowwise_kl(pt, ps).mean()


def list_kd_loss(teacher_logits_by_modality: Sequence, student_logits,
                 tau: float = 1.0, disentangled: bool = True,
                 detach_reweight: bool = False) -> Tensor:
    """Sum over modalities of the list-wise KD term on a shared list batch."""
    total: Tensor | None = None
    for yt in teacher_logits_by_modality:
        if disentangled:
            term = disentangled_list_kd(yt, student_logits, tau, detach_reweight)
        else:
            term = vanilla_list_kd(yt, student_logits, tau)
        total = term if total is None else total + term
    if total is None:
        raise ValueError("list_kd_loss needs at least one modality")
    return total


def emb_kd_loss(student_items: Tensor, teacher_modal_items: Sequence,
                gamma: float = 2.0) -> Tensor:
    """Scaled cosine error (1 - cos)^gamma, item-mean, summed over modalities."""
    if gamma < 1.0:
        raise ValueError(f"gamma must be >= 1, got {gamma}")
    es = as_tensor(student_items)
    norm_s = sqrt(maximum((es * es).sum(axis=1, keepdims=True), PROB_FLOOR ** 2))
    total: Tensor | None = None
    for fm in teacher_modal_items:
        fm = as_tensor(fm)
        if not np.all(np.isfinite(fm.value)):
            raise ValueError("non-finite teacher embedding in emb_kd_loss")
        norm_f = sqrt(maximum((fm * fm).sum(axis=1, keepdims=True), PROB_FLOOR ** 2))
        cosine = rowwise_dot(es, fm) / (norm_s * norm_f)
        term = power(1.0 - cosine, gamma).mean()
        total = term if total is None else total + term
    if total is None:
        raise ValueError("emb_kd_loss needs at least one modality")
    return total


def joint_loss(l_bpr: Tensor, l_pair: Tensor | None, l_list: Tensor | None,
               l_emb: Tensor | None, weights: LossWeights) -> Tensor:
    """L = L_BPR + lambda2 L_Pair + lambda3 L_List + lambda4 L_Emb."""
    total = l_bpr
    if l_pair is not None and weights.lambda2 > 0:
        total = total + weights.lambda2 * l_pair
    if l_list is not None and weights.lambda3 > 0:
        total = total + weights.lambda3 * l_list
    if l_emb is not None and weights.lambda4 > 0:
        total = total + weights.lambda4 * l_emb
    return total
