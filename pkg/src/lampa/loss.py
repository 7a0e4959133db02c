"""Contrastive InfoNCE over kNN pairs and focal loss."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numeric as nm
from .numeric import DimensionError, Tensor

PROB_CLAMP = 1e-7
MASKED_LOGIT = -1e30


@dataclass(frozen=True)
class PairSet:
    anchor: int
    positives: np.ndarray
    negatives: np.ndarray

    def __post_init__(self):
        pos = np.asarray(self.positives, dtype=np.intp)
        neg = np.asarray(self.negatives, dtype=np.intp)
        if np.intersect1d(pos, neg).size:
            raise ValueError("positives and negatives overlap")
        if self.anchor in pos or self.anchor in neg:
            raise ValueError("anchor paired with itself")
        object.__setattr__(self, "positives", pos)
        object.__setattr__(self, "negatives", neg)


def rbf_similarity(h_u, h_v, sigma: float = 1.0) -> Tensor:
    """exp(-||h_u - h_v||^2 / (2 sigma^2)) over the last axis.

    Works on the squared distance directly, so the gradient at h_u == h_v is
    exactly zero.
    """
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    h_u, h_v = nm.as_tensor(h_u), nm.as_tensor(h_v)
    if h_u.shape[-1] != h_v.shape[-1]:
        raise DimensionError("embeddings differ in width")
    diff = h_u - h_v
    return nm.exp(nm.tsum(diff * diff, axis=-1) * (-0.5 / sigma ** 2))


def info_nce(sim_pos, sim_negs=()) -> Tensor:
    """-log(exp(s+) / (exp(s+) + sum exp(s-))), via log-sum-exp."""
    if sim_pos is None:
        raise ValueError("info_nce needs a positive similarity")
    sim_pos = nm.reshape(nm.as_tensor(sim_pos), (1,))
    if isinstance(sim_negs, Tensor):
        negs = nm.reshape(sim_negs, (-1,))
    else:
        negs = nm.as_tensor(np.asarray(sim_negs, dtype=np.float64).reshape(-1))
    logits = nm.concat([sim_pos, negs], axis=0) if negs.size else sim_pos
    return nm.logsumexp(logits, axis=0) - nm.reshape(sim_pos, ())


def build_pairs(embeddings, labels, pool_size: int = 256, k: int = 32,
                full_pool: bool = False) -> list:
    """Positive and negative partners for every labelled anchor.

    Positives are same-label points among the anchor's ``k`` nearest
    embedding neighbours.  Negatives are other-label points among its
    ``pool_size`` nearest, truncated to the closest ``k`` unless
    ``full_pool``.  Noise points (label < 0) never anchor or act as
    positives.  Distance ties are broken by index.
    """
    X = np.asarray(embeddings.data if isinstance(embeddings, Tensor) else embeddings, dtype=np.float64)
    labels = np.asarray(labels)
    n = X.shape[0]
    if n <= 1:
        raise ValueError("need at least two points to build pairs")
    if labels.shape != (n,):
        raise DimensionError("one label per embedding row expected")
    sq = np.sum(X * X, axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * X @ X.T, 0.0)
    pairs = []
    idx = np.arange(n)
    for u in range(n):
        if labels[u] < 0:
            continue
        order = np.lexsort((idx, d2[u]))
        order = order[order != u]
        near = order[:k]
        pos = near[labels[near] == labels[u]]
        pool = order[:pool_size]
        neg = pool[labels[pool] != labels[u]]
        if not full_pool:
            neg = neg[:k]
        pairs.append(PairSet(u, np.sort(pos), neg))
    return pairs


def contrastive_loss(embeddings: Tensor, pairs, sigma: float = 1.0) -> Tensor:
    """Mean over anchors of the mean InfoNCE over that anchor's positives.

    Anchors without positives are skipped; an anchor with positives but no
    negatives contributes zero.
    """
    pairs = [p for p in pairs if p.positives.size]
    if not pairs:
        raise ValueError("no anchor has a positive partner")
    h = nm.as_tensor(embeddings)
    width = max(p.negatives.size for p in pairs)
    anchors_rep, pos_idx, pair_anchor = [], [], []
    for a, p in enumerate(pairs):
        anchors_rep.extend([p.anchor] * p.positives.size)
        pos_idx.extend(p.positives.tolist())
        pair_anchor.extend([a] * p.positives.size)
    anchors_rep = np.asarray(anchors_rep, dtype=np.intp)
    pair_anchor = np.asarray(pair_anchor, dtype=np.intp)
    s_pos = rbf_similarity(nm.take(h, anchors_rep), nm.take(h, pos_idx), sigma)
    per_pair = nm.Tensor(np.zeros(len(pos_idx)))
    if width:
        anchor_ids = np.array([p.anchor for p in pairs], dtype=np.intp)
        neg_idx = np.tile(anchor_ids[:, None], (1, width))
        mask = np.full((len(pairs), width), MASKED_LOGIT)
        for a, p in enumerate(pairs):
            neg_idx[a, :p.negatives.size] = p.negatives
            mask[a, :p.negatives.size] = 0.0
        h_anchor = nm.reshape(nm.take(h, anchor_ids), (len(pairs), 1, h.shape[1]))
        h_neg = nm.reshape(nm.take(h, neg_idx.reshape(-1)), (len(pairs), width, h.shape[1]))
        s_neg = rbf_similarity(h_anchor, h_neg, sigma) + mask
        s_neg_pair = nm.take(s_neg, pair_anchor)
        logits = nm.concat([nm.reshape(s_pos, (-1, 1)), s_neg_pair], axis=1)
        per_pair = nm.logsumexp(logits, axis=1) - s_pos
    counts = np.bincount(pair_anchor, minlength=len(pairs)).astype(np.float64)
    weights = 1.0 / (counts[pair_anchor] * len(pairs))
    return nm.tsum(per_pair * weights)


def focal_loss(p, y, alpha: float = 0.25, lam: float = 2.0, reduction: str = "mean") -> Tensor:
    """-alpha_t (1 - p_t)^lam log(p_t) with p clamped to [1e-7, 1 - 1e-7].

    p_t = p and alpha_t = alpha for positives; 1 - p and 1 - alpha otherwise.
    """
    p = nm.clip(nm.as_tensor(p), PROB_CLAMP, 1.0 - PROB_CLAMP)
    y = np.asarray(y, dtype=np.float64)
    if y.shape != p.shape:
        raise DimensionError("labels and probabilities differ in shape")
    if np.any((y != 0) & (y != 1)):
        raise ValueError("labels must be 0 or 1")
    p_t = p * y + (1.0 - p) * (1.0 - y)
    alpha_t = alpha * y + (1.0 - alpha) * (1.0 - y)
    one_minus = 1.0 - p_t
    weight = one_minus ** lam if lam != 0 else nm.Tensor(np.ones(p.shape))
    loss = -(weight * nm.log(p_t) * alpha_t)
    if reduction == "mean":
        return nm.mean(loss)
    if reduction == "sum":
        return nm.tsum(loss)
    return loss
