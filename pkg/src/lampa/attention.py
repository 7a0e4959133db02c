"""Masked linear attention and bucket-local softmax attention."""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import numeric as nm
from .lsh import BucketAssignment
from .numeric import DimensionError, Tensor


class MaskKind(str, enum.Enum):
    CAUSAL = "causal"
    DECAY = "decay"
    SEMISEPARABLE = "semiseparable"


class AttentionKernel(str, enum.Enum):
    DOT_PRODUCT = "dot_product"
    NEG_DISTANCE = "neg_distance"  # reserved, not implemented


@dataclass(frozen=True)
class StructuredMask:
    kind: MaskKind
    L: np.ndarray
    gamma: float | None = None

    def __post_init__(self):
        L = np.asarray(self.L, dtype=np.float64)
        if L.ndim != 2 or L.shape[0] != L.shape[1]:
            raise DimensionError("mask must be square")
        if np.any(np.triu(L, k=1) != 0):
            raise ValueError("mask must be lower triangular")
        object.__setattr__(self, "L", L)

    @classmethod
    def causal(cls, T: int) -> "StructuredMask":
        return cls(MaskKind.CAUSAL, np.tril(np.ones((T, T))))

    @classmethod
    def decay(cls, T: int, gamma: float = 0.9) -> "StructuredMask":
        if not 0 < gamma < 1:
            raise ValueError("decay gamma must lie in (0, 1)")
        t = np.arange(T)
        lag = t[:, None] - t[None, :]
        return cls(MaskKind.DECAY, np.where(lag >= 0, gamma ** np.maximum(lag, 0), 0.0), gamma)

    @classmethod
    def semiseparable(cls, abar) -> "StructuredMask":
        """L[t, s] = abar_t * ... * abar_{s+1} for s <= t (scalar decays)."""
        abar = np.asarray(abar, dtype=np.float64)
        T = abar.shape[0]
        L = np.zeros((T, T))
        for s in range(T):
            L[s, s] = 1.0
            for t in range(s + 1, T):
                L[t, s] = L[t - 1, s] * abar[t]
        return cls(MaskKind.SEMISEPARABLE, L)


def linear_attention(Q, K, V):
    """Q (K^T V): softmax-free attention in linear time."""
    Q, K, V = (nm.as_tensor(v) for v in (Q, K, V))
    if Q.shape[-1] != K.shape[-1] or K.shape[0] != V.shape[0]:
        raise DimensionError(f"incompatible shapes Q{Q.shape} K{K.shape} V{V.shape}")
    return Q @ (K.T @ V)


def masked_attention(Q, K, V, mask: StructuredMask):
    """(L o Q K^T) V with the mask materialized."""
    Q, K, V = (nm.as_tensor(v) for v in (Q, K, V))
    T = mask.L.shape[0]
    if Q.shape[0] != T or K.shape[0] != T or V.shape[0] != T or Q.shape[-1] != K.shape[-1]:
        raise DimensionError(f"mask of size {T} incompatible with Q{Q.shape} K{K.shape} V{V.shape}")
    return ((Q @ K.T) * mask.L) @ V


def _attend(q: Tensor, k: Tensor, v: Tensor, scale: float) -> Tensor:
    # q, k, v: (buckets, size, d)
    scores = nm.matmul(q, nm.swapaxes(k, -1, -2)) * scale
    return nm.matmul(nm.softmax(scores, axis=-1), v)


def bucketed_attention(q, k, v, assignment: BucketAssignment,
                       kernel: AttentionKernel = AttentionKernel.DOT_PRODUCT) -> Tensor:
    """Softmax attention restricted to each bucket, averaged over OR tables.

    Per table the points are gathered into sorted order, full buckets are
    processed as one batched product and the short remainder bucket (if any)
    separately, then results are scattered back to input order.
    """
    if AttentionKernel(kernel) is not AttentionKernel.DOT_PRODUCT:
        raise NotImplementedError(f"attention kernel {kernel!r} is not implemented")
    q, k, v = (nm.as_tensor(t) for t in (q, k, v))
    n, d = q.shape
    if k.shape != (n, d) or v.shape[0] != n:
        raise DimensionError("q, k and v must share the point count (and q, k the width)")
    if assignment.n != n:
        raise DimensionError(f"assignment covers {assignment.n} points, got {n}")
    bs = assignment.block_size
    n_full = (n // bs) * bs
    scale = 1.0 / np.sqrt(d)
    out = None
    for table in range(assignment.m1):
        order = assignment.orders[table]
        qs, ks, vs = (nm.take(t, order, axis=0) for t in (q, k, v))
        parts = []
        if n_full:
            parts.append(nm.reshape(_attend(
                nm.reshape(qs[:n_full], (n_full // bs, bs, d)),
                nm.reshape(ks[:n_full], (n_full // bs, bs, d)),
                nm.reshape(vs[:n_full], (n_full // bs, bs, v.shape[1])), scale), (n_full, v.shape[1])))
        if n_full < n:
            rem = n - n_full
            parts.append(nm.reshape(_attend(
                nm.reshape(qs[n_full:], (1, rem, d)), nm.reshape(ks[n_full:], (1, rem, d)),
                nm.reshape(vs[n_full:], (1, rem, v.shape[1])), scale), (rem, v.shape[1])))
        sorted_out = parts[0] if len(parts) == 1 else nm.concat(parts, axis=0)
        restored = nm.take(sorted_out, assignment.inverse[table], axis=0)
        out = restored if out is None else out + restored
    return out * (1.0 / assignment.m1)


def full_attention(q, k, v) -> Tensor:
    """Plain softmax attention over all points (quadratic; small-n oracle)."""
    q, k, v = (nm.as_tensor(t) for t in (q, k, v))
    n, d = q.shape
    out = _attend(nm.reshape(q, (1, n, d)), nm.reshape(k, (1, n, d)),
                  nm.reshape(v, (1,) + v.shape), 1.0 / np.sqrt(d))
    return nm.reshape(out, v.shape)
