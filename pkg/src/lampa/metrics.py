"""Embedding metrics, ROC AUC, an analytic FLOPs model and a throughput harness."""
from __future__ import annotations

import csv
import hashlib
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import rankdata
from threadpoolctl import threadpool_limits

from .numeric import DimensionError

K_CAP = 32
RECALL_DEFINITION = ("per-cluster fraction of member hits appearing in the k-NN sets of the "
                     "cluster's other members, averaged over clusters of size >= 2")


def default_k(cluster_size: int) -> int:
    return int(min(max(cluster_size - 1, 1), K_CAP))


def knn_indices(X, k: int, rows=None, chunk: int = 512) -> np.ndarray:
    """Exact k nearest neighbours (L2, self excluded, ties by index) for ``rows``."""
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    if not 1 <= k < n:
        raise ValueError(f"k must lie in [1, {n - 1}], got {k}")
    rows = np.arange(n) if rows is None else np.asarray(rows, dtype=np.intp)
    sq = np.sum(X * X, axis=1)
    out = np.empty((len(rows), k), dtype=np.intp)
    for lo in range(0, len(rows), chunk):
        r = rows[lo:lo + chunk]
        d2 = np.maximum(sq[r, None] + sq[None, :] - 2.0 * X[r] @ X.T, 0.0)
        d2[np.arange(len(r)), r] = np.inf
        part = np.partition(d2, k - 1, axis=1)[:, k - 1]
        for i in range(len(r)):
            cand = np.flatnonzero(d2[i] <= part[i])
            cand = cand[np.lexsort((cand, d2[i, cand]))]
            out[lo + i] = cand[:k]
    return out


def _cluster_sizes(labels: np.ndarray) -> np.ndarray:
    _, inv, counts = np.unique(labels, return_inverse=True, return_counts=True)
    return counts[inv]


def prec_at_k(embeddings, labels, u: int, k: int | None = None) -> float:
    """Share of u's k nearest neighbours that carry u's label."""
    X = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels)
    if k is None:
        k = default_k(int(np.sum(labels == labels[u])))
    if k >= X.shape[0]:
        raise ValueError(f"k={k} must be smaller than the number of points ({X.shape[0]})")
    nbrs = knn_indices(X, k, [u])[0]
    return float(np.mean(labels[nbrs] == labels[u]))


def _neighbourhoods(X: np.ndarray, labels: np.ndarray, anchors: np.ndarray):
    """Neighbour lists for every anchor with its default k (batched by k)."""
    sizes = _cluster_sizes(labels)
    ks = np.minimum([default_k(s) for s in sizes[anchors]], X.shape[0] - 1)
    kmax = int(ks.max())
    nbrs = knn_indices(X, kmax, anchors)
    return nbrs, ks


def accuracy(embeddings, labels) -> float:
    """Mean Prec@k over all non-noise points (label >= 0)."""
    X = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels)
    if X.shape[0] < 2:
        raise ValueError("accuracy needs at least two points")
    if labels.shape != (X.shape[0],):
        raise DimensionError("one label per embedding row expected")
    anchors = np.flatnonzero(labels >= 0)
    if anchors.size == 0:
        raise ValueError("no non-noise points to score")
    nbrs, ks = _neighbourhoods(X, labels, anchors)
    hits = labels[nbrs] == labels[anchors, None]
    valid = np.arange(nbrs.shape[1])[None, :] < ks[:, None]
    return float(np.mean(np.sum(hits & valid, axis=1) / ks))


def recall(embeddings, labels) -> float:
    """Mean over true clusters of the share of their hits retrieved by members' k-NN sets."""
    X = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels)
    if labels.shape != (X.shape[0],):
        raise DimensionError("one label per embedding row expected")
    sizes = _cluster_sizes(labels)
    anchors = np.flatnonzero((labels >= 0) & (sizes >= 2))
    if anchors.size == 0:
        raise ValueError("no cluster with at least two hits")
    nbrs, ks = _neighbourhoods(X, labels, anchors)
    found = np.zeros(X.shape[0], dtype=bool)
    for row, a in enumerate(anchors):
        cand = nbrs[row, :ks[row]]
        found[cand[labels[cand] == labels[a]]] = True
    clusters = np.unique(labels[anchors])
    scores = [np.mean(found[labels == c]) for c in clusters]
    return float(np.mean(scores))


def roc_auc(scores, labels) -> float:
    """Mann-Whitney AUC with average ranks for ties."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if scores.shape != labels.shape:
        raise DimensionError("scores and labels differ in length")
    pos = labels == 1
    n1, n0 = int(pos.sum()), int((~pos).sum())
    if n1 == 0 or n0 == 0:
        raise ValueError("roc_auc needs both classes")
    ranks = rankdata(scores)
    return float((ranks[pos].sum() - n1 * (n1 + 1) / 2.0) / (n1 * n0))


# -- FLOPs -------------------------------------------------------------------------------------

FLOPS_FORMULAS = {
    "embed": "2 n (d_in D + D^2)",
    "block.in_proj": "2 n D (2E)",
    "block.conv": "2 n K E",
    "block.delta": "2 n E^2",
    "block.B_C": "2 * 2 n E (E N)",
    "block.scan": "2 * 3 n E N  (state update, input injection, readout)",
    "block.gate_out": "2 n E D + n E",
    "attention.proj": "2 * 4 n D^2",
    "attention.buckets": "2 * 2 n block_size D m1  (scores and weighted values per table)",
    "hash": "2 n (D + g) m1 m2  (per hashing pass; once for mamba_b, per layer for mamba_a)",
    "head": "2 n (2 D^2 + D out)",
}


def flops_breakdown(cfg, n: int) -> dict:
    """Analytic FLOP counts (1 multiply-add = 2 FLOPs) per component for one forward pass."""
    D, E, N, K = cfg.hidden_dim, cfg.inner_dim, cfg.state_dim, cfg.conv_width
    g, L = cfg.coord_dim, cfg.n_layers
    block = (2 * n * D * 2 * E + 2 * n * K * E + 2 * n * E * E + 4 * n * E * E * N
             + 6 * n * E * N + 2 * n * E * D + n * E)
    hash_pass = 2 * n * (D + g) * cfg.m1 * cfg.m2
    parts = {"embed": 2 * n * (cfg.d_in * D + D * D), "blocks": L * block,
             "head": 2 * n * (2 * D * D + D * cfg.out_dim), "attention": 0, "hash": 0}
    if cfg.arch == "mamba_a" and L:
        parts["attention"] = L * (8 * n * D * D + 4 * n * cfg.block_size * D * cfg.m1)
        parts["hash"] = (1 if cfg.reuse_assignment else L) * hash_pass
    elif cfg.arch == "mamba_b" and L:
        parts["hash"] = hash_pass
    return {k: int(v) for k, v in parts.items()}


def flops_estimate(cfg, n: int) -> int:
    if n < 0:
        raise ValueError("n must be non-negative")
    return int(sum(flops_breakdown(cfg, n).values()))


# -- throughput -------------------------------------------------------------------------------

@dataclass(frozen=True)
class BenchResult:
    median: float            # hits per second
    q1: float
    q3: float
    times: tuple             # seconds per repetition
    n_hits: int
    workers: int
    mode: str

    @property
    def iqr(self) -> float:
        return self.q3 - self.q1

    @property
    def median_time(self) -> float:
        return float(np.median(self.times))


def throughput_bench(run, batches, warmup: int = 1, reps: int = 3, workers: int = 1) -> BenchResult:
    """Wall-clock hits/sec of ``run(batch)`` over ``batches``.

    ``workers == 1`` pins BLAS to one thread and runs events serially;
    otherwise events are spread over a thread pool of that size.
    """
    if reps < 3:
        raise ValueError("reps must be at least 3")
    batches = list(batches)
    n_hits = int(sum(b.n for b in batches))

    def once():
        if workers == 1:
            for b in batches:
                run(b)
        else:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                list(pool.map(run, batches))

    limit = 1 if workers == 1 else None
    with threadpool_limits(limits=limit):
        for _ in range(warmup):
            once()
        times = []
        for _ in range(reps):
            t0 = time.perf_counter()
            once()
            times.append(time.perf_counter() - t0)
    rates = n_hits / np.asarray(times)
    q1, med, q3 = np.percentile(rates, [25, 50, 75])
    return BenchResult(float(med), float(q1), float(q3), tuple(times), n_hits, workers,
                       "single" if workers == 1 else "parallel")


# -- reports ---------------------------------------------------------------------------------

def config_digest(config) -> str:
    d = config.to_dict() if hasattr(config, "to_dict") else dict(config)
    return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class MetricsReport:
    event_id: int
    n_hits: int
    seed: int
    config_digest: str
    top1_accuracy: float = math.nan
    top1_recall: float = math.nan
    roc_auc: float = math.nan
    flops_per_event: int = 0
    throughput_hits_per_sec: float = math.nan
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("top1_accuracy", "top1_recall", "roc_auc"):
            v = getattr(self, name)
            if not (math.isnan(v) or 0.0 <= v <= 1.0):
                raise ValueError(f"{name}={v} outside [0, 1]")
        if self.flops_per_event < 0:
            raise ValueError("flops_per_event must be non-negative")

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in d.items()}


def aggregate(reports) -> dict:
    """Mean of every numeric field over events (NaNs skipped)."""
    reports = list(reports)
    if not reports:
        raise ValueError("no reports to aggregate")
    out = {"n_events": len(reports)}
    for name in ("top1_accuracy", "top1_recall", "roc_auc", "flops_per_event",
                 "throughput_hits_per_sec", "n_hits"):
        vals = np.array([getattr(r, name) for r in reports], dtype=np.float64)
        vals = vals[~np.isnan(vals)]
        out[name] = float(np.mean(vals)) if vals.size else None
    return out


def write_jsonl(records, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r.to_dict() if hasattr(r, "to_dict") else r, sort_keys=True) + "\n")


def read_jsonl(path) -> list:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def write_csv(rows, path, columns=None) -> None:
    rows = list(rows)
    columns = columns or (list(rows[0]) if rows else [])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns)
        writer.writeheader()
        writer.writerows(rows)


__all__ = [
    "BenchResult", "FLOPS_FORMULAS", "MetricsReport", "RECALL_DEFINITION", "accuracy", "aggregate",
    "config_digest", "flops_breakdown", "flops_estimate", "knn_indices", "prec_at_k", "read_jsonl",
    "recall", "roc_auc", "throughput_bench", "write_csv", "write_jsonl",
]
