"""Euclidean LSH with OR/AND composition and equal-size bucketing.

A :class:`HashEnsemble` holds ``m1`` OR tables of ``m2`` AND functions each.
Directions and offsets are drawn once from a seed; the bucket width ``r`` can
be fixed or derived from the data at hashing time, so offsets are stored as
fractions of ``r``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numeric import DimensionError

SUBSAMPLE = 512


@dataclass(frozen=True)
class E2lshFunction:
    a: np.ndarray
    b: float
    r: float

    def __post_init__(self):
        object.__setattr__(self, "a", np.asarray(self.a, dtype=np.float64))
        if not self.r > 0:
            raise ValueError("bucket width r must be positive")
        if not 0 <= self.b < self.r:
            raise ValueError("offset b must lie in [0, r)")

    def __call__(self, x) -> int:
        return e2lsh_hash(x, self)


def e2lsh_hash(x, f: E2lshFunction) -> int:
    """floor((a . x + b) / r)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != f.a.shape:
        raise DimensionError(f"point dimension {x.shape} does not match hash dimension {f.a.shape}")
    return int(np.floor((f.a @ x + f.b) / f.r))


def hash_inputs(features, coords=None, geometric_weight: float = 1.0,
                coords_only: bool = False) -> np.ndarray:
    """Features with weighted coordinates appended (or the coordinates alone)."""
    features = np.asarray(features, dtype=np.float64)
    if coords is None:
        if coords_only:
            raise ValueError("coords_only hashing needs coordinates")
        return features
    coords = np.asarray(coords, dtype=np.float64) * geometric_weight
    if coords.shape[0] != features.shape[0]:
        raise DimensionError("features and coordinates disagree on point count")
    return coords if coords_only else np.concatenate([features, coords], axis=1)


def and_code(x, funcs, coords=None, geometric_weight: float = 1.0) -> tuple:
    """AND code of one point: the tuple of all its hashes.

    Two points are AND-neighbours when their full tuples are equal.
    """
    x = np.asarray(x, dtype=np.float64)
    if coords is not None:
        x = np.concatenate([x, np.asarray(coords, dtype=np.float64) * geometric_weight])
    if len(funcs) < 1:
        raise ValueError("an AND code needs at least one function")
    return tuple(e2lsh_hash(x, f) for f in funcs)


def default_bucket_width(points) -> float:
    """Median pairwise distance over a (deterministic) subsample of points.

    The subsample is picked by content (evenly spaced after sorting along a
    fixed direction) so permuting the input leaves the result unchanged.
    """
    X = np.asarray(points, dtype=np.float64)
    n = X.shape[0]
    if n < 2:
        return 1.0
    if n > SUBSAMPLE:
        key = X @ np.linspace(1.0, 2.0, X.shape[1])
        order = np.lexsort((X[:, 0], key))
        X = X[order[np.linspace(0, n - 1, SUBSAMPLE).astype(int)]]
    sq = np.sum(X * X, axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * X @ X.T, 0.0)
    iu = np.triu_indices(len(X), k=1)
    r = float(np.median(np.sqrt(d2[iu])))
    return r if r > 0 else 1.0


@dataclass
class HashEnsemble:
    directions: np.ndarray           # (m1, m2, dim)
    offsets: np.ndarray              # (m1, m2), fractions of r in [0, 1)
    geometric_weight: float = 1.0
    r: float | None = None

    def __post_init__(self):
        if self.directions.ndim != 3 or self.offsets.shape != self.directions.shape[:2]:
            raise DimensionError("directions must be (m1, m2, dim) and offsets (m1, m2)")
        if self.m1 < 1 or self.m2 < 1:
            raise ValueError("m1 and m2 must be at least 1")
        if self.r is not None and not self.r > 0:
            raise ValueError("bucket width r must be positive")

    @classmethod
    def draw(cls, dim: int, m1: int = 3, m2: int = 3, seed: int = 0,
             geometric_weight: float = 1.0, r: float | None = None) -> "HashEnsemble":
        if m1 < 1 or m2 < 1:
            raise ValueError("m1 and m2 must be at least 1")
        rng = np.random.default_rng(seed)
        return cls(rng.standard_normal((m1, m2, dim)), rng.uniform(0.0, 1.0, (m1, m2)),
                   geometric_weight, r)

    @property
    def m1(self) -> int:
        return self.directions.shape[0]

    @property
    def m2(self) -> int:
        return self.directions.shape[1]

    @property
    def dim(self) -> int:
        return self.directions.shape[2]

    def with_and_width(self, m2: int) -> "HashEnsemble":
        """Same tables keeping only the first ``m2`` AND functions."""
        return HashEnsemble(self.directions[:, :m2], self.offsets[:, :m2], self.geometric_weight, self.r)

    def table(self, i: int, r: float | None = None) -> list:
        r = self._width(r)
        return [E2lshFunction(self.directions[i, j], self.offsets[i, j] * r, r) for j in range(self.m2)]

    def _width(self, r):
        r = self.r if r is None else r
        if r is None:
            raise ValueError("no bucket width given and none fixed on the ensemble")
        return r

    def projections(self, X: np.ndarray) -> np.ndarray:
        """Raw projections a . x, shape (n, m1, m2)."""
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.dim:
            raise DimensionError(f"points of shape {X.shape} do not match hash dimension {self.dim}")
        return np.einsum("nd,ijd->nij", X, self.directions)

    def codes(self, X, r: float | None = None) -> np.ndarray:
        """Integer hashes, shape (n, m1, m2)."""
        X = np.asarray(X, dtype=np.float64)
        r = default_bucket_width(X) if (r is None and self.r is None) else self._width(r)
        return np.floor((self.projections(X) + self.offsets * r) / r).astype(np.int64)


@dataclass(frozen=True)
class BucketAssignment:
    """Per OR table: a sorted ordering of the points cut into equal buckets."""

    orders: np.ndarray     # (m1, n), orders[i][j] = input index at sorted slot j
    inverse: np.ndarray    # (m1, n), inverse[i][input index] = sorted slot
    block_size: int
    bounds: tuple = field(default=())

    @property
    def n(self) -> int:
        return self.orders.shape[1]

    @property
    def m1(self) -> int:
        return self.orders.shape[0]

    def buckets(self, table: int) -> list:
        """Input indices of each bucket in table ``table``."""
        order = self.orders[table]
        return [order[lo:hi] for lo, hi in zip(self.bounds[:-1], self.bounds[1:])]

    def labels(self, table: int) -> np.ndarray:
        """Bucket id of every point (input order) in table ``table``."""
        return self.inverse[table] // self.block_size

    def apply(self, payload, table: int):
        return payload[self.orders[table]]

    def restore(self, payload, table: int):
        return payload[self.inverse[table]]


def assign_buckets(points, ensemble: HashEnsemble, block_size: int, r: float | None = None,
                   codes: np.ndarray | None = None) -> BucketAssignment:
    """Sort points by AND code per OR table and chunk into ``block_size`` buckets.

    Ties in the code are broken by the raw projection onto the first AND
    direction and then by input index.  The last bucket keeps the remainder.
    """
    X = np.asarray(points, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("assign_buckets needs a non-empty (n, dim) point array")
    if block_size < 1:
        raise ValueError("block_size must be at least 1")
    n = X.shape[0]
    if codes is None:
        codes = ensemble.codes(X, r)
    proj = ensemble.projections(X)
    idx = np.arange(n)
    orders = np.empty((ensemble.m1, n), dtype=np.intp)
    inverse = np.empty_like(orders)
    for i in range(ensemble.m1):
        keys = [idx, proj[:, i, 0]] + [codes[:, i, j] for j in range(ensemble.m2 - 1, -1, -1)]
        order = np.lexsort(keys)
        orders[i] = order
        inverse[i, order] = idx
    bounds = tuple(list(range(0, n, block_size)) + [n])
    return BucketAssignment(orders, inverse, block_size, bounds)


def random_region_partition(points, n_regions: int, seed: int = 0) -> np.ndarray:
    """Split points into ``n_regions`` disjoint runs of a hash ordering.

    Points are ordered along a seeded random direction; ``n_regions - 1`` cut
    positions are drawn without replacement.  Returns a region label per
    point (input order).
    """
    X = np.asarray(points, dtype=np.float64)
    n = X.shape[0]
    if not 1 <= n_regions <= n:
        raise ValueError(f"n_regions must lie in [1, {n}]")
    rng = np.random.default_rng(seed)
    direction = rng.standard_normal(X.shape[1])
    order = np.lexsort((np.arange(n), X @ direction))
    cuts = np.sort(rng.choice(np.arange(1, n), size=n_regions - 1, replace=False))
    run_labels = np.zeros(n, dtype=np.int64)
    run_labels[cuts] = 1
    labels = np.empty(n, dtype=np.int64)
    labels[order] = np.cumsum(run_labels)
    return labels
