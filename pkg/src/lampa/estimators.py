"""scikit-learn style wrappers around the scan, the hashing and the two backbones."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .lsh import HashEnsemble, assign_buckets, default_bucket_width
from .metrics import accuracy
from .model import TRACKING_COORDS, TRACKING_D_IN, PILEUP_COORDS, PILEUP_FEATS, PerPointBatch, predict, preset
from .numeric import DimensionError
from .ssm import SelectiveWeights, selective_scan


def check_points(X, n_features: int | None = None, min_samples: int = 1) -> np.ndarray:
    """2-D finite float64 array, optionally with a fixed column count."""
    X = check_array(X, dtype=np.float64, ensure_min_samples=min_samples)
    if n_features is not None and X.shape[1] != n_features:
        raise DimensionError(f"expected {n_features} columns, got {X.shape[1]}")
    return X


def check_labels(y, n: int) -> np.ndarray:
    y = np.asarray(y)
    if y.shape != (n,):
        raise DimensionError(f"expected {n} labels, got shape {y.shape}")
    return y


class SelectiveScanTransformer(BaseEstimator, TransformerMixin):
    """Runs a randomly initialized selective scan over the rows of X as one sequence."""

    def __init__(self, state_dim=4, seed=0):
        self.state_dim = state_dim
        self.seed = seed

    def fit(self, X, y=None):
        X = check_points(X)
        self.weights_ = SelectiveWeights.init(X.shape[1], self.state_dim, np.random.default_rng(self.seed))
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "weights_")
        return selective_scan(check_points(X, self.n_features_in_), self.weights_)


class LshBucketer(BaseEstimator, TransformerMixin):
    """Bucket id of every row in each OR table, shape (n, m1).

    The bucket width is fixed at fit time (median pairwise distance unless
    ``r`` is given), so transform on new data reuses the same hash grid.
    """

    def __init__(self, m1=3, m2=3, block_size=100, r=None, seed=0):
        self.m1 = m1
        self.m2 = m2
        self.block_size = block_size
        self.r = r
        self.seed = seed

    def fit(self, X, y=None):
        X = check_points(X)
        self.r_ = float(self.r) if self.r is not None else default_bucket_width(X)
        self.ensemble_ = HashEnsemble.draw(X.shape[1], self.m1, self.m2, self.seed, r=self.r_)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "ensemble_")
        X = check_points(X, self.n_features_in_)
        a = assign_buckets(X, self.ensemble_, self.block_size)
        return np.stack([a.labels(t) for t in range(a.m1)], axis=1)


class _BackboneEstimator(BaseEstimator):
    def _config(self):
        overrides = {k: v for k, v in (("hidden_dim", self.hidden_dim), ("n_layers", self.n_layers),
                                       ("block_size", self.block_size)) if v is not None}
        return preset(self.arch, self.scale, task=self._task, seed=self.seed, **overrides)

    def _fit_batch(self, batch):
        from .train import TrainConfig, train
        cfg = TrainConfig(model=self._config(), lr=self.lr, epochs=self.epochs, seed=self.seed, eval_every=0)
        result = train(cfg, [batch])
        self.config_, self.params_ = cfg.model, result.params
        self.loss_curve_ = result.losses
        return self


class TrackEmbedder(_BackboneEstimator, TransformerMixin):
    """Per-hit embeddings trained contrastively on one event.

    X holds the 7 hit features followed by the 3 hashing coordinates (see
    ``lampa.data.tracking_inputs``); y holds particle ids (-1 for noise).
    """

    _task = "tracking"

    def __init__(self, arch="mamba_b", scale="S", hidden_dim=None, n_layers=None, block_size=None,
                 epochs=50, lr=1e-3, seed=0):
        self.arch = arch
        self.scale = scale
        self.hidden_dim = hidden_dim
        self.n_layers = n_layers
        self.block_size = block_size
        self.epochs = epochs
        self.lr = lr
        self.seed = seed

    @staticmethod
    def _batch(X, y=None):
        X = check_points(X, TRACKING_D_IN + TRACKING_COORDS, min_samples=2)
        if y is not None:
            y = check_labels(y, X.shape[0])
        return PerPointBatch(X[:, :TRACKING_D_IN], X[:, TRACKING_D_IN:], y)

    def fit(self, X, y):
        b = self._batch(X, y)
        self.n_features_in_ = b.features.shape[1] + b.coords.shape[1]
        return self._fit_batch(b)

    def transform(self, X):
        check_is_fitted(self, "params_")
        return predict(self.params_, self._batch(X), self.config_, dtype=np.float64)

    def score(self, X, y):
        return accuracy(self.transform(X), check_labels(y, len(X)))


class PileupClassifier(_BackboneEstimator, ClassifierMixin):
    """Per-particle primary-vertex classifier trained with focal loss.

    X columns: particle-type code, 6 continuous features, eta, phi (see
    ``lampa.data.pileup_inputs``); y is 0/1.
    """

    _task = "pileup"

    def __init__(self, arch="mamba_b", scale="S", hidden_dim=None, n_layers=None, block_size=None,
                 epochs=20, lr=1e-3, seed=0):
        self.arch = arch
        self.scale = scale
        self.hidden_dim = hidden_dim
        self.n_layers = n_layers
        self.block_size = block_size
        self.epochs = epochs
        self.lr = lr
        self.seed = seed

    @staticmethod
    def _batch(X, y=None):
        X = check_points(X, 1 + PILEUP_FEATS + PILEUP_COORDS)
        pid = X[:, 0]
        if np.any(pid != np.round(pid)):
            raise ValueError("first column must hold integer particle-type codes")
        if y is not None:
            y = check_labels(y, X.shape[0])
        return PerPointBatch(X[:, 1:1 + PILEUP_FEATS], X[:, 1 + PILEUP_FEATS:], y, pid.astype(np.int64))

    def fit(self, X, y):
        b = self._batch(X, y)
        if not set(np.unique(b.labels)) <= {0, 1}:
            raise ValueError("labels must be 0 or 1")
        self.classes_ = np.array([0, 1])
        self.n_features_in_ = b.features.shape[1] + b.coords.shape[1] + 1
        return self._fit_batch(b)

    def predict_proba(self, X):
        check_is_fitted(self, "params_")
        p = predict(self.params_, self._batch(X), self.config_, dtype=np.float64)
        return np.stack([1.0 - p, p], axis=1)

    def predict(self, X):
        return (self.predict_proba(X)[:, 1] >= 0.5).astype(np.int64)


__all__ = ["LshBucketer", "PileupClassifier", "SelectiveScanTransformer", "TrackEmbedder",
           "check_labels", "check_points"]
