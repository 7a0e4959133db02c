import numpy as np
import pytest
from sklearn.base import clone

from lampa import LshBucketer, PileupClassifier, SelectiveScanTransformer, TrackEmbedder
from lampa.data import generate_pileup_event, generate_tracking_event, pileup_inputs, tracking_inputs
from lampa.estimators import check_labels, check_points
from lampa.numeric import DimensionError
from lampa.ssm import SelectiveWeights, selective_scan


def tracking_xy(seed=0):
    ev = generate_tracking_event(seed, 8, layers=6, noise_frac=0.1)
    feats, coords = tracking_inputs(ev)
    return np.hstack([feats, coords]), ev.particle_id


def pileup_xy(seed=0):
    ev = generate_pileup_event(seed, 150, 0.6, 0.2, n_pu_vertices=4)
    feats, coords, pid = pileup_inputs(ev)
    return np.hstack([pid[:, None], feats, coords]), ev.label


def test_validation_helpers():
    assert check_points([[1, 2], [3, 4]]).dtype == np.float64
    with pytest.raises(ValueError):
        check_points([[np.nan, 1.0]])
    with pytest.raises(DimensionError):
        check_points(np.zeros((3, 2)), n_features=4)
    with pytest.raises(DimensionError):
        check_labels([1, 2], 3)


@pytest.mark.parametrize("est", [SelectiveScanTransformer(state_dim=3), LshBucketer(m1=2, block_size=5),
                                 TrackEmbedder(hidden_dim=8, n_layers=1, epochs=2),
                                 PileupClassifier(hidden_dim=8, n_layers=1, epochs=2)])
def test_params_and_clone(est):
    params = est.get_params()
    twin = clone(est)
    assert twin.get_params() == params and twin is not est
    assert not hasattr(twin, "n_features_in_")


def test_scan_transformer_matches_function(rng):
    X = rng.normal(size=(20, 3))
    est = SelectiveScanTransformer(state_dim=4, seed=2).fit(X)
    ref = selective_scan(X, SelectiveWeights.init(3, 4, np.random.default_rng(2)))
    assert np.array_equal(est.transform(X), ref)
    with pytest.raises(DimensionError):
        est.transform(rng.normal(size=(5, 4)))


def test_bucketer_shapes_and_reuse(rng):
    X = rng.normal(size=(60, 4))
    est = LshBucketer(m1=3, m2=2, block_size=10, seed=1).fit(X)
    codes = est.transform(X)
    assert codes.shape == (60, 3)
    assert np.array_equal(codes, LshBucketer(m1=3, m2=2, block_size=10, seed=1).fit_transform(X))
    assert est.r_ > 0


def test_unfitted_raises(rng):
    from sklearn.exceptions import NotFittedError
    with pytest.raises(NotFittedError):
        LshBucketer().transform(rng.normal(size=(4, 2)))


def test_track_embedder_fit_transform_score():
    X, y = tracking_xy()
    est = TrackEmbedder(hidden_dim=8, n_layers=1, epochs=3, lr=1e-2).fit(X, y)
    Z = est.transform(X)
    assert Z.shape == (len(X), est.config_.embed_out_dim)
    assert len(est.loss_curve_) == 3
    assert 0.0 <= est.score(X, y) <= 1.0
    with pytest.raises(DimensionError):
        est.fit(X[:, :5], y)


def test_pileup_classifier():
    X, y = pileup_xy()
    clf = PileupClassifier(hidden_dim=8, n_layers=1, epochs=3, lr=1e-2).fit(X, y)
    proba = clf.predict_proba(X)
    assert proba.shape == (len(X), 2) and np.allclose(proba.sum(axis=1), 1.0)
    assert set(np.unique(clf.predict(X))) <= {0, 1}
    assert 0.0 <= clf.score(X, y) <= 1.0
    bad = X.copy()
    bad[0, 0] = 0.5
    with pytest.raises(ValueError):
        clf.predict(bad)
    with pytest.raises(ValueError):
        PileupClassifier(hidden_dim=8, n_layers=1, epochs=1).fit(X, np.full(len(X), 2))
