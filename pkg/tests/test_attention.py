import numpy as np
import pytest

from lampa import numeric as nm
from lampa.attention import (AttentionKernel, StructuredMask, bucketed_attention, full_attention,
                             linear_attention, masked_attention)
from lampa.lsh import HashEnsemble, assign_buckets
from lampa.ssm import discretize, matrix_form, semiseparable_matrix
from lampa.verify import random_ssm


def test_linear_attention_reassociation(rng):
    for _ in range(20):
        Q, K, V = rng.normal(size=(12, 4)), rng.normal(size=(12, 4)), rng.normal(size=(12, 3))
        assert np.max(np.abs(linear_attention(Q, K, V).data - (Q @ K.T) @ V)) < 1e-10


def test_masks():
    c = StructuredMask.causal(4)
    assert np.array_equal(c.L, np.tril(np.ones((4, 4))))
    d = StructuredMask.decay(3, 0.5)
    assert np.allclose(d.L, [[1, 0, 0], [0.5, 1, 0], [0.25, 0.5, 1]])
    with pytest.raises(ValueError):
        StructuredMask.decay(3, 1.5)
    with pytest.raises(ValueError):
        StructuredMask("causal", np.ones((3, 3)))


def test_causal_masked_attention_loop_oracle(rng):
    Q, K, V = rng.normal(size=(6, 2)), rng.normal(size=(6, 2)), rng.normal(size=(6, 2))
    ref = np.array([sum((Q[t] @ K[s]) * V[s] for s in range(t + 1)) for t in range(6)])
    assert np.allclose(masked_attention(Q, K, V, StructuredMask.causal(6)).data, ref, atol=1e-13)
    with pytest.raises(nm.DimensionError):
        masked_attention(Q, K, V, StructuredMask.causal(5))


def test_semiseparable_mask_equals_ssm(rng):
    p = random_ssm(rng, 20, 3, scalar_decay=True)
    d = discretize(p)
    x = rng.normal(size=20)
    y_ssm = matrix_form(semiseparable_matrix(d, p.C)[0], x)
    mask = StructuredMask.semiseparable(d.Abar[:, 0, 0])
    y = masked_attention(p.C[:, 0], d.Bbar[:, 0], x[:, None], mask).data[:, 0]
    assert np.max(np.abs(y - y_ssm)) < 1e-10


def _bucket_oracle(q, k, v, assignment):
    out = np.zeros_like(v)
    for t in range(assignment.m1):
        for idx in assignment.buckets(t):
            s = q[idx] @ k[idx].T / np.sqrt(q.shape[1])
            w = np.exp(s - s.max(axis=1, keepdims=True))
            w /= w.sum(axis=1, keepdims=True)
            out[idx] += w @ v[idx]
    return out / assignment.m1


@pytest.mark.parametrize("n,bs", [(30, 10), (37, 8), (5, 16)])
def test_bucketed_attention_matches_per_bucket_loop(rng, n, bs):
    X = rng.normal(size=(n, 3))
    a = assign_buckets(X, HashEnsemble.draw(3, 3, 2, seed=1), bs)
    q, k, v = rng.normal(size=(n, 4)), rng.normal(size=(n, 4)), rng.normal(size=(n, 2))
    assert np.max(np.abs(bucketed_attention(q, k, v, a).data - _bucket_oracle(q, k, v, a))) < 1e-12


def test_single_bucket_equals_full_attention(rng):
    X = rng.normal(size=(12, 3))
    a = assign_buckets(X, HashEnsemble.draw(3, 1, 1), 64)
    q, k, v = rng.normal(size=(12, 4)), rng.normal(size=(12, 4)), rng.normal(size=(12, 4))
    assert np.allclose(bucketed_attention(q, k, v, a).data, full_attention(q, k, v).data, atol=1e-13)


def test_bucketed_attention_gradient(rng):
    X = rng.normal(size=(20, 3))
    a = assign_buckets(X, HashEnsemble.draw(3, 2, 2), 6)
    rep = nm.grad_check(lambda t: nm.tsum(bucketed_attention(t[0], t[1], t[2], a) ** 2),
                        [rng.normal(size=(20, 4)), rng.normal(size=(20, 4)), rng.normal(size=(20, 3))])
    assert rep.passed


def test_reserved_kernel_not_implemented(rng):
    X = rng.normal(size=(4, 2))
    a = assign_buckets(X, HashEnsemble.draw(2), 2)
    with pytest.raises(NotImplementedError):
        bucketed_attention(X, X, X, a, AttentionKernel.NEG_DISTANCE)
