import numpy as np
import pytest
from sklearn.metrics import roc_auc_score

from lampa.metrics import (MetricsReport, accuracy, aggregate, flops_breakdown, flops_estimate, prec_at_k,
                           read_jsonl, recall, roc_auc, throughput_bench, write_csv, write_jsonl)
from lampa.model import PerPointBatch, preset


def brute_knn(X, u, k):
    d = [(float(np.sum((X[j] - X[u]) ** 2)), j) for j in range(len(X)) if j != u]
    return [j for _, j in sorted(d)[:k]]


def brute_accuracy(X, labels):
    vals = []
    for u in range(len(X)):
        if labels[u] < 0:
            continue
        k = min(max(int(np.sum(labels == labels[u])) - 1, 1), 32)
        vals.append(np.mean([labels[j] == labels[u] for j in brute_knn(X, u, k)]))
    return float(np.mean(vals))


def brute_recall(X, labels):
    scores = []
    for c in sorted(set(labels[labels >= 0])):
        members = np.flatnonzero(labels == c)
        if len(members) < 2:
            continue
        k = min(len(members) - 1, 32)
        found = set()
        for u in members:
            found |= {j for j in brute_knn(X, u, k) if labels[j] == c}
        scores.append(len(found) / len(members))
    return float(np.mean(scores))


def test_prec_at_k_cases(rng):
    X = rng.normal(size=(20, 2))
    assert prec_at_k(X, np.zeros(20), 3) == 1.0
    labels = np.r_[0, np.ones(19)]
    assert prec_at_k(X, labels, 0, k=3) == 0.0
    with pytest.raises(ValueError):
        prec_at_k(X, labels, 0, k=20)


def test_prec_at_k_oracle_with_ties():
    X = np.r_[np.zeros((4, 2)), np.ones((6, 2)), np.zeros((10, 2)) + [[0.0, 1.0]]]
    labels = np.r_[np.zeros(10, int), np.ones(10, int)]
    for u in range(20):
        for k in (1, 5, 9):
            assert prec_at_k(X, labels, u, k) == np.mean([labels[j] == labels[u] for j in brute_knn(X, u, k)])


@pytest.mark.parametrize("seed", range(3))
def test_accuracy_recall_oracles(seed):
    r = np.random.default_rng(seed)
    X = r.normal(size=(60, 3))
    labels = r.integers(-1, 5, 60)
    assert accuracy(X, labels) == pytest.approx(brute_accuracy(X, labels), abs=0)
    assert recall(X, labels) == pytest.approx(brute_recall(X, labels), abs=0)


def test_perfect_collapse():
    labels = np.repeat(np.arange(5), 6)
    X = np.repeat(np.eye(5) * 10, 6, axis=0)
    assert accuracy(X, labels) == 1.0 and recall(X, labels) == 1.0


def test_stray_member_lowers_recall():
    labels = np.repeat(np.arange(3), 10)
    X = np.repeat(np.eye(3) * 10, 10, axis=0) + np.linspace(0, 0.1, 30)[:, None]
    # one member of cluster 2 sits far away, so no cluster-mate's k-NN set reaches it
    X[29] = 100.0
    assert recall(X, labels) == pytest.approx((1 + 1 + 0.9) / 3)


def test_random_embeddings_accuracy_baseline(rng):
    n_clusters, size = 10, 20
    labels = np.repeat(np.arange(n_clusters), size)
    X = rng.normal(size=(n_clusters * size, 4))
    acc = accuracy(X, labels)
    p = (size - 1) / (n_clusters * size - 1)
    sd = np.sqrt(p * (1 - p) / (n_clusters * size * (size - 1)))
    assert abs(acc - p) < 3 * sd * np.sqrt(size)  # neighbour sets overlap, so inflate by the cluster size


def test_accuracy_errors():
    with pytest.raises(ValueError):
        accuracy(np.zeros((3, 2)), np.full(3, -1))
    with pytest.raises(ValueError):
        accuracy(np.zeros((1, 2)), np.zeros(1))


def test_roc_auc(rng):
    assert roc_auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
    # hand case: positives {0.8, 0.5, 0.4}, negatives {0.5, 0.3, 0.1}; the 0.5 tie counts half
    assert roc_auc([0.8, 0.5, 0.4, 0.5, 0.3, 0.1], [1, 1, 1, 0, 0, 0]) == pytest.approx((3 + 2.5 + 2) / 9)
    s, y = rng.normal(size=500), rng.integers(0, 2, 500)
    assert roc_auc(s, y) == pytest.approx(roc_auc_score(y, s), abs=1e-12)
    assert roc_auc(np.exp(3 * s), y) == pytest.approx(roc_auc(s, y), abs=1e-15)
    sd = np.sqrt(501 / (12 * 250 * 250))
    assert abs(roc_auc(s, rng.integers(0, 2, 500)) - 0.5) < 3.5 * sd
    with pytest.raises(ValueError):
        roc_auc([0.1, 0.2], [1, 1])


def test_flops_linearity_and_order():
    for arch in ("mamba_plain", "mamba_b", "mamba_a"):
        cfg = preset(arch, "S")
        assert flops_estimate(cfg, 2 * 6000) == 2 * flops_estimate(cfg, 6000)
    a = preset("mamba_a", "S", state_dim=16)
    b = preset("mamba_b", "S", block_size=a.block_size)
    assert flops_estimate(a, 6000) > flops_estimate(b, 6000)
    assert flops_breakdown(b, 100)["attention"] == 0
    assert isinstance(flops_estimate(b, 100), int)


def test_throughput_bench(rng):
    batches = [PerPointBatch(rng.normal(size=(50, 7)), rng.normal(size=(50, 3)))]
    res = throughput_bench(lambda b: b.features @ b.features.T, batches, warmup=1, reps=3)
    assert res.n_hits == 50 and res.median > 0 and len(res.times) == 3 and res.mode == "single"
    par = throughput_bench(lambda b: b.features.sum(), batches * 2, reps=3, workers=2)
    assert par.mode == "parallel"
    with pytest.raises(ValueError):
        throughput_bench(lambda b: None, batches, reps=2)


def test_reports_io(tmp_path):
    reps = [MetricsReport(i, 10, 0, "abc", top1_accuracy=0.5 + 0.1 * i, flops_per_event=100) for i in range(3)]
    agg = aggregate(reps)
    assert agg["top1_accuracy"] == pytest.approx(0.6) and agg["roc_auc"] is None
    write_jsonl(reps, tmp_path / "m.jsonl")
    back = read_jsonl(tmp_path / "m.jsonl")
    assert [r["event_id"] for r in back] == [0, 1, 2] and back[0]["roc_auc"] is None
    write_csv([{"n": 1, "f": 2}], tmp_path / "x.csv")
    assert (tmp_path / "x.csv").read_text().splitlines() == ["n,f", "1,2"]
    with pytest.raises(ValueError):
        MetricsReport(0, 1, 0, "x", top1_accuracy=1.5)
