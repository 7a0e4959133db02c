"""Randomized property suites behind ``lampa verify``."""
from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import numeric as nm
from .attention import StructuredMask, linear_attention, masked_attention
from .loss import build_pairs, contrastive_loss, focal_loss
from .lsh import HashEnsemble, assign_buckets, default_bucket_width
from .model import ModelConfig, PerPointBatch, forward, init_params, mamba_block
from .ssm import SsmParams, discretize, matrix_form, recurrence, semiseparable_matrix

RANK_RTOL = 1e-9


@dataclass
class SuiteResult:
    name: str
    passed: bool
    trials: int
    max_error: float
    threshold: float
    seconds: float = 0.0
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def random_ssm(rng, T: int, N: int, channels: int = 1, scalar_decay: bool = False) -> SsmParams:
    delta = rng.uniform(0.05, 1.0, (T, channels))
    if scalar_decay:
        A = np.repeat(-rng.uniform(0.1, 2.0, (channels, 1)), N, axis=1)
    else:
        A = -rng.uniform(0.1, 2.0, (channels, N))
    return SsmParams(delta, A, rng.normal(size=(T, channels, N)), rng.normal(size=(T, channels, N)))


def duality_suite(trials: int = 1000, seed: int = 0, max_T: int = 64, max_N: int = 8,
                  tol: float = 1e-8) -> SuiteResult:
    """Recurrence vs. semiseparable matrix product on random instances."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        T, N, E = int(rng.integers(1, max_T + 1)), int(rng.integers(1, max_N + 1)), int(rng.integers(1, 4))
        p = random_ssm(rng, T, N, E)
        x = rng.normal(size=(T, E))
        d = discretize(p)
        y_rec = recurrence(d, p.C, x)
        y_mat = matrix_form(semiseparable_matrix(d, p.C), x)
        worst = max(worst, float(np.max(np.abs(y_rec - y_mat)) / max(np.max(np.abs(y_mat)), 1e-300)))
    return SuiteResult("duality", worst <= tol, trials, worst, tol)


def rank_suite(trials: int = 50, seed: int = 0, T: int = 32, state_dims=(2, 3, 4)) -> SuiteResult:
    """Every block strictly below the diagonal has numerical rank <= N.

    Checking the maximal blocks M[k:, :k] suffices: any sub-block strictly
    below the diagonal sits inside one of them, and rank cannot grow by
    taking a sub-block.
    """
    rng = np.random.default_rng(seed)
    worst_excess = -np.inf
    max_rank = 0
    for trial in range(trials):
        N = state_dims[trial % len(state_dims)]
        p = random_ssm(rng, T, N)
        M = semiseparable_matrix(discretize(p), p.C)[0]
        for k in range(1, T):
            s = np.linalg.svd(M[k:, :k], compute_uv=False)
            rank = int(np.sum(s > RANK_RTOL * s[0])) if s[0] > 0 else 0
            max_rank = max(max_rank, rank)
            worst_excess = max(worst_excess, rank - N)
    return SuiteResult("rank", worst_excess <= 0, trials, float(worst_excess), 0.0,
                       details={"max_rank_seen": max_rank, "state_dims": list(state_dims)})


def associativity_suite(trials: int = 100, seed: int = 0, tol: float = 1e-10) -> SuiteResult:
    """(AB)C == A(BC) on 8x8 matrices."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        A, B, C = (nm.Tensor(rng.normal(size=(8, 8))) for _ in range(3))
        worst = max(worst, float(np.max(np.abs(((A @ B) @ C).data - (A @ (B @ C)).data))))
    return SuiteResult("associativity", worst <= tol, trials, worst, tol)


def attention_suite(trials: int = 100, seed: int = 0, tol: float = 1e-10) -> SuiteResult:
    """Linear attention reassociation, and masked attention against the SSM matrix form."""
    rng = np.random.default_rng(seed)
    worst_lin = worst_ssm = 0.0
    for _ in range(trials):
        T, d, dv = int(rng.integers(2, 33)), int(rng.integers(1, 9)), int(rng.integers(1, 9))
        Q, K, V = rng.normal(size=(T, d)), rng.normal(size=(T, d)), rng.normal(size=(T, dv))
        quad = (nm.Tensor(Q) @ nm.Tensor(K).T) @ nm.Tensor(V)
        worst_lin = max(worst_lin, float(np.max(np.abs(linear_attention(Q, K, V).data - quad.data))))

        p = random_ssm(rng, T, d, scalar_decay=True)
        disc = discretize(p)
        x = rng.normal(size=T)
        y_ssm = matrix_form(semiseparable_matrix(disc, p.C)[0], x)
        mask = StructuredMask.semiseparable(disc.Abar[:, 0, 0])
        y_att = masked_attention(p.C[:, 0, :], disc.Bbar[:, 0, :], x[:, None], mask).data[:, 0]
        worst_ssm = max(worst_ssm, float(np.max(np.abs(y_att - y_ssm))))
    worst = max(worst_lin, worst_ssm)
    return SuiteResult("attention", worst <= tol, trials, worst, tol,
                       details={"linear_reassociation": worst_lin, "masked_vs_ssm": worst_ssm})


def _small_model(arch: str) -> ModelConfig:
    return ModelConfig(arch=arch, hidden_dim=8, n_layers=2, state_dim=4, embed_out_dim=4, block_size=16)


def gradient_suite(seed: int = 0, n: int = 64, tol: float = 1e-4, eps: float = 1e-5,
                   max_entries: int | None = 64) -> SuiteResult:
    """Finite-difference checks on both losses, one block and 2-layer backbones."""
    rng = np.random.default_rng(seed)
    reports = {}

    emb = rng.normal(size=(40, 4))
    labels = np.repeat(np.arange(5), 8)
    pairs = build_pairs(emb, labels, pool_size=32, k=8)
    reports["info_nce"] = nm.grad_check(lambda t: contrastive_loss(t[0], pairs), [emb], eps, tol)

    logits = rng.normal(size=30)
    y = rng.integers(0, 2, 30)
    reports["focal"] = nm.grad_check(lambda t: focal_loss(nm.sigmoid(t[0]), y), [logits], eps, tol)

    cfg = _small_model("mamba_plain")
    params = init_params(cfg, seed)
    prefix = "layers.0."
    names = sorted(k for k in params if k.startswith(prefix))
    x = rng.normal(size=(n, cfg.hidden_dim))
    reports["mamba_block"] = nm.grad_check(
        lambda t: nm.tsum(mamba_block(t[0], dict(zip(names, t[1:])), prefix, cfg) ** 2),
        [x] + [params[k] for k in names], eps, tol, max_entries=max_entries, seed=seed)

    batch = PerPointBatch(rng.normal(size=(n, 7)), rng.normal(size=(n, 3)))
    for arch in ("mamba_a", "mamba_b"):
        cfg = _small_model(arch)
        params = init_params(cfg, seed)
        names = sorted(params)
        _, routing = forward(params, batch, cfg, return_routing=True)
        reports[arch] = nm.grad_check(
            lambda t, cfg=cfg, names=names, routing=routing:
                nm.tsum(forward(dict(zip(names, t)), batch, cfg, routing=routing) ** 2),
            [params[k] for k in names], eps, tol, max_entries=max_entries, seed=seed)
    worst = max(r.max_rel_error for r in reports.values())
    return SuiteResult("gradient", all(r.passed for r in reports.values()), len(reports), worst, tol,
                       details={k: {"max_rel_error": r.max_rel_error, "n_checked": r.n_checked}
                                for k, r in reports.items()})


def clustered_points(seed: int = 0, n_clusters: int = 20, per_cluster: int = 100, dim: int = 8,
                     spread: float = 0.5, separation: float = 5.0):
    rng = np.random.default_rng(seed)
    centers = rng.normal(0.0, separation, (n_clusters, dim))
    labels = np.repeat(np.arange(n_clusters), per_cluster)
    return centers[labels] + rng.normal(0.0, spread, (len(labels), dim)), labels


def lsh_statistics(points, labels, m1: int = 3, m2: int = 3, block_size: int = 100, seed: int = 0) -> dict:
    """Pair statistics of bucketing against the brute-force same-label oracle."""
    ens = HashEnsemble.draw(points.shape[1], m1, m2, seed)
    r = default_bucket_width(points)
    assignment = assign_buckets(points, ens, block_size, r=r)
    same = labels[:, None] == labels[None, :]
    off = ~np.eye(len(labels), dtype=bool)
    pos, neg = same & off, ~same

    co = [a[:, None] == a[None, :] for a in (assignment.labels(t) for t in range(m1))]
    per_table_recall = [float(c[pos].mean()) for c in co]
    cohab_same = float(np.mean([c[pos].mean() for c in co]))
    cohab_cross = float(np.mean([c[neg].mean() for c in co]))
    or_recall = float(np.logical_or.reduce(co)[pos].mean())

    codes = ens.codes(points, r)
    and_precision = []
    for width in range(1, m2 + 1):
        precisions = []
        for t in range(m1):
            c = codes[:, t, :width]
            _, key = np.unique(c, axis=0, return_inverse=True)
            collide = (key[:, None] == key[None, :]) & off
            precisions.append(float(collide[pos].sum() / max(collide.sum(), 1)))
        and_precision.append(float(np.mean(precisions)))
    return {"cohabitation_same": cohab_same, "cohabitation_cross": cohab_cross,
            "cohabitation_ratio": cohab_same / max(cohab_cross, 1e-300), "or_recall": or_recall,
            "per_table_recall": per_table_recall, "and_precision": and_precision}


def lsh_suite(seed: int = 0, ratio: float = 5.0) -> SuiteResult:
    X, labels = clustered_points(seed)
    stats = lsh_statistics(X, labels, seed=seed)
    ok = (stats["cohabitation_ratio"] >= ratio
          and stats["or_recall"] >= max(stats["per_table_recall"])
          and all(b >= a for a, b in zip(stats["and_precision"], stats["and_precision"][1:])))
    return SuiteResult("lsh", bool(ok), 1, stats["cohabitation_ratio"], ratio, details=stats)


SUITES = {
    "duality": duality_suite,
    "rank": rank_suite,
    "associativity": associativity_suite,
    "attention": attention_suite,
    "gradient": gradient_suite,
    "lsh": lsh_suite,
}


def run_suites(names=None, trials: int | None = None, seed: int = 0) -> dict:
    """Run the named suites (all by default); returns a JSON-ready verdict."""
    names = list(SUITES) if not names else list(names)
    unknown = [n for n in names if n not in SUITES]
    if unknown:
        raise KeyError(f"unknown suite(s): {unknown}")
    results = []
    for name in names:
        kwargs = {"seed": seed}
        if trials is not None and name in ("duality", "rank", "associativity", "attention"):
            kwargs["trials"] = trials
        t0 = time.perf_counter()
        res = SUITES[name](**kwargs)
        res.seconds = time.perf_counter() - t0
        results.append(res)
    return {"passed": all(r.passed for r in results), "seed": seed,
            "suites": [r.to_dict() for r in results]}


__all__ = ["SUITES", "SuiteResult", "attention_suite", "associativity_suite", "clustered_points",
           "duality_suite", "gradient_suite", "lsh_statistics", "lsh_suite", "rank_suite", "run_suites"]
