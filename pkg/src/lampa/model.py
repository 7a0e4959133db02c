"""Mamba blocks and the two LSH-aware backbones (hybrid and reordered).

Parameters live in a flat ``dict[str, np.ndarray]``; forwards wrap them as
leaf tensors so the same code serves training (float64, with gradients) and
inference (float32 under ``no_grad``, using the chunked scan).
"""
from __future__ import annotations

import io
import json
import zipfile
from dataclasses import asdict, dataclass

import numpy as np

from . import numeric as nm
from .attention import bucketed_attention
from .data import PID_VOCAB
from .lsh import BucketAssignment, HashEnsemble, assign_buckets, hash_inputs
from .numeric import DimensionError, Tensor
from .ssm import scan, softplus_inverse, streaming_scan

ARCHS = ("mamba_plain", "mamba_a", "mamba_b")
TASKS = ("tracking", "pileup")
SCALE_LAYERS = {"S": 4, "M": 8, "L": 12}

# Bucket sizes per dataset: (hybrid, reordered).
BLOCK_SIZES = {
    "tracking-6k": ([20, 40], [100, 120]),
    "tracking-15k": ([60, 80, 100], [150, 200, 250]),
    "tracking-60k": ([140, 150, 160], [200, 250, 300]),
    "pileup-10k": ([100, 120, 140], [100, 150, 200]),
}

TRACKING_D_IN, TRACKING_COORDS = 7, 3
PILEUP_FEATS, PILEUP_COORDS = 6, 2


@dataclass(frozen=True)
class ModelConfig:
    arch: str = "mamba_b"
    task: str = "tracking"
    hidden_dim: int = 24
    n_layers: int = 4
    state_dim: int = 16
    embed_out_dim: int = 24
    dataset: str = "tracking-6k"
    block_size: int | None = None
    m1: int = 3
    m2: int = 3
    conv_width: int = 4
    expansion: int = 2
    geometric_weight: float = 1.0
    hash_coords_only: bool = False
    reset_state_at_block: bool = False
    reuse_assignment: bool = False
    pid_dim: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.arch not in ARCHS:
            raise ValueError(f"arch must be one of {ARCHS}, got {self.arch!r}")
        if self.task not in TASKS:
            raise ValueError(f"task must be one of {TASKS}, got {self.task!r}")
        for name in ("hidden_dim", "state_dim", "embed_out_dim", "m1", "m2", "conv_width", "expansion"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.n_layers < 0:
            raise ValueError("n_layers must be non-negative")
        if not 8 <= self.pid_dim <= 16:
            raise ValueError("pid_dim must lie in [8, 16]")
        if self.block_size is None:
            if self.dataset not in BLOCK_SIZES:
                raise ValueError(f"no default block size for dataset {self.dataset!r}")
            hybrid, reordered = BLOCK_SIZES[self.dataset]
            object.__setattr__(self, "block_size", (hybrid if self.arch == "mamba_a" else reordered)[0])
        if self.block_size < 1:
            raise ValueError("block_size must be positive")

    @property
    def inner_dim(self) -> int:
        return self.expansion * self.hidden_dim

    @property
    def d_in(self) -> int:
        return TRACKING_D_IN if self.task == "tracking" else self.pid_dim + PILEUP_FEATS

    @property
    def coord_dim(self) -> int:
        return TRACKING_COORDS if self.task == "tracking" else PILEUP_COORDS

    @property
    def out_dim(self) -> int:
        return self.embed_out_dim if self.task == "tracking" else 1

    def to_dict(self) -> dict:
        return asdict(self)


def preset(arch: str, scale: str = "S", task: str = "tracking", dataset: str | None = None,
           **overrides) -> ModelConfig:
    """Named model sizes.

    Tracking: hidden 24 with 4/8/12 layers for S/M/L; the hybrid uses state
    size 8 (its shared attention layer makes up the rest), the others 16.
    Pileup has one size per arch: (24 hidden, 8 layers) hybrid, (48, 8) otherwise.
    """
    if arch not in ARCHS:
        raise ValueError(f"unknown arch {arch!r}")
    state_dim = 8 if arch == "mamba_a" else 16
    if task == "pileup":
        hidden = 24 if arch == "mamba_a" else 48
        kw = dict(hidden_dim=hidden, n_layers=8, dataset=dataset or "pileup-10k")
    else:
        if scale not in SCALE_LAYERS:
            raise ValueError(f"scale must be one of {sorted(SCALE_LAYERS)}")
        kw = dict(hidden_dim=24, n_layers=SCALE_LAYERS[scale], dataset=dataset or "tracking-6k")
    kw.update(overrides)
    kw.setdefault("state_dim", state_dim)
    return ModelConfig(arch=arch, task=task, **kw)


@dataclass
class PerPointBatch:
    features: np.ndarray
    coords: np.ndarray
    labels: np.ndarray | None = None
    pid: np.ndarray | None = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.coords = np.asarray(self.coords, dtype=np.float64)
        if self.features.ndim != 2 or self.features.shape[0] < 1:
            raise ValueError("features must be a non-empty (n, d) array")
        if self.coords.ndim != 2 or self.coords.shape[0] != self.features.shape[0]:
            raise DimensionError("coords must be (n, g) with the same n as features")
        if not (np.all(np.isfinite(self.features)) and np.all(np.isfinite(self.coords))):
            raise ValueError("batch contains non-finite values")
        if self.labels is not None:
            self.labels = np.asarray(self.labels)
            if self.labels.shape != (self.n,):
                raise DimensionError("one label per point expected")
        if self.pid is not None:
            self.pid = np.asarray(self.pid, dtype=np.int64)
            if self.pid.shape != (self.n,):
                raise DimensionError("one particle-type code per point expected")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    def permute(self, order) -> "PerPointBatch":
        return PerPointBatch(self.features[order], self.coords[order],
                             None if self.labels is None else self.labels[order],
                             None if self.pid is None else self.pid[order])

    @classmethod
    def from_event(cls, event) -> "PerPointBatch":
        from .data import PileupEvent, pileup_inputs, tracking_inputs
        if isinstance(event, PileupEvent):
            feats, coords, pid = pileup_inputs(event)
            return cls(feats, coords, event.label, pid)
        feats, coords = tracking_inputs(event)
        return cls(feats, coords, event.particle_id)


# -- parameters ---------------------------------------------------------------------

def _block_shapes(cfg: ModelConfig) -> dict:
    D, E, N, K = cfg.hidden_dim, cfg.inner_dim, cfg.state_dim, cfg.conv_width
    return {"norm.w": (D,), "norm.b": (D,), "in_proj": (D, 2 * E), "conv.w": (K, E), "conv.b": (E,),
            "W_delta": (E, E), "b_delta": (E,), "A_log": (E, N), "W_B": (E, E * N), "W_C": (E, E * N),
            "out_proj": (E, D)}


def param_shapes(cfg: ModelConfig) -> dict:
    D = cfg.hidden_dim
    shapes = {"embed.W1": (cfg.d_in, D), "embed.b1": (D,), "embed.W2": (D, D), "embed.b2": (D,)}
    if cfg.task == "pileup":
        shapes["pid_embed"] = (PID_VOCAB, cfg.pid_dim)
    for i in range(cfg.n_layers):
        shapes.update({f"layers.{i}.{k}": s for k, s in _block_shapes(cfg).items()})
    if cfg.arch == "mamba_a" and cfg.n_layers:
        shapes.update({"attn.norm.w": (D,), "attn.norm.b": (D,), "attn.Wq": (D, D), "attn.Wk": (D, D),
                       "attn.Wv": (D, D), "attn.Wo": (D, D)})
    shapes.update({"head.proj": (D, D), "head.norm.w": (D,), "head.norm.b": (D,),
                   "head.W1": (D, D), "head.b1": (D,), "head.W2": (D, cfg.out_dim), "head.b2": (cfg.out_dim,)})
    return shapes


def param_count(cfg: ModelConfig) -> int:
    return int(sum(np.prod(s) for s in param_shapes(cfg).values()))


def init_params(cfg: ModelConfig, seed: int | None = None) -> dict:
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    params = {}
    for name, shape in param_shapes(cfg).items():
        leaf = name.rsplit(".", 1)[-1]
        if leaf in ("b", "b1", "b2") or name.endswith("conv.b"):
            value = np.zeros(shape)
        elif leaf == "w" and "norm" in name:
            value = np.ones(shape)
        elif leaf == "A_log":
            value = np.log(np.tile(np.arange(1, shape[1] + 1, dtype=np.float64), (shape[0], 1)))
        elif leaf == "b_delta":
            value = softplus_inverse(np.exp(rng.uniform(np.log(1e-3), np.log(1e-1), shape)))
        elif name == "pid_embed":
            value = rng.normal(0.0, 1.0, shape)
        else:
            value = rng.normal(0.0, shape[0] ** -0.5, shape)
        params[name] = value
    return params


# -- building blocks ---------------------------------------------------------------------

def causal_conv(x, w, b) -> Tensor:
    """Depthwise causal convolution: y[t] = b + sum_j w[j] * x[t - K + 1 + j].

    x: (T, E), w: (K, E), b: (E,).  The sequence is left-padded with zeros.
    """
    x, w, b = nm.as_tensor(x), nm.as_tensor(w), nm.as_tensor(b)
    T, E = x.shape
    K = w.shape[0]
    if w.shape != (K, E) or b.shape != (E,):
        raise DimensionError("conv weights do not match the channel count")
    xp = np.concatenate([np.zeros((K - 1, E), dtype=x.data.dtype), x.data])
    y = np.broadcast_to(b.data, (T, E)).copy()
    for j in range(K):
        y += w.data[j] * xp[j:j + T]

    def backward(g):
        gp = np.concatenate([g, np.zeros((K - 1, E), dtype=g.dtype)])
        gx = np.zeros_like(x.data)
        gw = np.empty_like(w.data)
        for j in range(K):
            gx += w.data[j] * gp[K - 1 - j:K - 1 - j + T]
            gw[j] = np.sum(g * xp[j:j + T], axis=0)
        return gx, gw, g.sum(axis=0)

    return nm.custom_op(y, (x, w, b), backward, "causal_conv")


def _mlp(x, W1, b1, W2, b2):
    return nm.silu(x @ W1 + b1) @ W2 + b2


def mamba_block(x, P: dict, prefix: str, cfg: ModelConfig, keep=None) -> Tensor:
    """Pre-norm Mamba layer with residual: x + out(scan(silu(conv(in_x))) * silu(z))."""
    x = nm.as_tensor(x)
    T, D = x.shape
    if D != cfg.hidden_dim:
        raise DimensionError(f"block expects width {cfg.hidden_dim}, got {D}")
    E, N = cfg.inner_dim, cfg.state_dim
    p = lambda k: P[prefix + k]
    xz = nm.layer_norm(x, p("norm.w"), p("norm.b")) @ p("in_proj")
    xs, z = nm.getitem(xz, (slice(None), slice(0, E))), nm.getitem(xz, (slice(None), slice(E, 2 * E)))
    u = nm.silu(causal_conv(xs, p("conv.w"), p("conv.b")))
    delta = nm.softplus(u @ p("W_delta") + p("b_delta"))
    A = -nm.exp(p("A_log"))
    if nm.is_grad_enabled():
        B = nm.reshape(u @ p("W_B"), (T, E, N))
        C = nm.reshape(u @ p("W_C"), (T, E, N))
        y = scan(u, delta, A, B, C, keep)
    else:
        y = Tensor(streaming_scan(u.data, delta.data, A.data, p("W_B").data, p("W_C").data,
                                  u.data, keep))
    return x + (y * nm.silu(z)) @ p("out_proj")


def attention_layer(x, P: dict, assignment: BucketAssignment) -> Tensor:
    h = nm.layer_norm(x, P["attn.norm.w"], P["attn.norm.b"])
    out = bucketed_attention(h @ P["attn.Wq"], h @ P["attn.Wk"], h @ P["attn.Wv"], assignment)
    return x + out @ P["attn.Wo"]


def sinusoidal_embedding(coords: np.ndarray, dim: int) -> np.ndarray:
    """sin/cos features of each coordinate at octave frequencies, zero-padded to ``dim``."""
    n, g = coords.shape
    n_freq = max(1, dim // (2 * g))
    freqs = 2.0 ** np.arange(n_freq)
    ang = coords[:, :, None] * freqs
    emb = np.concatenate([np.sin(ang), np.cos(ang)], axis=2).reshape(n, -1)[:, :dim]
    if emb.shape[1] < dim:
        emb = np.concatenate([emb, np.zeros((n, dim - emb.shape[1]))], axis=1)
    return emb


def _ensemble(cfg: ModelConfig, layer: int) -> HashEnsemble:
    dim = cfg.coord_dim if cfg.hash_coords_only else cfg.hidden_dim + cfg.coord_dim
    return HashEnsemble.draw(dim, cfg.m1, cfg.m2,
                             seed=cfg.seed * 1000 + 7919 + layer, geometric_weight=cfg.geometric_weight)


def route(hidden: np.ndarray, coords: np.ndarray, cfg: ModelConfig, layer: int = 0) -> BucketAssignment:
    """Bucket assignment from hidden features plus weighted coordinates (or coordinates alone)."""
    ens = _ensemble(cfg, layer)
    points = hash_inputs(np.asarray(hidden, dtype=np.float64), coords, cfg.geometric_weight,
                         coords_only=cfg.hash_coords_only)
    return assign_buckets(points, ens, cfg.block_size)


# -- forwards ------------------------------------------------------------------------------

def wrap_params(params: dict, dtype=np.float64, requires_grad: bool = False) -> dict:
    return {k: Tensor(np.asarray(v, dtype=dtype), requires_grad=requires_grad) for k, v in params.items()}


def _embed_input(P: dict, batch: PerPointBatch, cfg: ModelConfig, dtype) -> Tensor:
    feats = batch.features.astype(dtype)
    if cfg.task == "pileup":
        if batch.pid is None:
            raise ValueError("pileup batches need particle-type codes")
        if np.any((batch.pid < 0) | (batch.pid >= PID_VOCAB)):
            raise ValueError(f"particle-type code outside [0, {PID_VOCAB})")
        pos = Tensor(sinusoidal_embedding(batch.coords, cfg.pid_dim).astype(dtype))
        x = nm.concat([nm.take(P["pid_embed"], batch.pid) + pos, Tensor(feats)], axis=1)
    else:
        x = Tensor(feats)
    if x.shape[1] != cfg.d_in:
        raise DimensionError(f"expected {cfg.d_in} input features, got {x.shape[1]}")
    return _mlp(x, P["embed.W1"], P["embed.b1"], P["embed.W2"], P["embed.b2"])


def _head(P: dict, h: Tensor) -> Tensor:
    h = nm.layer_norm(h @ P["head.proj"], P["head.norm.w"], P["head.norm.b"])
    return _mlp(h, P["head.W1"], P["head.b1"], P["head.W2"], P["head.b2"])


def _block_keep(n: int, cfg: ModelConfig):
    if not cfg.reset_state_at_block:
        return None
    keep = np.ones(n)
    keep[::cfg.block_size] = 0.0
    return keep


def backbone(P: dict, batch: PerPointBatch, cfg: ModelConfig, routing=None, dtype=np.float64):
    """Shared trunk of every architecture; returns (head output, routing used)."""
    h = _embed_input(P, batch, cfg, dtype)
    n = batch.n
    keep = _block_keep(n, cfg)
    if cfg.arch == "mamba_plain":
        for i in range(cfg.n_layers):
            h = mamba_block(h, P, f"layers.{i}.", cfg, keep)
    elif cfg.arch == "mamba_b":
        if cfg.n_layers:
            if routing is None:
                routing = route(h.data, batch.coords, cfg)
            for i in range(cfg.n_layers):
                t = i % routing.m1
                hs = nm.take(h, routing.orders[t])
                hs = mamba_block(hs, P, f"layers.{i}.", cfg, keep)
                h = nm.take(hs, routing.inverse[t])
    else:  # mamba_a
        assignments = list(routing) if routing is not None else []
        for i in range(cfg.n_layers):
            h = mamba_block(h, P, f"layers.{i}.", cfg)
            if len(assignments) <= i:
                if cfg.reuse_assignment and assignments:
                    assignments.append(assignments[0])
                else:
                    assignments.append(route(h.data, batch.coords, cfg, layer=i))
            h = attention_layer(h, P, assignments[i])
        routing = assignments
    return _head(P, h), routing


def forward(params: dict, batch: PerPointBatch, cfg: ModelConfig, routing=None,
            return_routing: bool = False):
    """Per-point embeddings (tracking) or probabilities (pileup), float64 with gradients.

    ``params`` may be raw arrays or already-wrapped tensors (for gradient work).
    """
    P = params if all(isinstance(v, Tensor) for v in params.values()) else wrap_params(params)
    out, routing = backbone(P, batch, cfg, routing)
    if cfg.task == "pileup":
        out = nm.sigmoid(nm.reshape(out, (batch.n,)))
    return (out, routing) if return_routing else out


def predict(params: dict, batch: PerPointBatch, cfg: ModelConfig, dtype=np.float32) -> np.ndarray:
    """Gradient-free inference (float32 by default) using the chunked scan."""
    with nm.no_grad():
        out, _ = backbone(wrap_params(params, dtype), batch, cfg, dtype=dtype)
        if cfg.task == "pileup":
            out = nm.sigmoid(nm.reshape(out, (batch.n,)))
    return out.data


def mamba_a_forward(params, batch, cfg, routing=None, return_routing=False):
    if cfg.arch != "mamba_a":
        raise ValueError("config is not a hybrid (mamba_a) model")
    return forward(params, batch, cfg, routing, return_routing)


def mamba_b_forward(params, batch, cfg, routing=None, return_routing=False):
    if cfg.arch != "mamba_b":
        raise ValueError("config is not a reordered (mamba_b) model")
    return forward(params, batch, cfg, routing, return_routing)


def pileup_head(params, batch, cfg, routing=None, return_routing=False):
    if cfg.task != "pileup":
        raise ValueError("config is not a pileup model")
    return forward(params, batch, cfg, routing, return_routing)


# -- checkpoints ---------------------------------------------------------------------------

_ZIP_DATE = (1980, 1, 1, 0, 0, 0)


def _zip_write(zf: zipfile.ZipFile, name: str, payload: bytes) -> None:
    info = zipfile.ZipInfo(name, date_time=_ZIP_DATE)
    info.compress_type = zipfile.ZIP_DEFLATED
    info.external_attr = 0o644 << 16
    zf.writestr(info, payload)


def save_checkpoint(path, params: dict, cfg: ModelConfig, meta: dict | None = None) -> None:
    """Zip archive of ``config.json`` plus one ``.npy`` per named parameter.

    Entries are written in sorted order with fixed timestamps, so identical
    inputs give identical bytes.
    """
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w") as zf:
        header = {"config": cfg.to_dict(), "seed": cfg.seed, "param_count": param_count(cfg),
                  "names": sorted(params), "meta": meta or {}}
        _zip_write(zf, "config.json", json.dumps(header, sort_keys=True, indent=1).encode())
        for name in sorted(params):
            arr = io.BytesIO()
            np.save(arr, np.ascontiguousarray(params[name]), allow_pickle=False)
            _zip_write(zf, f"params/{name}.npy", arr.getvalue())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path):
    """Returns (params, config, meta)."""
    with zipfile.ZipFile(path) as zf:
        header = json.loads(zf.read("config.json"))
        cfg = ModelConfig(**header["config"])
        params = {name: np.load(io.BytesIO(zf.read(f"params/{name}.npy")), allow_pickle=False)
                  for name in header["names"]}
    expected = param_shapes(cfg)
    if set(params) != set(expected) or any(params[k].shape != expected[k] for k in expected):
        raise ValueError(f"{path}: parameters do not match the stored config")
    return params, cfg, header.get("meta", {})


__all__ = [
    "ARCHS", "BLOCK_SIZES", "ModelConfig", "PerPointBatch", "causal_conv", "forward", "init_params",
    "load_checkpoint", "mamba_a_forward", "mamba_b_forward", "mamba_block", "param_count",
    "param_shapes", "pileup_head", "predict", "preset", "route", "save_checkpoint",
]
