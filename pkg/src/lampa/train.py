"""Training loop, optimizers, evaluation and the sector sweep."""
from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import numeric as nm
from .data import PileupEvent, TrackingEvent, generate_tracking_event, split_sectors
from .loss import build_pairs, contrastive_loss, focal_loss
from .metrics import (MetricsReport, RECALL_DEFINITION, accuracy, aggregate, config_digest,
                      flops_estimate, recall, roc_auc, throughput_bench)
from .model import ModelConfig, PerPointBatch, forward, init_params, load_checkpoint, predict

log = logging.getLogger(__name__)


class TrainingDivergedError(RuntimeError):
    """Loss or gradients became non-finite."""


@dataclass(frozen=True)
class TrainConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    optimizer: str = "adam"
    lr: float = 1e-3
    betas: tuple = (0.9, 0.999)
    weight_decay: float = 0.0
    epochs: int = 1
    batch: int = 1
    seed: int = 0
    checkpoint_every: int = 0
    eval_every: int = 1
    sigma: float = 1.0
    pool_size: int = 256
    k: int = 32
    full_pool: bool = False
    alpha: float = 0.25
    lam: float = 2.0

    def __post_init__(self):
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"optimizer must be 'adam' or 'sgd', got {self.optimizer!r}")
        if not self.lr >= 0:
            raise ValueError("lr must be non-negative")
        if self.epochs < 1 or self.batch < 1:
            raise ValueError("epochs and batch must be at least 1")
        object.__setattr__(self, "betas", tuple(self.betas))

    @property
    def task(self) -> str:
        return self.model.task

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d


class Adam:
    def __init__(self, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
        self.lr, self.betas, self.eps, self.weight_decay = lr, betas, eps, weight_decay
        self.t = 0
        self.m, self.v = {}, {}

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        b1, b2 = self.betas
        for name, g in grads.items():
            if self.weight_decay:
                g = g + self.weight_decay * params[name]
            m = self.m.get(name, 0.0) * b1 + (1 - b1) * g
            v = self.v.get(name, 0.0) * b2 + (1 - b2) * g * g
            self.m[name], self.v[name] = m, v
            m_hat = m / (1 - b1 ** self.t)
            v_hat = v / (1 - b2 ** self.t)
            params[name] = params[name] - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


class Sgd:
    def __init__(self, lr=1e-2, weight_decay=0.0):
        self.lr, self.weight_decay = lr, weight_decay

    def step(self, params: dict, grads: dict) -> None:
        for name, g in grads.items():
            if self.weight_decay:
                g = g + self.weight_decay * params[name]
            params[name] = params[name] - self.lr * g


def make_optimizer(cfg: TrainConfig):
    if cfg.optimizer == "adam":
        return Adam(cfg.lr, cfg.betas, weight_decay=cfg.weight_decay)
    return Sgd(cfg.lr, cfg.weight_decay)


def _check_task(events, task: str) -> None:
    kind = TrackingEvent if task == "tracking" else PileupEvent
    if any(not isinstance(e, (kind, PerPointBatch)) for e in events):
        raise ValueError(f"dataset does not match the {task!r} task of the model")


def _as_batch(item) -> PerPointBatch:
    return item if isinstance(item, PerPointBatch) else PerPointBatch.from_event(item)


def event_loss(P: dict, batch: PerPointBatch, cfg: TrainConfig):
    out = forward(P, batch, cfg.model)
    if cfg.task == "tracking":
        pairs = build_pairs(out.data, batch.labels, cfg.pool_size, cfg.k, cfg.full_pool)
        return contrastive_loss(out, pairs, cfg.sigma)
    return focal_loss(out, batch.labels, cfg.alpha, cfg.lam)


@dataclass
class TrainResult:
    params: dict
    config: TrainConfig
    log: list
    epochs: list

    @property
    def losses(self) -> list:
        return [r["loss"] for r in self.log]


def train(cfg: TrainConfig, dataset, params: dict | None = None, checkpoint_path=None,
          log_path=None) -> TrainResult:
    """Fit on ``dataset`` (a list of events); one event per forward pass.

    Each step averages the loss over ``cfg.batch`` events.  Per-step records
    hold step, epoch, loss, lr and wall-clock seconds; per-epoch records hold
    training-set metrics every ``eval_every`` epochs.
    """
    from .model import save_checkpoint

    events = list(dataset)
    if not events:
        raise ValueError("dataset is empty")
    _check_task(events, cfg.task)
    batches = [_as_batch(e) for e in events]
    params = {k: np.array(v, dtype=np.float64) for k, v in
              (init_params(cfg.model, cfg.seed) if params is None else params).items()}
    names = sorted(params)
    opt = make_optimizer(cfg)
    step_log, epoch_log = [], []
    t0 = time.perf_counter()
    step = 0
    sink = open(log_path, "w", encoding="utf-8") if log_path else None
    try:
        for epoch in range(cfg.epochs):
            for lo in range(0, len(batches), cfg.batch):
                group = batches[lo:lo + cfg.batch]
                leaves = [nm.Tensor(params[k], requires_grad=True) for k in names]
                P = dict(zip(names, leaves))
                try:
                    total = None
                    for b in group:
                        term = event_loss(P, b, cfg)
                        total = term if total is None else total + term
                    loss = total * (1.0 / len(group))
                    grads = nm.grad(loss, leaves)
                except nm.NonFiniteError as exc:
                    raise TrainingDivergedError(f"non-finite value at step {step} (epoch {epoch}): {exc}") from exc
                value = loss.item()
                if not math.isfinite(value):
                    raise TrainingDivergedError(f"loss is {value} at step {step} (epoch {epoch})")
                opt.step(params, dict(zip(names, grads)))
                record = {"step": step, "epoch": epoch, "loss": value, "lr": cfg.lr,
                          "wall_clock": time.perf_counter() - t0}
                step_log.append(record)
                if sink:
                    sink.write(json.dumps(record) + "\n")
                step += 1
            if cfg.eval_every and (epoch + 1) % cfg.eval_every == 0:
                summary = aggregate(evaluate_params(params, cfg.model, events))
                record = {"epoch": epoch, **{k: summary[k] for k in ("top1_accuracy", "top1_recall", "roc_auc")}}
                epoch_log.append(record)
                if sink:
                    sink.write(json.dumps(record) + "\n")
                log.info("epoch %d loss %.6f %s", epoch, step_log[-1]["loss"], record)
            if checkpoint_path and cfg.checkpoint_every and (epoch + 1) % cfg.checkpoint_every == 0:
                save_checkpoint(checkpoint_path, params, cfg.model, {"epoch": epoch, "train": cfg.to_dict()})
    finally:
        if sink:
            sink.close()
    if checkpoint_path:
        save_checkpoint(checkpoint_path, params, cfg.model, {"epoch": cfg.epochs - 1, "train": cfg.to_dict()})
    return TrainResult(params, cfg, step_log, epoch_log)


def _event_report(params, cfg: ModelConfig, event, dtype=np.float64, index: int = 0) -> MetricsReport:
    batch = _as_batch(event)
    out = predict(params, batch, cfg, dtype=dtype)
    report = MetricsReport(event_id=int(getattr(event, "event_id", index)), n_hits=batch.n, seed=cfg.seed,
                           config_digest=config_digest(cfg), flops_per_event=flops_estimate(cfg, batch.n))
    if cfg.task == "tracking":
        report.top1_accuracy = accuracy(out, batch.labels)
        report.top1_recall = recall(out, batch.labels)
        report.extra["recall_definition"] = RECALL_DEFINITION
    else:
        pred = (out >= 0.5).astype(np.int64)
        report.top1_accuracy = float(np.mean(pred == batch.labels))
        positives = batch.labels == 1
        report.top1_recall = float(np.mean(pred[positives] == 1)) if positives.any() else math.nan
        if 0 < positives.sum() < batch.n:
            report.roc_auc = roc_auc(out, batch.labels)
    return report


def evaluate_params(params: dict, cfg: ModelConfig, dataset, dtype=np.float64) -> list:
    events = list(dataset)
    _check_task(events, cfg.task)
    return [_event_report(params, cfg, e, dtype, i) for i, e in enumerate(events)]


def evaluate(checkpoint, dataset, dtype=np.float64) -> tuple:
    """Per-event reports plus their aggregate, from a checkpoint path or (params, config)."""
    if isinstance(checkpoint, tuple):
        params, cfg = checkpoint[:2]
    else:
        params, cfg, _ = load_checkpoint(checkpoint)
    reports = evaluate_params(params, cfg, dataset, dtype)
    return reports, aggregate(reports)


SECTORS = (1, 2, 3, 6, 10, 20)


def sector_sweep(params: dict, cfg: ModelConfig, event, sectors=SECTORS, warmup: int = 1,
                 reps: int = 3, workers: int = 1, dtype=np.float32) -> list:
    """One FLOPs/throughput row per sector count, timing inference over all sectors."""
    rows = []
    for n_sector in sectors:
        subs = [s for s in split_sectors(event, n_sector) if len(s)]
        batches = [PerPointBatch.from_event(s) for s in subs]
        res = throughput_bench(lambda b: predict(params, b, cfg, dtype=dtype), batches, warmup, reps, workers)
        flops = [flops_estimate(cfg, b.n) for b in batches]
        rows.append({"n_sector": n_sector, "n_hits": res.n_hits / len(batches),
                     "flops_per_sector": float(np.mean(flops)), "flops_per_event": int(sum(flops)),
                     "time_per_sector": res.median_time / len(batches), "time_per_event": res.median_time,
                     "hits_per_sec": res.median, "hits_per_sec_q1": res.q1, "hits_per_sec_q3": res.q3,
                     "workers": workers, "mode": res.mode, "reps": reps})
    return rows


def toy_tracking_dataset(seed: int, n_tracks: int = 10, layers: int = 20) -> list:
    """One noise-free event of ``n_tracks`` helices crossing ``layers`` layers (200 hits by default)."""
    return [generate_tracking_event(seed, n_tracks, layers=layers, noise_frac=0.0)]


__all__ = ["Adam", "SECTORS", "Sgd", "TrainConfig", "TrainResult", "TrainingDivergedError", "evaluate",
           "evaluate_params", "sector_sweep", "toy_tracking_dataset", "train"]
