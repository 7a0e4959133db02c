import numpy as np
import pytest

from lampa.data import generate_pileup_event, generate_tracking_event
from lampa.metrics import accuracy, aggregate
from lampa.model import ModelConfig, PerPointBatch, init_params, predict
from lampa.train import (SECTORS, Adam, Sgd, TrainConfig, TrainingDivergedError, evaluate, evaluate_params,
                         sector_sweep, toy_tracking_dataset, train)


def small(**kw):
    base = dict(arch="mamba_b", hidden_dim=8, n_layers=2, state_dim=4, embed_out_dim=4, block_size=16)
    base.update(kw)
    return ModelConfig(**base)


def tiny_events(n=2, particles=6):
    return [generate_tracking_event(s, particles, layers=6, noise_frac=0.1, event_id=s) for s in range(n)]


def test_adam_first_step_is_lr_times_sign():
    params = {"w": np.array([1.0, -2.0, 0.5])}
    Adam(lr=0.1).step(params, {"w": np.array([3.0, -0.01, 0.0])})
    assert np.allclose(params["w"], [0.9, -1.9, 0.5], atol=1e-6)


def test_sgd_step():
    params = {"w": np.array([1.0, 2.0])}
    Sgd(lr=0.5).step(params, {"w": np.array([2.0, -2.0])})
    assert np.array_equal(params["w"], [0.0, 3.0])


def test_zero_lr_keeps_params():
    cfg = TrainConfig(model=small(), lr=0.0, epochs=3, eval_every=0)
    events = tiny_events()
    res = train(cfg, events)
    init = init_params(cfg.model, cfg.seed)
    assert all(np.array_equal(res.params[k], init[k]) for k in init)
    losses = np.array(res.losses).reshape(3, 2)
    assert np.array_equal(losses[0], losses[1]) and np.array_equal(losses[0], losses[2])


def test_same_seed_same_curve():
    cfg = TrainConfig(model=small(), lr=1e-2, epochs=3, eval_every=0)
    a, b = train(cfg, tiny_events()), train(cfg, tiny_events())
    assert a.losses == b.losses
    assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)


def test_divergence_is_reported():
    cfg = TrainConfig(model=small(), optimizer="sgd", lr=1e30, epochs=5, eval_every=0)
    with pytest.raises(TrainingDivergedError):
        train(cfg, tiny_events())


def test_task_mismatch():
    cfg = TrainConfig(model=small(task="pileup"), eval_every=0)
    with pytest.raises(ValueError, match="task"):
        train(cfg, tiny_events())
    with pytest.raises(ValueError):
        train(TrainConfig(model=small(), eval_every=0), [])


def test_bad_train_config():
    with pytest.raises(ValueError):
        TrainConfig(optimizer="rmsprop")
    with pytest.raises(ValueError):
        TrainConfig(lr=-1.0)
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)


def test_log_file_and_checkpoint(tmp_path):
    import json
    cfg = TrainConfig(model=small(), lr=1e-2, epochs=2, eval_every=1)
    res = train(cfg, tiny_events(), checkpoint_path=tmp_path / "m.ckpt", log_path=tmp_path / "log.jsonl")
    rows = [json.loads(line) for line in (tmp_path / "log.jsonl").read_text().splitlines()]
    steps = [r for r in rows if "step" in r]
    assert [r["step"] for r in steps] == list(range(4))
    assert {"epoch", "loss", "lr", "wall_clock"} <= set(steps[0])
    assert len(res.epochs) == 2 and "top1_accuracy" in res.epochs[0]
    assert (tmp_path / "m.ckpt").is_file()


def test_eval_roundtrip_is_exact(tmp_path):
    cfg = TrainConfig(model=small(), lr=1e-2, epochs=1, eval_every=0)
    events = tiny_events()
    res = train(cfg, events, checkpoint_path=tmp_path / "m.ckpt")
    _, direct = evaluate((res.params, cfg.model), events)
    _, loaded = evaluate(tmp_path / "m.ckpt", events)
    assert direct == loaded


def test_aggregate_is_mean_of_events():
    cfg = small()
    params = init_params(cfg)
    events = tiny_events(3)
    reports = evaluate_params(params, cfg, events)
    summary = aggregate(reports)
    assert summary["top1_accuracy"] == pytest.approx(np.mean([r.top1_accuracy for r in reports]))
    assert reports[1].top1_accuracy == accuracy(predict(params, PerPointBatch.from_event(events[1]), cfg,
                                                        dtype=np.float64), events[1].particle_id)


def test_pileup_training_and_metrics():
    cfg = TrainConfig(model=small(task="pileup", dataset="pileup-10k"), lr=1e-2, epochs=2, eval_every=0)
    events = [generate_pileup_event(s, 200, 0.6, 0.1, n_pu_vertices=5, event_id=s) for s in range(2)]
    res = train(cfg, events)
    assert np.all(np.isfinite(res.losses))
    reports = evaluate_params(res.params, cfg.model, events)
    assert all(0.0 <= r.top1_accuracy <= 1.0 and 0.0 <= r.roc_auc <= 1.0 for r in reports)


def test_sector_sweep_rows():
    cfg = small()
    event = generate_tracking_event(0, 60, noise_frac=0.1)
    rows = sector_sweep(init_params(cfg), cfg, event, SECTORS, warmup=0, reps=3)
    assert [r["n_sector"] for r in rows] == list(SECTORS)
    assert all(r["flops_per_sector"] > 0 and r["time_per_sector"] > 0 for r in rows)
    assert rows[0]["n_hits"] == len(event)
    assert all(r["q1"] <= r["hits_per_sec"] <= r["q3"] for r in
               ({"q1": r["hits_per_sec_q1"], "q3": r["hits_per_sec_q3"], **r} for r in rows))


def test_toy_dataset_shape():
    (event,) = toy_tracking_dataset(3)
    assert len(event) == 200
    assert len(np.unique(event.particle_id)) == 10


@pytest.mark.slow
def test_toy_loss_trend_decreases():
    cfg = TrainConfig(model=small(hidden_dim=16, n_layers=2), lr=5e-3, epochs=60, eval_every=0, seed=1)
    losses = np.array(train(cfg, toy_tracking_dataset(1)).losses)
    window = np.convolve(losses, np.ones(10) / 10, mode="valid")
    assert window[-1] < window[0]
