"""``lampa`` command line: gen-data, train, eval, bench, verify.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .config import SEED_ENV, ConfigError, load_run_config, parse_config_text
from .data import (PILEUP_PRESETS, TRACKING_PRESETS, CsvFormatError, generate_pileup_event, load_csv,
                   save_csv, tracking_preset)

log = logging.getLogger("lampa")

PRESETS = sorted(TRACKING_PRESETS) + sorted(PILEUP_PRESETS)


def _write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, indent=1, sort_keys=True, default=str) + "\n", encoding="utf-8")


def _env_seed(seed: int) -> int:
    value = os.environ.get(SEED_ENV)
    if value:
        try:
            return int(value)
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer") from None
    return seed


def generate_events(preset: str, seed: int, events: int, particles: int | None = None) -> list:
    out = []
    for i in range(events):
        if preset in TRACKING_PRESETS:
            if particles:
                from .data import generate_tracking_event
                ev = generate_tracking_event(seed + i, particles, noise_frac=0.1, event_id=i)
            else:
                ev = tracking_preset(preset, seed + i, event_id=i)
        else:
            kw = dict(PILEUP_PRESETS[preset])
            kw.pop("events")
            if particles:
                kw["n_particles"] = particles
            ev = generate_pileup_event(seed + i, event_id=i, **kw)
        out.append(ev)
    return out


# -- commands --------------------------------------------------------------------------------

def cmd_gen_data(args) -> int:
    seed = _env_seed(args.seed)
    events = generate_events(args.preset, seed, args.events, args.particles)
    out = Path(args.out)
    save_csv(events, out)
    meta = {"command": "gen-data", "preset": args.preset, "seed": seed, "events": args.events,
            "particles": args.particles, "rows": int(sum(len(e) for e in events))}
    _write_json(out.with_name(out.name + ".json"), meta)
    print(json.dumps(meta, sort_keys=True))
    return 0


def _run_config(args, keys):
    overrides = {k: getattr(args, k, None) for k in keys}
    return load_run_config(getattr(args, "config", None), overrides)


def _load_or_generate(cfg):
    if cfg.data:
        return load_csv(cfg.data)
    return generate_events(cfg.dataset, cfg.seed, cfg.events)


def cmd_train(args) -> int:
    from .metrics import write_jsonl
    from .model import param_count
    from .train import TrainConfig, evaluate_params, train

    cfg = _run_config(args, ("task", "arch", "scale", "dataset", "seed", "epochs", "lr", "optimizer",
                             "events", "data", "out", "hidden_dim", "n_layers", "state_dim"))
    model_cfg = cfg.model_config()
    try:
        tcfg = TrainConfig(model=model_cfg, optimizer=cfg.optimizer, lr=cfg.lr, epochs=cfg.epochs,
                           seed=cfg.seed, eval_every=0)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if not cfg.out:
        raise ConfigError("train needs an output directory (--out or 'out' in the config)")
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    events = _load_or_generate(cfg)
    result = train(tcfg, events, checkpoint_path=out / "model.ckpt", log_path=out / "train_log.jsonl")
    reports = evaluate_params(result.params, model_cfg, events)
    write_jsonl(reports, out / "metrics.jsonl")
    meta = {"command": "train", "config": cfg.to_dict(), "model": model_cfg.to_dict(),
            "param_count": param_count(model_cfg), "final_loss": result.losses[-1], "steps": len(result.log)}
    _write_json(out / "run.json", meta)
    print(json.dumps({"final_loss": result.losses[-1], "param_count": meta["param_count"],
                      "checkpoint": str(out / "model.ckpt")}))
    return 0


def cmd_eval(args) -> int:
    from .metrics import write_jsonl
    from .model import load_checkpoint
    from .train import evaluate

    params, model_cfg, _ = load_checkpoint(args.checkpoint)
    seed = _env_seed(args.seed if args.seed is not None else model_cfg.seed)
    if args.data:
        events = load_csv(args.data)
    else:
        events = generate_events(model_cfg.dataset, seed, args.events)
    try:
        reports, summary = evaluate((params, model_cfg), events)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_jsonl(reports, out / "metrics.jsonl")
        _write_json(out / "summary.json", {"command": "eval", "model": model_cfg.to_dict(),
                                           "checkpoint": str(args.checkpoint), "aggregate": summary})
    print(json.dumps(summary, sort_keys=True))
    return 0


def cmd_bench(args) -> int:
    from .metrics import FLOPS_FORMULAS, write_csv
    from .model import init_params, param_count
    from .train import sector_sweep

    if args.dataset is None and (args.task or "tracking") == "tracking":
        from_file = parse_config_text(Path(args.config).read_text(encoding="utf-8")) if args.config else {}
        if "dataset" not in from_file and from_file.get("task", "tracking") == "tracking":
            args.dataset = "tracking-60k"  # the sweep is meant for full-size events
    cfg = _run_config(args, ("task", "arch", "scale", "dataset", "seed"))
    model_cfg = cfg.model_config()
    try:
        sectors = [int(s) for s in args.sectors.split(",") if s]
    except ValueError:
        raise ConfigError(f"bad --sectors value {args.sectors!r}") from None
    if not sectors or min(sectors) < 1:
        raise ConfigError("--sectors needs positive integers")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    params = init_params(model_cfg)
    event = generate_events(cfg.dataset, cfg.seed, 1)[0]
    rows = sector_sweep(params, model_cfg, event, sectors, args.warmup, args.reps, args.workers)
    write_csv([{k: r[k] for k in ("n_sector", "n_hits", "flops_per_sector", "flops_per_event")} for r in rows],
              out / "flops_vs_n.csv")
    write_csv([{k: r[k] for k in ("n_sector", "n_hits", "time_per_sector", "time_per_event", "hits_per_sec",
                                  "hits_per_sec_q1", "hits_per_sec_q3", "workers", "mode", "reps")}
               for r in rows], out / "throughput_vs_n.csv")
    _write_json(out / "bench.json", {"command": "bench", "config": cfg.to_dict(), "model": model_cfg.to_dict(),
                                     "param_count": param_count(model_cfg), "flops_formulas": FLOPS_FORMULAS,
                                     "sectors": sectors, "workers": args.workers})
    print(json.dumps({"rows": len(rows), "out": str(out)}))
    return 0


def cmd_verify(args) -> int:
    from .verify import run_suites

    suites = [s for part in (args.suite or []) for s in part.split(",") if s] or None
    seed = _env_seed(args.seed)
    try:
        verdict = run_suites(suites, args.trials, seed)
    except KeyError as exc:
        raise ConfigError(str(exc)) from exc
    if not args.timings:
        for suite in verdict["suites"]:
            suite.pop("seconds")
    text = json.dumps(verdict, sort_keys=True, indent=1)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    print(text)
    return 0 if verdict["passed"] else 1


# -- parser -----------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lampa", description="SSM + LSH point-cloud engine")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate synthetic events as CSV")
    p.add_argument("--preset", required=True, choices=PRESETS)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--events", type=int, default=1)
    p.add_argument("--particles", type=int, default=None, help="override the preset's particle count")
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(func=cmd_gen_data)

    def model_flags(p):
        p.add_argument("--config", default=None, help="key = value run configuration file")
        p.add_argument("--task", choices=["tracking", "pileup"], default=None)
        p.add_argument("--arch", choices=["mamba_plain", "mamba_a", "mamba_b"], default=None)
        p.add_argument("--scale", choices=["S", "M", "L"], default=None)
        p.add_argument("--dataset", default=None)
        p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("train", help="train a model")
    model_flags(p)
    p.add_argument("--data", default=None, help="event CSV (generated from the dataset preset if absent)")
    p.add_argument("--events", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--optimizer", choices=["adam", "sgd"], default=None)
    p.add_argument("--hidden-dim", dest="hidden_dim", type=int, default=None)
    p.add_argument("--n-layers", dest="n_layers", type=int, default=None)
    p.add_argument("--state-dim", dest="state_dim", type=int, default=None)
    p.add_argument("--out", default=None, help="output directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", default=None)
    p.add_argument("--events", type=int, default=1)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="FLOPs and throughput over the sector sweep")
    model_flags(p)
    p.add_argument("--sectors", default="1,2,3,6,10,20")
    p.add_argument("--reps", type=int, default=3)
    p.add_argument("--warmup", type=int, default=1)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("verify", help="run the property suites")
    p.add_argument("--suite", action="append", help="suite name(s); repeatable or comma separated")
    p.add_argument("--trials", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="write the JSON verdict here")
    p.add_argument("--timings", action="store_true", help="include wall-clock seconds per suite")
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, CsvFormatError) as exc:
        parser.print_usage(sys.stderr)
        print(f"lampa: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure
        log.debug("failure", exc_info=True)
        print(f"lampa: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
