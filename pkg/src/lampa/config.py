"""Flat ``key = value`` run configuration with typed keys and env/flag overrides."""
from __future__ import annotations

import os
from dataclasses import dataclass, field, fields
from pathlib import Path

from .model import ARCHS, BLOCK_SIZES, TASKS, ModelConfig, preset

SEED_ENV = "LAMPA_SEED"


class ConfigError(ValueError):
    """Invalid configuration (maps to exit code 2)."""


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _int_list(text: str) -> list:
    return [int(v) for v in str(text).replace(" ", "").strip("[]").split(",") if v]


@dataclass
class RunConfig:
    task: str = "tracking"
    arch: str = "mamba_b"
    scale: str = "S"
    dataset: str | None = None
    block_size: list = field(default_factory=list)
    m1: int = 3
    m2: int = 3
    seed: int = 0
    hidden_dim: int | None = None
    n_layers: int | None = None
    state_dim: int | None = None
    reset_state_at_block: bool = False
    reuse_assignment: bool = False
    optimizer: str = "adam"
    lr: float = 1e-3
    epochs: int = 1
    events: int = 1
    data: str | None = None
    out: str | None = None
    checkpoint: str | None = None

    def __post_init__(self):
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}")
        if self.arch not in ARCHS:
            raise ConfigError(f"arch must be one of {ARCHS}")
        if self.scale not in ("S", "M", "L"):
            raise ConfigError("scale must be S, M or L")
        if self.dataset is None:
            self.dataset = "tracking-6k" if self.task == "tracking" else "pileup-10k"
        if self.dataset not in BLOCK_SIZES:
            raise ConfigError(f"unknown dataset {self.dataset!r}")
        if isinstance(self.block_size, int):
            self.block_size = [self.block_size]
        if not self.block_size:
            hybrid, reordered = BLOCK_SIZES[self.dataset]
            self.block_size = list(hybrid if self.arch == "mamba_a" else reordered)
        if self.epochs < 1 or self.events < 1 or self.lr < 0:
            raise ConfigError("epochs and events must be >= 1 and lr >= 0")

    def model_config(self) -> ModelConfig:
        """Expand the preset; the first listed block size is the active one."""
        overrides = {k: getattr(self, k) for k in ("hidden_dim", "n_layers", "state_dim")
                     if getattr(self, k) is not None}
        try:
            return preset(self.arch, self.scale, task=self.task, dataset=self.dataset,
                          block_size=self.block_size[0], m1=self.m1, m2=self.m2, seed=self.seed,
                          reset_state_at_block=self.reset_state_at_block,
                          reuse_assignment=self.reuse_assignment, **overrides)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


_PARSERS = {
    "task": str, "arch": str, "scale": str.upper, "dataset": str, "block_size": _int_list,
    "m1": int, "m2": int, "seed": int, "hidden_dim": int, "n_layers": int, "state_dim": int,
    "reset_state_at_block": _bool, "reuse_assignment": _bool, "optimizer": str, "lr": float,
    "epochs": int, "events": int, "data": str, "out": str, "checkpoint": str,
}


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _PARSERS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        try:
            values[key] = _PARSERS[key](value)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key}: {exc}") from None
    return values


def load_run_config(path=None, overrides: dict | None = None, env=None) -> RunConfig:
    """File values, then non-None ``overrides`` (CLI flags), then ``LAMPA_SEED``."""
    env = os.environ if env is None else env
    values = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        values.update(parse_config_text(path.read_text(encoding="utf-8"), str(path)))
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in _PARSERS:
            raise ConfigError(f"unknown key {key!r}")
        values[key] = _PARSERS[key](value) if isinstance(value, str) and key != "data" else value
    if env.get(SEED_ENV):
        try:
            values["seed"] = int(env[SEED_ENV])
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer") from None
    try:
        return RunConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def format_config(cfg: RunConfig) -> str:
    lines = []
    for key, value in cfg.to_dict().items():
        if value is None:
            continue
        if isinstance(value, list):
            value = ",".join(map(str, value))
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


__all__ = ["ConfigError", "RunConfig", "SEED_ENV", "format_config", "load_run_config", "parse_config_text"]
