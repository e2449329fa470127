"""Flat ``key = value`` experiment configuration."""
from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path

from .importance import STRATEGIES


class ConfigError(ValueError):
    def __init__(self, key: str, msg: str):
        super().__init__(f"{key}: {msg}")
        self.key = key


def _floats(s: str) -> list[float]:
    return [float(v) for v in s.split(",") if v.strip()]


def _ints(s: str) -> list[int]:
    return [int(v) for v in s.split(",") if v.strip()]


def _strs(s: str) -> list[str]:
    return [v.strip() for v in s.split(",") if v.strip()]


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


@dataclass
class ExperimentConfig:
    # model
    model: str = "mlp"
    hidden: int = 32
    feature_block: int = 1
    importance_scope: str = "last-layer"
    # stream
    stream_kind: str = "synthetic"
    stream_path: str = ""
    dim: int = 20
    n_classes: int = 4
    class_sep: float = 1.0
    class_spread: list[float] = field(default_factory=lambda: [0.5, 1.0, 1.5, 2.0])
    noise: str = "none"
    noise_fraction: float = 0.0
    noise_sigma: float = 1.0
    n_test: int = 2000
    stream_velocity: int = 100
    # selection
    strategy: list[str] = field(default_factory=lambda: ["cis", "rs"])
    batch_size: int = 10
    buffer_capacity: int = 30
    stats_decay: float = 1.0
    clear_after_round: bool = True
    buffer_quota: str = "proportional"
    candidates: str = "buffer"
    # training
    rounds: int = 500
    lr: float = 0.1
    lr_decay: float = 1.0
    lr_decay_every: int = 100
    mode: str = "sequential"
    final_window: int = 25
    # timing model (simulated seconds)
    t_filter_per_sample: float = 0.0005
    t_grad_per_sample: float = 0.004
    t_plan: float = 0.002
    t_train_per_batch: float = 0.15
    t_sync: float = 0.01
    # run
    seeds: list[int] = field(default_factory=lambda: [0])
    out: str = "out"

    def validate(self) -> "ExperimentConfig":
        def need(cond, key, msg):
            if not cond:
                raise ConfigError(key, msg)

        need(self.model in ("linear", "mlp"), "model", "must be linear or mlp")
        need(self.hidden >= 1, "hidden", "must be >= 1")
        need(self.importance_scope in ("last-layer", "full"), "importance_scope", "must be last-layer or full")
        need(self.stream_kind in ("synthetic", "csv"), "stream_kind", "must be synthetic or csv")
        if self.stream_kind == "csv":
            need(bool(self.stream_path) and Path(self.stream_path).is_file(), "stream_path",
                 f"file not found: {self.stream_path!r}")
        need(self.dim >= 1, "dim", "must be >= 1")
        need(self.n_classes >= 2, "n_classes", "must be >= 2")
        need(len(self.class_spread) in (1, self.n_classes), "class_spread",
             "one value or one per class")
        need(all(s >= 0 for s in self.class_spread), "class_spread", "must be >= 0")
        need(self.noise in ("none", "feature", "label"), "noise", "must be none, feature or label")
        need(0.0 <= self.noise_fraction <= 1.0, "noise_fraction", "must lie in [0, 1]")
        need(self.noise_sigma >= 0, "noise_sigma", "must be >= 0")
        need(self.n_test >= 1, "n_test", "must be >= 1")
        need(bool(self.strategy) and all(s in STRATEGIES for s in self.strategy), "strategy",
             f"each entry must be one of {', '.join(STRATEGIES)}")
        need(len(set(self.strategy)) == len(self.strategy), "strategy", "duplicate entries")
        need(self.batch_size >= 1, "batch_size", "must be >= 1")
        need(self.batch_size <= self.stream_velocity, "batch_size", "must not exceed stream_velocity")
        need(self.buffer_capacity >= 1, "buffer_capacity", "must be >= 1")
        need(0.0 < self.stats_decay <= 1.0, "stats_decay", "must lie in (0, 1]")
        need(self.buffer_quota in ("none", "proportional"), "buffer_quota", "must be none or proportional")
        need(self.candidates in ("buffer", "window"), "candidates", "must be buffer or window")
        need(self.rounds >= 1, "rounds", "must be >= 1")
        need(self.lr >= 0, "lr", "must be >= 0")
        need(0.0 < self.lr_decay <= 1.0, "lr_decay", "must lie in (0, 1]")
        need(self.lr_decay_every >= 1, "lr_decay_every", "must be >= 1")
        need(self.mode in ("sequential", "pipelined"), "mode", "must be sequential or pipelined")
        need(self.final_window >= 1, "final_window", "must be >= 1")
        for key in ("t_filter_per_sample", "t_grad_per_sample", "t_plan", "t_train_per_batch", "t_sync"):
            need(getattr(self, key) >= 0, key, "must be >= 0")
        need(bool(self.seeds), "seeds", "need at least one seed")
        return self

    def layer_sizes(self, dim: int, n_classes: int) -> list[int]:
        if self.model == "linear":
            return [dim, n_classes]
        return [dim, self.hidden, n_classes]


# field annotations are strings under postponed evaluation
_PARSERS = {"int": int, "float": float, "str": str, "bool": _bool,
            "list[float]": _floats, "list[int]": _ints, "list[str]": _strs}


def _parser(f):
    return _PARSERS[f.type]


def parse_config(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    cfg = base or ExperimentConfig()
    known = {f.name: f for f in fields(ExperimentConfig)}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}", "expected key = value")
        key, value = (p.strip() for p in line.split("=", 1))
        if key not in known:
            raise ConfigError(key, "unknown key")
        try:
            setattr(cfg, key, _parser(known[key])(value))
        except ValueError as exc:
            raise ConfigError(key, str(exc)) from None
    return cfg


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError("--config", str(exc)) from None
    return parse_config(text).validate()


def dump_config(cfg: ExperimentConfig) -> str:
    lines = []
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if isinstance(v, list):
            v = ",".join(str(x) for x in v)
        elif isinstance(v, bool):
            v = str(v).lower()
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"
