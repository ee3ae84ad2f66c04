"""Experiment configuration as a flat ``section.key = value`` text file."""

from __future__ import annotations

import dataclasses
import os
import tempfile
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

from ..featurebank import FEATURES
from ..rl import PPOConfig
from ..simulator import REWARD_VARIANTS, TASKS


class ConfigError(ValueError):
    """Malformed or invalid configuration (a usage error)."""


@dataclass
class ExperimentConfig:
    task: str = "planning"
    reward_variant: str = "dense"
    max_steps: Optional[int] = None
    feature_ids: tuple = ("depth",)
    noise_std: float = 0.0
    n_train: int = 8
    n_test: int = 3
    split_seed: int = 0
    train_subset: int = 0
    seeds: tuple = (0, 1, 2, 3, 4)
    seed: int = 0
    budget: int = 500_000
    checkpoint_every: int = 0
    eval_every: int = 0
    eval_episodes: int = 60
    eval_seed: int = 123
    pretrain_corpus: int = 4000
    pretrain_epochs: int = 30
    grid_budget: int = 50_000
    worlds: str = "worlds"
    encoders: str = "encoders"
    out: str = "runs"
    ppo: PPOConfig = field(default_factory=PPOConfig)

    def validate(self) -> "ExperimentConfig":
        if self.task not in TASKS:
            raise ConfigError(f"task.name: unknown task {self.task!r}; expected one of {', '.join(TASKS)}")
        if self.reward_variant not in REWARD_VARIANTS:
            raise ConfigError(f"task.reward_variant: unknown variant {self.reward_variant!r}")
        if self.max_steps is not None and self.max_steps < 1:
            raise ConfigError("task.max_steps must be >= 1 or none")
        if not self.feature_ids:
            raise ConfigError("features.ids must name at least one feature")
        for f in self.feature_ids:
            if f not in FEATURES:
                raise ConfigError(f"features.ids: unknown feature {f!r}")
        if len(set(self.feature_ids)) != len(self.feature_ids):
            raise ConfigError("features.ids lists a feature twice")
        if self.noise_std < 0:
            raise ConfigError("features.noise_std must be >= 0")
        if not self.seeds or len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("run.seeds must be a non-empty list of distinct integers")
        positive = {"split.n_train": self.n_train, "split.n_test": self.n_test,
                    "eval.episodes": self.eval_episodes, "pretrain.corpus": self.pretrain_corpus,
                    "grid.budget": self.grid_budget}
        for key, v in positive.items():
            if v < 1:
                raise ConfigError(f"{key} must be >= 1")
        for key, v in {"train.checkpoint_every": self.checkpoint_every, "train.eval_every": self.eval_every,
                       "pretrain.epochs": self.pretrain_epochs}.items():
            if v < 0:
                raise ConfigError(f"{key} must be >= 0")
        if not 0 <= self.train_subset <= self.n_train:
            raise ConfigError("split.train_subset must lie in [0, split.n_train] (0 = all)")
        p = self.ppo
        for name in ("epochs", "minibatch", "buffer_capacity", "hidden"):
            if getattr(p, name) < 1:
                raise ConfigError(f"ppo.{name} must be >= 1")
        if p.n_off < 0 or p.lr < 0 or p.max_grad_norm <= 0 or p.stale_log_ratio <= 0:
            raise ConfigError("ppo.n_off and ppo.lr must be >= 0; ppo.max_grad_norm and "
                              "ppo.stale_log_ratio must be > 0")
        if self.budget < self.ppo.n_on:
            raise ConfigError(f"train.budget {self.budget} is smaller than one round of ppo.n_on episodes")
        for key in ("worlds", "encoders", "out"):
            if not getattr(self, key):
                raise ConfigError(f"paths.{key} must not be empty")
        return self

    def ppo_for(self, seed: int) -> PPOConfig:
        return dataclasses.replace(self.ppo, seed=int(seed))

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def with_overrides(self, items) -> "ExperimentConfig":
        """Apply ``key=value`` strings on top of this config."""
        text = dumps(self)
        extra = []
        for item in items:
            if "=" not in item:
                raise ConfigError(f"override {item!r} is not key=value")
            extra.append(item)
        return loads(text, overrides=extra)

    @property
    def label(self) -> str:
        return "+".join(self.feature_ids)


# key -> (attribute, kind); ppo.* keys are generated from PPOConfig below
_SCHEMA = {
    "task.name": ("task", str),
    "task.reward_variant": ("reward_variant", str),
    "task.max_steps": ("max_steps", "opt_int"),
    "features.ids": ("feature_ids", "str_list"),
    "features.noise_std": ("noise_std", float),
    "split.n_train": ("n_train", int),
    "split.n_test": ("n_test", int),
    "split.seed": ("split_seed", int),
    "split.train_subset": ("train_subset", int),
    "run.seeds": ("seeds", "int_list"),
    "run.seed": ("seed", int),
    "train.budget": ("budget", int),
    "train.checkpoint_every": ("checkpoint_every", int),
    "train.eval_every": ("eval_every", int),
    "eval.episodes": ("eval_episodes", int),
    "eval.seed": ("eval_seed", int),
    "pretrain.corpus": ("pretrain_corpus", int),
    "pretrain.epochs": ("pretrain_epochs", int),
    "grid.budget": ("grid_budget", int),
    "paths.worlds": ("worlds", str),
    "paths.encoders": ("encoders", str),
    "paths.out": ("out", str),
}
_PPO_KEYS = {f"ppo.{f.name}": f for f in fields(PPOConfig) if f.name != "seed"}
KEYS = tuple(_SCHEMA) + tuple(_PPO_KEYS)


def _format(value, kind) -> str:
    if kind == "opt_int":
        return "none" if value is None else str(int(value))
    if kind in ("str_list", "int_list"):
        return ",".join(str(v) for v in value)
    if kind is float:
        return repr(float(value))
    if kind is str:
        if value != value.strip() or "\n" in value or not value:
            raise ConfigError(f"string value {value!r} cannot be written losslessly")
        return value
    return str(value)


def _parse(key: str, raw: str, kind):
    try:
        if kind == "opt_int":
            return None if raw.lower() == "none" else int(raw)
        if kind == "str_list":
            return tuple(v.strip() for v in raw.split(",") if v.strip())
        if kind == "int_list":
            return tuple(int(v) for v in raw.split(",") if v.strip())
        if kind is bool:
            if raw.lower() not in ("true", "false"):
                raise ValueError(raw)
            return raw.lower() == "true"
        return kind(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r}") from None


def _kind_of(f: dataclasses.Field):
    return {"float": float, "int": int, "bool": bool}.get(str(f.type), float)


def dumps(cfg: ExperimentConfig) -> str:
    lines = ["# midlevel experiment config"]
    section = None
    for key, (attr, kind) in _SCHEMA.items():
        head = key.split(".")[0]
        if head != section:
            lines.append("")
            section = head
        lines.append(f"{key} = {_format(getattr(cfg, attr), kind)}")
    lines.append("")
    for key, f in _PPO_KEYS.items():
        v = getattr(cfg.ppo, f.name)
        kind = _kind_of(f)
        lines.append(f"{key} = {str(v).lower() if kind is bool else _format(v, kind)}")
    return "\n".join(lines) + "\n"


def loads(text: str, overrides=()) -> ExperimentConfig:
    """Parse config text; keys not given keep their defaults."""
    values: dict = {}
    for source, lines in (("config", text.splitlines()), ("override", list(overrides))):
        seen = set()
        for n, line in enumerate(lines, 1):
            line = line.split(" #", 1)[0].strip()  # trailing comments need a space before '#'
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{source} line {n}: expected 'key = value', got {line!r}")
            key, raw = (p.strip() for p in line.split("=", 1))
            if key not in _SCHEMA and key not in _PPO_KEYS:
                raise ConfigError(f"{source} line {n}: unknown config key {key!r}")
            if key in seen:
                raise ConfigError(f"{source} line {n}: duplicate key {key!r}")
            seen.add(key)
            values[key] = raw
    kwargs, ppo = {}, {}
    for key, raw in values.items():
        if key in _SCHEMA:
            attr, kind = _SCHEMA[key]
            kwargs[attr] = _parse(key, raw, kind)
        else:
            f = _PPO_KEYS[key]
            ppo[f.name] = _parse(key, raw, _kind_of(f))
    try:
        kwargs["ppo"] = PPOConfig(**ppo)
    except ValueError as e:
        raise ConfigError(f"ppo: {e}") from None
    return ExperimentConfig(**kwargs).validate()


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e.strerror}") from None
    return loads(text)


def save_config(cfg: ExperimentConfig, path) -> None:
    Path(path).write_text(dumps(cfg), encoding="utf-8")


def ensure_writable(path) -> Path:
    """Create ``path`` if needed and prove a file can be written there."""
    p = Path(path)
    try:
        p.mkdir(parents=True, exist_ok=True)
        fd, probe = tempfile.mkstemp(dir=p, prefix=".probe")
        os.close(fd)
        os.unlink(probe)
    except OSError as e:
        raise OSError(f"output directory {p} is not writable: {e.strerror}") from None
    return p
