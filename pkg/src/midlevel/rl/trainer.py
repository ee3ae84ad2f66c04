"""Off-policy PPO: fresh rollouts plus replayed trajectories, advantages re-evaluated each update."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import struct
from collections import deque
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from ..nn import Adam, clip_grad_norm
from ..stats import EpisodeResult
from .network import PARAM_NAMES, PolicyParams, forward, init_policy
from .ppo import Batch, Trajectory, compute_gae, ppo_loss

log = logging.getLogger(__name__)

CURVE_COLUMNS = ("update", "frames", "mean_return", "policy_loss", "value_loss", "entropy")
_CKPT_MAGIC = b"MLCKPT1"
_CKPT_VERSION = 1


@dataclass
class PPOConfig:
    clip: float = 0.2
    gamma: float = 0.99
    lam: float = 0.95
    lr: float = 3e-4
    epochs: int = 4
    minibatch: int = 256
    n_on: int = 8
    n_off: int = 8
    buffer_capacity: int = 256
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    max_grad_norm: float = 0.5
    stale_log_ratio: float = 2.0
    hidden: int = 128
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.clip < 1.0:
            raise ValueError("clip must lie in (0, 1)")
        if not (0.0 <= self.gamma <= 1.0 and 0.0 <= self.lam <= 1.0):
            raise ValueError("gamma and lam must lie in [0, 1]")
        if self.n_on < 1:
            raise ValueError("n_on must be >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> "PPOConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


class ReplayBuffer:
    """FIFO store of whole trajectories."""

    def __init__(self, capacity: int):
        self.capacity = capacity
        self._items: deque = deque(maxlen=capacity)

    def __len__(self) -> int:
        return len(self._items)

    def push(self, trajectories: Sequence[Trajectory]) -> None:
        self._items.extend(trajectories)

    def sample(self, n: int, rng: np.random.Generator) -> list[Trajectory]:
        if n <= 0 or not self._items:
            return []
        idx = rng.choice(len(self._items), size=min(n, len(self._items)), replace=False)
        return [self._items[i] for i in sorted(idx)]


def sample_actions(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    u = rng.random(len(probs))
    cdf = np.cumsum(probs, axis=1)
    return np.minimum((u[:, None] > cdf).sum(axis=1), probs.shape[1] - 1)


def collect(envs, params: PolicyParams, rng: np.random.Generator) -> list[Trajectory]:
    """Run one episode in each env in lockstep with the current stochastic policy."""
    n = len(envs)
    obs = [env.reset(rng) for env in envs]
    buf = [{"x": [], "a": [], "r": [], "lp": []} for _ in range(n)]
    success = [False] * n
    active = list(range(n))
    while active:
        x = np.stack([obs[i] for i in active])
        probs, _, cache = forward(params, x)
        actions = sample_actions(probs, rng)
        logp = cache["log_probs"][np.arange(len(active)), actions]
        still = []
        for j, i in enumerate(active):
            buf[i]["x"].append(obs[i])
            buf[i]["a"].append(int(actions[j]))
            buf[i]["lp"].append(float(logp[j]))
            obs[i], event = envs[i].step(int(actions[j]))
            buf[i]["r"].append(event.reward)
            if event.done:
                success[i] = event.success
            else:
                still.append(i)
        active = still
    return [Trajectory(np.array(b["x"]), np.array(b["a"], dtype=np.intp), np.array(b["r"]),
                       np.array(b["lp"]), params.version, True, None, success[i])
            for i, b in enumerate(buf)]


def build_batch(trajectories: Sequence[Trajectory], params: PolicyParams, cfg: PPOConfig) -> Batch:
    """Advantages and returns from the current critic (stored values are never reused)."""
    inputs = np.concatenate([t.inputs for t in trajectories])
    _, values, _ = forward(params, inputs)
    advs, rets = [], []
    start = 0
    for t in trajectories:
        v = values[start:start + len(t)]
        start += len(t)
        if t.terminal:
            boot = 0.0
        else:
            _, boot, _ = forward(params, t.last_input)
        adv, ret = compute_gae(t.rewards, np.append(v, boot), cfg.gamma, cfg.lam)
        advs.append(adv)
        rets.append(ret)
    return Batch(inputs, np.concatenate([t.actions for t in trajectories]),
                 np.concatenate([t.behavior_log_probs for t in trajectories]),
                 np.concatenate(advs), np.concatenate(rets))


def mean_abs_log_ratio(t: Trajectory, params: PolicyParams) -> float:
    _, _, cache = forward(params, t.inputs)
    logp = cache["log_probs"][np.arange(len(t)), t.actions]
    return float(np.abs(logp - t.behavior_log_probs).mean())


@dataclass
class CurveRow:
    update: int
    frames: int
    mean_return: float
    policy_loss: float
    value_loss: float
    entropy: float


@dataclass
class Checkpoint:
    params: PolicyParams
    config: PPOConfig
    feature_ids: list
    frames: int = 0
    update: int = 0
    meta: dict = field(default_factory=dict)
    optimizer: Optional[dict] = None
    rng_state: Optional[dict] = None

    def save(self, path) -> None:
        arrays = {f"w.{k}": self.params.weights[k] for k in PARAM_NAMES}
        if self.optimizer:
            for k, v in self.optimizer["m"].items():
                arrays[f"m.{k}"] = v
            for k, v in self.optimizer["v"].items():
                arrays[f"v.{k}"] = v
        keys = sorted(arrays)
        header = json.dumps({
            "config": asdict(self.config), "feature_ids": list(self.feature_ids),
            "frames": self.frames, "update": self.update, "version": self.params.version,
            "meta": self.meta, "adam_t": self.optimizer["t"] if self.optimizer else None,
            "rng_state": self.rng_state,
            "arrays": [[k, list(arrays[k].shape)] for k in keys],
        }, sort_keys=True).encode()
        with open(path, "wb") as fh:
            fh.write(_CKPT_MAGIC + struct.pack("<II", _CKPT_VERSION, len(header)) + header)
            for k in keys:
                fh.write(np.ascontiguousarray(arrays[k], dtype="<f8").tobytes())

    @classmethod
    def load(cls, path) -> "Checkpoint":
        data = Path(path).read_bytes()
        m = len(_CKPT_MAGIC)
        if data[:m] != _CKPT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        version, n = struct.unpack_from("<II", data, m)
        if version != _CKPT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        header = json.loads(data[m + 8:m + 8 + n])
        offset = m + 8 + n
        arrays = {}
        for k, shape in header["arrays"]:
            count = int(np.prod(shape)) if shape else 1
            arrays[k] = np.frombuffer(data, dtype="<f8", count=count, offset=offset).reshape(shape).copy()
            offset += 8 * count
        params = PolicyParams({k[2:]: v for k, v in arrays.items() if k.startswith("w.")},
                              header["version"])
        opt = None
        if header["adam_t"] is not None:
            opt = {"t": header["adam_t"],
                   "m": {k[2:]: v for k, v in arrays.items() if k.startswith("m.")},
                   "v": {k[2:]: v for k, v in arrays.items() if k.startswith("v.")}}
        return cls(params, PPOConfig.from_dict(header["config"]), header["feature_ids"],
                   header["frames"], header["update"], header["meta"], opt, header["rng_state"])


class PPOTrainer:
    """Collect -> replay -> re-evaluate advantages -> clipped minibatch updates."""

    def __init__(self, env_factory: Callable[[int], object], config: PPOConfig,
                 feature_ids: Sequence[str] = (), meta: Optional[dict] = None,
                 checkpoint: Optional[Checkpoint] = None):
        self.config = config
        self.feature_ids = list(feature_ids)
        self.meta = dict(meta or {})
        self.envs = [env_factory(i) for i in range(config.n_on)]
        self.buffer = ReplayBuffer(config.buffer_capacity)
        self.optimizer = Adam(config.lr)
        self.rng = np.random.default_rng([config.seed, 0x5050])
        self.frames = 0
        self.update = 0
        self.curve: list[CurveRow] = []
        if checkpoint is None:
            self.params = init_policy(self.envs[0].input_dim, config.hidden, config.seed)
        else:
            self.params = checkpoint.params.copy()
            self.frames, self.update = checkpoint.frames, checkpoint.update
            if checkpoint.optimizer:
                self.optimizer.load_state(checkpoint.optimizer)
            if checkpoint.rng_state:
                self.rng.bit_generator.state = checkpoint.rng_state

    def checkpoint(self) -> Checkpoint:
        return Checkpoint(self.params.copy(), self.config, self.feature_ids, self.frames,
                          self.update, self.meta, self.optimizer.state(), self.rng.bit_generator.state)

    def step(self) -> CurveRow:
        cfg = self.config
        fresh = collect(self.envs, self.params, self.rng)
        replay = self.buffer.sample(cfg.n_off, self.rng)
        self.buffer.push(fresh)
        replay = [t for t in replay if mean_abs_log_ratio(t, self.params) <= cfg.stale_log_ratio]
        batch = build_batch(fresh + replay, self.params, cfg)

        stats = {"policy_loss": [], "value_loss": [], "entropy": []}
        n = len(batch)
        for _ in range(cfg.epochs):
            order = self.rng.permutation(n)
            # advantages are normalized over the whole update batch
            adv = batch.advantages
            norm_batch = Batch(batch.inputs, batch.actions, batch.behavior_log_probs,
                               (adv - adv.mean()) / (adv.std() + 1e-8) if n > 1 else adv, batch.returns)
            for start in range(0, n, cfg.minibatch):
                mb = norm_batch.subset(order[start:start + cfg.minibatch])
                _, info, grads = ppo_loss(mb, self.params, cfg.clip, cfg.value_coef,
                                          cfg.entropy_coef, normalize=False, with_grads=True)
                clip_grad_norm(grads, cfg.max_grad_norm)
                self.optimizer.step(self.params.weights, grads)
                for k in stats:
                    stats[k].append(info[k])
        self.params.version += 1
        self.update += 1
        self.frames += sum(len(t) for t in fresh)
        row = CurveRow(self.update, self.frames, float(np.mean([t.total_reward for t in fresh])),
                       float(np.mean(stats["policy_loss"])), float(np.mean(stats["value_loss"])),
                       float(np.mean(stats["entropy"])))
        self.curve.append(row)
        return row

    def run(self, budget: int, checkpoint_every: int = 0,
            on_checkpoint: Optional[Callable[[Checkpoint], None]] = None,
            on_update: Optional[Callable[["PPOTrainer", CurveRow], None]] = None,
            max_updates: Optional[int] = None) -> list[CurveRow]:
        if budget < self.config.n_on:
            raise ValueError(f"budget {budget} is smaller than one collection round")
        while self.frames < budget and (max_updates is None or self.update < max_updates):
            row = self.step()
            if on_update is not None:
                on_update(self, row)
            if on_checkpoint and checkpoint_every and self.update % checkpoint_every == 0:
                on_checkpoint(self.checkpoint())
            log.debug("update %d frames %d return %.3f", row.update, row.frames, row.mean_return)
        if on_checkpoint:
            on_checkpoint(self.checkpoint())
        return self.curve


def train(env_factory, feature_ids, config: PPOConfig, budget: int, **kwargs):
    """Train from scratch; returns (trainer, learning curve)."""
    trainer = PPOTrainer(env_factory, config, feature_ids, kwargs.pop("meta", None))
    curve = trainer.run(budget, **kwargs)
    return trainer, curve


def curve_csv(rows: Sequence[CurveRow]) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(CURVE_COLUMNS)
    for r in rows:
        w.writerow([r.update, r.frames, repr(r.mean_return), repr(r.policy_loss),
                    repr(r.value_loss), repr(r.entropy)])
    return out.getvalue()


def read_curve_csv(path) -> list[CurveRow]:
    with open(path, newline="") as fh:
        return [CurveRow(int(r["update"]), int(r["frames"]), float(r["mean_return"]),
                         float(r["policy_loss"]), float(r["value_loss"]), float(r["entropy"]))
                for r in csv.DictReader(fh)]


def greedy_action(params: PolicyParams, x: np.ndarray) -> int:
    probs, _, _ = forward(params, x)
    return int(np.argmax(probs))


def evaluate(params: Optional[PolicyParams], env, n_episodes: int, seed: int, n_buildings: int = 1,
             greedy: bool = True, seed_id: str = "0") -> list[EpisodeResult]:
    """Roll out ``n_episodes`` fixed episodes; ``params=None`` acts uniformly at random.

    Episode k always uses building ``k % n_buildings`` and start/goal drawn from
    ``seed``, so agents evaluated with the same seed face the same episodes.
    """
    results = []
    for k in range(n_episodes):
        ep_rng = np.random.default_rng([seed, k])
        act_rng = np.random.default_rng([seed, k, 1])
        x = env.reset(ep_rng, building_index=k % max(1, n_buildings))
        nav = getattr(env, "nav", None)
        geodesic = nav.shortest_path_length() if nav is not None else float("nan")
        trace = [tuple(nav.state.position)] if nav is not None else []
        total, collisions, path, steps, success = 0.0, 0, 0.0, 0, False
        while True:
            if params is None:
                a = int(act_rng.integers(3))
            else:
                probs, _, _ = forward(params, x)
                a = int(np.argmax(probs)) if greedy else int(sample_actions(probs[None], act_rng)[0])
            x, event = env.step(a)
            steps += 1
            total += event.reward
            collisions += int(event.collision)
            if nav is not None:
                pos = tuple(nav.state.position)
                path += math.dist(pos, trace[-1])
                trace.append(pos)
            if event.done:
                success = event.success
                break
        results.append(EpisodeResult(
            reward=total, success=bool(success), path_length=path, geodesic=geodesic,
            collisions=collisions, trace=trace, seed_id=seed_id,
            building_id=nav.spec.building_id if nav is not None else -1, steps=steps,
            task=nav.task if nav is not None else ""))
    return results
