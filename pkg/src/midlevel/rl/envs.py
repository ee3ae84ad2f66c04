"""Environments as seen by the trainer: ``reset(rng) -> input`` and ``step(a) -> (input, event)``."""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from ..featurebank import FeatureBank
from ..simulator import PLANNING, NavEnv, StepEvent, TaskConfig


class CorridorEnv:
    """Ten-cell corridor: start at cell 0, +1 on reaching the far end, small step cost.

    Actions: 0 moves left, 1 moves right, 2 stays. The observation is a one-hot
    of the current cell. Optimal return is ``1 - (n_cells - 2) * step_cost``.
    """

    def __init__(self, n_cells: int = 10, step_cost: float = 0.01, max_steps: int = 50):
        self.n_cells = n_cells
        self.step_cost = step_cost
        self.max_steps = max_steps
        self.input_dim = n_cells
        self.pos = 0
        self.t = 0

    @property
    def optimal_return(self) -> float:
        return 1.0 - (self.n_cells - 2) * self.step_cost

    def _obs(self):
        x = np.zeros(self.n_cells)
        x[self.pos] = 1.0
        return x

    def reset(self, rng=None, building_index=None):
        self.pos = 0
        self.t = 0
        return self._obs()

    def step(self, action: int):
        self.t += 1
        if action == 0:
            self.pos = max(0, self.pos - 1)
        elif action == 1:
            self.pos = min(self.n_cells - 1, self.pos + 1)
        success = self.pos == self.n_cells - 1
        reward = 1.0 if success else -self.step_cost
        done = success or self.t >= self.max_steps
        return self._obs(), StepEvent(reward=reward, done=done, success=success)


class FeatureNavEnv:
    """A NavEnv whose observations are encoded by frozen features plus the side channel."""

    def __init__(self, buildings, task: str, bank: FeatureBank, feature_ids: Sequence[str],
                 config: TaskConfig = TaskConfig(), reward_variant: str = "dense",
                 max_steps: Optional[int] = None, feature_rng_seed: int = 0):
        bank.require_frozen(feature_ids)
        self.nav = NavEnv(buildings, task, config, reward_variant, max_steps)
        self.bank = bank
        self.feature_ids = list(feature_ids)
        self.task = task
        self.side_scale = np.array([0.2, 1.0, 1.0]) if task == PLANNING else 1.0
        self._noise_rng = np.random.default_rng(feature_rng_seed) if bank.noise_std else None
        side = {PLANNING: 3, "exploration": config.bitmap_size**2}.get(task, 0)
        self.input_dim = bank.set_dim(self.feature_ids) + side
        self.last_obs = None

    def _input(self, obs):
        self.last_obs = obs
        feats = self.bank.encode_set(self.feature_ids, obs, self._noise_rng)
        if obs.side_channel.size:
            return np.concatenate([feats, obs.side_channel * self.side_scale])
        return feats

    def reset(self, rng, building_index=None):
        return self._input(self.nav.reset(rng, building_index))

    def step(self, action: int):
        obs, event = self.nav.step(action)
        return self._input(obs), event

    @property
    def state(self):
        return self.nav.state
