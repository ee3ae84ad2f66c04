"""Generalized advantage estimation and the clipped surrogate loss with exact gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .network import PolicyParams, backward, forward


@dataclass
class Trajectory:
    """One contiguous rollout. ``behavior_log_probs`` are frozen at collection time."""

    inputs: np.ndarray            # (T, n_in)
    actions: np.ndarray           # (T,)
    rewards: np.ndarray           # (T,)
    behavior_log_probs: np.ndarray
    behavior_version: int
    terminal: bool                # ended by the environment (bootstrap 0)
    last_input: Optional[np.ndarray] = None   # state after the final step, for truncated rollouts
    success: bool = False

    def __len__(self) -> int:
        return len(self.actions)

    @property
    def total_reward(self) -> float:
        return float(self.rewards.sum())


@dataclass
class Batch:
    inputs: np.ndarray
    actions: np.ndarray
    behavior_log_probs: np.ndarray
    advantages: np.ndarray
    returns: np.ndarray

    def __len__(self) -> int:
        return len(self.actions)

    def subset(self, idx) -> "Batch":
        return Batch(self.inputs[idx], self.actions[idx], self.behavior_log_probs[idx],
                     self.advantages[idx], self.returns[idx])


def compute_gae(rewards, values, gamma: float, lam: float):
    """Advantages and value targets for one trajectory.

    ``values`` has one more entry than ``rewards``: the last is the bootstrap
    value of the state after the final step (0 when the episode terminated).
    """
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    if values.shape[0] != rewards.shape[0] + 1:
        raise ValueError("values must have length len(rewards) + 1")
    deltas = rewards + gamma * values[1:] - values[:-1]
    adv = np.empty_like(deltas)
    acc = 0.0
    for t in range(len(deltas) - 1, -1, -1):
        acc = deltas[t] + gamma * lam * acc
        adv[t] = acc
    return adv, adv + values[:-1]


def ppo_loss(batch: Batch, params: PolicyParams, clip: float, value_coef: float = 0.5,
             entropy_coef: float = 0.01, normalize: bool = True, with_grads: bool = False):
    """Clipped-surrogate actor-critic loss.

    Returns ``(loss, info)``; with ``with_grads`` also the parameter gradients.
    ``info`` holds the policy/value/entropy terms and the importance ratios.
    """
    n = len(batch)
    adv = batch.advantages
    if normalize and n > 1:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    probs, values, cache = forward(params, batch.inputs)
    log_probs = cache["log_probs"]
    rows = np.arange(n)
    logp = log_probs[rows, batch.actions]
    ratio = np.exp(logp - batch.behavior_log_probs)
    clipped = np.clip(ratio, 1.0 - clip, 1.0 + clip)
    unclipped_term = ratio * adv
    clipped_term = clipped * adv
    surrogate = np.minimum(unclipped_term, clipped_term)
    policy_loss = -surrogate.mean()
    value_err = values - batch.returns
    value_loss = (value_err**2).mean()
    entropy_each = -(probs * log_probs).sum(axis=1)
    entropy = entropy_each.mean()
    loss = policy_loss + value_coef * value_loss - entropy_coef * entropy
    info = {"policy_loss": float(policy_loss), "value_loss": float(value_loss),
            "entropy": float(entropy), "ratio": ratio}
    if not with_grads:
        return float(loss), info

    # d(surrogate)/d(ratio) is A where the unclipped branch is active, else 0
    active = unclipped_term <= clipped_term
    dratio = np.where(active, adv, 0.0)
    onehot = np.zeros_like(probs)
    onehot[rows, batch.actions] = 1.0
    dlogits = -(dratio * ratio)[:, None] * (onehot - probs) / n
    dentropy = -probs * (log_probs + entropy_each[:, None])
    dlogits -= entropy_coef * dentropy / n
    dvalue = value_coef * 2.0 * value_err / n
    return float(loss), info, backward(params, cache, dlogits, dvalue)
