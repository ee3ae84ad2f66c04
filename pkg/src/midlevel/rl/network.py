"""Actor-critic MLP: shared tanh trunk, softmax policy head, scalar value head."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..nn import init_dense, stable_matmul

N_ACTIONS = 3
PARAM_NAMES = ("W0", "b0", "W1", "b1", "Wpi", "bpi", "Wv", "bv")


@dataclass
class PolicyParams:
    weights: dict
    version: int = 0
    n_in: int = field(init=False)
    hidden: int = field(init=False)

    def __post_init__(self):
        self.n_in, self.hidden = self.weights["W0"].shape

    def copy(self) -> "PolicyParams":
        return PolicyParams({k: v.copy() for k, v in self.weights.items()}, self.version)

    def astype(self, dtype) -> "PolicyParams":
        return PolicyParams({k: v.astype(dtype) for k, v in self.weights.items()}, self.version)


def init_policy(n_in: int, hidden: int = 128, seed: int = 0, n_actions: int = N_ACTIONS) -> PolicyParams:
    rng = np.random.default_rng([seed, 0x504F])
    w = {}
    w["W0"], w["b0"] = init_dense(rng, n_in, hidden, np.sqrt(2))
    w["W1"], w["b1"] = init_dense(rng, hidden, hidden, np.sqrt(2))
    w["Wpi"], w["bpi"] = init_dense(rng, hidden, n_actions, 0.01)
    w["Wv"], w["bv"] = init_dense(rng, hidden, 1, 1.0)
    return PolicyParams(w)


def forward(params: PolicyParams, x: np.ndarray):
    """Return (action_probs, value, cache) for a batch of inputs (or a single vector)."""
    w = params.weights
    x = np.asarray(x)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.shape[1] != params.n_in:
        raise ValueError(f"input dim {x.shape[1]} != policy input dim {params.n_in}")
    h0 = np.tanh(stable_matmul(x, w["W0"]) + w["b0"])
    h1 = np.tanh(stable_matmul(h0, w["W1"]) + w["b1"])
    logits = stable_matmul(h1, w["Wpi"]) + w["bpi"]
    value = (stable_matmul(h1, w["Wv"]) + w["bv"])[:, 0]
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    probs = e / e.sum(axis=1, keepdims=True)
    log_probs = z - np.log(e.sum(axis=1, keepdims=True))
    cache = {"x": x, "h0": h0, "h1": h1, "probs": probs, "log_probs": log_probs}
    if single:
        return probs[0], value[0], cache
    return probs, value, cache


def backward(params: PolicyParams, cache: dict, dlogits: np.ndarray, dvalue: np.ndarray) -> dict:
    """Exact gradients of a scalar loss given its derivatives w.r.t. logits and values."""
    w = params.weights
    h0, h1 = cache["h0"], cache["h1"]
    dvalue = np.asarray(dvalue).reshape(-1, 1)
    grads = {
        "Wpi": h1.T @ dlogits,
        "bpi": dlogits.sum(axis=0),
        "Wv": h1.T @ dvalue,
        "bv": dvalue.sum(axis=0),
    }
    dh1 = dlogits @ w["Wpi"].T + dvalue @ w["Wv"].T
    dz1 = dh1 * (1.0 - h1 * h1)
    grads["W1"] = h0.T @ dz1
    grads["b1"] = dz1.sum(axis=0)
    dz0 = (dz1 @ w["W1"].T) * (1.0 - h0 * h0)
    grads["W0"] = cache["x"].T @ dz0
    grads["b0"] = dz0.sum(axis=0)
    return grads
