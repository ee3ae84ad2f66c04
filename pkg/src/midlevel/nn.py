"""Dense layers with hand-written backprop and an Adam optimizer."""

from __future__ import annotations

import numpy as np
from numba import njit

ACTIVATIONS = ("tanh", "linear")


def init_dense(rng: np.random.Generator, n_in: int, n_out: int, gain: float = 1.0):
    """Orthogonal weight init, zero bias."""
    a = rng.standard_normal((max(n_in, n_out), min(n_in, n_out)))
    q, r = np.linalg.qr(a)
    q *= np.sign(np.diag(r))
    w = q if n_in >= n_out else q.T
    return gain * w[:n_in, :n_out].copy(), np.zeros(n_out)


@njit(cache=True, fastmath=True)
def _rowwise_matmul(x, w):
    n, k = x.shape
    m = w.shape[1]
    out = np.zeros((n, m))
    for i in range(n):
        row = out[i]
        for p in range(k):
            xv = x[i, p]
            wp = w[p]
            for j in range(m):
                row[j] += xv * wp[j]
    return out


def stable_matmul(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """``x @ w`` whose row i depends only on x[i], never on the batch around it.

    BLAS picks different kernels per batch shape, so the same input can round
    differently alone and inside a batch. Non-float64 inputs fall back to ``@``.
    """
    if x.dtype != np.float64 or w.dtype != np.float64:
        return x @ w
    return _rowwise_matmul(np.ascontiguousarray(x), np.ascontiguousarray(w))


def _act(name, z):
    return np.tanh(z) if name == "tanh" else z


def _dact(name, a, grad):
    return grad * (1.0 - a * a) if name == "tanh" else grad


class MLP:
    """Feed-forward stack; parameters live in ``params`` as W0, b0, W1, b1, ..."""

    def __init__(self, sizes, activations, rng=None, gains=None, params=None):
        if len(activations) != len(sizes) - 1:
            raise ValueError("need one activation per layer")
        for a in activations:
            if a not in ACTIVATIONS:
                raise ValueError(f"unknown activation {a!r}")
        self.sizes = tuple(int(s) for s in sizes)
        self.activations = tuple(activations)
        if params is None:
            rng = rng if rng is not None else np.random.default_rng(0)
            gains = gains or [np.sqrt(2.0)] * (len(sizes) - 2) + [1.0]
            params = {}
            for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
                params[f"W{i}"], params[f"b{i}"] = init_dense(rng, n_in, n_out, gains[i])
        self.params = params

    @property
    def n_layers(self) -> int:
        return len(self.activations)

    def forward(self, x, upto=None):
        """Return the output of layer ``upto`` (default last) and the activation cache."""
        upto = self.n_layers if upto is None else upto
        x = np.asarray(x)
        acts = [x if x.dtype.kind == "f" else x.astype(float)]
        for i in range(upto):
            z = acts[-1] @ self.params[f"W{i}"] + self.params[f"b{i}"]
            acts.append(_act(self.activations[i], z))
        return acts[-1], acts

    def backward(self, dout, acts):
        """Gradients of a scalar loss given dL/d(output); returns (grads, dL/dx)."""
        grads = {}
        g = dout
        for i in reversed(range(len(acts) - 1)):
            g = _dact(self.activations[i], acts[i + 1], g)
            grads[f"W{i}"] = acts[i].T @ g
            grads[f"b{i}"] = g.sum(axis=0)
            g = g @ self.params[f"W{i}"].T
        return grads, g


class Adam:
    def __init__(self, lr=3e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: dict = {}
        self.v: dict = {}

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for k, g in grads.items():
            m = self.m.get(k)
            if m is None:
                m = self.m[k] = np.zeros_like(g)
                self.v[k] = np.zeros_like(g)
            v = self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            if self.lr:
                params[k] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state(self) -> dict:
        return {"t": self.t, "m": self.m, "v": self.v}

    def load_state(self, state: dict) -> None:
        self.t = int(state["t"])
        self.m = {k: np.array(v) for k, v in state["m"].items()}
        self.v = {k: np.array(v) for k, v in state["v"].items()}


def clip_grad_norm(grads: dict, max_norm: float) -> float:
    norm = float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))
    if max_norm and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for g in grads.values():
            g *= scale
    return norm
