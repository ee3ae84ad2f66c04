"""Frozen observation encoders: analytic mid-level features, learned compressors, baselines."""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .nn import MLP, Adam
from .simulator import Observation
from .simulator.world import CLASS_NAMES

FAMILIES = {
    "depth": "geometric",
    "edges3d": "geometric",
    "normals": "geometric",
    "curvature": "geometric",
    "semantic_seg": "semantic",
    "object_class": "semantic",
    "edges2d": "texture",
    "autoencoder": "texture",
    "vae_light": "texture",
    "pixels": "baseline",
    "random_proj": "baseline",
    "blind": "baseline",
}
FEATURES = tuple(FAMILIES)
LEARNED = ("autoencoder", "vae_light")
DEFAULT_DIM = 64

# semantic_seg channels: nothing hit, wall (doors count as wall), furniture, crate
_SEG_CHANNEL = np.array([0, 1, 1, 2, 3])
_EYE4 = np.eye(4)

_ENC_MAGIC = b"MLENC1"
_ENC_VERSION = 1


class FrozenEncoderError(RuntimeError):
    pass


def raw_input(obs: Observation, max_range: float = 10.0) -> np.ndarray:
    """Concatenated, roughly unit-scaled strips fed to the learned encoders."""
    return np.concatenate([obs.depth_strip / max_range, obs.texture_strip,
                           np.asarray(obs.semantic_strip, dtype=float) / (len(CLASS_NAMES) - 1)])


def _resample(v: np.ndarray, n: int) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.size == n:
        return v.copy()
    return np.interp(np.linspace(0, v.size - 1, n), np.arange(v.size), v)


def _pool(v: np.ndarray, bins: int) -> np.ndarray:
    if v.shape[0] % bins == 0:
        return v.reshape(bins, v.shape[0] // bins, *v.shape[1:]).mean(axis=1)
    edges = np.linspace(0, v.shape[0], bins + 1).round().astype(int)
    return np.stack([v[a:b].mean(axis=0) for a, b in zip(edges[:-1], edges[1:])])


@dataclass
class EncoderWeights:
    """Parameters of a learned encoder; immutable once frozen."""

    name: str
    sizes: dict
    activations: dict
    params: dict
    frozen: bool = False
    history: list = field(default_factory=list)

    def freeze(self) -> "EncoderWeights":
        for arr in self.params.values():
            arr.flags.writeable = False
        self.frozen = True
        return self

    def checksum(self) -> str:
        h = hashlib.sha256(self.name.encode())
        for k in sorted(self.params):
            h.update(k.encode())
            h.update(np.ascontiguousarray(self.params[k], dtype="<f8").tobytes())
        return h.hexdigest()

    def network(self, part: str) -> MLP:
        prefix = part + "."
        params = {k[len(prefix):]: v for k, v in self.params.items() if k.startswith(prefix)}
        return MLP(self.sizes[part], self.activations[part], params=params)

    def encode(self, x: np.ndarray) -> np.ndarray:
        out, _ = self.network("enc").forward(x)
        return out

    def reconstruct(self, x: np.ndarray) -> np.ndarray:
        out, _ = self.network("dec").forward(self.encode(x))
        return out

    def save(self, path) -> None:
        keys = sorted(self.params)
        header = json.dumps({
            "name": self.name, "sizes": self.sizes, "activations": self.activations,
            "frozen": self.frozen, "arrays": [[k, list(self.params[k].shape)] for k in keys],
        }, sort_keys=True).encode()
        with open(path, "wb") as fh:
            fh.write(_ENC_MAGIC + struct.pack("<II", _ENC_VERSION, len(header)) + header)
            for k in keys:
                fh.write(np.ascontiguousarray(self.params[k], dtype="<f8").tobytes())

    @classmethod
    def load(cls, path) -> "EncoderWeights":
        data = Path(path).read_bytes()
        if data[:6] != _ENC_MAGIC:
            raise ValueError(f"{path}: not an encoder weights file")
        version, n = struct.unpack_from("<II", data, 6)
        if version != _ENC_VERSION:
            raise ValueError(f"{path}: unsupported encoder format version {version}")
        header = json.loads(data[14:14 + n])
        offset = 14 + n
        params = {}
        for k, shape in header["arrays"]:
            count = int(np.prod(shape))
            params[k] = np.frombuffer(data, dtype="<f8", count=count, offset=offset).reshape(shape).copy()
            offset += 8 * count
        sizes = {k: tuple(v) for k, v in header["sizes"].items()}
        acts = {k: tuple(v) for k, v in header["activations"].items()}
        weights = cls(header["name"], sizes, acts, params)
        return weights.freeze() if header["frozen"] else weights


def random_projection(n_in: int, dim: int = DEFAULT_DIM, seed: int = 0) -> EncoderWeights:
    """Randomly initialised, immediately frozen nonlinear projection."""
    net = MLP([n_in, 128, dim], ["tanh", "tanh"], rng=np.random.default_rng([seed, 0x5250]))
    return EncoderWeights("random_proj", {"enc": net.sizes}, {"enc": net.activations},
                          {f"enc.{k}": v for k, v in net.params.items()}).freeze()


def pretrain_autoencoder(corpus: Sequence[np.ndarray], epochs: int = 30, seed: int = 0,
                         dim: int = DEFAULT_DIM, hidden: int = 128, bottleneck_noise: float = 0.0,
                         lr: float = 1e-3, batch_size: int = 128, name: str = "autoencoder",
                         freeze: bool = True) -> EncoderWeights:
    """Train an encoder/decoder MLP to reconstruct ``corpus`` rows (see ``raw_input``).

    ``bottleneck_noise`` > 0 perturbs the code during training (the vae_light
    variant). ``history`` holds the full-corpus reconstruction MSE before
    training and after each epoch.
    """
    x = np.asarray(corpus, dtype=float)
    if x.ndim != 2 or len(x) == 0:
        raise ValueError("empty corpus")
    rng = np.random.default_rng([seed, 0x4145])
    n_in = x.shape[1]
    enc = MLP([n_in, hidden, dim], ["tanh", "tanh"], rng=rng, gains=[1.0, 1.0])
    dec = MLP([dim, hidden, n_in], ["tanh", "linear"], rng=rng, gains=[1.0, 1.0])
    opt = Adam(lr)

    def mse():
        h, _ = enc.forward(x)
        y, _ = dec.forward(h)
        return float(((y - x) ** 2).mean())

    history = [mse()]
    for _ in range(epochs):
        order = rng.permutation(len(x))
        for start in range(0, len(x), batch_size):
            xb = x[order[start:start + batch_size]]
            h, ca = enc.forward(xb)
            if bottleneck_noise:
                h = h + bottleneck_noise * rng.standard_normal(h.shape)
            y, cd = dec.forward(h)
            dy = 2.0 * (y - xb) / y.size
            gd, dh = dec.backward(dy, cd)
            ge, _ = enc.backward(dh, ca)
            grads = {**{f"enc.{k}": v for k, v in ge.items()}, **{f"dec.{k}": v for k, v in gd.items()}}
            params = {**{f"enc.{k}": v for k, v in enc.params.items()},
                      **{f"dec.{k}": v for k, v in dec.params.items()}}
            opt.step(params, grads)
        history.append(mse())
    params = {**{f"enc.{k}": v for k, v in enc.params.items()},
              **{f"dec.{k}": v for k, v in dec.params.items()}}
    weights = EncoderWeights(name, {"enc": enc.sizes, "dec": dec.sizes},
                             {"enc": enc.activations, "dec": dec.activations}, params, history=history)
    return weights.freeze() if freeze else weights


class FeatureBank:
    """Maps feature ids to frozen transforms of an Observation."""

    def __init__(self, weights: Optional[dict] = None, dim: int = DEFAULT_DIM,
                 max_range: float = 10.0, width: int = 64, noise_std: float = 0.0, seed: int = 0):
        self.dim = dim
        self.max_range = max_range
        self.noise_std = noise_std
        self.weights = dict(weights or {})
        if "random_proj" not in self.weights:
            self.weights["random_proj"] = random_projection(3 * width, dim, seed)

    def require_frozen(self, feature_ids: Sequence[str]) -> None:
        for f in feature_ids:
            if f not in FAMILIES:
                raise KeyError(f"unknown feature {f!r}")
            if f in LEARNED or f == "random_proj":
                w = self.weights.get(f)
                if w is None:
                    raise FrozenEncoderError(f"feature {f!r} has no pretrained weights")
                if not w.frozen:
                    raise FrozenEncoderError(f"encoder {f!r} is not frozen")

    def checksum(self) -> str:
        return hashlib.sha256("".join(self.weights[k].checksum() for k in sorted(self.weights))
                              .encode()).hexdigest()

    def encode(self, feature_id: str, obs: Observation, rng: Optional[np.random.Generator] = None) -> np.ndarray:
        out = self._encode(feature_id, obs)
        if self.noise_std and feature_id != "blind":
            rng = rng if rng is not None else np.random.default_rng()
            out = out + self.noise_std * rng.standard_normal(out.shape)
        return out

    def _encode(self, f: str, obs: Observation) -> np.ndarray:
        d = self.dim
        depth = obs.depth_strip / self.max_range
        if f == "depth":
            return _resample(depth, d)
        if f == "edges3d":
            return _resample(np.diff(depth, append=depth[-1]), d)
        if f == "curvature":
            return _resample(np.pad(np.diff(depth, n=2), 1), d)
        if f == "normals":
            return self._normals(obs.depth_strip)
        if f == "edges2d":
            tex = obs.texture_strip
            return _resample(np.diff(tex, append=tex[-1]), d)
        if f == "pixels":
            return _resample(obs.texture_strip, d)
        if f == "semantic_seg":
            onehot = _EYE4[_SEG_CHANNEL[obs.semantic_strip]]
            return _resample(_pool(onehot, d // 4).ravel(), d)
        if f == "object_class":
            counts = np.bincount(np.asarray(obs.semantic_strip), minlength=len(CLASS_NAMES))
            frac = counts / counts.sum()
            out = np.zeros(d)
            vec = np.concatenate([(counts > 0).astype(float), frac])
            out[:min(d, vec.size)] = vec[:d]
            return out
        if f == "blind":
            return np.zeros(d)
        if f in LEARNED or f == "random_proj":
            w = self.weights.get(f)
            if w is None:
                raise FrozenEncoderError(f"feature {f!r} has no pretrained weights")
            return _resample(w.encode(raw_input(obs, self.max_range)), d)
        raise KeyError(f"unknown feature {f!r}")

    def _normals(self, depth: np.ndarray) -> np.ndarray:
        n = depth.size
        offsets = np.deg2rad((n // 2 - np.arange(n)) * (90.0 / n))
        px, py = depth * np.cos(offsets), depth * np.sin(offsets)
        tx = np.empty(n)
        ty = np.empty(n)
        tx[1:-1], ty[1:-1] = px[2:] - px[:-2], py[2:] - py[:-2]
        tx[0], ty[0] = px[1] - px[0], py[1] - py[0]
        tx[-1], ty[-1] = px[-1] - px[-2], py[-1] - py[-2]
        angle = np.arctan2(ty, tx)
        pooled = _pool(np.stack([np.cos(2 * angle), np.sin(2 * angle)], axis=1), self.dim // 2)
        return _resample(pooled.ravel(), self.dim)

    def encode_set(self, feature_ids: Sequence[str], obs: Observation,
                   rng: Optional[np.random.Generator] = None) -> np.ndarray:
        """Concatenate the encodings of ``feature_ids`` in order."""
        if not feature_ids:
            raise ValueError("feature set must be non-empty")
        if len(set(feature_ids)) != len(feature_ids):
            raise ValueError(f"duplicate feature ids in {list(feature_ids)}")
        return np.concatenate([self.encode(f, obs, rng) for f in feature_ids])

    def set_dim(self, feature_ids: Sequence[str]) -> int:
        return self.dim * len(feature_ids)


_DEFAULT_BANK: Optional[FeatureBank] = None


def encode(feature_id: str, obs: Observation, bank: Optional[FeatureBank] = None) -> np.ndarray:
    global _DEFAULT_BANK
    if bank is None:
        if _DEFAULT_BANK is None:
            _DEFAULT_BANK = FeatureBank()
        bank = _DEFAULT_BANK
    return bank.encode(feature_id, obs)


def catalog(dim: int = DEFAULT_DIM) -> list[tuple[str, str, int]]:
    return [(f, FAMILIES[f], dim) for f in FEATURES]


def random_walk_corpus(buildings, n: int, seed: int = 0, task: str = "exploration") -> list[np.ndarray]:
    """Raw encoder inputs gathered by uniformly random actions in ``buildings``."""
    from .simulator import NavEnv

    env = NavEnv(buildings, task)
    rng = np.random.default_rng([seed, 0x5257])
    obs = env.reset(rng)
    out = []
    while len(out) < n:
        out.append(raw_input(obs))
        obs, event = env.step(int(rng.integers(3)))
        if event.done:
            obs = env.reset(rng)
    return out


__all__ = [
    "FAMILIES", "FEATURES", "LEARNED", "EncoderWeights", "FeatureBank", "FrozenEncoderError",
    "catalog", "encode", "pretrain_autoencoder", "random_projection", "random_walk_corpus", "raw_input",
]
