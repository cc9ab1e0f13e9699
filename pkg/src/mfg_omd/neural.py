"""Small ReLU MLP with hand-written backprop and Adam, plus the softmax policy head."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

LOG_CLIP = 1e-6
PARAMS_MAGIC = "mfg-omd-params v1"


class MlpParams:
    """Layer weights ``W[i]`` of shape ``(dims[i], dims[i+1])`` and biases ``b[i]``.

    All parameters live in one flat vector; ``weights`` and ``biases`` are views into it.
    """

    def __init__(self, dims, flat: np.ndarray | None = None):
        self.dims = [int(d) for d in dims]
        sizes = [(a * b, b) for a, b in zip(self.dims[:-1], self.dims[1:])]
        total = sum(w + b for w, b in sizes)
        if flat is None:
            flat = np.zeros(total)
        flat = np.asarray(flat, dtype=float)
        if flat.shape != (total,):
            raise ValueError(f"flat parameter vector has shape {flat.shape}, expected ({total},)")
        self.flat = flat
        self.weights, self.biases = [], []
        offset = 0
        for (fan_in, fan_out), (w_size, b_size) in zip(zip(self.dims[:-1], self.dims[1:]), sizes):
            self.weights.append(flat[offset:offset + w_size].reshape(fan_in, fan_out))
            offset += w_size
            self.biases.append(flat[offset:offset + b_size])
            offset += b_size

    @classmethod
    def from_arrays(cls, weights, biases) -> "MlpParams":
        dims = [weights[0].shape[0]] + [w.shape[1] for w in weights]
        flat = np.concatenate([np.concatenate([np.ravel(w), np.ravel(b)]) for w, b in zip(weights, biases)])
        return cls(dims, flat)

    @property
    def n_params(self) -> int:
        return int(self.flat.size)

    def arrays(self) -> list:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> "MlpParams":
        return MlpParams(self.dims, self.flat.copy())

    def equals(self, other: "MlpParams") -> bool:
        return self.dims == other.dims and np.array_equal(self.flat, other.flat)


def init_mlp(dims, rng: np.random.Generator) -> MlpParams:
    """He-uniform weights, zero biases."""
    dims = [int(d) for d in dims]
    if len(dims) < 2 or min(dims) < 1:
        raise ValueError(f"invalid layer dimensions {dims}")
    params = MlpParams(dims)
    for w in params.weights:
        limit = np.sqrt(6.0 / w.shape[0])
        w[...] = rng.uniform(-limit, limit, size=w.shape)
    return params


def mlp_forward(params: MlpParams, obs: np.ndarray) -> np.ndarray:
    """Q-values for one observation ``(dim,)`` or a batch ``(B, dim)``."""
    h = np.asarray(obs, dtype=float)
    if h.shape[-1] != params.weights[0].shape[0]:
        raise ValueError(f"observation length {h.shape[-1]} != input dim {params.weights[0].shape[0]}")
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w + b
        if i < last:
            h = np.maximum(h, 0.0)
    return h


def mlp_backward(params: MlpParams, obs: np.ndarray, actions: np.ndarray, targets: np.ndarray):
    """Gradient of ``mean_i (Q(obs_i)[a_i] - T_i)^2`` and the loss itself."""
    x = np.asarray(obs, dtype=float)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("backward pass needs a non-empty 2D batch")
    if x.shape[1] != params.weights[0].shape[0]:
        raise ValueError(f"observation length {x.shape[1]} != input dim {params.weights[0].shape[0]}")
    actions = np.asarray(actions, dtype=int)
    targets = np.asarray(targets, dtype=float)
    batch = x.shape[0]
    acts = [x]
    last = len(params.weights) - 1
    h = x
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w + b
        if i < last:
            h = np.maximum(h, 0.0)
        acts.append(h)
    rows = np.arange(batch)
    resid = acts[-1][rows, actions] - targets
    loss = float(np.mean(resid**2))
    delta = np.zeros_like(acts[-1])
    delta[rows, actions] = 2.0 * resid / batch
    grads = MlpParams(params.dims)
    for i in range(last, -1, -1):
        np.matmul(acts[i].T, delta, out=grads.weights[i])
        grads.biases[i][...] = delta.sum(axis=0)
        if i > 0:
            # relu subgradient is 0 at 0
            delta = (delta @ params.weights[i].T) * (acts[i] > 0)
    return grads, loss


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: MlpParams, **kwargs) -> "AdamState":
        return cls(np.zeros(params.n_params), np.zeros(params.n_params), **kwargs)


def adam_step(params: MlpParams, grads: MlpParams, state: AdamState) -> tuple[MlpParams, AdamState]:
    """Bias-corrected Adam; returns new parameter and state objects, inputs are untouched."""
    if grads.dims != params.dims or state.m.shape != params.flat.shape:
        raise ValueError("gradient/optimizer shapes do not match parameters")
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    g = grads.flat
    m = b1 * state.m + (1.0 - b1) * g
    v = b2 * state.v + (1.0 - b2) * (g * g)
    m_hat = m / (1.0 - b1**t)
    v_hat = v / (1.0 - b2**t)
    flat = params.flat - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return MlpParams(params.dims, flat), AdamState(m, v, t, state.lr, b1, b2, state.eps)


def softmax_policy(qvals: np.ndarray, tau: float) -> np.ndarray:
    z = np.asarray(qvals, dtype=float) / tau
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def clipped_log(probs: np.ndarray) -> np.ndarray:
    return np.log(np.maximum(probs, LOG_CLIP))


def clipped_log_prob(pi: np.ndarray, a: int) -> float:
    return float(np.log(max(pi[a], LOG_CLIP)))


def hard_target_sync(online: MlpParams) -> MlpParams:
    return online.copy()


def save_params(path, networks: list, meta: dict | None = None) -> Path:
    """Text checkpoint: magic line, one JSON header line, then one line per array.

    Arrays are written row-major as ``%.17g`` so a reload is bit-exact. The header
    carries ``dims`` per network plus any caller metadata (seed, iteration, ...).
    """
    path = Path(path)
    header = dict(meta or {})
    header["dims"] = [net.dims for net in networks]
    lines = [PARAMS_MAGIC, json.dumps(header, sort_keys=True)]
    for net in networks:
        for arr in net.arrays():
            lines.append(" ".join("%.17g" % v for v in arr.ravel()))
    path.write_text("\n".join(lines) + "\n")
    return path


def load_params(path) -> tuple[list, dict]:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != PARAMS_MAGIC:
        raise ValueError(f"{path} is not an mfg-omd parameter file")
    header = json.loads(lines[1])
    networks, cursor = [], 2
    for dims in header["dims"]:
        n_arrays = 2 * (len(dims) - 1)
        flat = np.array(" ".join(lines[cursor:cursor + n_arrays]).split(), dtype=float)
        networks.append(MlpParams(dims, flat))
        cursor += n_arrays
    return networks, header


@dataclass
class Trainer:
    """Online network, its optimizer state and a loss log; the single writer of ``params``."""

    params: MlpParams
    adam: AdamState
    losses: list = field(default_factory=list)

    def step(self, obs, actions, targets) -> float:
        grads, loss = mlp_backward(self.params, obs, actions, targets)
        self.params, self.adam = adam_step(self.params, grads, self.adam)
        self.losses.append(loss)
        return loss
