"""Fully connected networks with hand-written reverse mode, Adam and checkpoints."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

CHECKPOINT_FORMAT = "dtsync-ckpt/1"
ACTIVATIONS = ("relu", "tanh")
OUTPUTS = ("identity", "softplus", "logits")


def sigmoid(x):
    # split by sign so exp never overflows
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softplus(x):
    return np.logaddexp(0.0, x)


@dataclass
class NetworkParams:
    """Weights ``W_i`` of shape ``(in, out)`` and biases ``b_i`` of shape ``(out,)``."""

    layer_weights: list
    layer_biases: list
    activation: str = "relu"
    output_transform: str = "identity"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.output_transform not in OUTPUTS:
            raise ValueError(f"unknown output transform {self.output_transform!r}")
        if len(self.layer_weights) != len(self.layer_biases) or not self.layer_weights:
            raise ValueError("need one bias per weight matrix")
        for i, (W, b) in enumerate(zip(self.layer_weights, self.layer_biases)):
            if W.ndim != 2 or b.shape != (W.shape[1],):
                raise ValueError(f"layer {i}: bad shapes {W.shape}, {b.shape}")
            if i and W.shape[0] != self.layer_weights[i - 1].shape[1]:
                raise ValueError(f"layer {i}: input dim does not chain")

    @property
    def in_dim(self) -> int:
        return self.layer_weights[0].shape[0]

    @property
    def out_dim(self) -> int:
        return self.layer_weights[-1].shape[1]

    def arrays(self) -> list:
        """Parameter arrays in a fixed order (W0, b0, W1, b1, ...)."""
        out = []
        for W, b in zip(self.layer_weights, self.layer_biases):
            out += [W, b]
        return out

    def copy(self) -> "NetworkParams":
        return NetworkParams([W.copy() for W in self.layer_weights],
                             [b.copy() for b in self.layer_biases],
                             self.activation, self.output_transform)


def init_network(sizes, rng: np.random.Generator, activation="relu",
                 output_transform="identity", final_scale=1.0) -> NetworkParams:
    """Uniform fan-in initialization; ``final_scale`` shrinks the last layer."""
    Ws, bs = [], []
    for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        bound = 1.0 / np.sqrt(a)
        if i == len(sizes) - 2:
            bound *= final_scale
        Ws.append(rng.uniform(-bound, bound, (a, b)))
        bs.append(rng.uniform(-bound, bound, b))
    return NetworkParams(Ws, bs, activation, output_transform)


def _act(z, kind):
    return np.maximum(z, 0.0) if kind == "relu" else np.tanh(z)


def _act_grad(z, h, kind):
    # relu'(0) = 0 by convention
    return (z > 0.0).astype(np.float64) if kind == "relu" else 1.0 - h * h


def forward(params: NetworkParams, x):
    """Evaluate on a batch ``(B, in)`` (or a single vector); returns ``(y, cache)``."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    h = x[None, :] if single else x
    if h.shape[1] != params.in_dim:
        raise ValueError(f"input dim {h.shape[1]} != {params.in_dim}")
    inputs, pre = [], []
    last = len(params.layer_weights) - 1
    for i, (W, b) in enumerate(zip(params.layer_weights, params.layer_biases)):
        inputs.append(h)
        z = h @ W + b
        pre.append(z)
        h = z if i == last else _act(z, params.activation)
    if params.output_transform == "softplus":
        h = softplus(h)
    cache = (inputs, pre, single)
    return (h[0] if single else h), cache


def backward(params: NetworkParams, cache, grad_out):
    """Reverse pass; returns ``(grads, grad_input)`` with grads ordered like ``arrays()``."""
    inputs, pre, single = cache
    g = np.asarray(grad_out, dtype=np.float64)
    if single:
        g = g[None, :]
    if g.shape != pre[-1].shape:
        raise ValueError(f"upstream gradient shape {g.shape} != {pre[-1].shape}")
    if params.output_transform == "softplus":
        g = g * sigmoid(pre[-1])
    grads = [None] * (2 * len(params.layer_weights))
    for i in range(len(params.layer_weights) - 1, -1, -1):
        if i != len(params.layer_weights) - 1:
            h = inputs[i + 1]
            g = g * _act_grad(pre[i], h, params.activation)
        grads[2 * i] = inputs[i].T @ g
        grads[2 * i + 1] = g.sum(axis=0)
        g = g @ params.layer_weights[i].T
    return grads, (g[0] if single else g)


@dataclass
class OptimizerState:
    first_moment: list
    second_moment: list
    learning_rate: float
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_arrays(cls, arrays, lr: float) -> "OptimizerState":
        if lr <= 0:
            raise ValueError("learning rate must be positive")
        return cls([np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays], lr)


def adam_update(arrays: list, grads: list, opt: OptimizerState, lr: float | None = None,
                ascent: bool = False) -> None:
    """In-place bias-corrected Adam step; ``ascent`` climbs the gradient instead."""
    if len(arrays) != len(grads):
        raise ValueError("one gradient per parameter array required")
    for i, (a, g) in enumerate(zip(arrays, grads)):
        if a.shape != np.shape(g):
            raise ValueError(f"gradient {i}: shape {np.shape(g)} != {a.shape}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient in parameter {i}; update rejected")
    lr = opt.learning_rate if lr is None else lr
    opt.step_count += 1
    t = opt.step_count
    c1 = 1.0 - opt.beta1 ** t
    c2 = 1.0 - opt.beta2 ** t
    sign = 1.0 if ascent else -1.0
    for a, g, m, v in zip(arrays, grads, opt.first_moment, opt.second_moment):
        m *= opt.beta1
        m += (1.0 - opt.beta1) * g
        v *= opt.beta2
        v += (1.0 - opt.beta2) * g * g
        a += sign * lr * (m / c1) / (np.sqrt(v / c2) + opt.eps)


def polyak_blend(target: NetworkParams, online: NetworkParams, rho: float) -> None:
    """``target <- rho * online + (1 - rho) * target`` in place."""
    if not 0.0 <= rho <= 1.0:
        raise ValueError("rho must lie in [0, 1]")
    for t, o in zip(target.arrays(), online.arrays()):
        if t.shape != o.shape:
            raise ValueError("target and online shapes differ")
        t *= 1.0 - rho
        t += rho * o


# ----------------------------------------------------------------------
# checkpoints

@dataclass
class Checkpoint:
    arrays: dict
    meta: dict = field(default_factory=dict)


def network_to_arrays(prefix: str, params: NetworkParams) -> dict:
    out = {}
    for i, (W, b) in enumerate(zip(params.layer_weights, params.layer_biases)):
        out[f"{prefix}.W{i}"] = W
        out[f"{prefix}.b{i}"] = b
    return out


def network_from_arrays(prefix: str, arrays: dict, activation="relu",
                        output_transform="identity") -> NetworkParams:
    Ws, bs = [], []
    i = 0
    while f"{prefix}.W{i}" in arrays:
        Ws.append(np.array(arrays[f"{prefix}.W{i}"], dtype=np.float64))
        bs.append(np.array(arrays[f"{prefix}.b{i}"], dtype=np.float64))
        i += 1
    if not Ws:
        raise KeyError(f"no layers under prefix {prefix!r}")
    return NetworkParams(Ws, bs, activation, output_transform)


def save_checkpoint(path, arrays: dict, meta: dict | None = None) -> None:
    """JSON file of named arrays, each stored with its shape; floats round-trip exactly."""
    doc = {
        "format": CHECKPOINT_FORMAT,
        "meta": meta or {},
        "arrays": {k: {"shape": list(np.shape(v)), "data": np.ravel(v).astype(float).tolist()}
                   for k, v in sorted(arrays.items())},
    }
    Path(path).write_text(json.dumps(doc), encoding="utf-8")


def load_checkpoint(path) -> Checkpoint:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"unsupported checkpoint format {doc.get('format')!r}")
    arrays = {}
    for k, spec in doc["arrays"].items():
        a = np.array(spec["data"], dtype=np.float64)
        arrays[k] = a.reshape(spec["shape"])
    return Checkpoint(arrays, doc.get("meta", {}))
