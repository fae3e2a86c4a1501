"""Tiny tanh MLP with hand-written backpropagation and AdamW.

The network plays every model role in an unlearning experiment: the
original model, the retrained gold-standard model and the unlearned student.
Weights are stored as ``(fan_in, fan_out)`` matrices so that a batch ``x`` of
shape ``(n, fan_in)`` maps to ``x @ W + b``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import InvalidInputError, NonFiniteError
from .files import atomic_write_text

CHECKPOINT_FORMAT = "lotus-lab/tinynet"
CHECKPOINT_VERSION = 1


@dataclass
class TinyNet:
    layer_dims: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = "tanh"
    seed: int | None = None

    def __post_init__(self):
        if len(self.layer_dims) < 2 or any(d < 1 for d in self.layer_dims):
            raise InvalidInputError(f"bad layer_dims {self.layer_dims}")
        if self.activation != "tanh":
            raise InvalidInputError(f"unsupported activation {self.activation!r}")
        n_layers = len(self.layer_dims) - 1
        if len(self.weights) != n_layers or len(self.biases) != n_layers:
            raise InvalidInputError("need one weight matrix and bias per layer")
        for i in range(n_layers):
            shape = (self.layer_dims[i], self.layer_dims[i + 1])
            if self.weights[i].shape != shape:
                raise InvalidInputError(
                    f"layer {i}: weight shape {self.weights[i].shape} != {shape}"
                )
            if self.biases[i].shape != (self.layer_dims[i + 1],):
                raise InvalidInputError(f"layer {i}: bias shape {self.biases[i].shape}")

    @property
    def n_classes(self):
        return self.layer_dims[-1]

    @property
    def n_params(self):
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def copy(self):
        return TinyNet(
            list(self.layer_dims),
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.activation,
            self.seed,
        )

    def parameters(self):
        """Weights and biases interleaved: W0, b0, W1, b1, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def same_parameters(self, other):
        """Bitwise equality of architecture and every parameter."""
        return self.layer_dims == other.layer_dims and all(
            np.array_equal(a, b) for a, b in zip(self.parameters(), other.parameters())
        )


@dataclass
class Gradients:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def arrays(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out


@dataclass
class OptimizerState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    learning_rate: float = 1e-3
    weight_decay: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0

    @classmethod
    def for_net(cls, net, **hyper):
        params = net.parameters()
        state = cls(
            m=[np.zeros_like(p) for p in params],
            v=[np.zeros_like(p) for p in params],
            **hyper,
        )
        if state.learning_rate <= 0:
            raise InvalidInputError("learning_rate must be > 0")
        if state.weight_decay < 0:
            raise InvalidInputError("weight_decay must be >= 0")
        return state


def init_net(layer_dims, seed=0):
    """Glorot-uniform weights and zero biases, reproducible from ``seed``."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    seed_record = int(seed) if isinstance(seed, (int, np.integer)) else None
    return TinyNet(list(layer_dims), weights, biases, seed=seed_record)


def zeros_net(layer_dims):
    return TinyNet(
        list(layer_dims),
        [np.zeros((a, b)) for a, b in zip(layer_dims[:-1], layer_dims[1:])],
        [np.zeros(b) for b in layer_dims[1:]],
    )


def _as_batch(net, x):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != net.layer_dims[0]:
        raise InvalidInputError(
            f"input has shape {x.shape}, expected (*, {net.layer_dims[0]})"
        )
    return np.ascontiguousarray(x), single


def forward(net, x):
    """Logits for one input vector (returns a vector) or a batch (returns a matrix)."""
    batch, single = _as_batch(net, x)
    logits = kernels.mlp_forward(net.weights, net.biases, batch)[-1]
    return logits[0] if single else logits


def forward_cache(net, x):
    """All layer activations for a batch, as consumed by :func:`backward`."""
    batch, _ = _as_batch(net, x)
    return kernels.mlp_forward(net.weights, net.biases, batch)


def backward(net, x, grad_logits, acts=None):
    """Batch-mean gradients of the loss whose per-sample logit gradient is given.

    ``acts`` may be passed to reuse a previous :func:`forward_cache` result.
    """
    if acts is None:
        acts = forward_cache(net, x)
    grad_logits = np.asarray(grad_logits, dtype=np.float64)
    if grad_logits.ndim == 1:
        grad_logits = grad_logits[None, :]
    n = acts[0].shape[0]
    if grad_logits.shape != (n, net.n_classes):
        raise InvalidInputError(
            f"loss gradient has shape {grad_logits.shape}, expected {(n, net.n_classes)}"
        )
    gw, gb = kernels.mlp_backward(net.weights, acts, np.ascontiguousarray(grad_logits))
    return Gradients(gw, gb)


def adamw_step(net, grads, state):
    """One AdamW step in place; returns ``(net, state)`` for convenience."""
    params = net.parameters()
    arrays = grads.arrays()
    if len(arrays) != len(params) or len(state.m) != len(params):
        raise InvalidInputError("gradient/state layout does not match the network")
    for j, (p, g, m) in enumerate(zip(params, arrays, state.m)):
        if g.shape != p.shape or m.shape != p.shape:
            raise InvalidInputError(f"layer {j // 2}: shape mismatch")
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient in layer {j // 2}", layer=j // 2)
    state.step += 1
    for p, g, m, v in zip(params, arrays, state.m, state.v):
        kernels.adamw_update(
            p,
            np.ascontiguousarray(g),
            m,
            v,
            state.learning_rate,
            state.beta1,
            state.beta2,
            state.eps,
            state.weight_decay,
            state.step,
        )
    return net, state


def checkpoint_dict(net):
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "layer_dims": list(net.layer_dims),
        "activation": net.activation,
        "seed": net.seed,
        "weights": [w.ravel(order="C").tolist() for w in net.weights],
        "biases": [b.tolist() for b in net.biases],
    }


def net_from_dict(d):
    if d.get("format") != CHECKPOINT_FORMAT:
        raise InvalidInputError(f"not a TinyNet checkpoint: format={d.get('format')!r}")
    if d.get("version") != CHECKPOINT_VERSION:
        raise InvalidInputError(f"unsupported checkpoint version {d.get('version')}")
    dims = [int(x) for x in d["layer_dims"]]
    weights = [
        np.array(w, dtype=np.float64).reshape(a, b)
        for w, a, b in zip(d["weights"], dims[:-1], dims[1:])
    ]
    biases = [np.array(b, dtype=np.float64) for b in d["biases"]]
    return TinyNet(dims, weights, biases, d.get("activation", "tanh"), d.get("seed"))


def save_checkpoint(net, path):
    # json emits shortest round-trip float reprs, so loading is bit-exact
    atomic_write_text(path, json.dumps(checkpoint_dict(net)) + "\n")


def load_checkpoint(path):
    with open(path, encoding="utf-8") as fh:
        return net_from_dict(json.load(fh))
