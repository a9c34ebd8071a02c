"""Small feed-forward network engine with hand-written reverse-mode gradients.

Networks are stacks of affine layers followed by an elementwise activation.
Every function accepts either a single input vector of shape ``(in_dim,)`` or
a batch of shape ``(n, in_dim)``; parameter gradients of a batch are summed
over its rows.

Parameters are exposed as a flat list ``[W0, b0, W1, b1, ...]`` of arrays so
the optimizer can update them in place.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import CacheError, ShapeError, TrainingDivergenceError

ACTIVATIONS = ("relu", "softplus", "identity")


def softplus(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    return np.maximum(a, 0.0) + np.log1p(np.exp(-np.abs(a)))


def sigmoid(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    ea = np.exp(a[~pos])
    out[~pos] = ea / (1.0 + ea)
    return out


def _activate(kind: str, a: np.ndarray) -> np.ndarray:
    if kind == "relu":
        return np.maximum(a, 0.0)
    if kind == "softplus":
        return softplus(a)
    return a


def _activation_grad(kind: str, a: np.ndarray) -> np.ndarray:
    if kind == "relu":
        # subgradient at exactly 0 is 0
        return (a > 0).astype(float)
    if kind == "softplus":
        return sigmoid(a)
    return np.ones_like(a)


@dataclass
class AffineLayer:
    weights: np.ndarray
    bias: np.ndarray
    activation: str = "identity"

    def __post_init__(self):
        self.weights = np.array(self.weights, dtype=float)
        self.bias = np.array(self.bias, dtype=float)
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise ShapeError(
                f"weights {self.weights.shape} and bias {self.bias.shape} are inconsistent"
            )
        if not (np.all(np.isfinite(self.weights)) and np.all(np.isfinite(self.bias))):
            raise ValueError("layer parameters must be finite")

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]


@dataclass
class Mlp:
    layers: list[AffineLayer]

    def __post_init__(self):
        if not self.layers:
            raise ShapeError("an Mlp needs at least one layer")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.out_dim != nxt.in_dim:
                raise ShapeError(
                    f"layer dims do not chain: {prev.out_dim} -> {nxt.in_dim}"
                )

    @classmethod
    def init(
        cls,
        dims: Sequence[int],
        activations: Sequence[str],
        rng: np.random.Generator,
    ) -> "Mlp":
        """Glorot-uniform weights, zero biases.

        ``dims`` lists the layer widths including input and output, so a
        network with ``len(dims) - 1`` layers is built.
        """
        if len(activations) != len(dims) - 1:
            raise ValueError("need one activation per layer")
        layers = []
        for fan_in, fan_out, act in zip(dims[:-1], dims[1:], activations):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            w = rng.uniform(-limit, limit, size=(fan_out, fan_in))
            layers.append(AffineLayer(w, np.zeros(fan_out), act))
        return cls(layers)

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    def params(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out.extend((layer.weights, layer.bias))
        return out

    def set_params(self, values: Sequence[np.ndarray]) -> None:
        current = self.params()
        if len(values) != len(current):
            raise ShapeError("parameter list length mismatch")
        for dst, src in zip(current, values):
            if dst.shape != np.shape(src):
                raise ShapeError(f"parameter shape {np.shape(src)} != {dst.shape}")
            dst[...] = src

    def copy(self) -> "Mlp":
        return Mlp(
            [AffineLayer(l.weights.copy(), l.bias.copy(), l.activation) for l in self.layers]
        )


@dataclass
class ForwardCache:
    owner: int
    batched: bool
    inputs: list[np.ndarray] = field(default_factory=list)
    pre: list[np.ndarray] = field(default_factory=list)


def forward(mlp: Mlp, x: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    x = np.asarray(x, dtype=float)
    batched = x.ndim == 2
    if x.ndim not in (1, 2) or x.shape[-1] != mlp.in_dim:
        raise ShapeError(f"input shape {x.shape} does not match in_dim {mlp.in_dim}")
    h = np.atleast_2d(x)
    cache = ForwardCache(owner=id(mlp), batched=batched)
    for layer in mlp.layers:
        cache.inputs.append(h)
        a = h @ layer.weights.T + layer.bias
        cache.pre.append(a)
        h = _activate(layer.activation, a)
    return (h if batched else h[0]), cache


def backward(
    mlp: Mlp, cache: ForwardCache, grad_output: np.ndarray
) -> tuple[list[np.ndarray], np.ndarray]:
    if cache.owner != id(mlp) or len(cache.pre) != len(mlp.layers):
        raise CacheError("cache was produced by a different network")
    g = np.atleast_2d(np.asarray(grad_output, dtype=float))
    if g.shape != cache.pre[-1].shape[:1] + (mlp.out_dim,):
        raise CacheError(
            f"grad_output shape {np.shape(grad_output)} does not match the cached forward pass"
        )
    grads: list[np.ndarray] = [None] * (2 * len(mlp.layers))  # type: ignore[list-item]
    for i in range(len(mlp.layers) - 1, -1, -1):
        layer = mlp.layers[i]
        g = g * _activation_grad(layer.activation, cache.pre[i])
        grads[2 * i] = g.T @ cache.inputs[i]
        grads[2 * i + 1] = g.sum(axis=0)
        g = g @ layer.weights
    return grads, (g if cache.batched else g[0])


@dataclass
class AdamState:
    first_moment: list[np.ndarray]
    second_moment: list[np.ndarray]
    step_count: int = 0
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-7

    @classmethod
    def for_params(cls, params: Sequence[np.ndarray], **hyper) -> "AdamState":
        return cls(
            [np.zeros_like(p) for p in params],
            [np.zeros_like(p) for p in params],
            **hyper,
        )


def adam_step(
    params: list[np.ndarray], grads: Sequence[np.ndarray], state: AdamState
) -> tuple[list[np.ndarray], AdamState]:
    """Bias-corrected ADAM update applied in place to ``params``."""
    if len(grads) != len(params) or len(state.first_moment) != len(params):
        raise ShapeError("parameter, gradient and moment layouts differ")
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise TrainingDivergenceError("non-finite gradient")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    lr_t = state.learning_rate * np.sqrt(1.0 - b2**t) / (1.0 - b1**t)
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        if g.shape != p.shape:
            raise ShapeError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr_t * m / (np.sqrt(v) + state.epsilon)
    return params, state


@dataclass
class EarlyStopState:
    validation_history: list[float] = field(default_factory=list)
    best_loss: float = float("inf")
    tolerance_factor: float = 1.01
    patience_steps: int = 3
    best_index: int = -1


def early_stop_update(state: EarlyStopState, new_val_loss: float) -> tuple[EarlyStopState, bool]:
    """Record a validation loss and decide whether training should halt.

    Halts when the loss exceeds ``tolerance_factor`` times the running minimum
    and that minimum was set at least ``patience_steps`` checks ago.
    """
    new_val_loss = float(new_val_loss)
    state.validation_history.append(new_val_loss)
    last = len(state.validation_history) - 1
    if new_val_loss < state.best_loss:
        state.best_loss = new_val_loss
        state.best_index = last
        return state, False
    stale = last - state.best_index >= state.patience_steps
    return state, bool(stale and new_val_loss > state.tolerance_factor * state.best_loss)
