"""Dense MLP forward/backward passes and the Adam optimizer.

Everything here is plain NumPy in 64-bit precision.  Networks are small
multi-layer perceptrons with Swish activations on hidden layers and an
identity last layer; gradients are computed by hand-written
backpropagation so they can be validated against finite differences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InputShapeError

__all__ = [
    "Mlp",
    "MlpGrads",
    "AdamState",
    "init_mlp",
    "mlp_forward",
    "mlp_forward_batch",
    "mlp_forward_cached",
    "mlp_backward",
    "mlp_backward_batch",
    "mlp_backward_cached",
    "init_adam",
    "adam_step",
]


@dataclass
class Mlp:
    """Fully-connected network: Swish hidden layers, identity output layer.

    weights[k] has shape (layer_widths[k+1], layer_widths[k]) and acts on
    activations from the left; biases[k] has length layer_widths[k+1].
    """

    layer_widths: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        if len(self.layer_widths) < 2:
            raise InputShapeError("need at least an input and an output layer")
        if len(self.weights) != len(self.layer_widths) - 1 or len(self.biases) != len(self.weights):
            raise InputShapeError("weights/biases do not match layer_widths")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            expect = (self.layer_widths[k + 1], self.layer_widths[k])
            if w.shape != expect:
                raise InputShapeError(f"layer {k}: weight shape {w.shape}, expected {expect}")
            if b.shape != (self.layer_widths[k + 1],):
                raise InputShapeError(f"layer {k}: bias shape {b.shape}")

    @property
    def din(self) -> int:
        return self.layer_widths[0]

    @property
    def dout(self) -> int:
        return self.layer_widths[-1]

    def parameters(self) -> list[np.ndarray]:
        """Flat parameter list [W0, b0, W1, b1, ...] (shared, not copied)."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def with_parameters(self, params: list[np.ndarray]) -> "Mlp":
        weights = [params[2 * k] for k in range(len(self.weights))]
        biases = [params[2 * k + 1] for k in range(len(self.biases))]
        return Mlp(list(self.layer_widths), weights, biases)


@dataclass
class MlpGrads:
    """Gradients of a scalar loss w.r.t. every weight and bias of an Mlp."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def parameters(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out


def init_mlp(layer_widths: list[int], rng: np.random.Generator) -> Mlp:
    """Glorot-uniform initialization: U(+-sqrt(6/(fan_in+fan_out)))."""
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_widths[:-1], layer_widths[1:]):
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return Mlp(list(layer_widths), weights, biases)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # branch on sign to avoid overflow of exp for large |z|
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _swish(z: np.ndarray) -> np.ndarray:
    return z * _sigmoid(z)


def _swish_grad(z: np.ndarray) -> np.ndarray:
    s = _sigmoid(z)
    return s * (1.0 + z * (1.0 - s))


def mlp_forward_batch(net: Mlp, x: np.ndarray) -> np.ndarray:
    """Evaluate the network on a batch of inputs, shape (N, din) -> (N, dout)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.din:
        raise InputShapeError(f"expected (N, {net.din}) inputs, got {x.shape}")
    a = x
    last = len(net.weights) - 1
    for k, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = a @ w.T + b
        a = z if k == last else _swish(z)
    return a


def mlp_forward(net: Mlp, x: np.ndarray) -> np.ndarray:
    """Evaluate the network on a single input vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (net.din,):
        raise InputShapeError(f"expected input of length {net.din}, got shape {x.shape}")
    return mlp_forward_batch(net, x[None, :])[0]


def mlp_forward_cached(net: Mlp, x: np.ndarray):
    """Forward pass that keeps intermediates for a later backward pass.

    Returns (y, cache); feed the cache to :func:`mlp_backward_cached`.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.din:
        raise InputShapeError(f"expected (N, {net.din}) inputs, got {x.shape}")
    last = len(net.weights) - 1
    acts = [x]
    zs = []
    a = x
    for k, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = a @ w.T + b
        zs.append(z)
        a = z if k == last else _swish(z)
        acts.append(a)
    return a, (acts, zs)


def mlp_backward_cached(net: Mlp, cache, dl_dy: np.ndarray):
    """Backward pass from a cached forward; returns (grads, dl_dx)."""
    acts, zs = cache
    last = len(net.weights) - 1
    dw = [None] * len(net.weights)
    db = [None] * len(net.biases)
    delta = np.asarray(dl_dy, dtype=np.float64)
    for k in range(last, -1, -1):
        if k != last:
            delta = delta * _swish_grad(zs[k])
        dw[k] = delta.T @ acts[k]
        db[k] = delta.sum(axis=0)
        delta = delta @ net.weights[k]
    return MlpGrads(dw, db), delta


def mlp_backward_batch(net: Mlp, x: np.ndarray, dl_dy: np.ndarray):
    """Backpropagate a batch of output gradients.

    Returns (grads, dl_dx) where parameter gradients are summed over the
    batch and dl_dx has shape (N, din).
    """
    x = np.asarray(x, dtype=np.float64)
    dl_dy = np.asarray(dl_dy, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.din:
        raise InputShapeError(f"expected (N, {net.din}) inputs, got {x.shape}")
    if dl_dy.shape != (x.shape[0], net.dout):
        raise InputShapeError(f"expected ({x.shape[0]}, {net.dout}) output grads, got {dl_dy.shape}")
    _, cache = mlp_forward_cached(net, x)
    return mlp_backward_cached(net, cache, dl_dy)


def mlp_backward(net: Mlp, x: np.ndarray, dl_dy: np.ndarray):
    """Gradients for a single input; returns (grads, dl_dx)."""
    x = np.asarray(x, dtype=np.float64)
    dl_dy = np.asarray(dl_dy, dtype=np.float64)
    if x.shape != (net.din,):
        raise InputShapeError(f"expected input of length {net.din}, got shape {x.shape}")
    if dl_dy.shape != (net.dout,):
        raise InputShapeError(f"expected output grad of length {net.dout}, got shape {dl_dy.shape}")
    grads, dl_dx = mlp_backward_batch(net, x[None, :], dl_dy[None, :])
    return grads, dl_dx[0]


@dataclass
class AdamState:
    """Adam moment estimates for a list of parameter arrays."""

    first_moment: list[np.ndarray]
    second_moment: list[np.ndarray]
    step_count: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def init_adam(params: list[np.ndarray], lr: float = 1e-3, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    return AdamState(
        first_moment=[np.zeros_like(p) for p in params],
        second_moment=[np.zeros_like(p) for p in params],
        step_count=0, lr=lr, beta1=beta1, beta2=beta2, eps=eps,
    )


def adam_step(params: list[np.ndarray], grads: list[np.ndarray], state: AdamState):
    """One bias-corrected Adam update; returns (new_params, new_state)."""
    if len(params) != len(grads) or len(params) != len(state.first_moment):
        raise InputShapeError("params/grads/state lengths differ")
    t = state.step_count + 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    new_params, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        if p.shape != g.shape:
            raise InputShapeError(f"grad shape {g.shape} != param shape {p.shape}")
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        step = state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        new_params.append(p - step)
        new_m.append(m)
        new_v.append(v)
    return new_params, AdamState(new_m, new_v, t, state.lr, b1, b2, state.eps)
