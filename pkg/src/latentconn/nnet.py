"""Small dense networks with hand-written backpropagation and Adadelta.

Everything works on float64 row-major batches: an input of shape (B, in)
maps to (B, out). A single sample may be passed as a 1-D vector.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import NumericalError, ShapeError, ValidationError

ACTIVATIONS = ("rectifier", "sigmoid", "identity")


def sigmoid(a):
    # split by sign so exp never overflows
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    ea = np.exp(a[~pos])
    out[~pos] = ea / (1.0 + ea)
    return out


def activate(name, a):
    if name == "rectifier":
        return np.maximum(a, 0.0)
    if name == "sigmoid":
        return sigmoid(a)
    if name == "identity":
        return a.copy()
    raise ValidationError(f"unknown activation {name!r}")


def activation_grad(name, a, out):
    """Derivative of the activation evaluated at pre-activation ``a``."""
    if name == "rectifier":
        return (a > 0).astype(np.float64)
    if name == "sigmoid":
        return out * (1.0 - out)
    if name == "identity":
        return np.ones_like(a)
    raise ValidationError(f"unknown activation {name!r}")


@dataclass
class DenseLayer:
    weights: np.ndarray  # (out, in)
    biases: np.ndarray  # (out,)
    activation: str = "identity"

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.biases = np.asarray(self.biases, dtype=np.float64)
        if self.weights.ndim != 2 or self.biases.shape != (self.weights.shape[0],):
            raise ShapeError(
                f"weights {self.weights.shape} and biases {self.biases.shape} disagree"
            )
        if self.activation not in ACTIVATIONS:
            raise ValidationError(f"unknown activation {self.activation!r}")

    @property
    def n_in(self):
        return self.weights.shape[1]

    @property
    def n_out(self):
        return self.weights.shape[0]


def dense_forward(layer, x):
    """Returns ``(pre_activation, output)`` for a batch or single vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != layer.n_in:
        raise ShapeError(f"input width {x.shape[-1]} != layer input {layer.n_in}")
    a = x @ layer.weights.T + layer.biases
    return a, activate(layer.activation, a)


@dataclass
class ForwardCache:
    inputs: list = field(default_factory=list)
    pre: list = field(default_factory=list)
    outputs: list = field(default_factory=list)


class Network:
    """A stack of dense layers applied in order."""

    def __init__(self, layers):
        self.layers = list(layers)
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.n_out != nxt.n_in:
                raise ShapeError(f"layer widths do not chain: {prev.n_out} -> {nxt.n_in}")

    @property
    def n_in(self):
        return self.layers[0].n_in

    @property
    def n_out(self):
        return self.layers[-1].n_out

    def parameters(self):
        """Parameter arrays in a fixed order (W0, b0, W1, b1, ...); mutable views."""
        out = []
        for layer in self.layers:
            out.extend((layer.weights, layer.biases))
        return out

    def forward(self, x, cache=None):
        h = np.asarray(x, dtype=np.float64)
        for layer in self.layers:
            a, out = dense_forward(layer, h)
            if cache is not None:
                cache.inputs.append(h)
                cache.pre.append(a)
                cache.outputs.append(out)
            h = out
        return h

    def __call__(self, x):
        return self.forward(x)


def backward(network, cache, upstream, wrt_preactivation=False):
    """Reverse-mode pass through a network.

    Parameters
    ----------
    network : Network
    cache : ForwardCache
        Filled by ``network.forward(x, cache)`` for the same input.
    upstream : ndarray
        Gradient of the scalar objective w.r.t. the network output, or
        w.r.t. the last layer's pre-activation if ``wrt_preactivation``
        (useful when a sigmoid output is paired with cross-entropy).

    Returns
    -------
    grads : list of ndarray
        Aligned with ``network.parameters()``.
    grad_input : ndarray
        Gradient w.r.t. the network input.
    """
    if cache is None or len(cache.pre) != len(network.layers):
        raise ValidationError("backward() needs a forward cache for this network")
    delta = np.asarray(upstream, dtype=np.float64)
    if delta.shape != cache.outputs[-1].shape:
        raise ShapeError(
            f"upstream gradient shape {delta.shape} != output shape {cache.outputs[-1].shape}"
        )
    grads = [None] * (2 * len(network.layers))
    for k in range(len(network.layers) - 1, -1, -1):
        layer = network.layers[k]
        if not (wrt_preactivation and k == len(network.layers) - 1):
            delta = delta * activation_grad(layer.activation, cache.pre[k], cache.outputs[k])
        x = cache.inputs[k]
        if delta.ndim == 1:
            grads[2 * k] = np.outer(delta, x)
            grads[2 * k + 1] = delta.copy()
        else:
            grads[2 * k] = delta.T @ x
            grads[2 * k + 1] = delta.sum(axis=0)
        delta = delta @ layer.weights
    return grads, delta


def init_params(sizes, activations, seed=None, rng=None):
    """Glorot-uniform weights in +-sqrt(6 / (fan_in + fan_out)), zero biases.

    ``sizes`` lists layer widths including the input, e.g. ``[4006, 128, 128]``;
    ``activations`` has one entry per layer.
    """
    sizes = [int(s) for s in sizes]
    if len(sizes) < 2 or any(s <= 0 for s in sizes):
        raise ValidationError(f"invalid layer sizes {sizes}")
    if len(activations) != len(sizes) - 1:
        raise ValidationError("need one activation per layer")
    if rng is None:
        rng = np.random.Generator(np.random.PCG64(seed))
    layers = []
    for fan_in, fan_out, act in zip(sizes[:-1], sizes[1:], activations):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        layers.append(DenseLayer(w, np.zeros(fan_out), act))
    return Network(layers)


class Adadelta:
    """Adadelta with running averages of squared gradients and squared updates.

    ``learning_rate`` multiplies the update before it is applied; the
    accumulated squared update uses the unscaled step.
    """

    def __init__(self, rho=0.95, eps=1e-6, learning_rate=1.0):
        if not 0.0 < rho < 1.0:
            raise ValidationError(f"rho must lie in (0, 1), got {rho}")
        if eps <= 0:
            raise ValidationError(f"eps must be positive, got {eps}")
        self.rho = float(rho)
        self.eps = float(eps)
        self.learning_rate = float(learning_rate)
        self.square_grad = None
        self.square_delta = None

    def _ensure_state(self, params):
        if self.square_grad is None:
            self.square_grad = [np.zeros_like(p) for p in params]
            self.square_delta = [np.zeros_like(p) for p in params]

    def step(self, params, grads):
        """Update ``params`` in place; returns the list of applied deltas."""
        if len(params) != len(grads):
            raise ShapeError("parameter and gradient lists differ in length")
        self._ensure_state(params)
        rho, eps = self.rho, self.eps
        deltas = []
        for p, g, eg, ed in zip(params, grads, self.square_grad, self.square_delta):
            if p.shape != g.shape:
                raise ShapeError(f"gradient shape {g.shape} != parameter shape {p.shape}")
            eg *= rho
            eg += (1.0 - rho) * g * g
            delta = -np.sqrt(ed + eps) / np.sqrt(eg + eps) * g
            ed *= rho
            ed += (1.0 - rho) * delta * delta
            p += self.learning_rate * delta
            deltas.append(delta)
        return deltas

    def state_dict(self):
        return {"rho": self.rho, "eps": self.eps, "learning_rate": self.learning_rate}


def grad_check(network, loss_fn, x, h=1e-5):
    """Largest relative disagreement between analytic and central-difference gradients.

    ``network`` needs a ``parameters()`` method returning mutable arrays and
    ``loss_fn(network, x)`` must return ``(loss, grads)`` with ``grads``
    aligned to those arrays. The error for each scalar parameter is
    ``|analytic - numeric| / max(1, |numeric|)``.
    """
    if not h > 0:
        raise ValidationError(f"finite-difference step must be positive, got {h}")
    loss, analytic = loss_fn(network, x)
    if not np.isfinite(loss):
        raise NumericalError(f"loss is not finite: {loss}")
    worst = 0.0
    for p, g in zip(network.parameters(), analytic):
        flat = p.reshape(-1)
        gflat = np.asarray(g).reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up, _ = loss_fn(network, x)
            flat[i] = orig - h
            down, _ = loss_fn(network, x)
            flat[i] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise NumericalError("loss became non-finite under perturbation")
            numeric = (up - down) / (2.0 * h)
            err = abs(gflat[i] - numeric) / max(1.0, abs(numeric))
            worst = max(worst, err)
    return worst
