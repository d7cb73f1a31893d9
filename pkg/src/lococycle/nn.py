"""Small dense-network substrate: MLP forward/backward, Adam, diagonal Gaussians.

Backprop is hand-written for the fixed affine/activation stack; there is no
general autodiff graph. Inputs may be a single vector ``(n_in,)`` or a batch
``(N, n_in)``; outputs follow the same convention.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._codec import decode_array, encode_array

ACTIVATIONS = ("relu", "elu", "tanh", "linear")
LOG_STD_MIN = -10.0
LOG_STD_MAX = 1.0
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


class ShapeError(ValueError):
    """Raised when an input does not match the network or buffer dimensions."""


def _act(name, z):
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "elu":
        return np.where(z > 0.0, z, np.expm1(np.minimum(z, 0.0)))
    if name == "tanh":
        return np.tanh(z)
    return z


def _act_grad(name, z, a):
    # derivative of the activation, expressed through pre- (z) and post- (a) values
    if name == "relu":
        return (z > 0.0).astype(z.dtype)
    if name == "elu":
        return np.where(z > 0.0, 1.0, a + 1.0)
    if name == "tanh":
        return 1.0 - a * a
    return np.ones_like(z)


def orthogonal(rng, fan_in, fan_out, gain=1.0):
    """Orthogonal init (QR of a Gaussian matrix), returned as (fan_in, fan_out)."""
    rows, cols = max(fan_in, fan_out), min(fan_in, fan_out)
    a = rng.standard_normal((rows, cols))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if fan_in < fan_out:
        q = q.T
    return np.ascontiguousarray(gain * q[:fan_in, :fan_out])


@dataclass
class DenseNet:
    layer_sizes: list
    weights: list
    biases: list
    hidden_activation: str = "relu"
    output_activation: str = "linear"

    def __post_init__(self):
        if len(self.layer_sizes) < 2 or any(int(s) <= 0 for s in self.layer_sizes):
            raise ShapeError(f"bad layer sizes {self.layer_sizes}")
        if self.hidden_activation not in ACTIVATIONS or self.output_activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation in ({self.hidden_activation}, {self.output_activation})")
        self.layer_sizes = [int(s) for s in self.layer_sizes]
        # contiguous float64 storage so optimizer updates act on the arrays in place
        self.weights = [np.ascontiguousarray(w, dtype=np.float64) for w in self.weights]
        self.biases = [np.ascontiguousarray(b, dtype=np.float64) for b in self.biases]
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (self.layer_sizes[i], self.layer_sizes[i + 1]) or b.shape != (self.layer_sizes[i + 1],):
                raise ShapeError(f"layer {i}: weight {w.shape} / bias {b.shape} do not chain with {self.layer_sizes}")
        if len(self.weights) != len(self.layer_sizes) - 1:
            raise ShapeError("one weight matrix per layer transition required")

    @classmethod
    def create(cls, layer_sizes, rng, hidden_activation="relu", output_gain=1.0, hidden_gain=1.0):
        weights, biases = [], []
        n = len(layer_sizes) - 1
        for i in range(n):
            gain = output_gain if i == n - 1 else hidden_gain
            weights.append(orthogonal(rng, layer_sizes[i], layer_sizes[i + 1], gain))
            biases.append(np.zeros(layer_sizes[i + 1]))
        return cls(list(layer_sizes), weights, biases, hidden_activation)

    @property
    def n_in(self):
        return self.layer_sizes[0]

    @property
    def n_out(self):
        return self.layer_sizes[-1]

    def params(self):
        """Parameters in a fixed order: W0, b0, W1, b1, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def _check_input(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim not in (1, 2) or x.shape[-1] != self.n_in:
            raise ShapeError(f"expected input with last dimension {self.n_in}, got shape {x.shape}")
        return x

    def forward(self, x, keep_cache=False):
        x = self._check_input(x)
        h = x
        cache = [x]
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w + b
            h = _act(self.output_activation if i == last else self.hidden_activation, z)
            cache.append((z, h))
        return (h, cache) if keep_cache else h

    def backward(self, cache, upstream):
        """Gradients of sum(upstream * output) for a cached forward pass.

        Returns ``(param_grads, input_grad)`` with ``param_grads`` ordered like
        :meth:`params`. For batched inputs the parameter gradients are summed
        over the batch.
        """
        x = cache[0]
        g = np.asarray(upstream, dtype=np.float64)
        out_shape = x.shape[:-1] + (self.n_out,)
        if g.shape != out_shape:
            raise ShapeError(f"upstream gradient shape {g.shape} != output shape {out_shape}")
        batched = x.ndim == 2
        last = len(self.weights) - 1
        grads = [None] * (2 * len(self.weights))
        for i in range(last, -1, -1):
            z, a = cache[i + 1]
            name = self.output_activation if i == last else self.hidden_activation
            g = g * _act_grad(name, z, a)
            h_prev = cache[i] if i == 0 else cache[i][1]
            if batched:
                grads[2 * i] = h_prev.T @ g
                grads[2 * i + 1] = g.sum(axis=0)
            else:
                grads[2 * i] = np.outer(h_prev, g)
                grads[2 * i + 1] = g.copy()
            g = g @ self.weights[i].T
        return grads, g

    def copy(self):
        return DenseNet(
            list(self.layer_sizes),
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.hidden_activation,
            self.output_activation,
        )

    def to_dict(self):
        return {
            "layer_sizes": list(self.layer_sizes),
            "hidden_activation": self.hidden_activation,
            "output_activation": self.output_activation,
            "weights": [encode_array(w) for w in self.weights],
            "biases": [encode_array(b) for b in self.biases],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            list(d["layer_sizes"]),
            [decode_array(w, f"weights[{i}]") for i, w in enumerate(d["weights"])],
            [decode_array(b, f"biases[{i}]") for i, b in enumerate(d["biases"])],
            d["hidden_activation"],
            d["output_activation"],
        )


def net_forward(net, x):
    return net.forward(x)


def net_backward(net, x, upstream_grad):
    _, cache = net.forward(x, keep_cache=True)
    return net.backward(cache, upstream_grad)


def reference_forward(net, x):
    """Per-sample scalar-loop evaluation of the affine chain (cross-check only)."""
    h = [float(v) for v in np.asarray(x, dtype=np.float64)]
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = []
        for j in range(w.shape[1]):
            s = float(b[j])
            for k in range(w.shape[0]):
                s += h[k] * float(w[k, j])
            z.append(s)
        name = net.output_activation if i == last else net.hidden_activation
        if name == "relu":
            h = [max(v, 0.0) for v in z]
        elif name == "elu":
            h = [v if v > 0 else math.expm1(v) for v in z]
        elif name == "tanh":
            h = [math.tanh(v) for v in z]
        else:
            h = z
    return np.array(h)


@dataclass
class AdamState:
    first_moment: list
    second_moment: list
    step_count: int = 0
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    skipped: int = 0

    @classmethod
    def for_params(cls, params, learning_rate=1e-3, **kw):
        return cls(
            [np.zeros_like(p) for p in params],
            [np.zeros_like(p) for p in params],
            learning_rate=learning_rate,
            **kw,
        )

    def to_dict(self):
        return {
            "first_moment": [encode_array(m) for m in self.first_moment],
            "second_moment": [encode_array(v) for v in self.second_moment],
            "step_count": self.step_count,
            "learning_rate": self.learning_rate,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "epsilon": self.epsilon,
            "skipped": self.skipped,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            [decode_array(m, "first_moment") for m in d["first_moment"]],
            [decode_array(v, "second_moment") for v in d["second_moment"]],
            int(d["step_count"]),
            float(d["learning_rate"]),
            float(d["beta1"]),
            float(d["beta2"]),
            float(d["epsilon"]),
            int(d.get("skipped", 0)),
        )


def adam_step(params, grads, state):
    """Bias-corrected Adam update, in place. Returns False if the step was skipped."""
    if len(params) != len(grads) or any(p.shape != g.shape for p, g in zip(params, grads)):
        raise ShapeError("parameter/gradient shapes differ")
    if not all(np.all(np.isfinite(g)) for g in grads):
        state.skipped += 1
        return False
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.learning_rate * (m / c1) / (np.sqrt(v / c2) + state.epsilon)
    return True


def clip_grad_norm(grads, max_norm):
    """Scale gradients in place so their global L2 norm is at most max_norm."""
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / (total + 1e-12)
        for g in grads:
            g *= scale
    return total


def gaussian_log_prob(mean, log_std, sample):
    """Diagonal-Gaussian log density, summed over the last axis."""
    mean = np.asarray(mean, dtype=np.float64)
    sample = np.asarray(sample, dtype=np.float64)
    log_std = np.asarray(log_std, dtype=np.float64)
    if mean.shape[-1] != log_std.shape[-1] or mean.shape != sample.shape:
        raise ShapeError(f"shape mismatch: mean {mean.shape}, log_std {log_std.shape}, sample {sample.shape}")
    z = (sample - mean) * np.exp(-log_std)
    return np.sum(-0.5 * z * z - log_std - _HALF_LOG_2PI, axis=-1)


def gaussian_entropy(log_std):
    return float(np.sum(np.asarray(log_std) + 0.5 + _HALF_LOG_2PI))


def sample_gaussian(mean, log_std, rng):
    """Reparameterized sample ``mean + exp(log_std) * xi``; log_std is clamped."""
    mean = np.asarray(mean, dtype=np.float64)
    ls = np.clip(np.asarray(log_std, dtype=np.float64), LOG_STD_MIN, LOG_STD_MAX)
    return mean + np.exp(ls) * rng.standard_normal(mean.shape)


@dataclass
class GaussianHead:
    log_std: np.ndarray = field(default_factory=lambda: np.full(1, -0.5))

    def clamp_(self):
        np.clip(self.log_std, LOG_STD_MIN, LOG_STD_MAX, out=self.log_std)
