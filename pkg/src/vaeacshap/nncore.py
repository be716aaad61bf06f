"""Dense network substrate: activations, MLP forward/backward, Adam.

Weights are stored ``(out, in)`` and rows of the input are instances, so a
layer computes ``a @ W.T + b``. Everything runs in float64.
"""

from dataclasses import dataclass, field

import numpy as np

DEFAULT_SLOPE = 0.01


class ConfigurationError(ValueError):
    """Inconsistent network or training configuration."""


class TrainingError(RuntimeError):
    """Non-finite values encountered while training."""


def leaky_relu(x, slope=DEFAULT_SLOPE):
    x = np.asarray(x, dtype=np.float64)
    return np.where(x >= 0, x, slope * x)


def leaky_relu_grad(x, slope=DEFAULT_SLOPE):
    # subgradient at 0 takes the positive-side slope
    return np.where(np.asarray(x) >= 0, 1.0, slope)


def softplus(x):
    """``log(1 + exp(x))`` without overflow."""
    return np.logaddexp(0.0, np.asarray(x, dtype=np.float64))


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    return np.exp(-np.logaddexp(0.0, -x))


def softmax(w, axis=-1):
    w = np.asarray(w, dtype=np.float64)
    e = np.exp(w - np.max(w, axis=axis, keepdims=True))
    return e / np.sum(e, axis=axis, keepdims=True)


def log_softmax(w, axis=-1):
    w = np.asarray(w, dtype=np.float64)
    m = np.max(w, axis=axis, keepdims=True)
    return w - m - np.log(np.sum(np.exp(w - m), axis=axis, keepdims=True))


@dataclass
class DenseLayer:
    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise ConfigurationError(
                f"weights {self.weights.shape} and bias {self.bias.shape} disagree"
            )

    @property
    def n_in(self):
        return self.weights.shape[1]

    @property
    def n_out(self):
        return self.weights.shape[0]


def init_params(shape, rng):
    """Glorot-uniform weights and zero bias for an ``(out, in)`` layer."""
    n_out, n_in = int(shape[0]), int(shape[1])
    if n_out <= 0 or n_in <= 0:
        raise ConfigurationError(f"layer shape must be positive, got {shape}")
    bound = np.sqrt(6.0 / (n_in + n_out))
    return DenseLayer(rng.uniform(-bound, bound, size=(n_out, n_in)), np.zeros(n_out))


@dataclass
class MlpCache:
    inputs: list
    pre: list


@dataclass
class Mlp:
    """Feed-forward net with optional concatenated skip inputs per layer.

    Layer ``k`` sees ``concat(previous_output, skips[k])`` where the skip has
    width ``skip_widths[k]`` (0 for none). The output layer has no activation.
    """

    layers: list
    slope: float = DEFAULT_SLOPE
    skip_widths: list = field(default=None)

    def __post_init__(self):
        if not self.layers:
            raise ConfigurationError("an Mlp needs at least one layer")
        if self.skip_widths is None:
            self.skip_widths = [0] * len(self.layers)
        self.skip_widths = [int(s) for s in self.skip_widths]
        if len(self.skip_widths) != len(self.layers):
            raise ConfigurationError("one skip width per layer is required")
        for k in range(1, len(self.layers)):
            expect = self.layers[k - 1].n_out + self.skip_widths[k]
            if self.layers[k].n_in != expect:
                raise ConfigurationError(
                    f"layer {k} expects {self.layers[k].n_in} inputs, "
                    f"previous layer and skip give {expect}"
                )

    @classmethod
    def build(cls, widths, rng, slope=DEFAULT_SLOPE, skip_widths=None):
        """Random net with layer widths ``widths[0] -> ... -> widths[-1]``.

        ``widths[0]`` excludes the skip width of the first layer.
        """
        n_layers = len(widths) - 1
        skips = list(skip_widths) if skip_widths is not None else [0] * n_layers
        layers = [
            init_params((widths[k + 1], widths[k] + skips[k]), rng) for k in range(n_layers)
        ]
        return cls(layers, slope=slope, skip_widths=skips)

    @property
    def widths(self):
        return [self.layers[0].n_in - self.skip_widths[0]] + [L.n_out for L in self.layers]

    def params(self):
        out = []
        for L in self.layers:
            out.extend([L.weights, L.bias])
        return out

    def n_params(self):
        return sum(p.size for p in self.params())

    def forward(self, x, skips=None):
        """Return ``(output, hidden_activations, cache)``."""
        a = np.atleast_2d(np.asarray(x, dtype=np.float64))
        skips = skips if skips is not None else [None] * len(self.layers)
        inputs, pre, hidden = [], [], []
        for k, L in enumerate(self.layers):
            if self.skip_widths[k]:
                if skips[k] is None:
                    raise ConfigurationError(f"layer {k} declares a skip input")
                a = np.concatenate([a, skips[k]], axis=1)
            if a.shape[1] != L.n_in:
                raise ConfigurationError(
                    f"layer {k}: input width {a.shape[1]} != expected {L.n_in}"
                )
            inputs.append(a)
            z = a @ L.weights.T + L.bias
            pre.append(z)
            if k < len(self.layers) - 1:
                a = leaky_relu(z, self.slope)
                hidden.append(a)
            else:
                a = z
        return a, hidden, MlpCache(inputs, pre)

    def backward(self, cache, d_out, d_hidden=None):
        """Reverse pass.

        ``d_hidden[k]`` is an extra upstream gradient on hidden activation ``k``
        (used when activations feed another network). Returns
        ``(param_grads, d_input, d_skips)`` with ``param_grads`` aligned with
        :meth:`params`.
        """
        n_layers = len(self.layers)
        grads = [None] * (2 * n_layers)
        d_skips = [None] * n_layers
        delta = np.asarray(d_out, dtype=np.float64)
        d_input = None
        for k in range(n_layers - 1, -1, -1):
            L = self.layers[k]
            grads[2 * k] = delta.T @ cache.inputs[k]
            grads[2 * k + 1] = delta.sum(axis=0)
            d_a = delta @ L.weights
            sw = self.skip_widths[k]
            if sw:
                d_skips[k] = d_a[:, -sw:]
                d_a = d_a[:, :-sw]
            if k == 0:
                d_input = d_a
            else:
                if d_hidden is not None and d_hidden[k - 1] is not None:
                    d_a = d_a + d_hidden[k - 1]
                delta = d_a * leaky_relu_grad(cache.pre[k - 1], self.slope)
        return grads, d_input, d_skips

    def header(self):
        return {"widths": self.widths, "slope": self.slope, "skip_widths": self.skip_widths}

    @classmethod
    def from_header(cls, header, flat):
        """Rebuild from :meth:`header` and a flat parameter vector."""
        widths, skips = header["widths"], header["skip_widths"]
        layers, pos = [], 0
        for k in range(len(widths) - 1):
            n_out, n_in = widths[k + 1], widths[k] + skips[k]
            W = flat[pos:pos + n_out * n_in].reshape(n_out, n_in)
            pos += n_out * n_in
            b = flat[pos:pos + n_out]
            pos += n_out
            layers.append(DenseLayer(W.copy(), b.copy()))
        if pos != len(flat):
            raise ConfigurationError("parameter blob does not match architecture header")
        return cls(layers, slope=header["slope"], skip_widths=skips)


def flatten(params):
    return np.concatenate([np.ravel(p) for p in params]) if params else np.zeros(0)


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = None
    v: list = None


def adam_step(state, params, grads):
    """One bias-corrected Adam update, in place on ``params``."""
    if state.m is None:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ConfigurationError("params, grads and Adam state are misaligned")
    state.step += 1
    c1 = 1.0 - state.beta1**state.step
    c2 = 1.0 - state.beta2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state
