"""Layer objects with cached forward passes and explicit backward passes.

Only the layer kinds the two autoencoders need are provided. A layer's
``forward`` stores what its ``backward`` needs; ``backward`` accumulates
into each :class:`Parameter`'s ``grad`` and returns the input gradient.
"""

from __future__ import annotations

import itertools
import math

import numpy as np
from scipy.linalg import blas

from . import functional as F
from .functional import DimensionError


class StateError(RuntimeError):
    """Raised when backward is requested without a recorded forward pass."""


_param_ids = itertools.count()


def _accumulate_outer(target: np.ndarray, a: np.ndarray, b: np.ndarray) -> None:
    """``target += a.T @ b`` without a temporary for ``target``-sized data."""
    if target.flags.c_contiguous and a.dtype == b.dtype == np.float64:
        # target.T is Fortran-ordered, so BLAS can update it in place.
        blas.dgemm(1.0, b, a, beta=1.0, c=target.T, trans_a=1, overwrite_c=1)
    else:
        target += a.T @ b


class Parameter:
    """A learnable array and its gradient buffer."""

    def __init__(self, value, name: str = ""):
        self.value = np.ascontiguousarray(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)
        self.name = name
        self.id = next(_param_ids)

    @property
    def shape(self):
        return self.value.shape

    @property
    def size(self) -> int:
        return self.value.size

    def zero_grad(self) -> None:
        self.grad.fill(0.0)

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


# Weights are uniform in +-1/sqrt(fan_in); conv and dense biases start at zero,
# which keeps the single-channel output ReLU of the CAE from starting dead.
def _uniform(rng: np.random.Generator, shape, bound: float) -> np.ndarray:
    return rng.uniform(-bound, bound, size=shape)


class Layer:
    kind = "layer"

    def __init__(self):
        self._cache = None

    def parameters(self) -> list[Parameter]:
        return []

    def config(self) -> dict:
        return {}

    def output_shape(self, in_shape: tuple) -> tuple:
        """Per-sample output shape for a per-sample ``in_shape``."""
        return tuple(in_shape)

    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _take_cache(self):
        if self._cache is None:
            raise StateError(f"{self.kind}: backward called without a forward pass")
        cache, self._cache = self._cache, None
        return cache

    def __call__(self, x):
        return self.forward(x)

    def __repr__(self) -> str:
        args = ", ".join(f"{k}={v}" for k, v in self.config().items())
        return f"{type(self).__name__}({args})"


class Conv2d(Layer):
    kind = "conv2d"

    def __init__(self, in_channels, out_channels, kernel_size=3, stride=1, padding=0,
                 rng: np.random.Generator | None = None):
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = F._pair(kernel_size)
        self.stride = F._pair(stride)
        self.padding = F._pair(padding)
        rng = rng if rng is not None else np.random.default_rng(0)
        kh, kw = self.kernel_size
        bound = 1.0 / math.sqrt(in_channels * kh * kw)
        self.weight = Parameter(_uniform(rng, (out_channels, in_channels, kh, kw), bound), "weight")
        self.bias = Parameter(np.zeros(out_channels), "bias")

    def parameters(self):
        return [self.weight, self.bias]

    def config(self):
        return {
            "in_channels": self.in_channels,
            "out_channels": self.out_channels,
            "kernel_size": list(self.kernel_size),
            "stride": list(self.stride),
            "padding": list(self.padding),
        }

    def output_shape(self, in_shape):
        c, h, w = in_shape
        if c != self.in_channels:
            raise DimensionError(f"conv2d expects {self.in_channels} channels, got {c}")
        (kh, kw), (sh, sw), (ph, pw) = self.kernel_size, self.stride, self.padding
        return (self.out_channels, F.conv_output_size(h, kh, sh, ph),
                F.conv_output_size(w, kw, sw, pw))

    def forward(self, x):
        out, cols, padded_shape = F._conv2d_batched(
            x, self.weight.value, self.bias.value, self.stride, self.padding
        )
        self._cache = (cols, padded_shape, x.shape[2:])
        return out

    def backward(self, grad):
        cols, padded_shape, in_hw = self._take_cache()
        gx, gw, gb = F._conv2d_backward(
            grad, self.weight.value, cols, padded_shape, self.stride, self.padding, in_hw
        )
        self.weight.grad += gw
        self.bias.grad += gb
        return gx


class ConvTranspose2d(Layer):
    kind = "conv_transpose2d"

    def __init__(self, in_channels, out_channels, kernel_size=3, stride=1, padding=0,
                 output_padding=0, rng: np.random.Generator | None = None):
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = F._pair(kernel_size)
        self.stride = F._pair(stride)
        self.padding = F._pair(padding)
        self.output_padding = F._pair(output_padding)
        if any(o >= s for o, s in zip(self.output_padding, self.stride)):
            raise DimensionError("output_padding must be smaller than stride")
        rng = rng if rng is not None else np.random.default_rng(0)
        kh, kw = self.kernel_size
        bound = 1.0 / math.sqrt(in_channels * kh * kw)
        self.weight = Parameter(_uniform(rng, (in_channels, out_channels, kh, kw), bound), "weight")
        self.bias = Parameter(np.zeros(out_channels), "bias")

    def parameters(self):
        return [self.weight, self.bias]

    def config(self):
        return {
            "in_channels": self.in_channels,
            "out_channels": self.out_channels,
            "kernel_size": list(self.kernel_size),
            "stride": list(self.stride),
            "padding": list(self.padding),
            "output_padding": list(self.output_padding),
        }

    def output_shape(self, in_shape):
        c, h, w = in_shape
        if c != self.in_channels:
            raise DimensionError(f"deconv expects {self.in_channels} channels, got {c}")
        (kh, kw), (sh, sw), (ph, pw) = self.kernel_size, self.stride, self.padding
        oph, opw = self.output_padding
        return (self.out_channels, F.conv_transpose_output_size(h, kh, sh, ph, oph),
                F.conv_transpose_output_size(w, kw, sw, pw, opw))

    def forward(self, x):
        out = F._conv_transpose2d_batched(
            x, self.weight.value, self.bias.value, self.stride, self.padding,
            self.output_padding,
        )
        self._cache = x
        return out

    def backward(self, grad):
        x = self._take_cache()
        # The input gradient is a plain convolution of the output gradient.
        gx, cols, _ = F._conv2d_batched(grad, self.weight.value, None, self.stride, self.padding)
        c_in = self.in_channels
        g = x.transpose(0, 2, 3, 1).reshape(-1, c_in)
        self.weight.grad += (g.T @ cols).reshape(self.weight.shape)
        self.bias.grad += grad.sum(axis=(0, 2, 3))
        return gx


class Linear(Layer):
    """Affine map on the last axis; leading axes are broadcast (so it also
    serves as a per-timestep dense layer)."""

    kind = "linear"

    def __init__(self, in_features, out_features, rng: np.random.Generator | None = None):
        super().__init__()
        self.in_features = in_features
        self.out_features = out_features
        rng = rng if rng is not None else np.random.default_rng(0)
        bound = 1.0 / math.sqrt(in_features)
        self.weight = Parameter(_uniform(rng, (out_features, in_features), bound), "weight")
        self.bias = Parameter(np.zeros(out_features), "bias")

    def parameters(self):
        return [self.weight, self.bias]

    def config(self):
        return {"in_features": self.in_features, "out_features": self.out_features}

    def output_shape(self, in_shape):
        if in_shape[-1] != self.in_features:
            raise DimensionError(f"linear expects {self.in_features} features, got {in_shape[-1]}")
        return tuple(in_shape[:-1]) + (self.out_features,)

    def forward(self, x):
        self._cache = x
        return F.linear(x, self.weight.value, self.bias.value)

    def backward(self, grad):
        x = self._take_cache()
        g2 = grad.reshape(-1, self.out_features)
        _accumulate_outer(self.weight.grad, g2, x.reshape(-1, self.in_features))
        self.bias.grad += g2.sum(axis=0)
        return grad @ self.weight.value


class _Activation(Layer):
    _fn = None
    _grad = None

    def forward(self, x):
        self._cache = x
        return type(self)._fn(x)

    def backward(self, grad):
        x = self._take_cache()
        return grad * type(self)._grad(x)


class ReLU(_Activation):
    kind = "relu"
    _fn = staticmethod(F.relu)
    _grad = staticmethod(F.relu_grad)

    def forward(self, x):
        mask = x > 0
        self._cache = mask
        return np.where(mask, x, 0.0)

    def backward(self, grad):
        return grad * self._take_cache()


class Sigmoid(_Activation):
    kind = "sigmoid"
    _fn = staticmethod(F.sigmoid)
    _grad = staticmethod(F.sigmoid_grad)


class Tanh(_Activation):
    kind = "tanh"
    _fn = staticmethod(F.tanh)
    _grad = staticmethod(F.tanh_grad)


class Flatten(Layer):
    kind = "flatten"

    def output_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, x):
        self._cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad):
        return grad.reshape(self._take_cache())


class Unflatten(Layer):
    kind = "unflatten"

    def __init__(self, shape):
        super().__init__()
        self.shape = tuple(int(s) for s in shape)

    def config(self):
        return {"shape": list(self.shape)}

    def output_shape(self, in_shape):
        if int(np.prod(in_shape)) != int(np.prod(self.shape)):
            raise DimensionError(f"cannot unflatten {in_shape} to {self.shape}")
        return self.shape

    def forward(self, x):
        self._cache = x.shape
        return x.reshape((x.shape[0],) + self.shape)

    def backward(self, grad):
        return grad.reshape(self._take_cache())


class RepeatVector(Layer):
    """``[N, H]`` -> ``[N, times, H]``."""

    kind = "repeat"

    def __init__(self, times: int):
        super().__init__()
        self.times = int(times)

    def config(self):
        return {"times": self.times}

    def output_shape(self, in_shape):
        (h,) = in_shape
        return (self.times, h)

    def forward(self, x):
        self._cache = True
        return np.repeat(x[:, None, :], self.times, axis=1)

    def backward(self, grad):
        self._take_cache()
        return grad.sum(axis=1)


class LSTM(Layer):
    """Single-layer LSTM over ``[N, T, D]`` starting from a zero state.

    With ``return_sequences`` the output is every hidden state ``[N, T, H]``,
    otherwise only the last one ``[N, H]``.
    """

    kind = "lstm"

    def __init__(self, input_size, hidden_size, return_sequences=True,
                 rng: np.random.Generator | None = None):
        super().__init__()
        self.input_size = input_size
        self.hidden_size = hidden_size
        self.return_sequences = bool(return_sequences)
        rng = rng if rng is not None else np.random.default_rng(0)
        bound = 1.0 / math.sqrt(hidden_size)
        h4 = 4 * hidden_size
        self.w_x = Parameter(_uniform(rng, (h4, input_size), bound), "w_x")
        self.w_h = Parameter(_uniform(rng, (h4, hidden_size), bound), "w_h")
        self.b_ih = Parameter(_uniform(rng, (h4,), bound), "b_ih")
        self.b_hh = Parameter(_uniform(rng, (h4,), bound), "b_hh")

    def parameters(self):
        return [self.w_x, self.w_h, self.b_ih, self.b_hh]

    def config(self):
        return {
            "input_size": self.input_size,
            "hidden_size": self.hidden_size,
            "return_sequences": self.return_sequences,
        }

    def cell_params(self) -> F.LstmCellParams:
        return F.LstmCellParams(self.w_x.value, self.w_h.value, self.b_ih.value, self.b_hh.value)

    def output_shape(self, in_shape):
        t, d = in_shape
        if d != self.input_size:
            raise DimensionError(f"lstm expects {self.input_size} features, got {d}")
        return (t, self.hidden_size) if self.return_sequences else (self.hidden_size,)

    def forward(self, x):
        n, t_len, d = x.shape
        if d != self.input_size:
            raise DimensionError(f"lstm expects {self.input_size} features, got {d}")
        hid = self.hidden_size
        # Input projections for all steps at once.
        zx = x @ self.w_x.value.T + (self.b_ih.value + self.b_hh.value)
        w_hT = self.w_h.value.T
        hs = np.zeros((n, t_len + 1, hid))
        cs = np.zeros((n, t_len + 1, hid))
        gates = np.empty((n, t_len, 4 * hid))
        tanh_c = np.empty((n, t_len, hid))
        for t in range(t_len):
            z = zx[:, t] + hs[:, t] @ w_hT
            g = gates[:, t]
            g[:, : 2 * hid] = F.sigmoid(z[:, : 2 * hid])
            g[:, 2 * hid : 3 * hid] = np.tanh(z[:, 2 * hid : 3 * hid])
            g[:, 3 * hid :] = F.sigmoid(z[:, 3 * hid :])
            cs[:, t + 1] = g[:, hid : 2 * hid] * cs[:, t] + g[:, :hid] * g[:, 2 * hid : 3 * hid]
            tanh_c[:, t] = np.tanh(cs[:, t + 1])
            hs[:, t + 1] = g[:, 3 * hid :] * tanh_c[:, t]
        self._cache = (x, hs, cs, gates, tanh_c)
        return hs[:, 1:].copy() if self.return_sequences else hs[:, -1].copy()

    def backward(self, grad):
        x, hs, cs, gates, tanh_c = self._take_cache()
        n, t_len, _ = x.shape
        hid = self.hidden_size
        if self.return_sequences:
            d_hs = grad
        else:
            d_hs = np.zeros((n, t_len, hid))
            d_hs[:, -1] = grad
        w_h = self.w_h.value
        dz_all = np.empty((n, t_len, 4 * hid))
        dh_next = np.zeros((n, hid))
        dc_next = np.zeros((n, hid))
        for t in range(t_len - 1, -1, -1):
            g = gates[:, t]
            i, f = g[:, :hid], g[:, hid : 2 * hid]
            a, o = g[:, 2 * hid : 3 * hid], g[:, 3 * hid :]
            tc = tanh_c[:, t]
            dh = d_hs[:, t] + dh_next
            dc = dc_next + dh * o * (1.0 - tc * tc)
            dz = dz_all[:, t]
            dz[:, :hid] = dc * a * i * (1.0 - i)
            dz[:, hid : 2 * hid] = dc * cs[:, t] * f * (1.0 - f)
            dz[:, 2 * hid : 3 * hid] = dc * i * (1.0 - a * a)
            dz[:, 3 * hid :] = dh * tc * o * (1.0 - o)
            dc_next = dc * f
            dh_next = dz @ w_h
        dz2 = dz_all.reshape(-1, 4 * hid)
        self.w_x.grad += dz2.T @ x.reshape(-1, self.input_size)
        self.w_h.grad += dz2.T @ hs[:, :-1].reshape(-1, hid)
        db = dz2.sum(axis=0)
        self.b_ih.grad += db
        self.b_hh.grad += db
        return dz_all @ self.w_x.value


LAYER_TYPES = {
    cls.kind: cls
    for cls in (Conv2d, ConvTranspose2d, Linear, ReLU, Sigmoid, Tanh, Flatten,
                Unflatten, RepeatVector, LSTM)
}


class Sequential(Layer):
    """A chain of layers; the unit the optimizer and checkpoints work on."""

    kind = "sequential"

    def __init__(self, layers, names=None):
        super().__init__()
        self.layers = list(layers)
        self.names = list(names) if names is not None else [
            f"{layer.kind}{k}" for k, layer in enumerate(self.layers)
        ]
        self._recorded = False

    def parameters(self):
        return [p for layer in self.layers for p in layer.parameters()]

    def named_parameters(self):
        for name, layer in zip(self.names, self.layers):
            for p in layer.parameters():
                yield f"{name}.{p.name}", p

    def param_count(self) -> int:
        return sum(p.size for p in self.parameters())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def shape_trace(self, in_shape) -> list[tuple[str, tuple]]:
        """Per-sample output shape after every layer."""
        trace = []
        shape = tuple(in_shape)
        for name, layer in zip(self.names, self.layers):
            shape = layer.output_shape(shape)
            trace.append((name, shape))
        return trace

    def output_shape(self, in_shape):
        return self.shape_trace(in_shape)[-1][1]

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        for layer in self.layers:
            x = layer.forward(x)
        self._recorded = True
        return x

    def backward(self, grad):
        if not self._recorded:
            raise StateError("backward called without a forward pass")
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        self._recorded = False
        return grad

    def spec(self) -> list[dict]:
        return [
            {"name": name, "kind": layer.kind, "config": layer.config()}
            for name, layer in zip(self.names, self.layers)
        ]

    @classmethod
    def from_spec(cls, spec: list[dict]) -> "Sequential":
        layers = []
        for entry in spec:
            kind = entry["kind"]
            if kind not in LAYER_TYPES:
                raise ValueError(f"unknown layer kind {kind!r}")
            layers.append(LAYER_TYPES[kind](**entry["config"]))
        return cls(layers, names=[e["name"] for e in spec])


def backward(model: Sequential, pred: np.ndarray, target: np.ndarray) -> float:
    """Backpropagate the mean squared error of ``pred`` against ``target``.

    ``pred`` must be the output of the model's most recent forward pass.
    Gradients accumulate into every parameter; the loss value is returned.
    """
    loss = F.mse_loss(pred, target)
    model.backward(F.mse_loss_grad(pred, target))
    return loss
