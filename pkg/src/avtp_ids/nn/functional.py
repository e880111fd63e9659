"""Stateless array operations with their hand-written gradients.

Every function accepts either a single sample or a batch with a leading
batch axis. Arrays are float64 numpy arrays; "tensor" in this package means
exactly that.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import as_strided
from scipy.special import expit


class DimensionError(ValueError):
    """Raised when operand shapes do not agree."""


def _pair(v) -> tuple[int, int]:
    if isinstance(v, int):
        return (v, v)
    a, b = v
    return (int(a), int(b))


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def conv_transpose_output_size(
    size: int, kernel: int, stride: int, padding: int, output_padding: int
) -> int:
    return (size - 1) * stride - 2 * padding + kernel + output_padding


def _batched(x: np.ndarray, ndim: int) -> tuple[np.ndarray, bool]:
    if x.ndim == ndim:
        return x[None], True
    if x.ndim == ndim + 1:
        return x, False
    raise DimensionError(f"expected {ndim} or {ndim + 1} dims, got shape {x.shape}")


def im2col(xp: np.ndarray, kernel, stride, out_hw) -> np.ndarray:
    """Patch matrix of a padded batch ``[N, C, Hp, Wp]``.

    Returns ``[N * oh * ow, C * kh * kw]`` in (c, i, j) column order, which
    matches ``weight.reshape(C_out, -1)`` for a ``[C_out, C, kh, kw]`` weight.
    """
    kh, kw = kernel
    sh, sw = stride
    oh, ow = out_hw
    n, c = xp.shape[:2]
    s0, s1, s2, s3 = xp.strides
    view = as_strided(
        xp,
        shape=(n, oh, ow, c, kh, kw),
        strides=(s0, s2 * sh, s3 * sw, s1, s2, s3),
        writeable=False,
    )
    return view.reshape(n * oh * ow, c * kh * kw)


def col2im(cols: np.ndarray, padded_shape, kernel, stride, out_hw) -> np.ndarray:
    """Adjoint of :func:`im2col`: scatter-add patches into a padded buffer."""
    n, c, hp, wp = padded_shape
    kh, kw = kernel
    sh, sw = stride
    oh, ow = out_hw
    cols = cols.reshape(n, oh, ow, c, kh, kw)
    buf = np.zeros(padded_shape)
    for i in range(kh):
        for j in range(kw):
            buf[:, :, i : i + sh * oh : sh, j : j + sw * ow : sw] += cols[
                :, :, :, :, i, j
            ].transpose(0, 3, 1, 2)
    return buf


def _conv_geometry(x_shape, w_shape, stride, padding):
    n, c, h, w = x_shape
    c_out, c_in, kh, kw = w_shape
    if c != c_in:
        raise DimensionError(f"input has {c} channels, weight expects {c_in}")
    sh, sw = stride
    ph, pw = padding
    if h + 2 * ph < kh or w + 2 * pw < kw:
        raise DimensionError("kernel larger than padded input")
    oh = conv_output_size(h, kh, sh, ph)
    ow = conv_output_size(w, kw, sw, pw)
    return oh, ow


def conv2d(x, weight, bias=None, stride=1, padding=0) -> np.ndarray:
    """Cross-correlation of ``x`` ``[C, H, W]`` (or ``[N, C, H, W]``) with
    ``weight`` ``[C_out, C_in, kH, kW]``."""
    stride, padding = _pair(stride), _pair(padding)
    xb, single = _batched(np.asarray(x, dtype=np.float64), 3)
    out = _conv2d_batched(xb, weight, bias, stride, padding)[0]
    return out[0] if single else out


def _conv2d_batched(x, weight, bias, stride, padding):
    n = x.shape[0]
    c_out = weight.shape[0]
    oh, ow = _conv_geometry(x.shape, weight.shape, stride, padding)
    ph, pw = padding
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if (ph or pw) else x
    cols = im2col(xp, weight.shape[2:], stride, (oh, ow))
    out = cols @ weight.reshape(c_out, -1).T
    if bias is not None:
        out += bias
    out = out.reshape(n, oh, ow, c_out).transpose(0, 3, 1, 2)
    return np.ascontiguousarray(out), cols, xp.shape


def _conv2d_backward(grad_out, weight, cols, padded_shape, stride, padding, in_hw):
    """Gradients of :func:`conv2d` w.r.t. input, weight and bias."""
    n, c_out, oh, ow = grad_out.shape
    g = grad_out.transpose(0, 2, 3, 1).reshape(-1, c_out)
    grad_w = (g.T @ cols).reshape(weight.shape)
    grad_b = g.sum(axis=0)
    dcols = g @ weight.reshape(c_out, -1)
    buf = col2im(dcols, padded_shape, weight.shape[2:], stride, (oh, ow))
    ph, pw = padding
    h, w = in_hw
    grad_x = buf[:, :, ph : ph + h, pw : pw + w]
    return np.ascontiguousarray(grad_x), grad_w, grad_b


def conv_transpose2d(
    x, weight, bias=None, stride=1, padding=0, output_padding=0
) -> np.ndarray:
    """Transposed convolution; ``weight`` is ``[C_in, C_out, kH, kW]``.

    This is the exact adjoint of :func:`conv2d` with the same weight and
    geometry, plus ``output_padding`` extra rows/columns at the far edge.
    """
    stride, padding = _pair(stride), _pair(padding)
    output_padding = _pair(output_padding)
    xb, single = _batched(np.asarray(x, dtype=np.float64), 3)
    out = _conv_transpose2d_batched(xb, weight, bias, stride, padding, output_padding)
    return out[0] if single else out


def _conv_transpose2d_batched(x, weight, bias, stride, padding, output_padding):
    n, c_in, h, w = x.shape
    if weight.shape[0] != c_in:
        raise DimensionError(f"input has {c_in} channels, weight expects {weight.shape[0]}")
    _, c_out, kh, kw = weight.shape
    sh, sw = stride
    ph, pw = padding
    oph, opw = output_padding
    if oph >= sh or opw >= sw or oph < 0 or opw < 0:
        raise DimensionError("output_padding must be smaller than stride")
    out_h = conv_transpose_output_size(h, kh, sh, ph, oph)
    out_w = conv_transpose_output_size(w, kw, sw, pw, opw)
    if out_h <= 0 or out_w <= 0:
        raise DimensionError("non-positive transposed-conv output size")
    padded = (n, c_out, out_h + 2 * ph, out_w + 2 * pw)
    g = x.transpose(0, 2, 3, 1).reshape(-1, c_in)
    dcols = g @ weight.reshape(c_in, -1)
    buf = col2im(dcols, padded, (kh, kw), stride, (h, w))
    out = buf[:, :, ph : ph + out_h, pw : pw + out_w]
    out = np.ascontiguousarray(out)
    if bias is not None:
        out += bias[None, :, None, None]
    return out


def linear(x, weight, bias=None) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != weight.shape[1]:
        raise DimensionError(
            f"input features {x.shape[-1]} != weight columns {weight.shape[1]}"
        )
    out = x @ weight.T
    if bias is not None:
        if bias.shape != (weight.shape[0],):
            raise DimensionError("bias length must equal weight rows")
        out = out + bias
    return out


def relu(x):
    return np.maximum(x, 0.0)


def relu_grad(x):
    return (x > 0).astype(np.float64)


def sigmoid(x):
    return expit(np.asarray(x, dtype=np.float64))


def sigmoid_grad(x):
    s = sigmoid(x)
    return s * (1.0 - s)


def tanh(x):
    return np.tanh(x)


def tanh_grad(x):
    t = np.tanh(x)
    return 1.0 - t * t


GATES = ("i", "f", "a", "o")


class LstmCellParams:
    """Weights of one LSTM cell, stacked gate-wise in (input, forget, active,
    output) order.

    ``w_x`` is ``[4H, D]``, ``w_h`` is ``[4H, H]``; every gate has both an
    input-side bias ``b_ih`` and a hidden-side bias ``b_hh``.
    """

    def __init__(self, w_x, w_h, b_ih, b_hh):
        self.w_x = np.asarray(w_x, dtype=np.float64)
        self.w_h = np.asarray(w_h, dtype=np.float64)
        self.b_ih = np.asarray(b_ih, dtype=np.float64)
        self.b_hh = np.asarray(b_hh, dtype=np.float64)
        four_h, _ = self.w_x.shape
        if four_h % 4:
            raise DimensionError("stacked gate rows must be a multiple of 4")
        hid = four_h // 4
        if self.w_h.shape != (four_h, hid):
            raise DimensionError(f"w_h must be {(four_h, hid)}, got {self.w_h.shape}")
        if self.b_ih.shape != (four_h,) or self.b_hh.shape != (four_h,):
            raise DimensionError("gate biases must have length 4H")

    @property
    def hidden_size(self) -> int:
        return self.w_h.shape[1]

    @property
    def input_size(self) -> int:
        return self.w_x.shape[1]

    def gate(self, name: str):
        """``(W_x, W_h, b_ih, b_hh)`` slices of one gate."""
        k = GATES.index(name)
        hid = self.hidden_size
        sl = slice(k * hid, (k + 1) * hid)
        return self.w_x[sl], self.w_h[sl], self.b_ih[sl], self.b_hh[sl]


def lstm_gates(x_t, h_prev, params: LstmCellParams) -> np.ndarray:
    """Stacked gate pre-activations ``[..., 4H]``."""
    if x_t.shape[-1] != params.input_size or h_prev.shape[-1] != params.hidden_size:
        raise DimensionError("lstm input/hidden width mismatch")
    return x_t @ params.w_x.T + h_prev @ params.w_h.T + params.b_ih + params.b_hh


def lstm_cell(x_t, h_prev, c_prev, params: LstmCellParams):
    """One LSTM step; returns ``(h_t, c_t)``."""
    x_t = np.asarray(x_t, dtype=np.float64)
    z = lstm_gates(x_t, np.asarray(h_prev, dtype=np.float64), params)
    hid = params.hidden_size
    i = sigmoid(z[..., :hid])
    f = sigmoid(z[..., hid : 2 * hid])
    a = np.tanh(z[..., 2 * hid : 3 * hid])
    o = sigmoid(z[..., 3 * hid :])
    c_t = f * c_prev + i * a
    h_t = o * np.tanh(c_t)
    return h_t, c_t


def lstm_sequence(inputs, params: LstmCellParams, return_sequences: bool = True):
    """Run a cell over ``[T, D]`` (or ``[N, T, D]``) from a zero state."""
    inputs = np.asarray(inputs, dtype=np.float64)
    xb, single = _batched(inputs, 2)
    n, t_len, _ = xb.shape
    if t_len < 1:
        raise DimensionError("sequence must have at least one step")
    h = np.zeros((n, params.hidden_size))
    c = np.zeros_like(h)
    hs = np.empty((n, t_len, params.hidden_size))
    for t in range(t_len):
        h, c = lstm_cell(xb[:, t], h, c, params)
        hs[:, t] = h
    out = hs if return_sequences else hs[:, -1]
    return out[0] if single else out


def mse_loss(pred, target) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise DimensionError(f"shape mismatch {pred.shape} vs {target.shape}")
    return float(np.mean((pred - target) ** 2))


def mse_loss_grad(pred, target) -> np.ndarray:
    """d/d(pred) of :func:`mse_loss`: ``2 (pred - target) / n``."""
    pred = np.asarray(pred, dtype=np.float64)
    return 2.0 * (pred - target) / pred.size


def per_sample_mse(pred, target) -> np.ndarray:
    """Mean squared error of each sample along the leading axis."""
    diff = np.asarray(pred, dtype=np.float64) - target
    return (diff.reshape(diff.shape[0], -1) ** 2).mean(axis=1)
