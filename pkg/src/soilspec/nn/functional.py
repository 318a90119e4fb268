"""Forward/backward kernels for 1-D feature maps.

Feature maps are batch-major arrays of shape (batch, channels, length);
dense activations are (batch, features).
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    pass


def conv1d_output_length(length: int, kernel: int, stride: int, padding: int) -> int:
    span = length + 2 * padding - kernel
    if span < 0:
        raise ShapeError(f"kernel {kernel} larger than padded input ({length} + 2*{padding})")
    return span // stride + 1


def _im2col(x: np.ndarray, kernel: int, stride: int, padding: int) -> np.ndarray:
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding)))
    win = sliding_window_view(x, kernel, axis=2)[:, :, ::stride, :]
    batch, ch, l_out, _ = win.shape
    return np.ascontiguousarray(win.transpose(0, 2, 1, 3)).reshape(batch * l_out, ch * kernel)


def conv1d_forward(x, weight, bias, stride: int = 1, padding: int = 0):
    """Cross-correlation with zero padding.

    Returns ``(y, cache)`` with ``y`` of shape (batch, out_ch, l_out).
    """
    x = np.asarray(x)
    if x.ndim == 2:
        x = x[None]
    out_ch, in_ch, kernel = weight.shape
    if x.shape[1] != in_ch:
        raise ShapeError(f"input has {x.shape[1]} channels, weights expect {in_ch}")
    if bias is not None and bias.shape != (out_ch,):
        raise ShapeError(f"bias shape {bias.shape} does not match {out_ch} filters")
    batch, _, length = x.shape
    l_out = conv1d_output_length(length, kernel, stride, padding)
    cols = _im2col(x, kernel, stride, padding)
    y = cols @ weight.reshape(out_ch, -1).T
    if bias is not None:
        y += bias
    y = y.reshape(batch, l_out, out_ch).transpose(0, 2, 1)
    return np.ascontiguousarray(y), (cols, x.shape, kernel, stride, padding)


def conv1d_backward(grad_out, weight, cache):
    """Returns ``(grad_x, grad_w, grad_b)``."""
    cols, x_shape, kernel, stride, padding = cache
    batch, in_ch, length = x_shape
    out_ch = weight.shape[0]
    if grad_out.shape[:2] != (batch, out_ch):
        raise ShapeError(f"grad_out shape {grad_out.shape} inconsistent with forward call")
    l_out = grad_out.shape[2]
    g = grad_out.transpose(0, 2, 1).reshape(batch * l_out, out_ch)
    grad_w = (g.T @ cols).reshape(weight.shape)
    grad_b = grad_out.sum(axis=(0, 2))
    gcols = (g @ weight.reshape(out_ch, -1)).reshape(batch, l_out, in_ch, kernel)
    gpad = np.zeros((batch, in_ch, length + 2 * padding), dtype=grad_out.dtype)
    stop = stride * (l_out - 1) + 1
    for k in range(kernel):
        gpad[:, :, k:k + stop:stride] += gcols[:, :, :, k].transpose(0, 2, 1)
    grad_x = gpad[:, :, padding:padding + length] if padding else gpad
    return grad_x, grad_w, grad_b


def _bn_axes(x: np.ndarray) -> tuple[int, ...]:
    return (0, 2) if x.ndim == 3 else (0,)


def _per_channel(v: np.ndarray, ndim: int) -> np.ndarray:
    return v[None, :, None] if ndim == 3 else v[None, :]


def batchnorm_forward(x, gamma, beta, running_mean, running_var, train: bool,
                      momentum: float = 0.01, eps: float = 1e-5):
    """Batch normalization over (batch, length) per channel, or over batch per
    feature for 2-D input.

    Train mode updates ``running_* <- (1 - momentum) * running + momentum * batch``
    in place, using the population (1/N) batch variance.
    """
    axes = _bn_axes(x)
    if train:
        count = x.size // x.shape[1]
        if count < 2:
            raise ShapeError("train-mode batch norm needs at least two values per channel")
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        running_var *= 1.0 - momentum
        running_var += momentum * var
    else:
        if running_mean is None or running_var is None:
            raise ShapeError("batch norm running statistics are uninitialized")
        mean, var = running_mean, running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    x_hat = (x - _per_channel(mean, x.ndim)) * _per_channel(inv_std, x.ndim)
    y = x_hat * _per_channel(gamma, x.ndim) + _per_channel(beta, x.ndim)
    return y, (x_hat, inv_std, train)


def batchnorm_backward(grad_out, gamma, cache):
    x_hat, inv_std, train = cache
    axes = _bn_axes(grad_out)
    nd = grad_out.ndim
    grad_gamma = (grad_out * x_hat).sum(axis=axes)
    grad_beta = grad_out.sum(axis=axes)
    g_hat = grad_out * _per_channel(gamma, nd)
    if not train:
        return g_hat * _per_channel(inv_std, nd), grad_gamma, grad_beta
    count = grad_out.size // grad_out.shape[1]
    grad_x = _per_channel(inv_std, nd) / count * (
        count * g_hat
        - _per_channel(g_hat.sum(axis=axes), nd)
        - x_hat * _per_channel((g_hat * x_hat).sum(axis=axes), nd)
    )
    return grad_x, grad_gamma, grad_beta


def leaky_relu(x, leak: float):
    return np.where(x >= 0, x, leak * x)


def leaky_relu_grad(x, leak: float):
    return np.where(x >= 0, 1.0, leak).astype(x.dtype, copy=False)


def linear_forward(x, weight, bias):
    if x.shape[-1] != weight.shape[1]:
        raise ShapeError(f"input has {x.shape[-1]} features, weights expect {weight.shape[1]}")
    return x @ weight.T + bias


def linear_backward(grad_out, x, weight):
    grad_x = grad_out @ weight
    grad_w = grad_out.T @ x if grad_out.ndim == 2 else np.outer(grad_out, x)
    grad_b = grad_out.sum(axis=0) if grad_out.ndim == 2 else grad_out.copy()
    return grad_x, grad_w, grad_b
