"""Forward and backward passes for the patch network's layers.

Everything operates on plain numpy arrays in (N, C, H, W) layout; the
single-sample (C, H, W) form is accepted too and returns a rank-3 result.
Layers preserve the input dtype so the same code runs the float32
production path and the float64 path used by gradient checking.

Conventions fixed here (they shape the rest of the package):
  * convolutions are valid cross-correlations, stride 1, no padding;
  * max pooling uses 2x2 windows with stride 2 and silently discards a
    trailing odd row/column;
  * batch norm uses population (biased) variance, both for normalizing
    and for the running-average update.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "conv2d_forward",
    "conv2d_backward",
    "batchnorm_forward",
    "batchnorm_backward",
    "sigmoid_forward",
    "sigmoid_backward",
    "relu_forward",
    "relu_backward",
    "maxpool2x2_forward",
    "maxpool2x2_backward",
]


def _as_batch(x):
    """Return (rank-4 view of x, had_batch_dim flag)."""
    x = np.asarray(x)
    if x.ndim == 3:
        return x[np.newaxis], False
    if x.ndim == 4:
        return x, True
    raise ValueError(f"expected rank-3 or rank-4 input, got shape {x.shape}")


def _windows(x, k):
    """Read-only sliding (k x k) window view: (N,C,H,W) -> (N,C,H-k+1,W-k+1,k,k)."""
    n, c, h, w = x.shape
    s = x.strides
    return np.lib.stride_tricks.as_strided(
        x,
        shape=(n, c, h - k + 1, w - k + 1, k, k),
        strides=(s[0], s[1], s[2], s[3], s[2], s[3]),
        writeable=False,
    )


def conv2d_forward(x, weights, bias):
    """Valid cross-correlation, stride 1.

    x: (C_in, H, W) or (N, C_in, H, W); weights: (C_out, C_in, k, k);
    bias: (C_out,).  Output spatial dims shrink by k - 1.
    """
    xb, batched = _as_batch(x)
    weights = np.asarray(weights)
    bias = np.asarray(bias)
    if weights.ndim != 4 or weights.shape[2] != weights.shape[3]:
        raise ValueError(f"bad weight shape {weights.shape}")
    k = weights.shape[2]
    if xb.shape[1] != weights.shape[1]:
        raise ValueError(
            f"input has {xb.shape[1]} channels, weights expect {weights.shape[1]}"
        )
    if xb.shape[2] < k or xb.shape[3] < k:
        raise ValueError(f"input {xb.shape[2]}x{xb.shape[3]} smaller than kernel {k}")
    win = _windows(xb, k)
    y = np.einsum("nchwij,ocij->nohw", win, weights, optimize=True)
    y += bias[:, np.newaxis, np.newaxis]
    y = np.ascontiguousarray(y)
    return y if batched else y[0]


def conv2d_backward(x, weights, grad_out):
    """Gradients of conv2d_forward w.r.t. input, weights and bias.

    grad_out must match the forward output shape for (x, weights).
    Returns (grad_input, grad_weights, grad_bias).
    """
    xb, batched = _as_batch(x)
    gb, gbatched = _as_batch(grad_out)
    if batched != gbatched or gb.shape[0] != xb.shape[0]:
        raise ValueError("input/grad_out batch mismatch")
    weights = np.asarray(weights)
    k = weights.shape[2]
    h_out = xb.shape[2] - k + 1
    w_out = xb.shape[3] - k + 1
    if gb.shape != (xb.shape[0], weights.shape[0], h_out, w_out):
        raise ValueError(
            f"grad_out shape {gb.shape} does not match forward output "
            f"{(xb.shape[0], weights.shape[0], h_out, w_out)}"
        )
    grad_bias = gb.sum(axis=(0, 2, 3))
    grad_weights = np.einsum(
        "nchwij,nohw->ocij", _windows(xb, k), gb, optimize=True
    )
    # Input gradient is the full correlation of grad_out with the
    # spatially flipped kernels, channels transposed.
    gp = np.pad(gb, ((0, 0), (0, 0), (k - 1, k - 1), (k - 1, k - 1)))
    wf = weights[:, :, ::-1, ::-1]
    grad_input = np.einsum("nohwij,ocij->nchw", _windows(gp, k), wf, optimize=True)
    grad_input = np.ascontiguousarray(grad_input)
    if not batched:
        grad_input = grad_input[0]
    return grad_input, grad_weights, grad_bias


def batchnorm_forward(x, scale, shift, running_mean, running_var, eps,
                      momentum=0.1, training=False):
    """Per-channel batch normalization over an (N, C, H, W) batch.

    Training mode normalizes with the batch's per-channel statistics and
    returns exponentially updated running statistics; inference mode uses
    the running statistics as-is.  Returns (y, cache, new_mean, new_var);
    cache feeds batchnorm_backward and is None in inference mode.
    """
    x = np.asarray(x)
    if x.ndim != 4:
        raise ValueError(f"batchnorm expects (N, C, H, W), got shape {x.shape}")
    scale = np.asarray(scale)
    shift = np.asarray(shift)
    cshape = (1, x.shape[1], 1, 1)
    if training:
        if x.shape[0] < 2:
            raise ValueError(
                f"batch size {x.shape[0]} < 2 in batchnorm training mode"
            )
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = (x - mean.reshape(cshape)) * inv_std.reshape(cshape)
        y = scale.reshape(cshape) * xhat + shift.reshape(cshape)
        new_mean = ((1.0 - momentum) * running_mean + momentum * mean).astype(
            running_mean.dtype
        )
        new_var = ((1.0 - momentum) * running_var + momentum * var).astype(
            running_var.dtype
        )
        cache = (xhat, inv_std, scale)
        return y.astype(x.dtype), cache, new_mean, new_var
    inv_std = 1.0 / np.sqrt(np.asarray(running_var) + eps)
    xhat = (x - np.asarray(running_mean).reshape(cshape)) * inv_std.reshape(cshape)
    y = scale.reshape(cshape) * xhat + shift.reshape(cshape)
    return y.astype(x.dtype), None, running_mean, running_var


def batchnorm_backward(cache, grad_out):
    """Backward pass for training-mode batch norm.

    Returns (grad_input, grad_scale, grad_shift).
    """
    xhat, inv_std, scale = cache
    g = np.asarray(grad_out)
    if g.shape != xhat.shape:
        raise ValueError(f"grad_out shape {g.shape} != input shape {xhat.shape}")
    c = xhat.shape[1]
    cshape = (1, c, 1, 1)
    nel = g.shape[0] * g.shape[2] * g.shape[3]
    grad_scale = (g * xhat).sum(axis=(0, 2, 3))
    grad_shift = g.sum(axis=(0, 2, 3))
    gx = (scale * inv_std).reshape(cshape) / nel * (
        nel * g
        - grad_shift.reshape(cshape)
        - xhat * grad_scale.reshape(cshape)
    )
    return gx.astype(xhat.dtype), grad_scale, grad_shift


def sigmoid_forward(x):
    """Elementwise logistic 1 / (1 + exp(-x)), overflow-safe."""
    x = np.asarray(x)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid_backward(y, grad_out):
    """Backward given the forward *output* y: dx = g * y * (1 - y)."""
    return np.asarray(grad_out) * y * (1.0 - y)


def relu_forward(x):
    x = np.asarray(x)
    return np.maximum(x, 0)


def relu_backward(x, grad_out):
    """Backward given the forward *input* x; gradient at exactly 0 is 0."""
    return np.where(np.asarray(x) > 0, np.asarray(grad_out), 0)


def maxpool2x2_forward(x):
    """2x2 max pooling, stride 2; a trailing odd row/column is discarded.

    Returns (y, argmax) where argmax holds, per output cell, the index
    0..3 of the window maximum in (row-major within the 2x2 window);
    ties resolve to the first position.
    """
    xb, batched = _as_batch(x)
    n, c, h, w = xb.shape
    if h < 2 or w < 2:
        raise ValueError(f"maxpool needs spatial dims >= 2, got {h}x{w}")
    h2, w2 = h // 2, w // 2
    win = xb[:, :, : 2 * h2, : 2 * w2].reshape(n, c, h2, 2, w2, 2)
    flat = win.transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h2, w2, 4)
    argmax = flat.argmax(axis=-1)
    y = np.take_along_axis(flat, argmax[..., np.newaxis], axis=-1)[..., 0]
    y = np.ascontiguousarray(y)
    if not batched:
        return y[0], argmax[0]
    return y, argmax


def maxpool2x2_backward(input_shape, argmax, grad_out):
    """Route each output gradient to its recorded argmax position."""
    gb, batched = _as_batch(grad_out)
    shape = tuple(input_shape)
    if len(shape) == 3:
        shape = (1,) + shape
    n, c, h, w = shape
    h2, w2 = h // 2, w // 2
    am = argmax if argmax.ndim == 4 else argmax[np.newaxis]
    if gb.shape != (n, c, h2, w2) or am.shape != gb.shape:
        raise ValueError("argmax/grad_out shape mismatch with input_shape")
    flat = np.zeros((n, c, h2, w2, 4), dtype=gb.dtype)
    np.put_along_axis(flat, am[..., np.newaxis], gb[..., np.newaxis], axis=-1)
    win = flat.reshape(n, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
    out = np.zeros(shape, dtype=gb.dtype)
    out[:, :, : 2 * h2, : 2 * w2] = win.reshape(n, c, 2 * h2, 2 * w2)
    if len(input_shape) == 3:
        return out[0]
    return out
