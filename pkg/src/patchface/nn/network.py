"""The 20x20-patch embedding network.

Fixed stack: 3x3 conv (6 maps) -> batch norm -> sigmoid -> 2x2 max pool
-> 3x3 conv (32 maps) -> relu -> 2x2 max pool -> flatten (288, channel-
major) -> fully connected (128).  Input patches are single-channel
(1, 20, 20); intermediate shapes are therefore (6,18,18), (6,9,9),
(32,7,7), (32,3,3), 288, 128.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from typing import Optional

import numpy as np

from .layers import (
    batchnorm_backward,
    batchnorm_forward,
    conv2d_backward,
    conv2d_forward,
    maxpool2x2_backward,
    maxpool2x2_forward,
    relu_backward,
    relu_forward,
    sigmoid_backward,
    sigmoid_forward,
)

PATCH_SHAPE = (1, 20, 20)
EMBEDDING_DIM = 128

# (name, shape) of every serialized tensor, in file order.  bn_eps rides
# along as a 1-element tensor so a params file is self-contained.
PARAM_SHAPES = (
    ("conv1_w", (6, 1, 3, 3)),
    ("conv1_b", (6,)),
    ("bn_scale", (6,)),
    ("bn_shift", (6,)),
    ("bn_mean", (6,)),
    ("bn_var", (6,)),
    ("conv2_w", (32, 6, 3, 3)),
    ("conv2_b", (32,)),
    ("fc_w", (128, 288)),
    ("fc_b", (128,)),
)

# Learnable subset (running stats and eps are state, not parameters).
LEARNABLE = ("conv1_w", "conv1_b", "bn_scale", "bn_shift",
             "conv2_w", "conv2_b", "fc_w", "fc_b")

BN_MOMENTUM = 0.1
# Kept at float32 precision so a serialized params file round-trips bit-exactly.
DEFAULT_BN_EPS = float(np.float32(1e-5))


@dataclass
class NetworkParams:
    """All tensors of one modality's network, float32 in production."""

    conv1_w: np.ndarray
    conv1_b: np.ndarray
    bn_scale: np.ndarray
    bn_shift: np.ndarray
    bn_mean: np.ndarray
    bn_var: np.ndarray
    conv2_w: np.ndarray
    conv2_b: np.ndarray
    fc_w: np.ndarray
    fc_b: np.ndarray
    bn_eps: float = DEFAULT_BN_EPS

    def validate(self):
        for name, shape in PARAM_SHAPES:
            arr = getattr(self, name)
            if arr.shape != shape:
                raise ValueError(f"{name} has shape {arr.shape}, expected {shape}")
        if not np.all(self.bn_var > 0):
            raise ValueError("bn running variance must be strictly positive")
        return self

    def copy(self) -> "NetworkParams":
        return NetworkParams(
            **{name: getattr(self, name).copy() for name, _ in PARAM_SHAPES},
            bn_eps=self.bn_eps,
        )

    def astype(self, dtype) -> "NetworkParams":
        return NetworkParams(
            **{name: getattr(self, name).astype(dtype) for name, _ in PARAM_SHAPES},
            bn_eps=self.bn_eps,
        )

    def equal(self, other: "NetworkParams") -> bool:
        """Bitwise equality of every tensor (and eps)."""
        return self.bn_eps == other.bn_eps and all(
            np.array_equal(getattr(self, n), getattr(other, n))
            for n, _ in PARAM_SHAPES
        )


@dataclass
class ParamGrads:
    """Gradients for the learnable tensors, shapes mirroring NetworkParams."""

    conv1_w: np.ndarray
    conv1_b: np.ndarray
    bn_scale: np.ndarray
    bn_shift: np.ndarray
    conv2_w: np.ndarray
    conv2_b: np.ndarray
    fc_w: np.ndarray
    fc_b: np.ndarray

    def __iadd__(self, other: "ParamGrads") -> "ParamGrads":
        for f in fields(self):
            getattr(self, f.name).__iadd__(getattr(other, f.name))
        return self

    @classmethod
    def zeros_like(cls, params: NetworkParams) -> "ParamGrads":
        return cls(**{n: np.zeros_like(getattr(params, n)) for n in LEARNABLE})


@dataclass
class ForwardTrace:
    """Cached intermediates of one forward pass, consumed by the backward."""

    x: np.ndarray
    bn_cache: Optional[tuple]
    sig_out: np.ndarray
    pool1_in_shape: tuple
    pool1_argmax: np.ndarray
    pool1_out: np.ndarray
    conv2_out: np.ndarray
    pool2_in_shape: tuple
    pool2_argmax: np.ndarray
    flat: np.ndarray
    training: bool
    shapes: tuple = field(default=())


def init_params(rng: np.random.Generator, eps: float = DEFAULT_BN_EPS,
                dtype=np.float32) -> NetworkParams:
    """Uniform +-sqrt(1/fan_in) weights, zero biases, identity batch norm."""
    eps = float(np.float32(eps))

    def u(shape, fan_in):
        k = np.sqrt(1.0 / fan_in)
        return rng.uniform(-k, k, size=shape).astype(dtype)

    return NetworkParams(
        conv1_w=u((6, 1, 3, 3), 9),
        conv1_b=np.zeros(6, dtype=dtype),
        bn_scale=np.ones(6, dtype=dtype),
        bn_shift=np.zeros(6, dtype=dtype),
        bn_mean=np.zeros(6, dtype=dtype),
        bn_var=np.ones(6, dtype=dtype),
        conv2_w=u((32, 6, 3, 3), 54),
        conv2_b=np.zeros(32, dtype=dtype),
        fc_w=u((128, 288), 288),
        fc_b=np.zeros(128, dtype=dtype),
        bn_eps=eps,
    )


def _check_input(x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x)
    if x.ndim == 3:
        if x.shape != PATCH_SHAPE:
            raise ValueError(f"patch shape {x.shape}, expected {PATCH_SHAPE}")
        return x[np.newaxis], False
    if x.ndim == 4 and x.shape[1:] == PATCH_SHAPE:
        return x, True
    raise ValueError(f"expected {PATCH_SHAPE} or (N,)+{PATCH_SHAPE}, got {x.shape}")


def network_forward(x, params: NetworkParams, training: bool = False,
                    return_trace: bool = False):
    """Map patches to 128-d embeddings.

    x is one (1, 20, 20) patch or a batch (N, 1, 20, 20).  Training mode
    normalizes with batch statistics and updates params.bn_mean/bn_var in
    place; inference mode is a pure function of (params, x).  With
    return_trace=True also returns the ForwardTrace for network_backward.
    """
    xb, batched = _check_input(x)
    c1 = conv2d_forward(xb, params.conv1_w, params.conv1_b)
    bn, bn_cache, new_mean, new_var = batchnorm_forward(
        c1, params.bn_scale, params.bn_shift, params.bn_mean, params.bn_var,
        params.bn_eps, momentum=BN_MOMENTUM, training=training,
    )
    if training:
        params.bn_mean = new_mean
        params.bn_var = new_var
    sig = sigmoid_forward(bn)
    p1, am1 = maxpool2x2_forward(sig)
    c2 = conv2d_forward(p1, params.conv2_w, params.conv2_b)
    r2 = relu_forward(c2)
    p2, am2 = maxpool2x2_forward(r2)
    flat = p2.reshape(p2.shape[0], -1)  # channel-major: (channel, row, col)
    emb = flat @ params.fc_w.T + params.fc_b
    if not batched:
        emb = emb[0]
    if not return_trace:
        return emb
    trace = ForwardTrace(
        x=xb, bn_cache=bn_cache, sig_out=sig,
        pool1_in_shape=sig.shape, pool1_argmax=am1, pool1_out=p1,
        conv2_out=c2, pool2_in_shape=r2.shape, pool2_argmax=am2,
        flat=flat, training=training,
        shapes=(c1.shape[1:], bn.shape[1:], sig.shape[1:], p1.shape[1:],
                c2.shape[1:], r2.shape[1:], p2.shape[1:],
                (flat.shape[1],), (emb.shape[-1],)),
    )
    return emb, trace


def activation_signature(trace: ForwardTrace) -> bytes:
    """Discrete routing state of a forward pass (pool argmaxes, ReLU mask).

    Finite-difference probes are only valid while this stays constant;
    see nn.gradcheck.
    """
    return (
        trace.pool1_argmax.tobytes()
        + trace.pool2_argmax.tobytes()
        + (trace.conv2_out > 0).tobytes()
    )


def network_backward(trace: ForwardTrace, grad_embedding,
                     params: NetworkParams) -> ParamGrads:
    """Chain rule through the full stack; grads summed over the batch."""
    if not trace.training:
        raise ValueError("backward requires a training-mode trace")
    g = np.asarray(grad_embedding)
    if g.ndim == 1:
        g = g[np.newaxis]
    if g.shape != (trace.flat.shape[0], EMBEDDING_DIM):
        raise ValueError(f"grad_embedding shape {g.shape} does not match trace")
    fc_w_g = g.T @ trace.flat
    fc_b_g = g.sum(axis=0)
    gflat = g @ params.fc_w
    gp2 = gflat.reshape((gflat.shape[0],) + (32, 3, 3))
    gr2 = maxpool2x2_backward(trace.pool2_in_shape, trace.pool2_argmax, gp2)
    gc2 = relu_backward(trace.conv2_out, gr2)
    gp1, conv2_w_g, conv2_b_g = conv2d_backward(trace.pool1_out, params.conv2_w, gc2)
    gsig = maxpool2x2_backward(trace.pool1_in_shape, trace.pool1_argmax, gp1)
    gbn = sigmoid_backward(trace.sig_out, gsig)
    gc1, bn_scale_g, bn_shift_g = batchnorm_backward(trace.bn_cache, gbn)
    _, conv1_w_g, conv1_b_g = conv2d_backward(trace.x, params.conv1_w, gc1)
    return ParamGrads(
        conv1_w=conv1_w_g, conv1_b=conv1_b_g,
        bn_scale=bn_scale_g, bn_shift=bn_shift_g,
        conv2_w=conv2_w_g, conv2_b=conv2_b_g,
        fc_w=fc_w_g, fc_b=fc_b_g,
    )
