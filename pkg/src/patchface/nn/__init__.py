"""Minimal tensor/layer toolkit for the patch embedding network."""

from .gradcheck import GradientCheckFailure, gradient_check, numerical_gradient, relative_error
from .io import (
    BadMagicError,
    ModelFormatError,
    TruncatedError,
    VersionError,
    deserialize_params,
    load_params,
    save_params,
    serialize_params,
)
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
from .network import (
    EMBEDDING_DIM,
    activation_signature,
    LEARNABLE,
    PATCH_SHAPE,
    ForwardTrace,
    NetworkParams,
    ParamGrads,
    init_params,
    network_backward,
    network_forward,
)
from .optim import OptimizerState, sgd_step

__all__ = [
    "BadMagicError",
    "EMBEDDING_DIM",
    "ForwardTrace",
    "GradientCheckFailure",
    "LEARNABLE",
    "ModelFormatError",
    "NetworkParams",
    "OptimizerState",
    "PATCH_SHAPE",
    "ParamGrads",
    "TruncatedError",
    "VersionError",
    "batchnorm_backward",
    "batchnorm_forward",
    "conv2d_backward",
    "conv2d_forward",
    "deserialize_params",
    "gradient_check",
    "init_params",
    "load_params",
    "maxpool2x2_backward",
    "maxpool2x2_forward",
    "network_backward",
    "network_forward",
    "numerical_gradient",
    "relative_error",
    "relu_backward",
    "relu_forward",
    "save_params",
    "serialize_params",
    "sgd_step",
    "sigmoid_backward",
    "sigmoid_forward",
    "activation_signature",
]
