from .adam import AdamState, NonFiniteGradientError, adam_update
from .lstm import ConvLSTMParams, convlstm_backward, convlstm_forward, convlstm_step
from .ops import (
    ShapeError,
    conv2d,
    conv2d_backward,
    conv2d_forward,
    maxpool2,
    maxpool2_backward,
    maxpool2_forward,
    relu,
    sigmoid,
    upsample2,
    upsample2_backward,
)

__all__ = [
    "AdamState",
    "ConvLSTMParams",
    "NonFiniteGradientError",
    "ShapeError",
    "adam_update",
    "conv2d",
    "conv2d_backward",
    "conv2d_forward",
    "convlstm_backward",
    "convlstm_forward",
    "convlstm_step",
    "maxpool2",
    "maxpool2_backward",
    "maxpool2_forward",
    "relu",
    "sigmoid",
    "upsample2",
    "upsample2_backward",
]
