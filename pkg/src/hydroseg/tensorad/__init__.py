"""Minimal reverse-mode automatic differentiation on numpy arrays."""
from .core import Tensor, backward
from .gradcheck import GradCheckReport, grad_check
from .losses import cross_entropy, dice_loss, mse, one_hot, segmentation_loss
from .ops import (add, concat, conv3, crop, downsample2, matmul, mean, mul, relu, reshape, softmax, sub,
                  transpose, tsum, upsample2)
from .optim import SgdConfig, sgd_step
from .params import ParamStore
from .spatial import smoothness, spatial_transform

__all__ = [
    "Tensor", "backward", "GradCheckReport", "grad_check", "cross_entropy", "dice_loss", "mse", "one_hot",
    "segmentation_loss", "add", "concat", "conv3", "crop", "downsample2", "matmul", "mean", "mul", "relu",
    "reshape", "softmax", "sub", "transpose", "tsum", "upsample2", "SgdConfig", "sgd_step", "ParamStore",
    "smoothness", "spatial_transform",
]
