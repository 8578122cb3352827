"""Minimal numpy tensor library with reverse-mode autodiff and the layers the network needs."""

from . import functional
from .checkpoint import dump_arrays, load_arrays, read_arrays, save_arrays
from .functional import (
    causal_depthwise_conv1d,
    conv1d,
    cross_entropy,
    global_avg_pool,
    linear,
    maxpool1d,
    relu,
    selective_scan,
    silu,
    supcon_loss,
)
from .gradcheck import check_gradients, numerical_grad, relative_error
from .optim import OptimState, adam_step, zero_grad
from .ssm import MambaParams, SsmParams, init_a_log, mamba_block, ssm_scan
from .tensor import Tensor, backward, no_grad

fc = linear

__all__ = [
    "MambaParams",
    "OptimState",
    "SsmParams",
    "Tensor",
    "adam_step",
    "backward",
    "causal_depthwise_conv1d",
    "check_gradients",
    "conv1d",
    "cross_entropy",
    "dump_arrays",
    "fc",
    "functional",
    "global_avg_pool",
    "init_a_log",
    "linear",
    "load_arrays",
    "mamba_block",
    "maxpool1d",
    "no_grad",
    "numerical_grad",
    "read_arrays",
    "relative_error",
    "relu",
    "save_arrays",
    "selective_scan",
    "silu",
    "ssm_scan",
    "supcon_loss",
    "zero_grad",
]
