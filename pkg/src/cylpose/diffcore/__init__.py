"""Minimal reverse-mode autodiff on numpy arrays.

Tensors wrap ndarrays and record a backward closure per op; backward()
walks the graph once in reverse topological order and accumulates into
.grad (a second backward adds again rather than resetting). Gradients
of every operator are verified against central differences by
run_all_gradchecks.
"""

from .conv import PadSpec, conv2d, conv3d_aniso, deconv2d
from .gradcheck import (
    DEFAULT_STEP,
    DEFAULT_TOL,
    GradCheckResult,
    check_gradients,
    run_all_gradchecks,
)
from .norm import batchnorm
from .optim import AdamState, adam_step, zero_grads
from .tensor import (
    Tensor,
    add,
    as_tensor,
    backward,
    getitem,
    make_node,
    mse_loss,
    mul,
    relu,
    reshape,
    softmax_over_axes,
    stop_gradient,
    tmean,
    tsum,
)

__all__ = [
    "AdamState",
    "DEFAULT_STEP",
    "DEFAULT_TOL",
    "GradCheckResult",
    "PadSpec",
    "Tensor",
    "adam_step",
    "add",
    "as_tensor",
    "backward",
    "batchnorm",
    "check_gradients",
    "conv2d",
    "conv3d_aniso",
    "deconv2d",
    "getitem",
    "make_node",
    "mse_loss",
    "mul",
    "relu",
    "reshape",
    "run_all_gradchecks",
    "softmax_over_axes",
    "stop_gradient",
    "tmean",
    "tsum",
    "zero_grads",
]
