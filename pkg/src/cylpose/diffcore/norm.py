"""Batch normalization over the channel axis (axis 1) of any-rank input."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, make_node


def batchnorm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
    update_stats: bool = True,
) -> Tensor:
    """Normalize per channel; scale by gamma, shift by beta.

    Training mode normalizes with the biased batch variance, backprops
    through the batch statistics, and (unless update_stats is False)
    updates running_mean/running_var in place with an unbiased variance
    estimate. Inference mode is a pure affine map from the running
    statistics. update_stats=False lets auxiliary forward passes train
    without steering the running estimates off the primary data
    distribution.
    """
    if x.data.ndim < 2:
        raise ValueError("batchnorm needs a channel axis: input must be at least 2-D")
    c = x.data.shape[1]
    for name, arr in (("gamma", gamma.data), ("beta", beta.data),
                      ("running_mean", running_mean), ("running_var", running_var)):
        if arr.shape != (c,):
            raise ValueError(f"{name} must have shape ({c},), got {arr.shape}")

    red = (0,) + tuple(range(2, x.data.ndim))
    shape = (1, c) + (1,) * (x.data.ndim - 2)
    m = int(np.prod([x.data.shape[i] for i in red]))

    if training:
        if m < 2:
            raise ValueError("training-mode batchnorm needs at least 2 values per channel")
        mean = x.data.mean(axis=red)
        var = x.data.var(axis=red)  # biased: divides by m
        if update_stats:
            running_mean *= 1.0 - momentum
            running_mean += momentum * mean
            running_var *= 1.0 - momentum
            running_var += momentum * var * (m / (m - 1.0))
        inv = 1.0 / np.sqrt(var + eps)
        xhat = (x.data - mean.reshape(shape)) * inv.reshape(shape)
        out = gamma.data.reshape(shape) * xhat + beta.data.reshape(shape)

        def bwd(g):
            if beta.requires_grad:
                beta.accumulate(g.sum(axis=red))
            if gamma.requires_grad:
                gamma.accumulate((g * xhat).sum(axis=red))
            if x.requires_grad:
                gh = g * gamma.data.reshape(shape)
                s1 = gh.sum(axis=red).reshape(shape)
                s2 = (gh * xhat).sum(axis=red).reshape(shape)
                x.accumulate(inv.reshape(shape) / m * (m * gh - s1 - xhat * s2))

        return make_node(out, (x, gamma, beta), bwd)

    inv = 1.0 / np.sqrt(running_var + eps)
    scale = (gamma.data * inv).reshape(shape)
    shift = (beta.data - gamma.data * running_mean * inv).reshape(shape)
    out = scale * x.data + shift

    def bwd_infer(g):
        if beta.requires_grad:
            beta.accumulate(g.sum(axis=red))
        if gamma.requires_grad:
            gamma.accumulate((g * (x.data - running_mean.reshape(shape))).sum(axis=red) * inv)
        if x.requires_grad:
            x.accumulate(g * scale)

    return make_node(out, (x, gamma, beta), bwd_infer)
