"""Finite-difference verification of every differentiable operator.

Each check builds a scalar loss as a fixed random projection of the op
output, computes analytic gradients by backprop, and compares against
central differences in float64. The relative error for one element is
|a - n| / max(1, |a|, |n|); a check passes when the worst element stays
at or below the tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .conv import PadSpec, conv2d, conv3d_aniso, deconv2d
from .norm import batchnorm
from .tensor import (
    Tensor,
    backward,
    mse_loss,
    relu,
    reshape,
    softmax_over_axes,
    stop_gradient,
    tmean,
    tsum,
)

DEFAULT_STEP = 1e-5
DEFAULT_TOL = 1e-4


@dataclass(frozen=True)
class GradCheckResult:
    name: str
    max_rel_err: float
    passed: bool

    def __str__(self):
        flag = "ok" if self.passed else "FAIL"
        return f"{self.name:32s} max_rel_err={self.max_rel_err:.3e} {flag}"


def _rel_err(a, n):
    return np.abs(a - n) / np.maximum(1.0, np.maximum(np.abs(a), np.abs(n)))


def check_gradients(
    loss_fn,
    inputs: list[Tensor],
    step: float = DEFAULT_STEP,
    tol: float = DEFAULT_TOL,
) -> float:
    """Worst relative error between backprop and central differences.

    loss_fn maps the given tensors to a scalar Tensor. Inputs must be
    float64 for the differences to resolve below the tolerance.
    """
    for t in inputs:
        if t.data.dtype != np.float64:
            raise ValueError("gradcheck inputs must be float64")
        t.grad = None
    loss = loss_fn(*inputs)
    if loss.data.size != 1:
        raise ValueError("loss_fn must return a scalar")
    backward(loss)
    worst = 0.0
    for t in inputs:
        analytic = np.zeros_like(t.data) if t.grad is None else t.grad
        numeric = np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        nflat = numeric.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + step
            hi = float(loss_fn(*inputs).data)
            flat[i] = keep - step
            lo = float(loss_fn(*inputs).data)
            flat[i] = keep
            nflat[i] = (hi - lo) / (2.0 * step)
        worst = max(worst, float(_rel_err(analytic, numeric).max()))
    return worst


def _proj(rng, shape):
    return np.asarray(rng.standard_normal(shape), dtype=np.float64)


def _t(rng, shape):
    return Tensor(rng.standard_normal(shape), requires_grad=True, dtype=np.float64)


def _small_shape(rng, ndim_lo=1, ndim_hi=3, dim_lo=1, dim_hi=6):
    ndim = int(rng.integers(ndim_lo, ndim_hi + 1))
    return tuple(int(rng.integers(dim_lo, dim_hi + 1)) for _ in range(ndim))


def _check_add(rng):
    s = _small_shape(rng)
    return lambda u, v: tsum(u + v), [_t(rng, s), _t(rng, s)]


def _check_mul(rng):
    s = _small_shape(rng)
    return lambda u, v: tsum(u * v), [_t(rng, s), _t(rng, s)]


def _check_mul_scalar(rng):
    s = _small_shape(rng)
    return lambda u, v: tsum(u * v), [_t(rng, s), _t(rng, ())]


def _check_mean(rng):
    return (lambda u: tmean(u)), [_t(rng, _small_shape(rng))]


def _check_getitem(rng):
    s = _small_shape(rng, 2, 3, 2, 6)
    return lambda u: tsum(u[1:, ::2]), [_t(rng, s)]


def _check_reshape(rng):
    a, b = int(rng.integers(1, 5)), int(rng.integers(1, 5))
    p = _proj(rng, (a * b,))
    return lambda u: tsum(reshape(u, (a * b,)) * Tensor(p)), [_t(rng, (a, b))]


def _check_relu(rng):
    s = _small_shape(rng)
    x = _t(rng, s)
    x.data[np.abs(x.data) < 0.1] += 0.3  # keep clear of the kink
    p = _proj(rng, s)
    return lambda u: tsum(relu(u) * Tensor(p)), [x]


def _check_softmax(rng):
    s = _small_shape(rng, 2, 3, 2, 5)
    axes = tuple(range(1, len(s)))
    p = _proj(rng, s)
    return lambda u: tsum(softmax_over_axes(u, axes) * Tensor(p)), [_t(rng, s)]


def _check_mse(rng):
    s = _small_shape(rng)
    return lambda u, v: mse_loss(u, v), [_t(rng, s), _t(rng, s)]


def _check_stop_gradient(rng):
    # the stopped side is a captured constant: differences through it would
    # disagree with the (defined-zero) analytic gradient by construction
    s = _small_shape(rng)
    v_const = Tensor(rng.standard_normal(s), requires_grad=True, dtype=np.float64)
    return lambda u: mse_loss(u, stop_gradient(v_const)), [_t(rng, s)]


def _check_conv2d(rng):
    n, ci, co = (int(rng.integers(1, 3)) for _ in range(3))
    k = int(rng.choice([1, 3]))
    stride = int(rng.choice([1, 2]))
    h = int(rng.choice([4, 6]))
    w = int(rng.choice([4, 6]))
    per = bool(rng.integers(2))
    pad = PadSpec.for_kernel(k, k, periodic_h=per, periodic_w=per) if k > 1 else PadSpec()
    p = _proj(rng, (n, co, h // stride, w // stride))
    return (
        lambda u, wt, c: tsum(conv2d(u, wt, c, stride=stride, pad=pad) * Tensor(p)),
        [_t(rng, (n, ci, h, w)), _t(rng, (co, ci, k, k)), _t(rng, (co,))],
    )


def _check_deconv2d(rng):
    n, ci, co = (int(rng.integers(1, 3)) for _ in range(3))
    stride = int(rng.choice([1, 2]))
    h = int(rng.integers(2, 5))
    w = int(rng.integers(2, 5))
    pad = PadSpec.for_kernel(3, 3, periodic_h=True, periodic_w=True)
    p = _proj(rng, (n, co, stride * h, stride * w))
    return (
        lambda u, wt, c: tsum(deconv2d(u, wt, c, stride=stride, pad=pad) * Tensor(p)),
        [_t(rng, (n, ci, h, w)), _t(rng, (ci, co, 3, 3)), _t(rng, (co,))],
    )


def _check_conv3d_aniso(rng):
    n, ci, co = (int(rng.integers(1, 3)) for _ in range(3))
    axis = int(rng.integers(2, 5))
    spatial = [int(rng.integers(3, 6)) for _ in range(3)]
    k = int(rng.choice([1, 3]))
    mode = str(rng.choice(["zero", "periodic"]))
    shape = (n, ci, *spatial)
    p = _proj(rng, (n, co, *spatial))
    return (
        lambda u, wt, c: tsum(conv3d_aniso(u, wt, axis=axis, b=c, pad_mode=mode) * Tensor(p)),
        [_t(rng, shape), _t(rng, (co, ci, k)), _t(rng, (co,))],
    )


def _check_conv3d_aniso_collapse(rng):
    n, ci, co = (int(rng.integers(1, 3)) for _ in range(3))
    axis = int(rng.integers(2, 5))
    spatial = [int(rng.integers(3, 6)) for _ in range(3)]
    k = spatial[axis - 2]  # valid conv spanning the whole axis
    out_spatial = list(spatial)
    out_spatial[axis - 2] = 1
    p = _proj(rng, (n, co, *out_spatial))
    return (
        lambda u, wt, c: tsum(
            conv3d_aniso(u, wt, axis=axis, b=c, pad_mode="zero", pad_amount=0) * Tensor(p)
        ),
        [_t(rng, (n, ci, *spatial)), _t(rng, (co, ci, k)), _t(rng, (co,))],
    )


def _check_batchnorm_train(rng):
    n = int(rng.integers(2, 5))
    c = int(rng.integers(1, 4))
    tail = tuple(int(rng.integers(1, 4)) for _ in range(int(rng.integers(0, 3))))
    shape = (n, c, *tail)
    rm, rv = np.zeros(c), np.ones(c)
    p = _proj(rng, shape)

    def loss(u, gm, bt):
        out = batchnorm(u, gm, bt, rm.copy(), rv.copy(), training=True)
        return tsum(out * Tensor(p))

    return loss, [_t(rng, shape), _t(rng, (c,)), _t(rng, (c,))]


def _check_batchnorm_infer(rng):
    n = int(rng.integers(1, 4))
    c = int(rng.integers(1, 4))
    shape = (n, c, int(rng.integers(1, 4)), int(rng.integers(1, 4)))
    rm = rng.standard_normal(c)
    rv = rng.uniform(0.5, 2.0, c)
    p = _proj(rng, shape)

    def loss(u, gm, bt):
        out = batchnorm(u, gm, bt, rm, rv, training=False)
        return tsum(out * Tensor(p))

    return loss, [_t(rng, shape), _t(rng, (c,)), _t(rng, (c,))]


_CHECK_BUILDERS = {
    "add": _check_add,
    "mul": _check_mul,
    "mul_scalar": _check_mul_scalar,
    "mean": _check_mean,
    "getitem": _check_getitem,
    "reshape": _check_reshape,
    "relu": _check_relu,
    "softmax": _check_softmax,
    "mse": _check_mse,
    "stop_gradient": _check_stop_gradient,
    "conv2d": _check_conv2d,
    "deconv2d": _check_deconv2d,
    "conv3d_aniso": _check_conv3d_aniso,
    "conv3d_aniso_collapse": _check_conv3d_aniso_collapse,
    "batchnorm_train": _check_batchnorm_train,
    "batchnorm_infer": _check_batchnorm_infer,
}


def run_all_gradchecks(seed: int = 0, tol: float = DEFAULT_TOL,
                       repeats: int = 1) -> list[GradCheckResult]:
    """Exercise every op family at ``repeats`` random shapes each."""
    if repeats < 1:
        raise ValueError("repeats must be positive")
    results = []
    for op_index, (name, build) in enumerate(_CHECK_BUILDERS.items()):
        for k in range(repeats):
            rng = np.random.default_rng([seed, 3000 + op_index, k])
            loss_fn, inputs = build(rng)
            err = check_gradients(loss_fn, inputs, tol=tol)
            results.append(GradCheckResult(f"{name}#{k}", err, err <= tol))
    return results
