"""Convolution operators with per-axis zero or periodic padding.

Cross-correlation convention throughout (no kernel flip). The transposed
convolution is implemented as the exact adjoint of the matching forward
convolution, so <conv(x), y> == <x, deconv(y)> holds to rounding for the
same weights, stride, and padding, and cyclic shift equivariance along a
periodic axis transfers to it with the reciprocal stride relation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Tensor, make_node

ZERO = "zero"
PERIODIC = "periodic"
_MODES = (ZERO, PERIODIC)


@dataclass(frozen=True)
class PadSpec:
    """Symmetric per-axis padding for the two spatial axes (H, W)."""

    mode_h: str = ZERO
    mode_w: str = ZERO
    pad_h: int = 0
    pad_w: int = 0

    def __post_init__(self):
        if self.mode_h not in _MODES or self.mode_w not in _MODES:
            raise ValueError(f"pad modes must be in {_MODES}")
        if self.pad_h < 0 or self.pad_w < 0:
            raise ValueError("pad amounts must be non-negative")

    @classmethod
    def for_kernel(cls, kh: int, kw: int, periodic_h: bool = False, periodic_w: bool = False):
        """Same-size padding for odd kernels."""
        if kh % 2 == 0 or kw % 2 == 0:
            raise ValueError("for_kernel expects odd kernel sizes")
        return cls(
            mode_h=PERIODIC if periodic_h else ZERO,
            mode_w=PERIODIC if periodic_w else ZERO,
            pad_h=(kh - 1) // 2,
            pad_w=(kw - 1) // 2,
        )


def _axis_slice(ndim, axis, s):
    idx = [slice(None)] * ndim
    idx[axis] = s
    return tuple(idx)


def _pad_axis(x, axis, amount, mode):
    if amount == 0:
        return x
    if mode == PERIODIC and amount >= x.shape[axis]:
        raise ValueError(
            f"periodic pad {amount} must be smaller than axis length {x.shape[axis]}"
        )
    width = [(0, 0)] * x.ndim
    width[axis] = (amount, amount)
    return np.pad(x, width, mode="wrap" if mode == PERIODIC else "constant")


def _unpad_axis_adjoint(g, axis, amount, mode, orig_len):
    """Transpose of _pad_axis: crop, folding wrapped margins back in."""
    if amount == 0:
        return g
    nd = g.ndim
    core = g[_axis_slice(nd, axis, slice(amount, amount + orig_len))].copy()
    if mode == PERIODIC:
        core[_axis_slice(nd, axis, slice(orig_len - amount, orig_len))] += g[
            _axis_slice(nd, axis, slice(0, amount))
        ]
        core[_axis_slice(nd, axis, slice(0, amount))] += g[
            _axis_slice(nd, axis, slice(amount + orig_len, amount + orig_len + amount))
        ]
    return core


def _pad2d(x, pad: PadSpec):
    return _pad_axis(_pad_axis(x, 2, pad.pad_h, pad.mode_h), 3, pad.pad_w, pad.mode_w)


def _unpad2d_adjoint(g, pad: PadSpec, h, w):
    g = _unpad_axis_adjoint(g, 3, pad.pad_w, pad.mode_w, w)
    return _unpad_axis_adjoint(g, 2, pad.pad_h, pad.mode_h, h)


def _gather(xp, kh, kw, sh, sw):
    """Strided [N, C, Ho, Wo, kh, kw] windows of a padded input."""
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    return win[:, :, ::sh, ::sw]


def _scatter(g, w_tap, out_shape, kh, kw, sh, sw):
    """Transpose of _gather followed by the channel contraction.

    g: [N, F, Ho, Wo]; w_tap: [F, G, kh, kw]; returns [N, G, Hp, Wp].
    """
    n, _, ho, wo = g.shape
    out = np.zeros(out_shape, dtype=g.dtype)
    for a in range(kh):
        for b in range(kw):
            tap = np.tensordot(g, w_tap[:, :, a, b], axes=([1], [0]))  # [N, Ho, Wo, G]
            out[:, :, a : a + sh * ho : sh, b : b + sw * wo : sw] += np.moveaxis(tap, 3, 1)
    return out


def _normalize_stride(stride):
    if isinstance(stride, int):
        stride = (stride, stride)
    sh, sw = stride
    if sh < 1 or sw < 1:
        raise ValueError("stride must be positive")
    return sh, sw


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride=1, pad: PadSpec = PadSpec()) -> Tensor:
    """2D cross-correlation: x [N, Ci, H, W], w [Co, Ci, kh, kw], b [Co].

    With periodic padding on an axis, cyclically shifting the input by
    stride*s bins along it cyclically shifts the output by s, exactly.
    """
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ValueError("conv2d expects x [N,Ci,H,W] and w [Co,Ci,kh,kw]")
    if x.data.shape[1] != w.data.shape[1]:
        raise ValueError(f"channel mismatch: x has {x.data.shape[1]}, w wants {w.data.shape[1]}")
    sh, sw = _normalize_stride(stride)
    co, _, kh, kw = w.data.shape
    xp = _pad2d(x.data, pad)
    if xp.shape[2] < kh or xp.shape[3] < kw:
        raise ValueError("kernel larger than padded input")
    win = _gather(xp, kh, kw, sh, sw)
    out = np.moveaxis(np.tensordot(win, w.data, axes=([1, 4, 5], [1, 2, 3])), 3, 1)
    if b is not None:
        out = out + b.data.reshape(1, co, 1, 1)
    out = np.ascontiguousarray(out)

    parents = (x, w) if b is None else (x, w, b)

    def bwd(g):
        if b is not None and b.requires_grad:
            b.accumulate(g.sum(axis=(0, 2, 3)))
        if w.requires_grad:
            w.accumulate(np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3])))
        if x.requires_grad:
            gxp = _scatter(g, w.data, xp.shape, kh, kw, sh, sw)
            x.accumulate(_unpad2d_adjoint(gxp, pad, x.data.shape[2], x.data.shape[3]))

    return make_node(out, parents, bwd)


def deconv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride=1, pad: PadSpec = PadSpec()) -> Tensor:
    """Transposed conv2d: x [N, Ci, H, W], w [Ci, Co, kh, kw], b [Co].

    Exact adjoint of conv2d(. , w, stride, pad); output spatial size is
    stride * input size per axis. Shifting a periodic-axis input by s
    shifts the output by stride*s.
    """
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ValueError("deconv2d expects x [N,Ci,H,W] and w [Ci,Co,kh,kw]")
    if x.data.shape[1] != w.data.shape[0]:
        raise ValueError(f"channel mismatch: x has {x.data.shape[1]}, w wants {w.data.shape[0]}")
    sh, sw = _normalize_stride(stride)
    ci, co, kh, kw = w.data.shape
    n, _, h, wd = x.data.shape
    oh, ow = sh * h, sw * wd
    # the conv this op transposes must map (oh, ow) back to (h, wd)
    hp, wp = oh + 2 * pad.pad_h, ow + 2 * pad.pad_w
    if (hp - kh) // sh + 1 != h or (wp - kw) // sw + 1 != wd:
        raise ValueError(
            f"deconv geometry inconsistent: kernel ({kh},{kw}), stride ({sh},{sw}), "
            f"pad ({pad.pad_h},{pad.pad_w}) cannot invert to {sh}x/{sw}x upsampling"
        )
    out_p = _scatter(x.data, w.data, (n, co, hp, wp), kh, kw, sh, sw)
    out = _unpad2d_adjoint(out_p, pad, oh, ow)
    if b is not None:
        out = out + b.data.reshape(1, co, 1, 1)
    out = np.ascontiguousarray(out)

    parents = (x, w) if b is None else (x, w, b)

    def bwd(g):
        if b is not None and b.requires_grad:
            b.accumulate(g.sum(axis=(0, 2, 3)))
        gp = _pad2d(g, pad)
        win_g = _gather(gp, kh, kw, sh, sw)
        if w.requires_grad:
            w.accumulate(np.tensordot(x.data, win_g, axes=([0, 2, 3], [0, 2, 3])))
        if x.requires_grad:
            x.accumulate(
                np.ascontiguousarray(
                    np.moveaxis(np.tensordot(win_g, w.data, axes=([1, 4, 5], [1, 2, 3])), 3, 1)
                )
            )

    return make_node(out, parents, bwd)


def conv3d_aniso(
    x: Tensor,
    w: Tensor,
    axis: int,
    b: Tensor | None = None,
    pad_mode: str = ZERO,
    pad_amount: int | None = None,
) -> Tensor:
    """1D convolution along one spatial axis of a volume, stride 1.

    x is [N, Ci, D1, D2, D3]; w is [Co, Ci, k] applied along ``axis``
    (2, 3, or 4); the kernel is a point in the other two axes, so the op
    never mixes positions there. pad_amount None means (k-1)//2
    (same-length output); 0 with k equal to the axis length collapses
    the axis to one slice.
    """
    if x.data.ndim != 5 or w.data.ndim != 3:
        raise ValueError("conv3d_aniso expects x [N,Ci,D1,D2,D3] and w [Co,Ci,k]")
    if axis not in (2, 3, 4):
        raise ValueError("axis must be one of the three spatial axes (2, 3, 4)")
    if x.data.shape[1] != w.data.shape[1]:
        raise ValueError(f"channel mismatch: x has {x.data.shape[1]}, w wants {w.data.shape[1]}")
    if pad_mode not in _MODES:
        raise ValueError(f"pad_mode must be in {_MODES}")
    co, _, k = w.data.shape
    if pad_amount is None:
        if k % 2 == 0:
            raise ValueError("even kernels need an explicit pad_amount")
        pad_amount = (k - 1) // 2

    xm = np.moveaxis(x.data, axis, 4)
    length = xm.shape[4]
    xp = _pad_axis(xm, 4, pad_amount, pad_mode)
    if xp.shape[4] < k:
        raise ValueError(f"kernel {k} larger than padded axis {xp.shape[4]}")
    win = sliding_window_view(xp, k, axis=4)  # [N, Ci, A, B, Lo, k]
    out = np.tensordot(win, w.data, axes=([1, 5], [1, 2]))  # [N, A, B, Lo, Co]
    out = np.moveaxis(out, 4, 1)
    if b is not None:
        out = out + b.data.reshape(1, co, 1, 1, 1)
    out = np.ascontiguousarray(np.moveaxis(out, 4, axis))

    parents = (x, w) if b is None else (x, w, b)

    def bwd(g):
        gm = np.moveaxis(g, axis, 4)  # [N, Co, A, B, Lo]
        if b is not None and b.requires_grad:
            b.accumulate(g.sum(axis=tuple(i for i in range(5) if i != 1)))
        if w.requires_grad:
            w.accumulate(np.tensordot(gm, win, axes=([0, 2, 3, 4], [0, 2, 3, 4])))
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            lo = gm.shape[4]
            for a in range(k):
                tap = np.tensordot(gm, w.data[:, :, a], axes=([1], [0]))  # [N, A, B, Lo, Ci]
                gxp[:, :, :, :, a : a + lo] += np.moveaxis(tap, 4, 1)
            gxm = _unpad_axis_adjoint(gxp, 4, pad_amount, pad_mode, length)
            x.accumulate(np.ascontiguousarray(np.moveaxis(gxm, 4, axis)))

    return make_node(out, parents, bwd)
