"""Differentiable network and loss primitives over 5D ``(N, C, D, H, W)`` tensors."""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Tensor, as_tensor

LEAKY_SLOPE = 0.2


def _conv_out(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


def _im2col(x: np.ndarray, ksize: tuple[int, int, int], stride: int, pad: int) -> tuple[np.ndarray, tuple[int, int, int]]:
    """Unfold ``x`` into a ``(N*P, C*K)`` patch matrix, rows ordered (n, d, h, w)."""
    n, c = x.shape[:2]
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad), (pad, pad)))
    win = sliding_window_view(x, ksize, axis=(2, 3, 4))[:, :, ::stride, ::stride, ::stride]
    out_sp = win.shape[2:5]
    cols = win.transpose(0, 2, 3, 4, 1, 5, 6, 7).reshape(n * out_sp[0] * out_sp[1] * out_sp[2], -1)
    return cols, out_sp


def _col2im(cols: np.ndarray, x_shape: tuple[int, ...], ksize: tuple[int, int, int],
            stride: int, pad: int, out_sp: tuple[int, int, int]) -> np.ndarray:
    """Adjoint of :func:`_im2col`: scatter-add patch rows back into an ``x_shape`` array."""
    n, c, d, h, w = x_shape
    kd, kh, kw = ksize
    od, oh, ow = out_sp
    patches = cols.reshape(n, od, oh, ow, c, kd, kh, kw)
    full = np.zeros((n, c, d + 2 * pad, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    for i in range(kd):
        for j in range(kh):
            for k in range(kw):
                block = patches[:, :, :, :, :, i, j, k].transpose(0, 4, 1, 2, 3)
                full[:, :,
                     i:i + stride * (od - 1) + 1:stride,
                     j:j + stride * (oh - 1) + 1:stride,
                     k:k + stride * (ow - 1) + 1:stride] += block
    if pad:
        full = full[:, :, pad:pad + d, pad:pad + h, pad:pad + w]
    return np.ascontiguousarray(full)


def conv3d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, pad: int = 0) -> Tensor:
    """3D cross-correlation. ``weight`` is ``(Cout, Cin, kd, kh, kw)``."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 5 or weight.ndim != 5:
        raise ValueError("conv3d expects 5D input and weight")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    cout, cin, kd, kh, kw = weight.shape
    if x.shape[1] != cin:
        raise ValueError(f"channel mismatch: input has {x.shape[1]}, weight expects {cin}")
    for s, k in zip(x.shape[2:], (kd, kh, kw)):
        if s + 2 * pad < k:
            raise ValueError("kernel does not fit padded input")
    if bias is not None and bias.shape != (cout,):
        raise ValueError("bias shape must be (Cout,)")

    ksize = (kd, kh, kw)
    cols, out_sp = _im2col(x.data, ksize, stride, pad)
    wmat = weight.data.reshape(cout, -1)
    out = cols @ wmat.T
    if bias is not None:
        out += bias.data
    n = x.shape[0]
    out = np.ascontiguousarray(out.reshape(n, *out_sp, cout).transpose(0, 4, 1, 2, 3))

    def backward(g):
        gmat = g.transpose(0, 2, 3, 4, 1).reshape(-1, cout)
        gx = gw = gb = None
        if x.requires_grad:
            gx = _col2im(gmat @ wmat, x.shape, ksize, stride, pad, out_sp)
        if weight.requires_grad:
            gw = (gmat.T @ cols).reshape(weight.shape)
        if bias is not None and bias.requires_grad:
            gb = gmat.sum(axis=0)
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor._make(out, parents, backward)


def conv3d_transpose(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, pad: int = 0) -> Tensor:
    """Adjoint of :func:`conv3d` with the same ``weight``, ``stride`` and ``pad``.

    ``weight`` keeps the conv3d layout ``(Cin_of_conv, Cout_of_conv, k...)``
    read backwards: input channels are ``weight.shape[0]`` and output channels
    ``weight.shape[1]``. Output size per axis is ``(S - 1) * stride - 2 * pad + k``.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 5 or weight.ndim != 5:
        raise ValueError("conv3d_transpose expects 5D input and weight")
    cy, cx, kd, kh, kw = weight.shape
    if x.shape[1] != cy:
        raise ValueError(f"channel mismatch: input has {x.shape[1]}, weight expects {cy}")
    n = x.shape[0]
    in_sp = x.shape[2:]
    ksize = (kd, kh, kw)
    out_sp = tuple((s - 1) * stride - 2 * pad + k for s, k in zip(in_sp, ksize))
    if min(out_sp) < 1:
        raise ValueError("transposed convolution output would be empty")
    if bias is not None and bias.shape != (cx,):
        raise ValueError("bias shape must be (Cout,)")
    out_shape = (n, cx, *out_sp)
    wmat = weight.data.reshape(cy, -1)
    xmat = x.data.transpose(0, 2, 3, 4, 1).reshape(-1, cy)
    out = _col2im(xmat @ wmat, out_shape, ksize, stride, pad, in_sp)
    if bias is not None:
        out += bias.data.reshape(1, cx, 1, 1, 1)

    def backward(g):
        gx = gw = gb = None
        cols, sp = _im2col(g, ksize, stride, pad)
        if x.requires_grad:
            gx = np.ascontiguousarray((cols @ wmat.T).reshape(n, *sp, cy).transpose(0, 4, 1, 2, 3))
        if weight.requires_grad:
            gw = (xmat.T @ cols).reshape(weight.shape)
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3, 4))
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor._make(out, parents, backward)


def instance_norm3d(x: Tensor, gamma: Tensor | None = None, beta: Tensor | None = None, eps: float = 1e-5) -> Tensor:
    """Standardize each ``(n, c)`` slice over D*H*W, then apply per-channel affine."""
    x = as_tensor(x)
    if x.ndim != 5:
        raise ValueError("instance_norm3d expects a 5D input")
    m = x.shape[2] * x.shape[3] * x.shape[4]
    if m < 2:
        raise ValueError("instance norm needs at least 2 spatial voxels")
    axes = (2, 3, 4)
    mu = x.data.mean(axis=axes, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=axes, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    c = x.shape[1]
    g_arr = gamma.data.reshape(1, c, 1, 1, 1) if gamma is not None else None
    out = xhat * g_arr if g_arr is not None else xhat.copy()
    if beta is not None:
        out += beta.data.reshape(1, c, 1, 1, 1)

    def backward(g):
        gx = gg = gbeta = None
        if gamma is not None and gamma.requires_grad:
            gg = (g * xhat).sum(axis=(0, 2, 3, 4))
        if beta is not None and beta.requires_grad:
            gbeta = g.sum(axis=(0, 2, 3, 4))
        if x.requires_grad:
            dxhat = g * g_arr if g_arr is not None else g
            gx = inv * (dxhat - dxhat.mean(axis=axes, keepdims=True)
                        - xhat * (dxhat * xhat).mean(axis=axes, keepdims=True))
        return gx, gg, gbeta

    parents = [x]
    parents.append(gamma if gamma is not None else Tensor(0.0))
    parents.append(beta if beta is not None else Tensor(0.0))
    return Tensor._make(out, parents, backward)


def relu(x: Tensor) -> Tensor:
    x = as_tensor(x)
    pos = x.data > 0

    def backward(g):
        return (g * pos,)

    return Tensor._make(np.where(pos, x.data, 0).astype(x.dtype), (x,), backward)


def leaky_relu(x: Tensor, slope: float = LEAKY_SLOPE) -> Tensor:
    x = as_tensor(x)
    pos = x.data > 0
    scale = np.where(pos, 1.0, slope).astype(x.dtype)

    def backward(g):
        return (g * scale,)

    return Tensor._make(x.data * scale, (x,), backward)


def tanh(x: Tensor) -> Tensor:
    x = as_tensor(x)
    out = np.tanh(x.data)

    def backward(g):
        return (g * (1 - out * out),)

    return Tensor._make(out, (x,), backward)


def sigmoid(x: Tensor) -> Tensor:
    x = as_tensor(x)
    # split branches so exp never overflows
    d = x.data
    e = np.exp(-np.abs(d))
    out = np.where(d >= 0, 1 / (1 + e), e / (1 + e)).astype(x.dtype)

    def backward(g):
        return (g * out * (1 - out),)

    return Tensor._make(out, (x,), backward)


def activation(x: Tensor, kind: str) -> Tensor:
    if kind == "relu":
        return relu(x)
    if kind in ("leaky_relu", "lrelu"):
        return leaky_relu(x)
    if kind == "tanh":
        return tanh(x)
    if kind == "sigmoid":
        return sigmoid(x)
    raise ValueError(f"unknown activation {kind!r}")


def clamp(x: Tensor, lo: float, hi: float) -> Tensor:
    """Clip to ``[lo, hi]``; gradient passes only where the input was inside."""
    x = as_tensor(x)
    inside = (x.data >= lo) & (x.data <= hi)

    def backward(g):
        return (g * inside,)

    return Tensor._make(np.clip(x.data, lo, hi).astype(x.dtype), (x,), backward)


def axis_gradient(x: Tensor, axis: int) -> Tensor:
    """Index-space finite differences along ``axis``.

    Central differences inside, one-sided differences on the two boundary
    faces, no spacing scaling. The backward pass is the exact adjoint.
    """
    x = as_tensor(x)
    axis = axis % x.ndim
    n = x.shape[axis]
    if n < 2:
        raise ValueError("gradient needs at least 2 samples along the axis")

    def sl(a, b):
        idx = [slice(None)] * x.ndim
        idx[axis] = slice(a, b)
        return tuple(idx)

    d = x.data
    out = np.empty_like(d)
    out[sl(1, n - 1)] = (d[sl(2, n)] - d[sl(0, n - 2)]) * 0.5
    out[sl(0, 1)] = d[sl(1, 2)] - d[sl(0, 1)]
    out[sl(n - 1, n)] = d[sl(n - 1, n)] - d[sl(n - 2, n - 1)]

    def backward(g):
        gx = np.zeros_like(g)
        half = g[sl(1, n - 1)] * 0.5
        gx[sl(2, n)] += half
        gx[sl(0, n - 2)] -= half
        gx[sl(1, 2)] += g[sl(0, 1)]
        gx[sl(0, 1)] -= g[sl(0, 1)]
        gx[sl(n - 1, n)] += g[sl(n - 1, n)]
        gx[sl(n - 2, n - 1)] -= g[sl(n - 1, n)]
        return (gx,)

    return Tensor._make(out, (x,), backward)


def square(x: Tensor) -> Tensor:
    x = as_tensor(x)

    def backward(g):
        return (2 * g * x.data,)

    return Tensor._make(x.data * x.data, (x,), backward)


def select(x: Tensor, index: int) -> Tensor:
    """``x[index]`` along the leading (batch) axis, keeping it as a size-1 axis."""
    x = as_tensor(x)

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[index:index + 1] = g
        return (gx,)

    return Tensor._make(x.data[index:index + 1], (x,), backward)
