"""Neural-net ops with hand-derived backward passes.

Convolution runs as im2col + one GEMM; the column matrix is rebuilt during
backward instead of cached, trading a second im2col for a much smaller peak
footprint. All ops accept a single frame (no batch axis) or a batch and
return the matching rank.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError, ShapeError
from .tensor import (
    Tensor,
    _record,
    accumulate_grad,
    add,
    concat,
    matmul,
    mul,
    narrow,
    sigmoid,
    tanh,
)


def _im2col(xp: np.ndarray, k: int, stride: int, ho: int, wo: int) -> np.ndarray:
    b, _, _, c = xp.shape
    cols = np.empty((b, ho, wo, k, k, c), dtype=xp.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, :, :, i, j, :] = xp[
                :, i : i + stride * ho : stride, j : j + stride * wo : stride, :
            ]
    return cols.reshape(b * ho * wo, k * k * c)


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation. ``x``: (H,W,C) or (B,H,W,C); ``w``: (k,k,Cin,Cout);
    ``b``: (Cout,) or None. Zero padding, square kernel and stride."""
    if w.data.ndim != 4 or w.shape[0] != w.shape[1]:
        raise ShapeError(f"conv2d kernel must be (k,k,Cin,Cout), got {w.shape}")
    if stride < 1 or padding < 0:
        raise ShapeError(f"conv2d: bad stride {stride} or padding {padding}")
    squeeze = x.data.ndim == 3
    if squeeze:
        x4 = x.data[None]
    elif x.data.ndim == 4:
        x4 = x.data
    else:
        raise ShapeError(f"conv2d input must be 3-D or 4-D, got {x.shape}")
    bsz, h, wd, cin = x4.shape
    k = w.shape[0]
    if cin != w.shape[2]:
        raise ShapeError(f"conv2d: input has {cin} channels, kernel expects {w.shape[2]}")
    cout = w.shape[3]
    if b is not None and b.shape != (cout,):
        raise ShapeError(f"conv2d bias must be ({cout},), got {b.shape}")
    ho = (h + 2 * padding - k) // stride + 1
    wo = (wd + 2 * padding - k) // stride + 1
    if h + 2 * padding < k or wd + 2 * padding < k:
        raise ShapeError(
            f"conv2d: kernel {k} exceeds padded input {h + 2 * padding}x{wd + 2 * padding}"
        )
    if padding > 0:
        xp = np.pad(x4, ((0, 0), (padding, padding), (padding, padding), (0, 0)))
    else:
        xp = x4
    wmat = w.data.reshape(k * k * cin, cout)
    cols = _im2col(xp, k, stride, ho, wo)
    out_mat = cols @ wmat
    del cols
    if b is not None:
        out_mat += b.data
    out_data = out_mat.reshape(bsz, ho, wo, cout)
    out = Tensor(out_data[0] if squeeze else out_data, dtype=out_mat.dtype)
    inputs = (x, w) if b is None else (x, w, b)

    def bwd(g: np.ndarray) -> None:
        g2 = (g[None] if squeeze else g).reshape(bsz * ho * wo, cout)
        if w.requires_grad:
            cols_b = _im2col(xp, k, stride, ho, wo)
            accumulate_grad(w, (cols_b.T @ g2).reshape(w.shape))
            del cols_b
        if b is not None and b.requires_grad:
            accumulate_grad(b, g2.sum(axis=0, dtype=np.float64))
        if x.requires_grad:
            gcols = (g2 @ wmat.T).reshape(bsz, ho, wo, k, k, cin)
            gxp = np.zeros_like(xp)
            for i in range(k):
                for j in range(k):
                    gxp[:, i : i + stride * ho : stride, j : j + stride * wo : stride, :] += gcols[
                        :, :, :, i, j, :
                    ]
            gx = gxp if padding == 0 else gxp[:, padding:-padding, padding:-padding, :]
            accumulate_grad(x, gx[0] if squeeze else gx)

    return _record(out, inputs, bwd)


def conv1d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1) -> Tensor:
    """Single-channel 1-D cross-correlation over the last axis of (B,L) input.

    ``w``: (k,), ``b``: (1,) or None. Output length (L - k)//stride + 1."""
    if x.data.ndim != 2:
        raise ShapeError(f"conv1d input must be (B,L), got {x.shape}")
    if w.data.ndim != 1 or w.size < 1:
        raise ShapeError(f"conv1d kernel must be 1-D, got {w.shape}")
    if b is not None and b.data.size != 1:
        raise ShapeError(f"conv1d bias must hold one value, got {b.shape}")
    if stride < 1:
        raise ShapeError(f"conv1d: bad stride {stride}")
    bsz, length = x.shape
    k = w.size
    if length < k:
        raise ShapeError(f"conv1d: kernel {k} exceeds input length {length}")
    lo = (length - k) // stride + 1
    span = stride * (lo - 1) + 1
    acc = np.zeros((bsz, lo), dtype=np.float64)
    for i in range(k):
        acc += w.data[i] * x.data[:, i : i + span : stride]
    if b is not None:
        acc += float(b.data.reshape(()))
    out = Tensor(acc.astype(x.data.dtype), dtype=x.data.dtype)
    inputs = (x, w) if b is None else (x, w, b)

    def bwd(g: np.ndarray) -> None:
        if w.requires_grad:
            gw = np.empty(k, dtype=np.float64)
            for i in range(k):
                gw[i] = np.sum(
                    g * x.data[:, i : i + span : stride], dtype=np.float64
                )
            accumulate_grad(w, gw)
        if b is not None and b.requires_grad:
            accumulate_grad(b, np.full(b.shape, g.sum(dtype=np.float64)))
        if x.requires_grad:
            gx = np.zeros(x.shape, dtype=g.dtype)
            for i in range(k):
                gx[:, i : i + span : stride] += g * w.data[i]
            accumulate_grad(x, gx)

    return _record(out, inputs, bwd)


def pool2d(x: Tensor, window: int, mode: str = "max") -> Tensor:
    """Non-overlapping ``window x window`` pooling; H and W must divide evenly.
    Max ties pick the first cell in row-major window scan order."""
    if mode not in ("max", "avg"):
        raise ShapeError(f"pool2d mode must be 'max' or 'avg', got {mode!r}")
    if window < 1:
        raise ShapeError(f"pool2d: bad window {window}")
    squeeze = x.data.ndim == 3
    if squeeze:
        x4 = x.data[None]
    elif x.data.ndim == 4:
        x4 = x.data
    else:
        raise ShapeError(f"pool2d input must be 3-D or 4-D, got {x.shape}")
    bsz, h, wd, c = x4.shape
    if h % window or wd % window:
        raise ShapeError(f"pool2d: {h}x{wd} not divisible by window {window}")
    ho, wo = h // window, wd // window
    cells = (
        x4.reshape(bsz, ho, window, wo, window, c)
        .transpose(0, 1, 3, 2, 4, 5)
        .reshape(bsz, ho, wo, window * window, c)
    )
    if mode == "max":
        idx = cells.argmax(axis=3)
        out_data = np.take_along_axis(cells, idx[:, :, :, None, :], axis=3)[:, :, :, 0, :]
    else:
        out_data = cells.mean(axis=3, dtype=np.float64).astype(x4.dtype)
    out = Tensor(out_data[0] if squeeze else out_data, dtype=x4.dtype)

    def bwd(g: np.ndarray) -> None:
        g4 = g[None] if squeeze else g
        buf = np.zeros_like(cells)
        if mode == "max":
            np.put_along_axis(
                buf, idx[:, :, :, None, :], g4[:, :, :, None, :].astype(buf.dtype), axis=3
            )
        else:
            buf += (g4 / (window * window))[:, :, :, None, :]
        gx = (
            buf.reshape(bsz, ho, wo, window, window, c)
            .transpose(0, 1, 3, 2, 4, 5)
            .reshape(bsz, h, wd, c)
        )
        accumulate_grad(x, gx[0] if squeeze else gx)

    return _record(out, (x,), bwd)


def _norm_stats(x4: np.ndarray, axes: tuple[int, ...]):
    mu = x4.mean(axis=axes, keepdims=True, dtype=np.float64)
    var = x4.var(axis=axes, keepdims=True, dtype=np.float64)  # biased
    return mu, var


def norm_batch(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Batch norm over (B,H,W) per channel, biased variance.

    Training mode updates ``running_mean``/``running_var`` in place via
    new = (1 - momentum) * old + momentum * batch, and requires B >= 2."""
    if x.data.ndim != 4:
        raise ShapeError(f"norm_batch input must be (B,H,W,C), got {x.shape}")
    c = x.shape[3]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(
            f"norm_batch: scale/shift must be ({c},), got {gamma.shape}/{beta.shape}"
        )
    x4 = x.data
    if training:
        if x.shape[0] < 2:
            raise ContractError(
                "norm_batch training mode needs batch size >= 2 for a usable variance"
            )
        mu, var = _norm_stats(x4, (0, 1, 2))
        running_mean[:] = ((1.0 - momentum) * running_mean + momentum * mu.reshape(-1)).astype(
            running_mean.dtype
        )
        running_var[:] = ((1.0 - momentum) * running_var + momentum * var.reshape(-1)).astype(
            running_var.dtype
        )
    else:
        mu = running_mean.astype(np.float64).reshape(1, 1, 1, c)
        var = running_var.astype(np.float64).reshape(1, 1, 1, c)
    istd = 1.0 / np.sqrt(var + eps)
    xhat = ((x4 - mu) * istd).astype(x4.dtype)
    out = Tensor(gamma.data * xhat + beta.data, dtype=x4.dtype)
    n = x.shape[0] * x.shape[1] * x.shape[2]

    def bwd(g: np.ndarray) -> None:
        if gamma.requires_grad:
            accumulate_grad(gamma, (g * xhat).sum(axis=(0, 1, 2), dtype=np.float64))
        if beta.requires_grad:
            accumulate_grad(beta, g.sum(axis=(0, 1, 2), dtype=np.float64))
        if x.requires_grad:
            if training:
                gm = g.mean(axis=(0, 1, 2), keepdims=True, dtype=np.float64)
                gxh = np.einsum(
                    "bhwc,bhwc->c", g.astype(np.float64), xhat.astype(np.float64)
                ).reshape(1, 1, 1, c) / n
                gx = gamma.data * istd * (g - gm - xhat * gxh)
            else:
                gx = gamma.data * istd * g
            accumulate_grad(x, gx)

    return _record(out, (x, gamma, beta), bwd)


def norm_instance(
    x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5
) -> Tensor:
    """Instance norm: each (sample, channel) slab is normalized over its own
    H x W, so per-sample affine rescaling of the input cancels out."""
    squeeze = x.data.ndim == 3
    if squeeze:
        x4 = x.data[None]
    elif x.data.ndim == 4:
        x4 = x.data
    else:
        raise ShapeError(f"norm_instance input must be 3-D or 4-D, got {x.shape}")
    c = x4.shape[3]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(
            f"norm_instance: scale/shift must be ({c},), got {gamma.shape}/{beta.shape}"
        )
    n = x4.shape[1] * x4.shape[2]
    if n < 2:
        raise ContractError("norm_instance needs at least 2 spatial positions per slab")
    mu, var = _norm_stats(x4, (1, 2))
    istd = 1.0 / np.sqrt(var + eps)
    xhat = ((x4 - mu) * istd).astype(x4.dtype)
    out_data = gamma.data * xhat + beta.data
    out = Tensor(out_data[0] if squeeze else out_data, dtype=x4.dtype)

    def bwd(g: np.ndarray) -> None:
        g4 = g[None] if squeeze else g
        if gamma.requires_grad:
            accumulate_grad(gamma, (g4 * xhat).sum(axis=(0, 1, 2), dtype=np.float64))
        if beta.requires_grad:
            accumulate_grad(beta, g4.sum(axis=(0, 1, 2), dtype=np.float64))
        if x.requires_grad:
            gm = g4.mean(axis=(1, 2), keepdims=True, dtype=np.float64)
            gxh = (g4 * xhat).mean(axis=(1, 2), keepdims=True, dtype=np.float64)
            gx = gamma.data * istd * (g4 - gm - xhat * gxh)
            accumulate_grad(x, gx[0] if squeeze else gx)

    return _record(out, (x, gamma, beta), bwd)


def lstm_cell(
    x: Tensor, h_prev: Tensor, c_prev: Tensor, wx: Tensor, wh: Tensor, b: Tensor
) -> tuple[Tensor, Tensor]:
    """One LSTM step. Gate layout along the 4d axis is [input, forget, cell,
    output]. Composed from primitives, so backward needs no extra code."""
    if x.data.ndim != 2 or h_prev.data.ndim != 2 or c_prev.data.ndim != 2:
        raise ShapeError("lstm_cell operands must be 2-D (batch, features)")
    bsz, din = x.shape
    if wx.data.ndim != 2 or wx.shape[1] % 4 != 0:
        raise ShapeError(f"lstm_cell: wx must be (d_in, 4d), got {wx.shape}")
    d = wx.shape[1] // 4
    if wx.shape != (din, 4 * d) or wh.shape != (d, 4 * d) or b.shape != (4 * d,):
        raise ShapeError(
            f"lstm_cell: weight shapes {wx.shape}/{wh.shape}/{b.shape} do not "
            f"match input {x.shape} and state width {d}"
        )
    if h_prev.shape != (bsz, d) or c_prev.shape != (bsz, d):
        raise ShapeError(
            f"lstm_cell: state shapes {h_prev.shape}/{c_prev.shape} must be ({bsz},{d})"
        )
    z = add(add(matmul(x, wx), matmul(h_prev, wh)), b)
    i = sigmoid(narrow(z, 1, 0, d))
    f = sigmoid(narrow(z, 1, d, d))
    g = tanh(narrow(z, 1, 2 * d, d))
    o = sigmoid(narrow(z, 1, 3 * d, d))
    c = add(mul(f, c_prev), mul(i, g))
    h = mul(o, tanh(c))
    return h, c


def bce_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean binary cross-entropy over every element of ``pred``.

    Probabilities are clamped to [1e-7, 1 - 1e-7] before the logs; the
    gradient is exactly zero where the raw prediction sits outside the clamp
    interval. Loss math runs in float64 and is cast back on return."""
    if pred.shape != target.shape:
        raise ShapeError(f"bce_loss: shapes differ, {pred.shape} vs {target.shape}")
    lo, hi = 1e-7, 1.0 - 1e-7
    p = np.clip(pred.data.astype(np.float64), lo, hi)
    t = target.data.astype(np.float64)
    n = p.size
    loss_val = -(t * np.log(p) + (1.0 - t) * np.log1p(-p)).mean()
    out = Tensor(np.asarray(loss_val, dtype=pred.data.dtype), dtype=pred.data.dtype)
    inside = (pred.data >= lo) & (pred.data <= hi)

    def bwd(g: np.ndarray) -> None:
        if pred.requires_grad:
            dp = (p - t) / (p * (1.0 - p) * n)
            accumulate_grad(pred, float(g) * np.where(inside, dp, 0.0))
        if target.requires_grad:
            dt = (np.log1p(-p) - np.log(p)) / n
            accumulate_grad(target, float(g) * dt)

    return _record(out, (pred, target), bwd)


def dense(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Affine map (B,din) @ (din,dout) + bias."""
    y = matmul(x, w)
    if b is not None:
        if b.shape != (w.shape[1],):
            raise ShapeError(f"dense bias must be ({w.shape[1]},), got {b.shape}")
        y = add(y, b)
    return y


def flatten(x: Tensor) -> Tensor:
    """Collapse all axes after the first."""
    if x.data.ndim < 2:
        raise ShapeError(f"flatten needs a batch axis, got {x.shape}")
    return x.reshape((x.shape[0], int(np.prod(x.shape[1:]))))


__all__ = [
    "conv2d",
    "conv1d",
    "pool2d",
    "norm_batch",
    "norm_instance",
    "lstm_cell",
    "bce_loss",
    "dense",
    "flatten",
    "concat",
]
