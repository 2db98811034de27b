"""Array operators used by the predictor, each paired with its backward pass.

Arrays are plain ``numpy.ndarray`` in ``(N, C, H, W)`` layout.  Forward
functions that participate in training return ``(out, cache)``; the matching
``*_backward`` takes the upstream gradient and that cache.  Convenience
wrappers without the cache (``conv2d``, ``maxpool2``, ...) also accept a
single ``(C, H, W)`` image.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    """Raised when array extents do not satisfy an operator's contract."""


def _as_batch(x: np.ndarray) -> tuple[np.ndarray, bool]:
    if x.ndim == 3:
        return x[None], True
    if x.ndim != 4:
        raise ShapeError(f"expected rank 3 or 4 array, got rank {x.ndim}")
    return x, False


# --------------------------------------------------------------------------
# convolution

def conv2d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray | None):
    """Same-padded stride-1 convolution (cross-correlation) via im2col."""
    if x.ndim != 4:
        raise ShapeError(f"conv2d input must be (N, C, H, W), got rank {x.ndim}")
    n, c, h, wd = x.shape
    o, ci, kh, kw = w.shape
    if ci != c:
        raise ShapeError(f"channel axis mismatch: kernel expects {ci} input channels, input has {c}")
    if kh != kw or kh % 2 == 0:
        raise ShapeError(f"kernel spatial axes must be odd and square, got {kh}x{kw}")
    if b is not None and b.shape != (o,):
        raise ShapeError(f"bias axis mismatch: expected ({o},), got {b.shape}")
    p = kh // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
    # (N, C, H, W, kh, kw) -> (C, kh, kw, N, H, W)
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    cols = np.ascontiguousarray(win.transpose(1, 4, 5, 0, 2, 3)).reshape(c * kh * kw, n * h * wd)
    wmat = w.reshape(o, -1)
    out = wmat @ cols
    if b is not None:
        out += b[:, None]
    out = out.reshape(o, n, h, wd).transpose(1, 0, 2, 3)
    return np.ascontiguousarray(out), (x.shape, w, cols)


def conv2d_backward(dout: np.ndarray, cache):
    """Gradients ``(dx, dw, db)`` of :func:`conv2d_forward`."""
    xshape, w, cols = cache
    n, c, h, wd = xshape
    o, _, k, _ = w.shape
    p = k // 2
    dmat = dout.transpose(1, 0, 2, 3).reshape(o, -1)
    dw = (dmat @ cols.T).reshape(w.shape)
    db = dmat.sum(axis=1)
    dcols = (w.reshape(o, -1).T @ dmat).reshape(c, k, k, n, h, wd)
    dxp = np.zeros((n, c, h + 2 * p, wd + 2 * p), dtype=dout.dtype)
    for i in range(k):
        for j in range(k):
            dxp[:, :, i:i + h, j:j + wd] += dcols[:, i, j].transpose(1, 0, 2, 3)
    dx = dxp[:, :, p:p + h, p:p + wd] if p else dxp
    return dx, dw, db


def conv2d(x: np.ndarray, w: np.ndarray, b: np.ndarray | None = None) -> np.ndarray:
    xb, single = _as_batch(x)
    out, _ = conv2d_forward(xb, w, b)
    return out[0] if single else out


# --------------------------------------------------------------------------
# pooling / resampling

def maxpool2_forward(x: np.ndarray):
    """2x2 max-pool with stride 2; ties go to the first element in raster order."""
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2 needs even spatial extents, got {h}x{w}")
    blocks = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
    idx = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]
    return out, (x.shape, idx)


def maxpool2_backward(dout: np.ndarray, cache) -> np.ndarray:
    shape, idx = cache
    n, c, h, w = shape
    blocks = np.zeros((n, c, h // 2, w // 2, 4), dtype=dout.dtype)
    np.put_along_axis(blocks, idx[..., None], dout[..., None], axis=-1)
    return blocks.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(shape)


def maxpool2(x: np.ndarray) -> np.ndarray:
    xb, single = _as_batch(x)
    out, _ = maxpool2_forward(xb)
    return out[0] if single else out


def upsample2(x: np.ndarray) -> np.ndarray:
    """Nearest-neighbour 2x upsampling of the two trailing axes."""
    return x.repeat(2, axis=-2).repeat(2, axis=-1)


def upsample2_backward(dout: np.ndarray) -> np.ndarray:
    *lead, h, w = dout.shape
    return dout.reshape(*lead, h // 2, 2, w // 2, 2).sum(axis=(-3, -1))


# --------------------------------------------------------------------------
# pointwise nonlinearities

def sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign to avoid overflow in exp
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)
