"""Peephole-free convolutional LSTM cell.

Gate pre-activations are ``conv(x, Wx) + conv(h, Wh) + b`` stacked in the
order (input, forget, output, candidate).  The two convolutions are evaluated
as one over the channel-concatenation of ``x`` and ``h``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ops import ShapeError, conv2d_backward, conv2d_forward, sigmoid

GATES = ("input", "forget", "output", "candidate")


@dataclass
class ConvLSTMParams:
    wx: np.ndarray  # (4 * hidden, in_channels, 3, 3)
    wh: np.ndarray  # (4 * hidden, hidden, 3, 3)
    b: np.ndarray   # (4 * hidden,)

    def __post_init__(self):
        g, cin, kh, kw = self.wx.shape
        if (kh, kw) != (3, 3) or self.wh.shape[2:] != (3, 3):
            raise ShapeError("ConvLSTM kernels must be 3x3")
        if g % 4:
            raise ShapeError(f"gate axis must be 4 * hidden, got {g}")
        hidden = g // 4
        if self.wh.shape[:2] != (g, hidden):
            raise ShapeError(f"hidden-to-gate kernel must be ({g}, {hidden}, 3, 3), got {self.wh.shape}")
        if self.b.shape != (g,):
            raise ShapeError(f"gate bias must be ({g},), got {self.b.shape}")

    @property
    def in_channels(self) -> int:
        return self.wx.shape[1]

    @property
    def hidden_channels(self) -> int:
        return self.wx.shape[0] // 4

    @classmethod
    def init(cls, in_channels: int, hidden: int, rng: np.random.Generator, dtype=np.float64):
        fan_in = (in_channels + hidden) * 9
        k = fan_in ** -0.5
        wx = rng.uniform(-k, k, (4 * hidden, in_channels, 3, 3)).astype(dtype)
        wh = rng.uniform(-k, k, (4 * hidden, hidden, 3, 3)).astype(dtype)
        b = rng.uniform(-k, k, 4 * hidden).astype(dtype)
        return cls(wx, wh, b)


def convlstm_forward(params: ConvLSTMParams, x: np.ndarray, h: np.ndarray, c: np.ndarray):
    hid = params.hidden_channels
    if x.shape[1] != params.in_channels:
        raise ShapeError(f"channel axis mismatch: cell expects {params.in_channels} input channels, got {x.shape[1]}")
    want = (x.shape[0], hid) + x.shape[2:]
    for name, arr in (("hidden", h), ("cell", c)):
        if arr.shape != want:
            raise ShapeError(f"{name} state must have shape {want}, got {arr.shape}")
    xh = np.concatenate([x, h], axis=1)
    w = np.concatenate([params.wx, params.wh], axis=1)
    z, conv_cache = conv2d_forward(xh, w, params.b)
    i = sigmoid(z[:, :hid])
    f = sigmoid(z[:, hid:2 * hid])
    o = sigmoid(z[:, 2 * hid:3 * hid])
    g = np.tanh(z[:, 3 * hid:])
    c_new = f * c + i * g
    tc = np.tanh(c_new)
    h_new = o * tc
    cache = (conv_cache, params.in_channels, c, i, f, o, g, tc)
    return h_new, c_new, cache


def convlstm_backward(dh: np.ndarray, dc: np.ndarray, cache):
    """Returns ``(dx, dh_prev, dc_prev, dwx, dwh, db)``."""
    conv_cache, cin, c_prev, i, f, o, g, tc = cache
    do = dh * tc
    dc = dc + dh * o * (1 - tc * tc)
    dz = np.concatenate([
        dc * g * i * (1 - i),
        dc * c_prev * f * (1 - f),
        do * o * (1 - o),
        dc * i * (1 - g * g),
    ], axis=1)
    dxh, dw, db = conv2d_backward(dz, conv_cache)
    return dxh[:, :cin], dxh[:, cin:], dc * f, dw[:, :cin], dw[:, cin:], db


def convlstm_step(params: ConvLSTMParams, x: np.ndarray, h: np.ndarray, c: np.ndarray):
    """One cell update; accepts batched ``(N, C, H, W)`` or single ``(C, H, W)`` arrays."""
    single = x.ndim == 3
    if single:
        x, h, c = x[None], h[None], c[None]
    h_new, c_new, _ = convlstm_forward(params, x, h, c)
    if single:
        return h_new[0], c_new[0]
    return h_new, c_new
