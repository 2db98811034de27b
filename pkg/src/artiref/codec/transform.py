"""8x8 orthonormal DCT-II, dead-zone scalar quantizer and exp-Golomb rate proxy."""
from __future__ import annotations

import numpy as np

N = 8
DEADZONE_OFFSET = 1.0 / 3.0


def dct_matrix(n: int = N) -> np.ndarray:
    k = np.arange(n)[:, None]
    i = np.arange(n)[None, :]
    m = np.cos(np.pi * (2 * i + 1) * k / (2 * n)) * np.sqrt(2.0 / n)
    m[0] /= np.sqrt(2.0)
    return m


_D = dct_matrix()


def forward_dct(blocks: np.ndarray) -> np.ndarray:
    """2-D DCT of ``(..., 8, 8)`` blocks."""
    return _D @ blocks @ _D.T


def inverse_dct(coeffs: np.ndarray) -> np.ndarray:
    return _D.T @ coeffs @ _D


def qstep(qp: int) -> float:
    return 2.0 ** ((qp - 4) / 6.0)


def quantize(coeffs: np.ndarray, qp: int) -> np.ndarray:
    q = qstep(qp)
    return (np.sign(coeffs) * np.floor(np.abs(coeffs) / q + DEADZONE_OFFSET)).astype(np.int32)


def dequantize(levels: np.ndarray, qp: int) -> np.ndarray:
    return levels * qstep(qp)


def se_golomb_bits(v: np.ndarray | int) -> np.ndarray | int:
    """Length of the signed exp-Golomb code for each value."""
    v = np.asarray(v, dtype=np.int64)
    code = np.where(v > 0, 2 * v - 1, -2 * v)
    # floor(log2(code + 1)) via bit length
    nbits = np.floor(np.log2(code + 1.0)).astype(np.int64)
    out = 2 * nbits + 1
    return int(out) if out.ndim == 0 else out


def residual_bits(levels: np.ndarray) -> int:
    return int(np.sum(se_golomb_bits(levels)))


def residual_transform_quantize(residual: np.ndarray, qp: int):
    """Code ``(..., 8, 8)`` residual blocks.

    Returns ``(levels, bits, reconstructed residual)``.
    """
    levels = quantize(forward_dct(np.asarray(residual, dtype=np.float64)), qp)
    return levels, residual_bits(levels), inverse_dct(dequantize(levels, qp))
