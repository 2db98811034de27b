from __future__ import annotations

from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def motion_search(block: np.ndarray, refs: Sequence[np.ndarray], y: int, x: int, search_range: int):
    """Exhaustive integer-pel block matching over every reference.

    Candidates are restricted to displacements that keep the block inside the
    picture.  The minimum SAD wins; ties go to the smaller L1 norm of the
    vector, then the lower reference index, then the raster order of
    ``(dy, dx)``.  Returns ``(ref_index, (dx, dy), sad)``.
    """
    bh, bw = block.shape
    blk = np.ascontiguousarray(block, dtype=np.uint8)
    best = None
    for r, ref in enumerate(refs):
        h, w = ref.shape
        y0, y1 = max(0, y - search_range), min(h - bh, y + search_range)
        x0, x1 = max(0, x - search_range), min(w - bw, x + search_range)
        win = sliding_window_view(ref, (bh, bw))[y0:y1 + 1, x0:x1 + 1]
        # |a - b| in uint8 without widening
        diff = np.maximum(win, blk)
        diff -= np.minimum(win, blk)
        sad = diff.reshape(diff.shape[0], diff.shape[1], -1).sum(axis=2, dtype=np.int32)
        dy = np.arange(y0, y1 + 1)[:, None] - y + 0 * sad
        dx = np.arange(x0, x1 + 1)[None, :] - x + 0 * sad
        l1 = np.abs(dy) + np.abs(dx)
        order = np.lexsort((dx.ravel(), dy.ravel(), l1.ravel(), sad.ravel()))
        i = order[0]
        cand = (int(sad.flat[i]), int(l1.flat[i]), r, int(dy.flat[i]), int(dx.flat[i]))
        if best is None or cand < best:
            best = cand
    sad, _, r, dy, dx = best
    return r, (dx, dy), sad
