"""Fidelity metrics, error images and Bjontegaard delta-rate reporting."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .codec.coder import RDPoint
from .videoio import Picture, Snippet

SSIM_WINDOW = 8
C1 = (0.01 * 255) ** 2
C2 = (0.03 * 255) ** 2
PLANES = ("y", "cb", "cr")
WEIGHTS = (6, 1, 1)


class MetricError(ValueError):
    pass


class NoOverlap(MetricError):
    """The two RD curves share no PSNR interval."""


def _same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise MetricError(f"plane dimensions differ: {a.shape} vs {b.shape}")


def mse(a: np.ndarray, b: np.ndarray) -> float:
    _same_shape(a, b)
    d = a.astype(np.float64) - b.astype(np.float64)
    return float(np.mean(d * d))


def psnr(a: np.ndarray, b: np.ndarray, cap: float = 99.0) -> float:
    m = mse(a, b)
    return cap if m == 0 else min(cap, 10 * math.log10(255.0 ** 2 / m))


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean SSIM over all 8x8 windows at stride 1 with uniform weights."""
    _same_shape(a, b)
    if a.ndim != 2 or min(a.shape) < SSIM_WINDOW:
        raise MetricError(f"SSIM needs 2-D planes of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {a.shape}")
    x = a.astype(np.float64)
    y = b.astype(np.float64)

    def local_mean(p):
        return sliding_window_view(p, (SSIM_WINDOW, SSIM_WINDOW)).mean(axis=(-2, -1))

    mx, my = local_mean(x), local_mean(y)
    vx = local_mean(x * x) - mx * mx
    vy = local_mean(y * y) - my * my
    cov = local_mean(x * y) - mx * my
    num = (2 * mx * my + C1) * (2 * cov + C2)
    den = (mx * mx + my * my + C1) * (vx + vy + C2)
    return float(np.mean(num / den))


def error_image(a: Picture, b: Picture) -> Picture:
    """Absolute luma difference as a grayscale picture (neutral chroma)."""
    _same_shape(a.y, b.y)
    diff = np.abs(a.y.astype(np.int16) - b.y.astype(np.int16)).astype(np.uint8)
    grey = np.full_like(a.cb, 128)
    return Picture(diff, grey, grey.copy())


def write_pgm(path: str | Path, plane: np.ndarray) -> None:
    h, w = plane.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(plane, dtype=np.uint8).tobytes())


# --------------------------------------------------------------------------
# Bjontegaard delta rate

def _curve(points: Sequence[RDPoint], plane: str) -> tuple[np.ndarray, np.ndarray]:
    if len(points) < 4:
        raise MetricError(f"BD-rate needs at least 4 RD points per curve, got {len(points)}")
    pts = sorted(points, key=lambda p: p.qp, reverse=True)
    q = np.array([p.psnr(plane) for p in pts], dtype=np.float64)
    r = np.array([p.bits for p in pts], dtype=np.float64)
    if np.any(np.diff(q) <= 0):
        raise MetricError(f"{plane} PSNR must increase strictly as QP decreases: {q.tolist()}")
    if np.any(r <= 0):
        raise MetricError("rates must be positive")
    return q, np.log10(r)


def bd_interval(anchor: Sequence[RDPoint], test: Sequence[RDPoint], plane: str = "y") -> tuple[float, float]:
    qa, _ = _curve(anchor, plane)
    qt, _ = _curve(test, plane)
    lo, hi = max(qa.min(), qt.min()), min(qa.max(), qt.max())
    if not lo < hi:
        raise NoOverlap(f"{plane}: PSNR ranges [{qa.min():.3f}, {qa.max():.3f}] and "
                        f"[{qt.min():.3f}, {qt.max():.3f}] do not overlap")
    return lo, hi


def bd_rate(anchor: Sequence[RDPoint], test: Sequence[RDPoint], plane: str = "y") -> float:
    """Average rate difference of ``test`` vs ``anchor`` in percent; negative means savings.

    Cubic fits of log10(rate) over PSNR are integrated in closed form over
    the shared PSNR interval.
    """
    qa, ra = _curve(anchor, plane)
    qt, rt = _curve(test, plane)
    lo, hi = bd_interval(anchor, test, plane)
    ia = np.polyint(np.polyfit(qa, ra, 3))
    it = np.polyint(np.polyfit(qt, rt, 3))
    area_a = np.polyval(ia, hi) - np.polyval(ia, lo)
    area_t = np.polyval(it, hi) - np.polyval(it, lo)
    return (10.0 ** ((area_t - area_a) / (hi - lo)) - 1.0) * 100.0


def weighted_bd(y: float, cb: float, cr: float) -> float:
    wy, wcb, wcr = WEIGHTS
    return (wy * y + wcb * cb + wcr * cr) / (wy + wcb + wcr)


@dataclass
class BDReport:
    label: str
    y: float | None
    cb: float | None
    cr: float | None
    weighted: float | None
    anchor: list[RDPoint] = field(default_factory=list)
    test: list[RDPoint] = field(default_factory=list)
    overlap: dict[str, tuple[float, float] | None] = field(default_factory=dict)

    @property
    def has_overlap(self) -> bool:
        return self.weighted is not None


def bd_report(label: str, anchor: Sequence[RDPoint], test: Sequence[RDPoint]) -> BDReport:
    values, overlap = {}, {}
    for plane in PLANES:
        try:
            overlap[plane] = bd_interval(anchor, test, plane)
            values[plane] = bd_rate(anchor, test, plane)
        except NoOverlap:
            overlap[plane] = None
            values[plane] = None
    w = None if None in values.values() else weighted_bd(values["y"], values["cb"], values["cr"])
    return BDReport(label, values["y"], values["cb"], values["cr"], w, list(anchor), list(test), overlap)


def mean_report(reports: Sequence[BDReport], label: str = "Mean") -> BDReport:
    """Column means over reports that have a value in that column."""
    def col(name):
        vals = [getattr(r, name) for r in reports if getattr(r, name) is not None]
        return float(np.mean(vals)) if vals else None
    return BDReport(label, col("y"), col("cb"), col("cr"), col("weighted"))


def _fmt(v: float | None) -> str:
    return "no overlap" if v is None else f"{v:.2f}%"


def format_table(reports: Sequence[BDReport], mean: bool = True) -> str:
    rows = list(reports)
    if mean and rows:
        rows.append(mean_report(rows))
    width = max([len("Video")] + [len(r.label) for r in rows])
    head = f"{'Video':<{width}} | {'Y':>10} {'Cb':>10} {'Cr':>10} {'Weighted':>10}"
    lines = [head, "-" * len(head)]
    for r in rows:
        lines.append(f"{r.label:<{width}} | {_fmt(r.y):>10} {_fmt(r.cb):>10} {_fmt(r.cr):>10} {_fmt(r.weighted):>10}")
    return "\n".join(lines) + "\n"


def reports_csv(reports: Sequence[BDReport], mean: bool = True) -> str:
    rows = list(reports)
    if mean and rows:
        rows.append(mean_report(rows))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["video", "bd_y", "bd_cb", "bd_cr", "bd_weighted"])
    for r in rows:
        w.writerow([r.label] + ["" if v is None else f"{v:.6f}" for v in (r.y, r.cb, r.cr, r.weighted)])
    return buf.getvalue()


def read_rd_csv(path: str | Path) -> list[RDPoint]:
    """RD points from a CSV with columns ``qp,bits,psnr_y,psnr_cb,psnr_cr``."""
    with open(path, newline="") as fh:
        return [RDPoint(int(r["qp"]), int(float(r["bits"])), float(r["psnr_y"]), float(r["psnr_cb"]),
                        float(r["psnr_cr"])) for r in csv.DictReader(fh)]


def write_rd_csv(path: str | Path, points: Sequence[RDPoint]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["qp", "bits", "psnr_y", "psnr_cb", "psnr_cr"])
        for p in sorted(points, key=lambda p: p.qp):
            w.writerow([p.qp, p.bits, f"{p.psnr_y:.6f}", f"{p.psnr_cb:.6f}", f"{p.psnr_cr:.6f}"])


# --------------------------------------------------------------------------
# reference quality (MSE / SSIM of each reference against t0)

REF_LABELS = ("t-4", "t-3", "t-2", "t-1", "t0 (artificial)")


@dataclass
class ReferenceQualityRow:
    label: str
    mse: float
    ssim: float


def reference_quality_table(snippets: Sequence[Snippet], artificial: Sequence[Picture] | Callable[[list[Picture]], Picture],
                            planes: str = "y") -> list[ReferenceQualityRow]:
    """Mean MSE/SSIM of t-4..t-1 and the artificial picture against each snippet's t0.

    ``artificial`` is either one precomputed picture per snippet or a
    callable mapping the four references (oldest first) to the artificial
    picture.  ``planes`` is ``"y"`` or ``"all"`` (sample-weighted over Y, Cb, Cr).
    """
    if not snippets:
        raise MetricError("no snippets")
    if callable(artificial):
        artificial = [artificial(s.refs) for s in snippets]
    if len(artificial) != len(snippets):
        raise MetricError("need one artificial picture per snippet")
    sums = np.zeros((len(REF_LABELS), 2))
    for snip, art in zip(snippets, artificial):
        target = snip.target
        for i, cand in enumerate(snip.refs + [art]):
            sums[i, 0] += _picture_mse(cand, target, planes)
            sums[i, 1] += ssim(cand.y, target.y)
    sums /= len(snippets)
    return [ReferenceQualityRow(lbl, float(m), float(s)) for lbl, (m, s) in zip(REF_LABELS, sums)]


def _picture_mse(a: Picture, b: Picture, planes: str) -> float:
    if planes == "y":
        return mse(a.y, b.y)
    if planes == "all":
        sq = sum(mse(x, y) * x.size for x, y in zip(a.planes, b.planes))
        return sq / sum(x.size for x in a.planes)
    raise MetricError(f"planes must be 'y' or 'all', got {planes!r}")


def format_quality_table(rows: Sequence[ReferenceQualityRow]) -> str:
    lines = [f"{'Reference picture at time':<26} {'MSE':>10} {'SSIM':>7}"]
    for r in rows:
        lines.append(f"{r.label:<26} {r.mse:>10.2f} {r.ssim:>7.4f}")
    return "\n".join(lines) + "\n"
