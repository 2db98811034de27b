"""Closed-loop block-based hybrid coder with a four-picture low-delay reference list.

Every 16x16 block picks the cheapest of skip, inter and intra-DC under
``SSE + lambda * bits``.  Luma residuals are coded as four 8x8 transforms,
each chroma plane as one 8x8 transform with the luma vector halved.
"""
from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from ..videoio import Picture
from .motion import motion_search
from .transform import dequantize, inverse_dct, residual_bits, residual_transform_quantize, se_golomb_bits

BLOCK = 16
SEARCH_RANGE = 16
MAX_REFS = 4
MODE_FLAG_BITS = 2
REF_INDEX_BITS = 2
PSNR_CAP = 99.0
QP_SET = (22, 27, 32, 37)
STREAM_MAGIC = b"RPC1"


class Mode(IntEnum):
    SKIP = 0
    INTER = 1
    INTRA = 2


class CodecError(ValueError):
    pass


class DecodeError(CodecError):
    pass


class ConfigurationError(CodecError):
    pass


def rd_lambda(qp: int) -> float:
    return 0.85 * 2.0 ** ((qp - 12) / 3.0)


def check_qp(qp: int) -> None:
    if not 0 <= qp <= 51:
        raise CodecError(f"QP must lie in [0, 51], got {qp}")


@dataclass
class BlockRecord:
    mode: Mode
    ref: int = 0
    mv: tuple[int, int] = (0, 0)      # (dx, dy) in luma pels
    levels: np.ndarray | None = None  # (6, 8, 8): four luma blocks, Cb, Cr

    def header_bits(self) -> int:
        if self.mode == Mode.INTRA:
            return MODE_FLAG_BITS
        return MODE_FLAG_BITS + se_golomb_bits(self.mv[0]) + se_golomb_bits(self.mv[1]) + REF_INDEX_BITS

    def bits(self) -> int:
        if self.levels is None:
            return self.header_bits()
        return self.header_bits() + residual_bits(self.levels)


@dataclass
class ReferenceList:
    """Reconstructed pictures, most recent first: index 0 is t-1, index 3 is t-4."""

    entries: list[Picture] = field(default_factory=list)
    replaced: bool = False

    def push(self, pic: Picture) -> None:
        self.entries = [pic] + self.entries[:MAX_REFS - 1]
        self.replaced = False

    def oldest_first(self) -> list[Picture]:
        return self.entries[::-1]

    def with_replacement(self, artificial: Picture) -> "ReferenceList":
        """Copy with slot t-4 holding ``artificial``."""
        if len(self.entries) != MAX_REFS:
            raise CodecError("replacement needs a full list of four references")
        return ReferenceList(self.entries[:MAX_REFS - 1] + [artificial], True)

    def __len__(self) -> int:
        return len(self.entries)


# --------------------------------------------------------------------------
# block-level helpers

def _split8(block16: np.ndarray) -> np.ndarray:
    return block16.reshape(2, 8, 2, 8).transpose(0, 2, 1, 3).reshape(4, 8, 8)


def _join8(blocks: np.ndarray) -> np.ndarray:
    return blocks.reshape(2, 2, 8, 8).transpose(0, 2, 1, 3).reshape(16, 16)


def _intra_dc(plane: np.ndarray, y: int, x: int, size: int) -> int:
    border = []
    if x > 0:
        border.append(plane[y:y + size, x - 1])
    if y > 0:
        border.append(plane[y - 1, x:x + size])
    if not border:
        return 128
    vals = np.concatenate(border).astype(np.int64)
    return int((vals.sum() + len(vals) // 2) // len(vals))


def _reconstruct(pred: np.ndarray, rres: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(pred + rres), 0, 255).astype(np.uint8)


def _predictions(mode: Mode, ref: int, mv: tuple[int, int], refs: Sequence[Picture],
                 rec: list[np.ndarray], by: int, bx: int):
    """Luma 16x16 and chroma 8x8 predictions for one block."""
    cy, cx = by // 2, bx // 2
    if mode == Mode.INTRA:
        py = np.full((BLOCK, BLOCK), _intra_dc(rec[0], by, bx, BLOCK), np.float64)
        pcb = np.full((8, 8), _intra_dc(rec[1], cy, cx, 8), np.float64)
        pcr = np.full((8, 8), _intra_dc(rec[2], cy, cx, 8), np.float64)
        return py, pcb, pcr
    r = refs[ref]
    dx, dy = mv
    cdx, cdy = dx >> 1, dy >> 1
    py = r.y[by + dy:by + dy + BLOCK, bx + dx:bx + dx + BLOCK].astype(np.float64)
    pcb = r.cb[cy + cdy:cy + cdy + 8, cx + cdx:cx + cdx + 8].astype(np.float64)
    pcr = r.cr[cy + cdy:cy + cdy + 8, cx + cdx:cx + cdx + 8].astype(np.float64)
    return py, pcb, pcr


def _apply_levels(levels: np.ndarray | None, preds, qp: int):
    py, pcb, pcr = preds
    if levels is None:
        return _reconstruct(py, 0.0), _reconstruct(pcb, 0.0), _reconstruct(pcr, 0.0)
    rres = inverse_dct(dequantize(levels, qp))
    return _reconstruct(py, _join8(rres[:4])), _reconstruct(pcb, rres[4]), _reconstruct(pcr, rres[5])


def _code_residual(orig, preds, qp: int):
    oy, ocb, ocr = orig
    py, pcb, pcr = preds
    res = np.concatenate([_split8(oy - py), (ocb - pcb)[None], (ocr - pcr)[None]])
    levels, bits, _ = residual_transform_quantize(res, qp)
    return levels, bits


def _sse(orig, recon) -> float:
    return float(sum(np.sum((o - r.astype(np.float64)) ** 2) for o, r in zip(orig, recon)))


# --------------------------------------------------------------------------
# picture coding

@dataclass
class CodedPicture:
    blocks: list[BlockRecord]
    reconstruction: Picture
    bits: int


def encode_picture(original: Picture, refs: Sequence[Picture], qp: int,
                   search_range: int = SEARCH_RANGE) -> CodedPicture:
    """Encode one picture against ``refs`` (index 0 = t-1); an empty list forces intra."""
    check_qp(qp)
    if original.width % BLOCK or original.height % BLOCK:
        raise CodecError(f"picture extents must be multiples of {BLOCK}, got {original.width}x{original.height}")
    for r in refs:
        if (r.width, r.height) != (original.width, original.height):
            raise CodecError("reference size differs from the picture size")
    lam = rd_lambda(qp)
    rec = [np.zeros_like(original.y), np.zeros_like(original.cb), np.zeros_like(original.cr)]
    ref_luma = [r.y for r in refs]
    blocks = []
    total = 0
    for by in range(0, original.height, BLOCK):
        for bx in range(0, original.width, BLOCK):
            cy, cx = by // 2, bx // 2
            orig = (original.y[by:by + BLOCK, bx:bx + BLOCK].astype(np.float64),
                    original.cb[cy:cy + 8, cx:cx + 8].astype(np.float64),
                    original.cr[cy:cy + 8, cx:cx + 8].astype(np.float64))
            cands = []
            if refs:
                ref, mv, _ = motion_search(original.y[by:by + BLOCK, bx:bx + BLOCK], ref_luma, by, bx, search_range)
                preds = _predictions(Mode.INTER, ref, mv, refs, rec, by, bx)
                skip = BlockRecord(Mode.SKIP, ref, mv)
                cands.append((skip, preds))
                levels, _ = _code_residual(orig, preds, qp)
                cands.append((BlockRecord(Mode.INTER, ref, mv, levels), preds))
            preds = _predictions(Mode.INTRA, 0, (0, 0), refs, rec, by, bx)
            levels, _ = _code_residual(orig, preds, qp)
            cands.append((BlockRecord(Mode.INTRA, levels=levels), preds))

            best = None
            for blk, preds in cands:
                recon = _apply_levels(blk.levels, preds, qp)
                bits = blk.bits()
                cost = _sse(orig, recon) + lam * bits
                if best is None or cost < best[0]:
                    best = (cost, blk, recon, bits)
            _, blk, recon, bits = best
            rec[0][by:by + BLOCK, bx:bx + BLOCK] = recon[0]
            rec[1][cy:cy + 8, cx:cx + 8] = recon[1]
            rec[2][cy:cy + 8, cx:cx + 8] = recon[2]
            blocks.append(blk)
            total += bits
    return CodedPicture(blocks, Picture(*rec), total)


def decode_picture(blocks: Sequence[BlockRecord], refs: Sequence[Picture], qp: int,
                   width: int, height: int) -> Picture:
    check_qp(qp)
    rec = [np.zeros((height, width), np.uint8), np.zeros((height // 2, width // 2), np.uint8),
           np.zeros((height // 2, width // 2), np.uint8)]
    expected = (width // BLOCK) * (height // BLOCK)
    if len(blocks) != expected:
        raise DecodeError(f"block {min(len(blocks), expected)}: expected {expected} blocks, got {len(blocks)}")
    i = 0
    for by in range(0, height, BLOCK):
        for bx in range(0, width, BLOCK):
            blk = blocks[i]
            _validate_block(blk, i, refs, by, bx, width, height)
            preds = _predictions(blk.mode, blk.ref, blk.mv, refs, rec, by, bx)
            recon = _apply_levels(blk.levels, preds, qp)
            cy, cx = by // 2, bx // 2
            rec[0][by:by + BLOCK, bx:bx + BLOCK] = recon[0]
            rec[1][cy:cy + 8, cx:cx + 8] = recon[1]
            rec[2][cy:cy + 8, cx:cx + 8] = recon[2]
            i += 1
    return Picture(*rec)


def _validate_block(blk: BlockRecord, i: int, refs, by: int, bx: int, width: int, height: int) -> None:
    try:
        mode = Mode(blk.mode)
    except ValueError:
        raise DecodeError(f"block {i}: invalid mode {blk.mode}") from None
    if mode != Mode.SKIP and (blk.levels is None or blk.levels.shape != (6, 8, 8)):
        raise DecodeError(f"block {i}: missing or malformed coefficient levels")
    if mode == Mode.INTRA:
        return
    if not 0 <= blk.ref < len(refs):
        raise DecodeError(f"block {i}: reference index {blk.ref} out of range for a list of {len(refs)}")
    dx, dy = blk.mv
    if not (0 <= by + dy <= height - BLOCK and 0 <= bx + dx <= width - BLOCK):
        raise DecodeError(f"block {i}: motion vector ({dx}, {dy}) points outside the picture")


# --------------------------------------------------------------------------
# stream serialization
#
# header: magic "RPC1" | width u16 | height u16 | qp u8 | mode u8 | picture count u32
# per picture, per block in raster order:
#   mode u8; skip/inter: ref u8, dx i8, dy i8; inter/intra: 384 x int16 levels
# all little-endian.

def write_stream(width: int, height: int, qp: int, replace: bool, pictures: Sequence[Sequence[BlockRecord]]) -> bytes:
    out = [STREAM_MAGIC, struct.pack("<HHBBI", width, height, qp, int(replace), len(pictures))]
    for blocks in pictures:
        for blk in blocks:
            out.append(struct.pack("<B", int(blk.mode)))
            if blk.mode != Mode.INTRA:
                out.append(struct.pack("<Bbb", blk.ref, blk.mv[0], blk.mv[1]))
            if blk.mode != Mode.SKIP:
                out.append(np.asarray(blk.levels, dtype="<i2").tobytes())
    return b"".join(out)


@dataclass
class StreamHeader:
    width: int
    height: int
    qp: int
    replace: bool
    count: int


def read_stream(buf: bytes) -> tuple[StreamHeader, list[list[BlockRecord]]]:
    if buf[:4] != STREAM_MAGIC:
        raise DecodeError(f"bad stream magic {buf[:4]!r}")
    if len(buf) < 14:
        raise DecodeError("truncated stream header")
    w, h, qp, flag, count = struct.unpack_from("<HHBBI", buf, 4)
    hdr = StreamHeader(w, h, qp, bool(flag), count)
    pos = 14
    per_pic = (w // BLOCK) * (h // BLOCK)
    pictures = []
    for _ in range(count):
        blocks = []
        for i in range(per_pic):
            try:
                (mode,) = struct.unpack_from("<B", buf, pos)
                pos += 1
                ref, mv, levels = 0, (0, 0), None
                if mode not in (0, 1, 2):
                    raise DecodeError(f"block {i}: invalid mode {mode}")
                if mode != Mode.INTRA:
                    ref, dx, dy = struct.unpack_from("<Bbb", buf, pos)
                    pos += 3
                    mv = (dx, dy)
                if mode != Mode.SKIP:
                    if pos + 768 > len(buf):
                        raise struct.error("short levels")
                    levels = np.frombuffer(buf, dtype="<i2", count=384, offset=pos).reshape(6, 8, 8).astype(np.int32)
                    pos += 768
            except struct.error:
                raise DecodeError(f"block {i}: stream truncated at byte {pos}") from None
            blocks.append(BlockRecord(Mode(mode), ref, mv, levels))
        pictures.append(blocks)
    if pos != len(buf):
        raise DecodeError(f"{len(buf) - pos} trailing bytes after the last picture")
    return hdr, pictures


# --------------------------------------------------------------------------
# sequences

# predictor(refs oldest-first, poc) -> artificial picture at poc
ArtificialPredictor = Callable[[list[Picture], int], Picture]


@dataclass
class RDPoint:
    qp: int
    bits: int
    psnr_y: float
    psnr_cb: float
    psnr_cr: float

    def psnr(self, plane: str) -> float:
        return {"y": self.psnr_y, "cb": self.psnr_cb, "cr": self.psnr_cr}[plane]


@dataclass
class PictureStats:
    poc: int
    mode: str          # "I", "P" or "P*" (artificial reference in slot t-4)
    bits: int
    psnr_y: float
    psnr_cb: float
    psnr_cr: float


@dataclass
class SequenceResult:
    point: RDPoint
    stats: list[PictureStats]
    stream: bytes
    reconstructions: list[Picture]


def psnr_from_mse(mse: float) -> float:
    if mse <= 0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(255.0 ** 2 / mse))


def _plane_mse(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.mean((a.astype(np.float64) - b.astype(np.float64)) ** 2))


def _reference_lists(refs: ReferenceList, poc: int, replace: bool, predictor: ArtificialPredictor | None):
    if replace and len(refs) == MAX_REFS:
        return refs.with_replacement(predictor(refs.oldest_first(), poc))
    return refs


def code_sequence(sequence: Sequence[Picture], qp: int, mode: str = "conventional",
                  predictor: ArtificialPredictor | None = None,
                  search_range: int = SEARCH_RANGE) -> SequenceResult:
    """Low-delay coding: picture 0 intra, later pictures predict from up to four reconstructions.

    In ``replace_t4`` mode every picture with a full reference list gets the
    artificial picture from ``predictor`` in slot t-4.
    """
    replace = _parse_mode(mode)
    if replace and predictor is None:
        raise ConfigurationError("replace_t4 mode needs a predictor model")
    check_qp(qp)
    if not sequence:
        raise CodecError("empty sequence")
    refs = ReferenceList()
    coded, stats, recons = [], [], []
    sse = np.zeros(3)
    for poc, pic in enumerate(sequence):
        active = _reference_lists(refs, poc, replace, predictor)
        cp = encode_picture(pic, active.entries, qp, search_range)
        mses = [_plane_mse(a, b) for a, b in zip(pic.planes, cp.reconstruction.planes)]
        sse += mses
        kind = "I" if poc == 0 else ("P*" if active.replaced else "P")
        stats.append(PictureStats(poc, kind, cp.bits, *(psnr_from_mse(m) for m in mses)))
        coded.append(cp.blocks)
        recons.append(cp.reconstruction)
        refs.push(cp.reconstruction)
    n = len(sequence)
    point = RDPoint(qp, sum(s.bits for s in stats), *(psnr_from_mse(s / n) for s in sse))
    stream = write_stream(sequence[0].width, sequence[0].height, qp, replace, coded)
    return SequenceResult(point, stats, stream, recons)


def decode_sequence(stream: bytes, predictor: ArtificialPredictor | None = None) -> list[Picture]:
    hdr, pictures = read_stream(stream)
    if hdr.replace and predictor is None:
        raise ConfigurationError("stream uses replace_t4; a predictor model is required to decode it")
    refs = ReferenceList()
    out = []
    for poc, blocks in enumerate(pictures):
        active = _reference_lists(refs, poc, hdr.replace, predictor)
        try:
            pic = decode_picture(blocks, active.entries, hdr.qp, hdr.width, hdr.height)
        except DecodeError as exc:
            raise DecodeError(f"picture {poc}, {exc}") from None
        out.append(pic)
        refs.push(pic)
    return out


def _parse_mode(mode: str) -> bool:
    m = mode.replace("-", "_").lower()
    if m == "conventional":
        return False
    if m == "replace_t4":
        return True
    raise ConfigurationError(f"unknown coding mode {mode!r}")


def write_stats_csv(path: str | Path, stats: Sequence[PictureStats]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["poc", "mode", "bits", "psnr_y", "psnr_cb", "psnr_cr"])
        for s in stats:
            w.writerow([s.poc, s.mode, s.bits, f"{s.psnr_y:.6f}", f"{s.psnr_cb:.6f}", f"{s.psnr_cr:.6f}"])
