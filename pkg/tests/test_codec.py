import numpy as np
import pytest
import scipy.fft
from hypothesis import given
from hypothesis import strategies as st

from artiref.codec import (
    QP_SET,
    BlockRecord,
    CodecError,
    ConfigurationError,
    DecodeError,
    Mode,
    ReferenceList,
    code_sequence,
    decode_picture,
    decode_sequence,
    encode_picture,
    motion_search,
    qstep,
    rd_lambda,
    read_stream,
    residual_transform_quantize,
    se_golomb_bits,
    write_stream,
)
from artiref.codec.transform import dct_matrix, forward_dct, inverse_dct
from artiref.videoio import Picture, SyntheticObject, SyntheticSpec, default_corpora, synthesize


def brute_search(block, refs, y, x, rng_):
    """Loop-over-everything oracle with the documented tie order."""
    bh, bw = block.shape
    best = None
    for r, ref in enumerate(refs):
        h, w = ref.shape
        for dy in range(-rng_, rng_ + 1):
            for dx in range(-rng_, rng_ + 1):
                yy, xx = y + dy, x + dx
                if yy < 0 or xx < 0 or yy + bh > h or xx + bw > w:
                    continue
                sad = int(np.abs(ref[yy:yy + bh, xx:xx + bw].astype(int) - block.astype(int)).sum())
                key = (sad, abs(dx) + abs(dy), r, dy, dx)
                if best is None or key < best:
                    best = key
    sad, _, r, dy, dx = best
    return r, (dx, dy), sad


def oracle_dct(block):
    n = block.shape[0]
    out = np.zeros((n, n))
    for u in range(n):
        for v in range(n):
            cu = np.sqrt(1 / n) if u == 0 else np.sqrt(2 / n)
            cv = np.sqrt(1 / n) if v == 0 else np.sqrt(2 / n)
            s = 0.0
            for i in range(n):
                for j in range(n):
                    s += block[i, j] * np.cos(np.pi * (2 * i + 1) * u / (2 * n)) * np.cos(np.pi * (2 * j + 1) * v / (2 * n))
            out[u, v] = cu * cv * s
    return out


def textured(seed, w=64, h=64):
    rng = np.random.default_rng(seed)
    return Picture(rng.integers(0, 256, (h, w), dtype=np.uint8), rng.integers(0, 256, (h // 2, w // 2), dtype=np.uint8),
                   rng.integers(0, 256, (h // 2, w // 2), dtype=np.uint8))


@pytest.fixture(scope="module")
def heldout():
    _, seqs = default_corpora(0, train=0, heldout=4)
    return seqs


# --------------------------------------------------------------------------
# transform and rate proxy

def test_dct_matches_scipy():
    x = np.random.default_rng(0).uniform(-255, 255, (5, 8, 8))
    np.testing.assert_allclose(forward_dct(x), scipy.fft.dctn(x, axes=(1, 2), norm="ortho"), atol=1e-9)
    np.testing.assert_allclose(inverse_dct(forward_dct(x)), x, atol=1e-9)
    np.testing.assert_allclose(dct_matrix() @ dct_matrix().T, np.eye(8), atol=1e-12)


def test_dct_matches_cosine_sum():
    x = np.random.default_rng(1).uniform(-50, 50, (8, 8))
    np.testing.assert_allclose(forward_dct(x), oracle_dct(x), atol=1e-9)


def test_qstep_values():
    assert qstep(4) == 1.0
    assert qstep(22) == 8.0


def test_zero_residual():
    levels, bits, rec = residual_transform_quantize(np.zeros((8, 8)), 27)
    assert np.all(levels == 0) and np.all(rec == 0)
    assert bits == 64  # one bit per zero coefficient


def test_constant_residual_dc_only():
    levels, _, _ = residual_transform_quantize(np.full((8, 8), 8.0), 22)
    dc = oracle_dct(np.full((8, 8), 8.0))[0, 0]  # 64
    assert dc == pytest.approx(64.0)
    assert levels[0, 0] == np.floor(dc / 8.0 + 1.0 / 3.0) == 8
    assert np.count_nonzero(levels) == 1


@given(st.integers(-5000, 5000))
def test_se_golomb_length(v):
    code = 2 * v - 1 if v > 0 else -2 * v
    assert se_golomb_bits(v) == 2 * ((code + 1).bit_length() - 1) + 1


def test_se_golomb_small_values():
    assert [se_golomb_bits(v) for v in (0, 1, -1, 2, -2, 3, -3, 4)] == [1, 3, 3, 5, 5, 5, 5, 7]


def test_lambda():
    assert rd_lambda(12) == pytest.approx(0.85)
    assert rd_lambda(27) == pytest.approx(0.85 * 32)


# --------------------------------------------------------------------------
# motion search

def test_motion_colocated_zero():
    ref = np.random.default_rng(0).integers(0, 256, (32, 32), dtype=np.uint8)
    assert motion_search(ref[8:24, 8:24], [ref], 8, 8, 4) == (0, (0, 0), 0)


def test_motion_known_shift():
    ref = np.random.default_rng(1).integers(0, 256, (48, 48), dtype=np.uint8)
    block = ref[17:33, 19:35]  # current block at (16, 16) displaced by (3, 1)
    assert motion_search(block, [ref], 16, 16, 16) == (0, (3, 1), 0)
    assert brute_search(block, [ref], 16, 16, 16) == (0, (3, 1), 0)


def test_motion_tie_equal_l1_uses_raster_order():
    rng = np.random.default_rng(2)
    ref = rng.integers(0, 256, (12, 12), dtype=np.uint8)
    block = np.array([[7, 200], [90, 13]], np.uint8)
    ref[4:6, 6:8] = block   # (dx, dy) = (2, 0)
    ref[6:8, 4:6] = block   # (dx, dy) = (0, 2)
    got = motion_search(block, [ref], 4, 4, 2)
    assert got == brute_search(block, [ref], 4, 4, 2)
    assert got == (0, (2, 0), 0)


def test_motion_matches_brute_force_random():
    rng = np.random.default_rng(3)
    for _ in range(200):
        r = int(rng.integers(0, 5))
        nref = int(rng.integers(1, 5))
        refs = [rng.integers(0, 4, (16, 16), dtype=np.uint8) for _ in range(nref)]  # small alphabet forces ties
        y, x = int(rng.integers(0, 9)), int(rng.integers(0, 9))
        block = rng.integers(0, 4, (8, 8), dtype=np.uint8)
        assert motion_search(block, refs, y, x, r) == brute_search(block, refs, y, x, r)


# --------------------------------------------------------------------------
# pictures

def test_identical_reference_all_skip():
    pic = textured(0)
    cp = encode_picture(pic, [pic], 27)
    assert all(b.mode == Mode.SKIP and b.mv == (0, 0) for b in cp.blocks)
    assert cp.reconstruction == pic
    assert cp.bits == 16 * (2 + 1 + 1 + 2)


def test_skip_not_costlier_than_inter_when_sad_zero():
    ref = textured(1)
    shifted = Picture(np.roll(ref.y, (2, -4), (0, 1)), np.roll(ref.cb, (1, -2), (0, 1)), np.roll(ref.cr, (1, -2), (0, 1)))
    cp = encode_picture(shifted, [ref], 32)
    interior = [b for i, b in enumerate(cp.blocks) if 0 < i // 4 < 3 and 0 < i % 4 < 3]
    assert all(b.mode == Mode.SKIP and b.bits() <= BlockRecord(Mode.INTER, b.ref, b.mv, np.zeros((6, 8, 8), int)).bits()
               for b in interior)


def test_all_skip_decode_copies_references():
    refs = [textured(s) for s in (4, 5)]
    rng = np.random.default_rng(6)
    blocks = []
    for by in range(0, 64, 16):
        for bx in range(0, 64, 16):
            dx, dy = int(rng.integers(-bx, 49 - bx)) // 2 * 2, int(rng.integers(-by, 49 - by)) // 2 * 2
            blocks.append(BlockRecord(Mode.SKIP, int(rng.integers(0, 2)), (dx, dy)))
    out = decode_picture(blocks, refs, 30, 64, 64)
    for i, b in enumerate(blocks):
        by, bx = (i // 4) * 16, (i % 4) * 16
        r = refs[b.ref]
        dx, dy = b.mv
        assert np.array_equal(out.y[by:by + 16, bx:bx + 16], r.y[by + dy:by + dy + 16, bx + dx:bx + dx + 16])
        cy, cx = by // 2 + dy // 2, bx // 2 + dx // 2
        assert np.array_equal(out.cb[by // 2:by // 2 + 8, bx // 2:bx // 2 + 8], r.cb[cy:cy + 8, cx:cx + 8])


def test_qp_out_of_range():
    with pytest.raises(CodecError):
        encode_picture(textured(0), [], 52)
    with pytest.raises(CodecError):
        code_sequence([textured(0)], -1)


def test_reference_list_slots():
    refs = ReferenceList()
    pics = [Picture.filled(16, 16, v) for v in range(6)]
    for p in pics:
        refs.push(p)
    assert len(refs) == 4 and refs.entries == [pics[5], pics[4], pics[3], pics[2]]
    art = Picture.filled(16, 16, 99)
    rep = refs.with_replacement(art)
    assert rep.entries == [pics[5], pics[4], pics[3], art] and rep.replaced


# --------------------------------------------------------------------------
# sequences

@pytest.mark.parametrize("qp", [22, 37])
@pytest.mark.parametrize("mode", ["conventional", "replace_t4"])
def test_closed_loop_bit_exact(heldout, qp, mode):
    seq = heldout[0]
    oracle = lambda refs, poc: seq[poc]  # noqa: E731
    res = code_sequence(seq, qp, mode, oracle)
    assert decode_sequence(res.stream, oracle) == res.reconstructions


def test_rate_and_psnr_monotone_in_qp(heldout):
    for seq in heldout[:2]:
        pts = [code_sequence(seq, qp).point for qp in QP_SET]
        assert all(a.bits >= b.bits for a, b in zip(pts, pts[1:]))
        assert all(a.psnr_y >= b.psnr_y for a, b in zip(pts, pts[1:]))
        assert pts[-1].bits < pts[0].bits


def test_pure_translation_high_quality_at_qp22():
    spec = SyntheticSpec(objects=[SyntheticObject("rect", 10, 10, 20, 16, 3, 1, 5)])
    res = code_sequence(synthesize(spec, seed=1), 22)
    assert res.point.psnr_y >= 45.0


def test_corrupt_ref_index_reports_block(heldout):
    res = code_sequence(heldout[1], 32)
    hdr, pictures = read_stream(res.stream)
    pictures[2][5] = BlockRecord(Mode.SKIP, 9, (0, 0))
    bad = write_stream(hdr.width, hdr.height, hdr.qp, hdr.replace, pictures)
    with pytest.raises(DecodeError, match="picture 2, block 5"):
        decode_sequence(bad)


def test_truncated_stream_rejected(heldout):
    res = code_sequence(heldout[1], 32)
    with pytest.raises(DecodeError):
        decode_sequence(res.stream[:-3])


def test_replace_mode_requires_model(heldout):
    with pytest.raises(ConfigurationError):
        code_sequence(heldout[0], 27, "replace_t4")
    res = code_sequence(heldout[0], 27, "replace_t4", lambda refs, poc: heldout[0][poc])
    with pytest.raises(ConfigurationError):
        decode_sequence(res.stream)


def test_conventional_ignores_model(heldout):
    seq = heldout[2]
    a = code_sequence(seq, 27)
    b = code_sequence(seq, 27, "conventional", lambda refs, poc: seq[poc])
    assert a.stream == b.stream


def test_first_four_pictures_identical_across_modes(heldout):
    seq = heldout[2]
    conv = code_sequence(seq, 27)
    rep = code_sequence(seq, 27, "replace_t4", lambda refs, poc: seq[poc])
    w, h = seq[0].width, seq[0].height
    first = lambda r: write_stream(w, h, 27, False, read_stream(r.stream)[1][:4])  # noqa: E731
    assert first(conv) == first(rep)
    assert [s.mode for s in rep.stats] == ["I", "P", "P", "P"] + ["P*"] * (len(seq) - 4)
    assert conv.reconstructions[:4] == rep.reconstructions[:4]


def test_oracle_rate_not_above_conventional(heldout):
    for seq in heldout:
        for qp in QP_SET:
            conv = code_sequence(seq, qp)
            orac = code_sequence(seq, qp, "replace_t4", lambda refs, poc: seq[poc])
            assert orac.point.bits <= conv.point.bits
