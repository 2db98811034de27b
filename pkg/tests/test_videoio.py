import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from artiref.videoio import (
    Picture,
    Snippet,
    SyntheticObject,
    SyntheticSpec,
    VideoFormatError,
    downsample_chroma,
    extract_snippets,
    format_synthetic_spec,
    frame_size,
    parse_size,
    parse_synthetic_spec,
    random_spec,
    read_manifest,
    read_raw_video,
    resize_picture,
    synthesize,
    upsample_chroma,
    write_raw_video,
    write_snippets,
)


def random_picture(rng, w=16, h=12):
    return Picture(rng.integers(0, 256, (h, w), dtype=np.uint8),
                   rng.integers(0, 256, (h // 2, w // 2), dtype=np.uint8),
                   rng.integers(0, 256, (h // 2, w // 2), dtype=np.uint8))


def test_single_grey_frame(tmp_path):
    path = tmp_path / "grey.yuv"
    path.write_bytes(bytes([128]) * frame_size(8, 4))
    pics = read_raw_video(path, 8, 4)
    assert len(pics) == 1 and pics[0] == Picture.filled(8, 4, 128)


def test_qcif_frame_length(tmp_path):
    assert frame_size(176, 144) == 38016
    path = tmp_path / "q.yuv"
    write_raw_video(path, [Picture.filled(176, 144, i) for i in range(5)])
    assert path.stat().st_size == 5 * 38016


@given(st.integers(0, 2**31 - 1), st.integers(1, 4))
def test_raw_round_trip(tmp_path_factory, seed, n):
    rng = np.random.default_rng(seed)
    path = tmp_path_factory.mktemp("rt") / "v.yuv"
    pics = [random_picture(rng) for _ in range(n)]
    write_raw_video(path, pics)
    raw = path.read_bytes()
    back = read_raw_video(path, 16, 12)
    assert back == pics
    write_raw_video(path, back)
    assert path.read_bytes() == raw


def test_truncated_file_names_offset(tmp_path):
    path = tmp_path / "t.yuv"
    path.write_bytes(bytes(frame_size(8, 4) * 2 + 5))
    with pytest.raises(VideoFormatError, match="offset 96"):
        read_raw_video(path, 8, 4)


def test_odd_dimensions_rejected(tmp_path):
    path = tmp_path / "o.yuv"
    path.write_bytes(bytes(100))
    with pytest.raises(VideoFormatError):
        read_raw_video(path, 7, 4)


def test_parse_size():
    assert parse_size("176x144") == (176, 144)
    with pytest.raises(VideoFormatError):
        parse_size("176")


@pytest.mark.parametrize("n,stride,count", [(5, 1, 1), (9, 1, 5), (9, 5, 1), (4, 1, 0), (20, 5, 4), (20, 3, 6)])
def test_snippet_count(n, stride, count):
    seq = [Picture.filled(4, 4, i) for i in range(n)]
    snips = extract_snippets(seq, stride)
    assert len(snips) == count == (max(0, (n - 5) // stride + 1) if n >= 5 else 0)
    for s in snips:
        values = [int(p.y[0, 0]) for p in s.pictures]
        assert values == sorted(values) and len(set(values)) == 5


def test_snippet_requires_five_pictures():
    with pytest.raises(VideoFormatError):
        Snippet(tuple(Picture.filled(4, 4) for _ in range(4)))


def test_snippet_manifest_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    seq = [random_picture(rng) for _ in range(10)]
    snips = extract_snippets(seq, 5)
    manifest = write_snippets(snips, tmp_path)
    back = read_manifest(manifest)
    assert len(back) == 2
    assert all(a.pictures == b.pictures for a, b in zip(snips, back))


@given(st.integers(0, 2**31 - 1))
def test_normalization_inverse_within_half_step(seed):
    rng = np.random.default_rng(seed)
    pic = random_picture(rng)
    norm = pic.normalized(np.float64)
    assert norm.min() >= 0 and norm.max() <= 1
    back = Picture.from_normalized(norm)
    assert back == pic
    # perturbations below half a sample step round back to the original
    noisy = norm + rng.uniform(-0.49, 0.49, norm.shape) / 255.0
    assert Picture.from_normalized(noisy).y.tolist() == pic.y.tolist()


@given(st.integers(0, 255))
def test_chroma_up_down_constant_blocks(value):
    plane = np.full((3, 5), value, np.uint8)
    assert np.array_equal(downsample_chroma(upsample_chroma(plane)), plane)


def test_denormalization_error_bound():
    x = np.linspace(0, 1, 2 * 4 * 4 * 3).reshape(3, 4, 8)
    pic = Picture.from_normalized(x)
    assert np.max(np.abs(pic.y - x[0] * 255)) <= 0.5


# --------------------------------------------------------------------------
# synthetic sequences

def test_zero_velocity_frames_identical():
    spec = SyntheticSpec(objects=[SyntheticObject("disc", 10, 12, 14, 14, 0, 0, 3)])
    pics = synthesize(spec, seed=4)
    assert all(p == pics[0] for p in pics)


def test_integer_translation_shifts_object():
    x, y, w, h = 4, 6, 16, 12
    spec = SyntheticSpec(frames=6, objects=[SyntheticObject("rect", x, y, w, h, 3, 1, 11)])
    pics = synthesize(spec, seed=0)
    ref = pics[0].y[y:y + h, x:x + w]
    for k in range(1, 6):
        assert np.array_equal(pics[k].y[y + k:y + k + h, x + 3 * k:x + 3 * k + w], ref)


def test_integer_pan_shifts_background():
    pics = synthesize(SyntheticSpec(pan=(2.0, -1.0), frames=4), seed=2)
    for k in range(1, 4):
        # content moves by +pan per frame
        assert np.array_equal(pics[k].y[:64 - k, 2 * k:], pics[0].y[k:, :64 - 2 * k])


def test_synthesis_deterministic():
    spec = random_spec(np.random.default_rng(9))
    a = b"".join(p.tobytes() for p in synthesize(spec, seed=3))
    b = b"".join(p.tobytes() for p in synthesize(spec, seed=3))
    assert a == b


@given(st.integers(0, 2**31 - 1))
def test_random_specs_valid(seed):
    spec = random_spec(np.random.default_rng(seed))
    spec.validate()
    pics = synthesize(spec, seed=0)
    assert len(pics) == spec.frames
    assert all(p.y.dtype == np.uint8 and p.width == 64 and p.height == 64 for p in pics)


def test_spec_text_round_trip():
    spec = random_spec(np.random.default_rng(1), max_objects=3)
    assert parse_synthetic_spec(format_synthetic_spec(spec)) == spec


def test_velocity_beyond_search_range_rejected():
    with pytest.raises(ValueError):
        synthesize(SyntheticSpec(objects=[SyntheticObject("rect", 0, 0, 8, 8, 17, 0, 0)]))


def area_oracle(plane, h, w):
    """Box-filter average by explicit overlap weights, one output sample at a time."""
    ih, iw = plane.shape
    out = np.zeros((h, w))
    for oy in range(h):
        for ox in range(w):
            y0, y1 = oy * ih / h, (oy + 1) * ih / h
            x0, x1 = ox * iw / w, (ox + 1) * iw / w
            acc = 0.0
            for sy in range(ih):
                wy = max(0.0, min(y1, sy + 1) - max(y0, sy))
                for sx in range(iw):
                    wx = max(0.0, min(x1, sx + 1) - max(x0, sx))
                    acc += wy * wx * plane[sy, sx]
            out[oy, ox] = acc / ((y1 - y0) * (x1 - x0))
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def _random_picture(rng, w, h):
    return Picture(rng.integers(0, 256, (h, w), dtype=np.uint8), rng.integers(0, 256, (h // 2, w // 2), dtype=np.uint8),
                   rng.integers(0, 256, (h // 2, w // 2), dtype=np.uint8))


@given(st.integers(0, 2**31 - 1), st.integers(1, 6), st.integers(1, 6))
def test_scale_matches_area_oracle(seed, hw, ww):
    rng = np.random.default_rng(seed)
    pic = _random_picture(rng, 2 * int(rng.integers(1, 7)), 2 * int(rng.integers(1, 7)))
    out = resize_picture(pic, 2 * ww, 2 * hw)
    assert (out.width, out.height) == (2 * ww, 2 * hw)
    # the running-integral form may differ from the loop by one at exact .5 ties
    assert np.abs(out.y.astype(int) - area_oracle(pic.y, 2 * hw, 2 * ww)).max() <= 1
    assert np.abs(out.cb.astype(int) - area_oracle(pic.cb, hw, ww)).max() <= 1


def test_scale_identity_and_constant():
    pic = _random_picture(np.random.default_rng(0), 20, 12)
    assert resize_picture(pic, 20, 12) == pic
    grey = Picture.filled(40, 30, 77)
    assert resize_picture(grey, 176 // 4, 144 // 4) == Picture.filled(44, 36, 77)


def test_crop_centre_even_offsets():
    pic = _random_picture(np.random.default_rng(1), 24, 18)
    out = resize_picture(pic, 16, 10, "crop")
    assert np.array_equal(out.y, pic.y[4:14, 4:20])
    assert np.array_equal(out.cb, pic.cb[2:7, 2:10])
    with pytest.raises(VideoFormatError):
        resize_picture(pic, 26, 10, "crop")
    with pytest.raises(VideoFormatError):
        resize_picture(pic, 15, 10)
