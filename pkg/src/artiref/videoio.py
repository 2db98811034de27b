"""Raw I420 video I/O, snippet extraction and a synthetic moving-object generator."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

SNIPPET_LEN = 5


class VideoFormatError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Picture:
    """One 8-bit 4:2:0 frame: full-resolution luma plus half-resolution chroma."""

    y: np.ndarray
    cb: np.ndarray
    cr: np.ndarray

    def __post_init__(self):
        h, w = self.y.shape
        if h % 2 or w % 2:
            raise VideoFormatError(f"luma extents must be even for 4:2:0, got {w}x{h}")
        for name in ("cb", "cr"):
            if getattr(self, name).shape != (h // 2, w // 2):
                raise VideoFormatError(f"{name} plane must be {w // 2}x{h // 2}")
        for name in ("y", "cb", "cr"):
            if getattr(self, name).dtype != np.uint8:
                raise VideoFormatError(f"{name} plane must be uint8")

    @property
    def width(self) -> int:
        return self.y.shape[1]

    @property
    def height(self) -> int:
        return self.y.shape[0]

    @property
    def planes(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.y, self.cb, self.cr

    def __eq__(self, other):
        if not isinstance(other, Picture):
            return NotImplemented
        return all(np.array_equal(a, b) for a, b in zip(self.planes, other.planes))

    def tobytes(self) -> bytes:
        return self.y.tobytes() + self.cb.tobytes() + self.cr.tobytes()

    @classmethod
    def filled(cls, width: int, height: int, value: int = 128) -> "Picture":
        return cls(
            np.full((height, width), value, np.uint8),
            np.full((height // 2, width // 2), value, np.uint8),
            np.full((height // 2, width // 2), value, np.uint8),
        )

    def normalized(self, dtype=np.float32) -> np.ndarray:
        """``(3, H, W)`` view in [0, 1] with chroma upsampled by replication."""
        out = np.empty((3, self.height, self.width), dtype=dtype)
        out[0] = self.y
        out[1] = upsample_chroma(self.cb)
        out[2] = upsample_chroma(self.cr)
        out /= 255.0
        return out

    @classmethod
    def from_normalized(cls, arr: np.ndarray) -> "Picture":
        """Inverse of :meth:`normalized`: clamp, rescale, 2x2-mean chroma, round."""
        scaled = np.clip(np.asarray(arr, dtype=np.float64), 0.0, 1.0) * 255.0
        return cls(
            to_uint8(scaled[0]),
            to_uint8(downsample_chroma(scaled[1])),
            to_uint8(downsample_chroma(scaled[2])),
        )


def to_uint8(a: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(a), 0, 255).astype(np.uint8)


def upsample_chroma(plane: np.ndarray) -> np.ndarray:
    return plane.repeat(2, axis=0).repeat(2, axis=1)


def downsample_chroma(plane: np.ndarray) -> np.ndarray:
    h, w = plane.shape
    return plane.reshape(h // 2, 2, w // 2, 2).mean(axis=(1, 3))


def frame_size(width: int, height: int) -> int:
    return width * height * 3 // 2


def _area_resample(plane: np.ndarray, n_out: int, axis: int) -> np.ndarray:
    # exact box-filter average: differences of the piecewise-linear running integral
    n_in = plane.shape[axis]
    c = np.concatenate([np.zeros_like(np.take(plane, [0], axis=axis)), np.cumsum(plane, axis=axis)], axis=axis)
    edges = np.linspace(0.0, n_in, n_out + 1)
    i0 = np.minimum(np.floor(edges).astype(int), n_in - 1)
    frac = edges - i0
    shape = [1] * plane.ndim
    shape[axis] = -1
    frac = frac.reshape(shape)
    integral = np.take(c, i0, axis=axis) * (1 - frac) + np.take(c, i0 + 1, axis=axis) * frac
    return np.diff(integral, axis=axis) * (n_out / n_in)


def resize_picture(pic: Picture, width: int, height: int, method: str = "scale") -> Picture:
    """Convert a picture to ``width`` x ``height`` by area scaling or centre cropping."""
    if width % 2 or height % 2 or width <= 0 or height <= 0:
        raise VideoFormatError(f"target extents must be positive and even, got {width}x{height}")
    if method == "scale":
        def fit(plane, h, w):
            p = _area_resample(plane.astype(np.float64), h, 0)
            return to_uint8(_area_resample(p, w, 1))
        return Picture(fit(pic.y, height, width), fit(pic.cb, height // 2, width // 2),
                       fit(pic.cr, height // 2, width // 2))
    if method == "crop":
        if width > pic.width or height > pic.height:
            raise VideoFormatError(f"cannot crop {pic.width}x{pic.height} to {width}x{height}")
        # even offsets keep the chroma grid aligned
        x0 = (pic.width - width) // 2 & ~1
        y0 = (pic.height - height) // 2 & ~1
        return Picture(pic.y[y0:y0 + height, x0:x0 + width].copy(),
                       pic.cb[y0 // 2:(y0 + height) // 2, x0 // 2:(x0 + width) // 2].copy(),
                       pic.cr[y0 // 2:(y0 + height) // 2, x0 // 2:(x0 + width) // 2].copy())
    raise ValueError(f"unknown resize method {method!r}")


def _check_dims(width: int, height: int) -> None:
    if width <= 0 or height <= 0 or width % 2 or height % 2:
        raise VideoFormatError(f"dimensions must be positive and even, got {width}x{height}")


def decode_frames(buf: bytes, width: int, height: int) -> list[Picture]:
    _check_dims(width, height)
    fs = frame_size(width, height)
    if len(buf) % fs:
        offset = (len(buf) // fs) * fs
        raise VideoFormatError(
            f"truncated frame at byte offset {offset}: {len(buf) - offset} of {fs} bytes present"
        )
    ysz, csz = width * height, width * height // 4
    raw = np.frombuffer(buf, dtype=np.uint8)
    pics = []
    for start in range(0, len(buf), fs):
        f = raw[start:start + fs]
        pics.append(Picture(
            f[:ysz].reshape(height, width).copy(),
            f[ysz:ysz + csz].reshape(height // 2, width // 2).copy(),
            f[ysz + csz:].reshape(height // 2, width // 2).copy(),
        ))
    return pics


def read_raw_video(path: str | Path, width: int, height: int) -> list[Picture]:
    """Read a headerless planar I420 file."""
    return decode_frames(Path(path).read_bytes(), width, height)


def write_raw_video(path: str | Path, pictures: Iterable[Picture]) -> None:
    with open(path, "wb") as fh:
        for p in pictures:
            fh.write(p.tobytes())


def parse_size(text: str) -> tuple[int, int]:
    w, _, h = text.lower().partition("x")
    try:
        return int(w), int(h)
    except ValueError:
        raise VideoFormatError(f"size must look like WxH, got {text!r}") from None


# --------------------------------------------------------------------------
# snippets

@dataclass(frozen=True)
class Snippet:
    """Five consecutive pictures: four references (oldest first) and the target."""

    pictures: tuple[Picture, ...]

    def __post_init__(self):
        if len(self.pictures) != SNIPPET_LEN:
            raise VideoFormatError(f"a snippet holds exactly {SNIPPET_LEN} pictures, got {len(self.pictures)}")
        w, h = self.pictures[0].width, self.pictures[0].height
        if any((p.width, p.height) != (w, h) for p in self.pictures):
            raise VideoFormatError("snippet pictures differ in size")

    @property
    def refs(self) -> list[Picture]:
        return list(self.pictures[:-1])

    @property
    def target(self) -> Picture:
        return self.pictures[-1]

    def normalized(self, dtype=np.float32) -> np.ndarray:
        """``(5, 3, H, W)`` array in [0, 1]."""
        return np.stack([p.normalized(dtype) for p in self.pictures])


def extract_snippets(sequence: Sequence[Picture], stride: int = 5) -> list[Snippet]:
    if stride < 1:
        raise ValueError("stride must be >= 1")
    n = len(sequence)
    if n < SNIPPET_LEN:
        return []
    return [Snippet(tuple(sequence[s:s + SNIPPET_LEN])) for s in range(0, n - SNIPPET_LEN + 1, stride)]


def write_snippets(snippets: Sequence[Snippet], out_dir: str | Path, prefix: str = "snippet") -> Path:
    """Store each snippet as its own raw file and write ``manifest.txt`` listing them."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    names = []
    for i, snip in enumerate(snippets):
        name = f"{prefix}_{i:05d}.yuv"
        write_raw_video(out_dir / name, snip.pictures)
        names.append(name)
    manifest = out_dir / "manifest.txt"
    w, h = (snippets[0].pictures[0].width, snippets[0].pictures[0].height) if snippets else (0, 0)
    manifest.write_text(f"# size {w}x{h}\n" + "".join(n + "\n" for n in names))
    return manifest


def read_manifest(path: str | Path) -> list[Snippet]:
    path = Path(path)
    size = None
    snippets = []
    for line in path.read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            key, _, val = line[1:].strip().partition(" ")
            if key == "size":
                size = parse_size(val)
            continue
        if size is None:
            raise VideoFormatError(f"{path}: manifest lacks a '# size WxH' line")
        p = Path(line)
        if not p.is_absolute():
            p = path.parent / p
        snippets.append(Snippet(tuple(read_raw_video(p, *size))))
    return snippets


# --------------------------------------------------------------------------
# synthetic sequences

@dataclass
class SyntheticObject:
    shape: str                      # "rect" or "disc"
    x: float                        # top-left corner at frame 0
    y: float
    w: int                          # for discs w == h == diameter
    h: int
    vx: float = 0.0
    vy: float = 0.0
    seed: int = 0


@dataclass
class SyntheticSpec:
    width: int = 64
    height: int = 64
    frames: int = 9
    background_seed: int = 0
    pan: tuple[float, float] = (0.0, 0.0)
    occlusion: bool = False
    objects: list[SyntheticObject] = field(default_factory=list)
    max_speed: float = 16.0

    def validate(self) -> None:
        _check_dims(self.width, self.height)
        speeds = [abs(v) for v in self.pan] + [abs(v) for o in self.objects for v in (o.vx, o.vy)]
        if max(speeds) > self.max_speed:
            raise ValueError(f"velocities must stay within the search range ±{self.max_speed}")
        for o in self.objects:
            if o.shape not in ("rect", "disc"):
                raise ValueError(f"unknown object shape {o.shape!r}")
            if o.x < 0 or o.y < 0 or o.x + o.w > self.width or o.y + o.h > self.height:
                raise ValueError(f"object at ({o.x}, {o.y}) size {o.w}x{o.h} does not fit the canvas at t=0")


def _smooth_noise(rng: np.random.Generator, h: int, w: int, cell: int) -> np.ndarray:
    """Value noise: random lattice values bilinearly interpolated, in [0, 1]."""
    gh, gw = h // cell + 2, w // cell + 2
    grid = rng.random((gh, gw))
    ys, xs = np.meshgrid(np.arange(h) / cell, np.arange(w) / cell, indexing="ij")
    return _bilinear(grid, ys, xs)


def _bilinear(img: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """Sample ``img`` at real coordinates; integer coordinates return exact samples."""
    h, w = img.shape[-2:]
    y0 = np.clip(np.floor(ys).astype(int), 0, h - 1)
    x0 = np.clip(np.floor(xs).astype(int), 0, w - 1)
    fy = np.clip(ys - y0, 0.0, 1.0)
    fx = np.clip(xs - x0, 0.0, 1.0)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    top = img[..., y0, x0] * (1 - fx) + img[..., y0, x1] * fx
    bot = img[..., y1, x0] * (1 - fx) + img[..., y1, x1] * fx
    return top * (1 - fy) + bot * fy


def _texture(seed: int, h: int, w: int, base: tuple[float, float, float],
             coarse_amp: float = 70.0, fine_amp: float = 40.0) -> np.ndarray:
    """Three-plane (Y, Cb, Cr) texture in sample units."""
    rng = np.random.default_rng(seed)
    coarse = _smooth_noise(rng, h, w, 8)
    fine = _smooth_noise(rng, h, w, 3)
    lum = base[0] + coarse_amp * (coarse - 0.5) + fine_amp * (fine - 0.5)
    cb = base[1] + 30.0 * (_smooth_noise(rng, h, w, 8) - 0.5)
    cr = base[2] + 30.0 * (_smooth_noise(rng, h, w, 8) - 0.5)
    return np.clip(np.stack([lum, cb, cr]), 0, 255)


def _sprite(obj: SyntheticObject) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(obj.seed)
    base = (rng.choice([rng.uniform(30, 80), rng.uniform(170, 225)]), rng.uniform(70, 186), rng.uniform(70, 186))
    tex = _texture(obj.seed + 7919, obj.h, obj.w, base, coarse_amp=40.0, fine_amp=60.0)
    if obj.shape == "rect":
        alpha = np.ones((obj.h, obj.w))
    else:
        yy, xx = np.mgrid[:obj.h, :obj.w]
        cy, cx = (obj.h - 1) / 2, (obj.w - 1) / 2
        r = min(obj.h, obj.w) / 2
        alpha = (((yy - cy) ** 2 + (xx - cx) ** 2) <= r * r).astype(float)
    return tex, alpha


def _place(canvas: np.ndarray, tex: np.ndarray, alpha: np.ndarray, x: float, y: float) -> None:
    """Composite a sprite with its top-left corner at real position (x, y)."""
    ix, iy = math.floor(x), math.floor(y)
    fx, fy = x - ix, y - iy
    sh, sw = alpha.shape
    # premultiplied sprite with a 1-pel transparent border absorbs the fractional shift
    pa = np.pad(alpha, 1)
    pt = np.pad(tex * alpha, ((0, 0), (1, 1), (1, 1)))
    if fx or fy:
        ys, xs = np.meshgrid(np.arange(sh + 2) - fy, np.arange(sw + 2) - fx, indexing="ij")
        ys, xs = np.clip(ys, 0, sh + 1), np.clip(xs, 0, sw + 1)
        pa = _bilinear(pa, ys, xs)
        pt = _bilinear(pt, ys, xs)
    top, left = iy - 1, ix - 1
    H, W = canvas.shape[-2:]
    y0, x0 = max(top, 0), max(left, 0)
    y1, x1 = min(top + sh + 2, H), min(left + sw + 2, W)
    if y0 >= y1 or x0 >= x1:
        return
    a = pa[y0 - top:y1 - top, x0 - left:x1 - left]
    t = pt[:, y0 - top:y1 - top, x0 - left:x1 - left]
    canvas[:, y0:y1, x0:x1] = canvas[:, y0:y1, x0:x1] * (1 - a) + t


def synthesize(spec: SyntheticSpec, seed: int = 0) -> list[Picture]:
    """Render a sequence of translating textured objects over a (possibly panning) background."""
    spec.validate()
    W, H = spec.width, spec.height
    margin = int(math.ceil(max(abs(spec.pan[0]), abs(spec.pan[1])) * spec.frames)) + 2
    bg = _texture(spec.background_seed * 1_000_003 + seed, H + 2 * margin, W + 2 * margin, (120.0, 128.0, 128.0))
    sprites = [_sprite(o) for o in spec.objects]
    yy, xx = np.mgrid[:H, :W].astype(float)
    pics = []
    for k in range(spec.frames):
        # background content moves by +pan per frame
        ox, oy = margin - spec.pan[0] * k, margin - spec.pan[1] * k
        canvas = _bilinear(bg, yy + oy, xx + ox)
        for obj, (tex, alpha) in zip(spec.objects, sprites):
            _place(canvas, tex, alpha, obj.x + obj.vx * k, obj.y + obj.vy * k)
        pics.append(Picture(to_uint8(canvas[0]), to_uint8(downsample_chroma(canvas[1])),
                            to_uint8(downsample_chroma(canvas[2]))))
    return pics


# --------------------------------------------------------------------------
# key-value text format for synthetic specs
#
#   width = 64
#   height = 64
#   frames = 9
#   background_seed = 3
#   pan = 0.5 0
#   occlusion = 0
#   object = rect <x> <y> <w> <h> <vx> <vy> <seed>
#   object = disc <x> <y> <diameter> <vx> <vy> <seed>

def format_synthetic_spec(spec: SyntheticSpec) -> str:
    lines = [
        f"width = {spec.width}",
        f"height = {spec.height}",
        f"frames = {spec.frames}",
        f"background_seed = {spec.background_seed}",
        f"pan = {spec.pan[0]!r} {spec.pan[1]!r}",
        f"occlusion = {int(spec.occlusion)}",
    ]
    for o in spec.objects:
        if o.shape == "disc":
            lines.append(f"object = disc {o.x!r} {o.y!r} {o.w} {o.vx!r} {o.vy!r} {o.seed}")
        else:
            lines.append(f"object = rect {o.x!r} {o.y!r} {o.w} {o.h} {o.vx!r} {o.vy!r} {o.seed}")
    return "\n".join(lines) + "\n"


def parse_synthetic_spec(text: str) -> SyntheticSpec:
    spec = SyntheticSpec(objects=[])
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = (s.strip() for s in line.partition("="))
        if not sep:
            raise ValueError(f"line {lineno}: expected 'key = value'")
        if key in ("width", "height", "frames", "background_seed"):
            setattr(spec, key, int(val))
        elif key == "occlusion":
            spec.occlusion = bool(int(val))
        elif key == "pan":
            px, py = (float(v) for v in val.split())
            spec.pan = (px, py)
        elif key == "object":
            f = val.split()
            if f[0] == "disc":
                x, y, d, vx, vy, seed = float(f[1]), float(f[2]), int(f[3]), float(f[4]), float(f[5]), int(f[6])
                spec.objects.append(SyntheticObject("disc", x, y, d, d, vx, vy, seed))
            elif f[0] == "rect":
                x, y, w, h, vx, vy, seed = (float(f[1]), float(f[2]), int(f[3]), int(f[4]),
                                            float(f[5]), float(f[6]), int(f[7]))
                spec.objects.append(SyntheticObject("rect", x, y, w, h, vx, vy, seed))
            else:
                raise ValueError(f"line {lineno}: unknown object shape {f[0]!r}")
        else:
            raise ValueError(f"line {lineno}: unknown key {key!r}")
    return spec


def random_spec(rng: np.random.Generator, width: int = 64, height: int = 64, frames: int = 9,
                max_objects: int = 3, max_speed: float = 4.0, fractional: bool = True) -> SyntheticSpec:
    """Draw a random scene of 1..max_objects linearly moving objects over a slowly panning background."""
    n = int(rng.integers(1, max_objects + 1))
    occlusion = n >= 2 and bool(rng.random() < 0.3)

    def speed() -> float:
        v = rng.uniform(-max_speed, max_speed)
        return round(v * 4) / 4 if fractional else float(round(v))

    pan_limit = max_speed / 4
    pan = (rng.uniform(-pan_limit, pan_limit), rng.uniform(-pan_limit, pan_limit)) if fractional else (0.0, 0.0)
    pan = (round(pan[0] * 4) / 4, round(pan[1] * 4) / 4)
    objects = []
    for i in range(n):
        shape = "disc" if rng.random() < 0.5 else "rect"
        w = int(rng.integers(width // 6, width // 3 + 1))
        h = w if shape == "disc" else int(rng.integers(height // 6, height // 3 + 1))
        vx, vy = speed(), speed()
        # start so that the object is roughly centred mid-sequence
        mid = (frames - 1) / 2
        cx = rng.uniform(w / 2, width - w / 2) - vx * mid
        cy = rng.uniform(h / 2, height - h / 2) - vy * mid
        if occlusion and i == 1:
            # head towards the first object so their paths cross
            first = objects[0]
            vx, vy = -first.vx or speed(), -first.vy or speed()
            cx = first.x + first.w / 2 + (first.vx - vx) * mid
            cy = first.y + first.h / 2 + (first.vy - vy) * mid
        x = float(np.clip(cx - w / 2, 0, width - w))
        y = float(np.clip(cy - h / 2, 0, height - h))
        objects.append(SyntheticObject(shape, x, y, w, h, vx, vy, int(rng.integers(1 << 30))))
    return SyntheticSpec(width, height, frames, int(rng.integers(1 << 30)), pan, occlusion, objects)


def synthetic_corpus(count: int, seed: int, **kwargs) -> list[list[Picture]]:
    rng = np.random.default_rng(seed)
    return [synthesize(random_spec(rng, **kwargs), seed=i) for i in range(count)]


def default_corpora(seed: int = 0, train: int = 200, heldout: int = 50, **kwargs):
    """Training and held-out synthetic corpora drawn from disjoint seed streams."""
    return synthetic_corpus(train, seed, **kwargs), synthetic_corpus(heldout, seed + 1_000_000, **kwargs)
