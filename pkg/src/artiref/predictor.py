"""Four-module stacked predictive recurrent network and its training loop.

Each module ``l`` holds a convolutional-LSTM Representation, a Prediction
convolution, a Target convolution + max-pool (modules 2-4) and a two-way
rectified Error.  A cycle first updates the Representations top-down, then
computes predictions and errors bottom-up.  Module indices are 0-based in
code (module 1 of the figures is ``l = 0``).
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .numerics import container
from .numerics.adam import AdamState, adam_update
from .numerics.lstm import ConvLSTMParams, convlstm_backward, convlstm_forward
from .numerics.ops import (
    ShapeError,
    conv2d_backward,
    conv2d_forward,
    maxpool2_backward,
    maxpool2_forward,
    upsample2,
    upsample2_backward,
)
from .videoio import Picture, Snippet

log = logging.getLogger(__name__)

N_MODULES = 4
DEFAULT_CHANNELS = (3, 48, 96, 192)
TINY_CHANNELS = (3, 4, 8, 16)
BATCH_SIZE = 4


class TrainingError(RuntimeError):
    pass


# --------------------------------------------------------------------------
# model and state

@dataclass
class PredictorModel:
    channels: tuple[int, ...]
    params: dict[str, np.ndarray]

    def __post_init__(self):
        self.channels = tuple(int(c) for c in self.channels)
        if len(self.channels) != N_MODULES:
            raise ValueError(f"the network has exactly {N_MODULES} modules, got channel plan {self.channels}")
        if self.channels[0] != 3:
            raise ValueError("module 1 consumes 3-plane pictures")
        expected = _param_shapes(self.channels)
        for name, shape in expected.items():
            if name not in self.params:
                raise ValueError(f"missing parameter {name!r}")
            if self.params[name].shape != shape:
                raise ValueError(f"parameter {name!r} has shape {self.params[name].shape}, expected {shape}")
        extra = set(self.params) - set(expected)
        if extra:
            raise ValueError(f"unexpected parameters {sorted(extra)}")

    @property
    def dtype(self):
        return self.params["p0.w"].dtype

    @classmethod
    def init(cls, channels: Sequence[int] = DEFAULT_CHANNELS, seed: int = 0, dtype=np.float32) -> "PredictorModel":
        """Kernels uniform in ±fan_in**-0.5 from a seeded generator, in a fixed parameter order.

        Biases start at zero: a random negative bias on the clipped module-1
        prediction leaves it stuck at 0 with no gradient.
        """
        rng = np.random.default_rng(seed)
        params = {}
        for name, shape in _param_shapes(tuple(channels)).items():
            if name.endswith(".b"):
                params[name] = np.zeros(shape, dtype)
                continue
            fan_in = _fan_in(name, shape, channels)
            k = fan_in ** -0.5
            params[name] = rng.uniform(-k, k, shape).astype(dtype)
        return cls(tuple(channels), params)

    def lstm(self, l: int) -> ConvLSTMParams:
        p = self.params
        return ConvLSTMParams(p[f"r{l}.wx"], p[f"r{l}.wh"], p[f"r{l}.b"])

    def astype(self, dtype) -> "PredictorModel":
        return PredictorModel(self.channels, {k: v.astype(dtype) for k, v in self.params.items()})

    def copy(self) -> "PredictorModel":
        return PredictorModel(self.channels, {k: v.copy() for k, v in self.params.items()})

    def tensors(self) -> dict[str, np.ndarray]:
        out = dict(self.params)
        out["channels"] = np.asarray(self.channels, dtype=np.float32)
        return out

    def save(self, path: str | Path) -> str:
        """Write the weight archive; returns its SHA-256."""
        return container.save(path, self.tensors())

    def checksum(self) -> str:
        return container.checksum(self.tensors())

    @classmethod
    def load(cls, path: str | Path, dtype=np.float32) -> "PredictorModel":
        tensors = container.load(path)
        channels = tuple(int(c) for c in tensors.pop("channels"))
        return cls(channels, {k: v.astype(dtype) for k, v in tensors.items()})


def _param_shapes(ch: tuple[int, ...]) -> dict[str, tuple[int, ...]]:
    shapes = {}
    for l in range(N_MODULES):
        cin = 2 * ch[l] + (ch[l + 1] if l < N_MODULES - 1 else 0)
        hid = ch[l]
        shapes[f"r{l}.wx"] = (4 * hid, cin, 3, 3)
        shapes[f"r{l}.wh"] = (4 * hid, hid, 3, 3)
        shapes[f"r{l}.b"] = (4 * hid,)
        shapes[f"p{l}.w"] = (ch[l], hid, 3, 3)
        shapes[f"p{l}.b"] = (ch[l],)
        if l > 0:
            shapes[f"t{l}.w"] = (ch[l], 2 * ch[l - 1], 3, 3)
            shapes[f"t{l}.b"] = (ch[l],)
    return shapes


def _fan_in(name: str, shape, ch) -> int:
    l = int(name[1])
    if name.startswith("r"):
        cin = 2 * ch[l] + (ch[l + 1] if l < N_MODULES - 1 else 0)
        return (cin + ch[l]) * 9
    if name.startswith("p"):
        return ch[l] * 9
    return 2 * ch[l - 1] * 9


@dataclass
class PredictorState:
    """Per-module recurrent and error activations, batched ``(N, C, H, W)``."""

    h: list[np.ndarray]
    c: list[np.ndarray]
    e: list[np.ndarray]
    cycle: int = 0
    module1_errors: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def zeros(cls, channels: Sequence[int], batch: int, height: int, width: int, dtype=np.float32):
        check_grid(height, width)
        h, c, e = [], [], []
        for l, ch in enumerate(channels):
            hh, ww = height >> l, width >> l
            h.append(np.zeros((batch, ch, hh, ww), dtype))
            c.append(np.zeros((batch, ch, hh, ww), dtype))
            e.append(np.zeros((batch, 2 * ch, hh, ww), dtype))
        return cls(h, c, e)

    @property
    def grid(self) -> tuple[int, int]:
        return self.h[0].shape[2], self.h[0].shape[3]


def check_grid(height: int, width: int) -> None:
    step = 1 << (N_MODULES - 1)
    if height % step or width % step:
        raise ShapeError(f"network input extents must be multiples of {step}, got {width}x{height}")


def module_grids(height: int, width: int) -> list[tuple[int, int]]:
    """(width, height) of each module's spatial grid."""
    check_grid(height, width)
    return [(width >> l, height >> l) for l in range(N_MODULES)]


# --------------------------------------------------------------------------
# forward

def _two_way_error(target: np.ndarray, pred: np.ndarray) -> np.ndarray:
    d = target - pred
    return np.concatenate([np.maximum(-d, 0), np.maximum(d, 0)], axis=1)


def cycle(model: PredictorModel, state: PredictorState, frame: np.ndarray | None,
          tape: list | None = None, predict_only_bottom: bool = False):
    """Run one cycle and return ``(state, module-1 prediction)``.

    ``frame`` is a batched ``(N, 3, H, W)`` array in [0, 1], or None on the
    final cycle, in which case no error is formed.  When ``tape`` is a list the
    intermediates needed by :func:`backward` are appended to it.
    """
    p = model.params
    if frame is not None and frame.shape != (state.h[0].shape[0], 3) + state.grid:
        raise ShapeError(f"frame shape {frame.shape} inconsistent with state grid "
                         f"{(state.h[0].shape[0], 3) + state.grid}")
    first = state.cycle == 0
    rec = {"first": first, "lstm": [None] * N_MODULES, "pred": [None] * N_MODULES,
           "target": [None] * N_MODULES, "err_diff": [None] * N_MODULES, "has_frame": frame is not None}

    # phase 1: Representations, top module first
    r_new: list[np.ndarray | None] = [None] * N_MODULES
    c_new: list[np.ndarray | None] = [None] * N_MODULES
    for l in reversed(range(N_MODULES)):
        x = state.e[l]
        if l < N_MODULES - 1:
            x = np.concatenate([x, upsample2(r_new[l + 1])], axis=1)
        r_new[l], c_new[l], rec["lstm"][l] = convlstm_forward(model.lstm(l), x, state.h[l], state.c[l])

    # phase 2: predictions and errors, bottom module first
    e_new = list(state.e)
    prediction = None
    top = 1 if (frame is None or predict_only_bottom) else N_MODULES
    target = frame
    for l in range(top):
        if first:
            # nothing has been observed yet: the prediction is empty
            ahat = np.zeros((r_new[l].shape[0], model.channels[l]) + r_new[l].shape[2:], model.dtype)
        else:
            z, conv_cache = conv2d_forward(r_new[l], p[f"p{l}.w"], p[f"p{l}.b"])
            ahat = np.clip(z, 0.0, 1.0) if l == 0 else np.maximum(z, 0)
            rec["pred"][l] = (conv_cache, z)
        if l == 0:
            prediction = ahat
        if frame is None:
            break
        if l > 0:
            z, conv_cache = conv2d_forward(e_new[l - 1], p[f"t{l}.w"], p[f"t{l}.b"])
            target, pool_cache = maxpool2_forward(np.maximum(z, 0))
            rec["target"][l] = (conv_cache, z, pool_cache)
        diff = target - ahat
        rec["err_diff"][l] = diff
        e_new[l] = np.concatenate([np.maximum(-diff, 0), np.maximum(diff, 0)], axis=1)

    new_state = PredictorState(r_new, c_new, e_new, state.cycle + 1, list(state.module1_errors))
    if frame is not None:
        new_state.module1_errors.append(e_new[0])
    if tape is not None:
        tape.append(rec)
    return new_state, prediction


def loss(state: PredictorState) -> float:
    """Mean module-1 error over scored cycles (all but the first), pixels and channels.

    The two rectified halves are summed per feature channel, so a uniform
    error of ``c`` contributes ``c``.
    """
    scored = state.module1_errors[1:]
    if not scored:
        return 0.0
    return sum(_half_sum(e).mean() for e in scored) / len(scored)


def _half_sum(e: np.ndarray) -> np.ndarray:
    c = e.shape[1] // 2
    return e[:, :c] + e[:, c:]


def run_frames(model: PredictorModel, frames: np.ndarray, cycles: int | None = None,
               tape: list | None = None, train: bool = False):
    """Feed ``frames`` ``(N, T, 3, H, W)`` one per cycle.

    Runs ``cycles`` cycles (default ``T + 1``); cycles past the supplied frames
    get no frame.  Returns ``(state, predictions)`` with one module-1
    prediction per cycle.
    """
    n, t, ch, h, w = frames.shape
    if ch != 3:
        raise ShapeError(f"frames must have 3 planes, got {ch}")
    cycles = t + 1 if cycles is None else cycles
    state = PredictorState.zeros(model.channels, n, h, w, model.dtype)
    preds = []
    for k in range(cycles):
        frame = frames[:, k] if k < t else None
        last_scored = train and k == cycles - 1
        state, pred = cycle(model, state, frame, tape, predict_only_bottom=last_scored)
        preds.append(pred)
    return state, preds


# --------------------------------------------------------------------------
# backward

def snippet_loss_and_grads(model: PredictorModel, frames: np.ndarray) -> tuple[float, dict[str, np.ndarray]]:
    """Loss over a batch of frame runs and its gradient w.r.t. every parameter.

    Every frame is a target; cycle ``k`` receives frame ``k`` and the loss
    scores the module-1 errors of cycles 2..T.
    """
    t = frames.shape[1]
    if t < 2:
        raise ValueError("need at least two frames to score a prediction")
    tape: list = []
    state, _ = run_frames(model, frames, cycles=t, tape=tape, train=True)
    value = loss(state)
    grads = backward(model, tape, frames)
    return value, grads


def backward(model: PredictorModel, tape: list, frames: np.ndarray) -> dict[str, np.ndarray]:
    p = model.params
    grads = {k: np.zeros_like(v) for k, v in p.items()}
    n_cycles = len(tape)
    n_scored = n_cycles - 1
    # d loss / d module-1 error half-sum element
    e0 = tape[0]["err_diff"][0]
    scale = 1.0 / (n_scored * e0.size)

    dh = [None] * N_MODULES
    dc = [None] * N_MODULES
    de = [None] * N_MODULES  # gradient w.r.t. this cycle's output errors, from the next cycle

    for k in reversed(range(n_cycles)):
        rec = tape[k]
        d_r = [None] * N_MODULES
        d_err = [None if g is None else g for g in de]
        if k >= 1:
            # loss term; the half-sum routes the same gradient to both halves
            diff = rec["err_diff"][0]
            g = np.full(diff.shape[:1] + (2 * diff.shape[1],) + diff.shape[2:], scale, dtype=diff.dtype)
            d_err[0] = g if d_err[0] is None else d_err[0] + g

        # phase 2 in reverse: top module first
        for l in reversed(range(N_MODULES)):
            diff = rec["err_diff"][l]
            if diff is None or d_err[l] is None:
                continue
            c = diff.shape[1]
            dneg, dpos = d_err[l][:, :c], d_err[l][:, c:]
            d_diff = dpos * (diff > 0) - dneg * (diff < 0)
            if l > 0:
                conv_cache, z, pool_cache = rec["target"][l]
                dz = maxpool2_backward(d_diff, pool_cache) * (z > 0)
                dx, dw, db = conv2d_backward(dz, conv_cache)
                grads[f"t{l}.w"] += dw
                grads[f"t{l}.b"] += db
                d_err[l - 1] = dx if d_err[l - 1] is None else d_err[l - 1] + dx
            if rec["pred"][l] is not None:
                conv_cache, z = rec["pred"][l]
                mask = (z > 0) & (z < 1) if l == 0 else (z > 0)
                dz = -d_diff * mask
                dx, dw, db = conv2d_backward(dz, conv_cache)
                grads[f"p{l}.w"] += dw
                grads[f"p{l}.b"] += db
                d_r[l] = dx

        # phase 1 in reverse: bottom module first
        new_dh, new_dc, new_de = [None] * N_MODULES, [None] * N_MODULES, [None] * N_MODULES
        for l in range(N_MODULES):
            cache = rec["lstm"][l]
            dh_tot = _add(dh[l], d_r[l])
            if dh_tot is None and dc[l] is None:
                continue
            conv_cache = cache[0]
            shape_h = (conv_cache[0][0], model.channels[l]) + conv_cache[0][2:]
            if dh_tot is None:
                dh_tot = np.zeros(shape_h, model.dtype)
            dcc = dc[l] if dc[l] is not None else np.zeros(shape_h, model.dtype)
            dx, dh_prev, dc_prev, dwx, dwh, db = convlstm_backward(dh_tot, dcc, cache)
            grads[f"r{l}.wx"] += dwx
            grads[f"r{l}.wh"] += dwh
            grads[f"r{l}.b"] += db
            ce = 2 * model.channels[l]
            new_de[l] = dx[:, :ce]
            if l < N_MODULES - 1:
                d_up = upsample2_backward(dx[:, ce:])
                d_r[l + 1] = _add(d_r[l + 1], d_up)
            new_dh[l], new_dc[l] = dh_prev, dc_prev
        dh, dc, de = new_dh, new_dc, new_de
    return grads


def _add(a, b):
    if a is None:
        return b
    if b is None:
        return a
    return a + b


# --------------------------------------------------------------------------
# inference

def predict_batch(model: PredictorModel, refs: np.ndarray) -> np.ndarray:
    """Artificial frames for a batch of normalized references ``(N, R, 3, H, W)``.

    Inputs whose extents are not multiples of 8 are edge-padded and the
    output cropped back.
    """
    n, r, ch, h, w = refs.shape
    step = 1 << (N_MODULES - 1)
    ph, pw = (-h) % step, (-w) % step
    x = refs.astype(model.dtype, copy=False)
    if ph or pw:
        x = np.pad(x, ((0, 0), (0, 0), (0, 0), (0, ph), (0, pw)), mode="edge")
    _, preds = run_frames(model, x, cycles=r + 1)
    return preds[-1][..., :h, :w]


def predict_artificial(model: PredictorModel, refs: Sequence[Picture]) -> Picture:
    """Artificial picture at t0 from four references given oldest first."""
    if len(refs) < 4:
        raise ValueError(f"need 4 reference pictures (t-4 .. t-1), got {len(refs)}")
    refs = list(refs)[-4:]
    dims = {(p.width, p.height) for p in refs}
    if len(dims) != 1:
        raise ShapeError(f"reference pictures differ in size: {sorted(dims)}")
    x = np.stack([p.normalized(model.dtype) for p in refs])[None]
    return Picture.from_normalized(predict_batch(model, x)[0])


# --------------------------------------------------------------------------
# training

def learning_rate(epoch: int, epochs: int, base: float = 0.001) -> float:
    """1-based ``epoch``; the rate drops tenfold from epoch ``epochs // 2 + 1`` on."""
    return base if epoch <= epochs // 2 else base / 10.0


@dataclass
class TrainResult:
    model: PredictorModel
    history: list[tuple[int, float, float]]  # (epoch, mean loss, learning rate)

    def write_history(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "mean_loss", "learning_rate"])
            for epoch, value, lr in self.history:
                w.writerow([epoch, repr(value), repr(lr)])


def snippets_array(snippets: Sequence[Snippet], dtype=np.float32) -> np.ndarray:
    """Stack snippets into ``(S, 5, 3, H, W)``."""
    if not snippets:
        raise ValueError("dataset is empty")
    dims = {(s.pictures[0].width, s.pictures[0].height) for s in snippets}
    if len(dims) != 1:
        raise ShapeError(f"snippets differ in size: {sorted(dims)}")
    return np.stack([s.normalized(dtype) for s in snippets])


def train(model: PredictorModel, data: np.ndarray | Sequence[Snippet], epochs: int = 150,
          snippets_per_epoch: int = 1000, seed: int = 0, batch_size: int = BATCH_SIZE,
          base_lr: float = 0.001, crop: int | None = None,
          progress: Callable[[int, float], None] | None = None) -> TrainResult:
    """Adam training on snippets; the model is updated in place and returned.

    ``crop`` trains on random square windows of that size (a multiple of 8)
    instead of whole snippets; the network is fully convolutional, so the
    result applies unchanged to full pictures.
    """
    if not isinstance(data, np.ndarray):
        data = snippets_array(data, model.dtype)
    data = data.astype(model.dtype, copy=False)
    if len(data) == 0:
        raise ValueError("dataset is empty")
    rng = np.random.default_rng(seed)
    adam = AdamState(lr=base_lr)
    history = []
    for epoch in range(1, epochs + 1):
        adam.lr = learning_rate(epoch, epochs, base_lr)
        count = min(snippets_per_epoch, len(data))
        order = rng.choice(len(data), size=count, replace=False)
        losses = []
        for b, start in enumerate(range(0, count, batch_size)):
            batch = data[order[start:start + batch_size]]
            if crop is not None:
                batch = _random_crop(batch, crop, rng)
            value, grads = snippet_loss_and_grads(model, batch)
            value = float(value)
            if not math.isfinite(value):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {b}")
            adam_update(adam, model.params, grads)
            losses.append(value)
        mean = float(np.mean(losses))
        history.append((epoch, mean, adam.lr))
        log.info("epoch %d loss %.6f lr %g", epoch, mean, adam.lr)
        if progress is not None:
            progress(epoch, mean)
    return TrainResult(model, history)


def _random_crop(batch: np.ndarray, size: int, rng: np.random.Generator) -> np.ndarray:
    check_grid(size, size)
    h, w = batch.shape[-2:]
    if size > min(h, w):
        raise ValueError(f"crop {size} exceeds snippet extents {w}x{h}")
    out = np.empty(batch.shape[:3] + (size, size), batch.dtype)
    for i in range(len(batch)):
        y = int(rng.integers(0, h - size + 1))
        x = int(rng.integers(0, w - size + 1))
        out[i] = batch[i, ..., y:y + size, x:x + size]
    return out
