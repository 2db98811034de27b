"""Command-line entry point: ``artiref <subcommand> [options]``."""
from __future__ import annotations

import argparse
import hashlib
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import metrics
from .codec import QP_SET, code_sequence, decode_sequence, write_stats_csv
from .codec.coder import CodecError, ConfigurationError
from .predictor import (
    DEFAULT_CHANNELS,
    PredictorModel,
    predict_artificial,
    predict_batch,
    snippets_array,
    train,
)
from .videoio import (
    Picture,
    default_corpora,
    extract_snippets,
    format_synthetic_spec,
    parse_size,
    parse_synthetic_spec,
    random_spec,
    read_manifest,
    read_raw_video,
    resize_picture,
    synthesize,
    write_raw_video,
    write_snippets,
)

log = logging.getLogger("artiref")

WORKERS_ENV = "ARTIREF_WORKERS"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _channels(text: str) -> tuple[int, ...]:
    return tuple(int(c) for c in text.split(","))


def _qps(text: str) -> tuple[int, ...]:
    return tuple(int(q) for q in text.split(","))


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="artiref", description="Artificial reference picture experiments")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def out(sp):
        sp.add_argument("--out", required=True, type=Path, help="output directory")

    def video(sp, required=True):
        sp.add_argument("--input", type=Path, required=required, help="raw I420 file")
        sp.add_argument("--size", type=parse_size, required=required, help="WxH")

    def predictor(sp):
        sp.add_argument("--model", type=Path, help="weight file for replace-t4")
        sp.add_argument("--oracle", action="store_true", help="use the true t0 as the artificial picture")

    def training(sp):
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--epochs", type=int, default=150)
        sp.add_argument("--snippets-per-epoch", type=int, default=1000)
        sp.add_argument("--channels", type=_channels, default=DEFAULT_CHANNELS)
        sp.add_argument("--crop", type=int, default=None, help="train on random square crops")
        sp.add_argument("--train-sequences", type=int, default=200)
        sp.add_argument("--stride", type=int, default=1, help="snippet stride over training sequences")

    sp = sub.add_parser("synth", help="render synthetic sequences")
    out(sp)
    sp.add_argument("--spec", type=Path, help="key-value scene description")
    sp.add_argument("--count", type=int, default=1, help="random scenes when --spec is absent")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--size", type=parse_size, default=(64, 64))
    sp.add_argument("--frames", type=int, default=9)

    sp = sub.add_parser("snippets", help="cut a raw video into 5-picture snippets")
    out(sp)
    video(sp)
    sp.add_argument("--stride", type=int, default=5)
    sp.add_argument("--resize", type=parse_size, default=None, help="convert pictures to WxH first (e.g. 176x144)")
    sp.add_argument("--resize-method", choices=["scale", "crop"], default="scale")

    sp = sub.add_parser("train", help="train the predictor")
    out(sp)
    sp.add_argument("--manifest", type=Path, help="snippet manifest; default is the synthetic corpus")
    training(sp)

    sp = sub.add_parser("predict", help="artificial pictures for every picture with four predecessors")
    out(sp)
    video(sp)
    sp.add_argument("--model", type=Path, required=True)

    sp = sub.add_parser("encode", help="code a raw video")
    out(sp)
    video(sp)
    sp.add_argument("--qp", type=int, required=True)
    sp.add_argument("--mode", choices=["conventional", "replace-t4"], default="conventional")
    predictor(sp)

    sp = sub.add_parser("decode", help="decode a stream")
    out(sp)
    sp.add_argument("--stream", type=Path, required=True)
    predictor(sp)
    sp.add_argument("--input", type=Path, help="original video (oracle decoding only)")

    sp = sub.add_parser("eval", help="MSE/PSNR/SSIM of a video against a reference; error images as PGM")
    out(sp)
    video(sp)
    sp.add_argument("--reference", type=Path, required=True)

    sp = sub.add_parser("bdrate", help="BD-rate between two RD CSV files")
    out(sp)
    sp.add_argument("--anchor", type=Path, required=True)
    sp.add_argument("--test", type=Path, required=True)

    sp = sub.add_parser("table1", help="MSE/SSIM of each reference against t0")
    out(sp)
    sp.add_argument("--model", type=Path)
    sp.add_argument("--oracle", action="store_true")
    sp.add_argument("--manifest", type=Path, help="snippet manifest; default is the synthetic held-out set")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--heldout-sequences", type=int, default=50)
    sp.add_argument("--planes", choices=["y", "all"], default="y")

    sp = sub.add_parser("ab-test", help="conventional vs replace-t4 over a corpus, Table-2-shaped report")
    out(sp)
    predictor(sp)
    training(sp)
    sp.add_argument("--qps", type=_qps, default=QP_SET)
    sp.add_argument("--heldout-sequences", type=int, default=50)
    sp.add_argument("--inputs", type=Path, nargs="*", help="raw videos instead of the synthetic held-out set")
    sp.add_argument("--size", type=parse_size, default=None, help="WxH of --inputs")
    return p


# --------------------------------------------------------------------------

def _config_lines(args: argparse.Namespace, extra: dict | None = None) -> list[str]:
    lines = []
    for k, v in sorted(vars(args).items()):
        if isinstance(v, tuple):
            v = ",".join(str(x) for x in v)
        lines.append(f"{k} = {v}")
    for k, v in (extra or {}).items():
        lines.append(f"{k} = {v}")
    return lines


def _write_manifest(out: Path, args: argparse.Namespace, extra: dict | None = None) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "manifest.txt").write_text("\n".join(_config_lines(args, extra)) + "\n")


def _workers() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def _load_predictor(args, sequence=None):
    if getattr(args, "oracle", False):
        if sequence is None:
            raise ConfigurationError("--oracle needs the original sequence")
        return lambda refs, poc: sequence[poc]
    if getattr(args, "model", None) is not None:
        model = PredictorModel.load(args.model)
        return lambda refs, poc: predict_artificial(model, refs)
    return None


def cmd_synth(args) -> None:
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    if args.spec is not None:
        specs = [parse_synthetic_spec(args.spec.read_text())]
    else:
        rng = np.random.default_rng(args.seed)
        specs = [random_spec(rng, width=args.size[0], height=args.size[1], frames=args.frames)
                 for _ in range(args.count)]
    for i, spec in enumerate(specs):
        write_raw_video(out / f"seq_{i:04d}.yuv", synthesize(spec, seed=i))
        (out / f"seq_{i:04d}.spec").write_text(format_synthetic_spec(spec))
    _write_manifest(out, args, {"sequences": len(specs), "resolved_size": f"{specs[0].width}x{specs[0].height}"})


def cmd_snippets(args) -> None:
    seq = read_raw_video(args.input, *args.size)
    if args.resize is not None:
        seq = [resize_picture(p, *args.resize, args.resize_method) for p in seq]
    snippets = extract_snippets(seq, args.stride)
    manifest = write_snippets(snippets, args.out)
    # the snippet list is the manifest; the resolved config rides along as comments
    with open(manifest, "a") as fh:
        for line in _config_lines(args, {"snippets": len(snippets)}):
            fh.write(f"# config {line}\n")


def _training_data(args):
    if getattr(args, "manifest", None) is not None:
        return snippets_array(read_manifest(args.manifest))
    train_seqs, _ = default_corpora(args.seed, train=args.train_sequences, heldout=0)
    return snippets_array([s for seq in train_seqs for s in extract_snippets(seq, args.stride)])


def _train_model(args, out: Path) -> tuple[PredictorModel, str]:
    data = _training_data(args)
    model = PredictorModel.init(args.channels, seed=args.seed)
    result = train(model, data, epochs=args.epochs, snippets_per_epoch=args.snippets_per_epoch,
                   seed=args.seed, crop=args.crop)
    checksum = model.save(out / "model.rpf")
    result.write_history(out / "loss_history.csv")
    return model, checksum


def cmd_train(args) -> None:
    args.out.mkdir(parents=True, exist_ok=True)
    _, checksum = _train_model(args, args.out)
    _write_manifest(args.out, args, {"model_sha256": checksum})
    print(checksum)


def cmd_predict(args) -> None:
    model = PredictorModel.load(args.model)
    seq = read_raw_video(args.input, *args.size)
    if len(seq) < 5:
        raise CodecError("need at least 5 pictures to predict anything")
    args.out.mkdir(parents=True, exist_ok=True)
    arts = [predict_artificial(model, seq[i - 4:i]) for i in range(4, len(seq))]
    write_raw_video(args.out / "artificial.yuv", arts)
    for i, art in enumerate(arts, start=4):
        metrics.write_pgm(args.out / f"error_{i:04d}.pgm", metrics.error_image(art, seq[i]).y)
    _write_manifest(args.out, args, {"pictures": len(arts)})


def cmd_encode(args) -> None:
    seq = read_raw_video(args.input, *args.size)
    mode = args.mode.replace("-", "_")
    pred = _load_predictor(args, seq) if mode == "replace_t4" else None
    if mode == "replace_t4" and pred is None:
        raise ConfigurationError("replace-t4 needs --model or --oracle")
    res = code_sequence(seq, args.qp, mode, pred)
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "stream.bin").write_bytes(res.stream)
    write_raw_video(args.out / "recon.yuv", res.reconstructions)
    write_stats_csv(args.out / "stats.csv", res.stats)
    metrics.write_rd_csv(args.out / "rd.csv", [res.point])
    _write_manifest(args.out, args, {"bits": res.point.bits,
                                     "stream_sha256": hashlib.sha256(res.stream).hexdigest()})


def cmd_decode(args) -> None:
    seq = None
    if args.oracle:
        from .codec.coder import read_stream
        hdr, _ = read_stream(args.stream.read_bytes())
        if args.input is None:
            raise ConfigurationError("--oracle decoding needs --input with the original video")
        seq = read_raw_video(args.input, hdr.width, hdr.height)
    pics = decode_sequence(args.stream.read_bytes(), _load_predictor(args, seq))
    args.out.mkdir(parents=True, exist_ok=True)
    write_raw_video(args.out / "decoded.yuv", pics)
    _write_manifest(args.out, args, {"pictures": len(pics)})


def cmd_eval(args) -> None:
    a = read_raw_video(args.input, *args.size)
    b = read_raw_video(args.reference, *args.size)
    if len(a) != len(b):
        raise metrics.MetricError(f"picture counts differ: {len(a)} vs {len(b)}")
    args.out.mkdir(parents=True, exist_ok=True)
    lines = ["poc,mse_y,psnr_y,ssim_y"]
    for i, (x, y) in enumerate(zip(a, b)):
        lines.append(f"{i},{metrics.mse(x.y, y.y):.6f},{metrics.psnr(x.y, y.y):.6f},{metrics.ssim(x.y, y.y):.6f}")
        metrics.write_pgm(args.out / f"error_{i:04d}.pgm", metrics.error_image(x, y).y)
    (args.out / "eval.csv").write_text("\n".join(lines) + "\n")
    _write_manifest(args.out, args)


def cmd_bdrate(args) -> None:
    rep = metrics.bd_report("test vs anchor", metrics.read_rd_csv(args.anchor), metrics.read_rd_csv(args.test))
    args.out.mkdir(parents=True, exist_ok=True)
    table = metrics.format_table([rep], mean=False)
    (args.out / "bdrate.txt").write_text(table)
    (args.out / "bdrate.csv").write_text(metrics.reports_csv([rep], mean=False))
    _write_manifest(args.out, args)
    print(table, end="")


def cmd_table1(args) -> None:
    if args.manifest is not None:
        snippets = read_manifest(args.manifest)
    else:
        _, held = default_corpora(args.seed, train=0, heldout=args.heldout_sequences)
        snippets = [s for seq in held for s in extract_snippets(seq, 5)]
    if args.oracle:
        arts = [s.target for s in snippets]
    elif args.model is not None:
        model = PredictorModel.load(args.model)
        refs = np.stack([s.normalized(model.dtype)[:4] for s in snippets])
        arts = [Picture.from_normalized(a) for a in _batched_predict(model, refs)]
    else:
        raise ConfigurationError("table1 needs --model or --oracle")
    rows = metrics.reference_quality_table(snippets, arts, args.planes)
    args.out.mkdir(parents=True, exist_ok=True)
    text = metrics.format_quality_table(rows)
    (args.out / "table1.txt").write_text(text)
    (args.out / "table1.csv").write_text(
        "reference,mse,ssim\n" + "".join(f"{r.label},{r.mse:.6f},{r.ssim:.6f}\n" for r in rows))
    _write_manifest(args.out, args, {"snippets": len(snippets)})
    print(text, end="")


def _batched_predict(model: PredictorModel, refs: np.ndarray, batch: int = 16) -> np.ndarray:
    return np.concatenate([predict_batch(model, refs[i:i + batch]) for i in range(0, len(refs), batch)])


def _ab_job(job):
    seq, qp, mode, model_path, oracle = job
    pred = None
    if mode == "replace_t4":
        if oracle:
            pred = lambda refs, poc: seq[poc]  # noqa: E731
        else:
            model = PredictorModel.load(model_path)
            pred = lambda refs, poc: predict_artificial(model, refs)  # noqa: E731
    return code_sequence(seq, qp, mode, pred).point


def ab_test(sequences, qps, model_path: Path | None, oracle: bool, labels=None, workers: int = 1):
    """BD reports (replace-t4 vs conventional) per sequence."""
    jobs = [(seq, qp, mode, model_path, oracle)
            for seq in sequences for mode in ("conventional", "replace_t4") for qp in qps]
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            points = list(ex.map(_ab_job, jobs))
    else:
        points = [_ab_job(j) for j in jobs]
    reports = []
    n = len(qps)
    for i in range(len(sequences)):
        anchor = points[2 * n * i:2 * n * i + n]
        test = points[2 * n * i + n:2 * n * (i + 1)]
        label = labels[i] if labels else f"seq {i + 1}"
        reports.append(metrics.bd_report(label, anchor, test))
    return reports


def cmd_ab_test(args) -> None:
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    extra = {}
    model_path = None
    if not args.oracle:
        if args.model is not None:
            model_path = args.model
            extra["model_sha256"] = PredictorModel.load(model_path).checksum()
        else:
            _, checksum = _train_model(args, out)
            model_path = out / "model.rpf"
            extra["model_sha256"] = checksum
    if args.inputs:
        if args.size is None:
            raise ConfigurationError("--inputs needs --size")
        sequences = [read_raw_video(p, *args.size) for p in args.inputs]
        labels = [p.stem for p in args.inputs]
    else:
        _, sequences = default_corpora(args.seed, train=0, heldout=args.heldout_sequences)
        labels = None
    reports = ab_test(sequences, args.qps, model_path, args.oracle, labels, _workers())
    table = metrics.format_table(reports)
    (out / "report.txt").write_text(table)
    (out / "report.csv").write_text(metrics.reports_csv(reports))
    with open(out / "rd_points.csv", "w") as fh:
        fh.write("video,mode,qp,bits,psnr_y,psnr_cb,psnr_cr\n")
        for r in reports:
            for mode, pts in (("conventional", r.anchor), ("replace-t4", r.test)):
                for p in pts:
                    fh.write(f"{r.label},{mode},{p.qp},{p.bits},{p.psnr_y:.6f},{p.psnr_cb:.6f},{p.psnr_cr:.6f}\n")
    _write_manifest(out, args, extra)
    print(table, end="")


COMMANDS = {
    "synth": cmd_synth,
    "snippets": cmd_snippets,
    "train": cmd_train,
    "predict": cmd_predict,
    "encode": cmd_encode,
    "decode": cmd_decode,
    "eval": cmd_eval,
    "bdrate": cmd_bdrate,
    "table1": cmd_table1,
    "ab-test": cmd_ab_test,
}


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"artiref: error: {exc}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except ConfigurationError as exc:
        print(f"artiref: configuration error: {exc}", file=sys.stderr)
        return 3
    except (ValueError, OSError) as exc:
        print(f"artiref: error: {exc}", file=sys.stderr)
        return 1
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
