import numpy as np
import pytest

from artiref import metrics
from artiref.cli import run
from artiref.codec import RDPoint
from artiref.videoio import read_manifest, read_raw_video


@pytest.fixture(scope="module")
def clip(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    assert run(["synth", "--out", str(out), "--count", "1", "--seed", "3"]) == 0
    return out / "seq_0000.yuv"


def manifest(out):
    return dict(line.split(" = ", 1) for line in (out / "manifest.txt").read_text().splitlines())


def test_unknown_flag_prints_usage(capsys):
    assert run(["encode", "--bogus"]) != 0
    assert "usage:" in capsys.readouterr().err


def test_unknown_subcommand(capsys):
    assert run(["frobnicate"]) != 0
    assert "usage:" in capsys.readouterr().err


def test_synth_outputs(clip):
    pics = read_raw_video(clip, 64, 64)
    assert len(pics) == 9
    m = manifest(clip.parent)
    assert m["command"] == "synth" and m["seed"] == "3" and m["sequences"] == "1"


def test_bdrate_identical_is_zero(tmp_path, capsys):
    pts = [RDPoint(q, b, p, p + 2, p + 1) for q, b, p in ((37, 900, 31.0), (32, 1500, 34.0), (27, 2600, 37.0),
                                                          (22, 4800, 40.0))]
    metrics.write_rd_csv(tmp_path / "a.csv", pts)
    metrics.write_rd_csv(tmp_path / "b.csv", pts)
    out = tmp_path / "bd"
    assert run(["bdrate", "--anchor", str(tmp_path / "a.csv"), "--test", str(tmp_path / "b.csv"), "--out", str(out)]) == 0
    row = (out / "bdrate.txt").read_text().splitlines()[-1]
    assert row.count("0.00%") == 4
    assert "anchor" in manifest(out)


def test_replace_without_model_is_configuration_error(clip, tmp_path, capsys):
    rc = run(["encode", "--input", str(clip), "--size", "64x64", "--qp", "32", "--mode", "replace-t4",
              "--out", str(tmp_path / "e")])
    assert rc == 3
    assert "configuration error" in capsys.readouterr().err


def test_encode_decode_oracle_round_trip(clip, tmp_path):
    enc = tmp_path / "enc"
    assert run(["encode", "--input", str(clip), "--size", "64x64", "--qp", "32", "--mode", "replace-t4",
                "--oracle", "--out", str(enc)]) == 0
    dec = tmp_path / "dec"
    assert run(["decode", "--stream", str(enc / "stream.bin"), "--oracle", "--input", str(clip), "--out", str(dec)]) == 0
    assert (dec / "decoded.yuv").read_bytes() == (enc / "recon.yuv").read_bytes()
    stats = (enc / "stats.csv").read_text().splitlines()
    assert stats[0] == "poc,mode,bits,psnr_y,psnr_cb,psnr_cr" and len(stats) == 10
    assert manifest(enc)["mode"] == "replace-t4"


def test_eval_writes_error_images(clip, tmp_path):
    out = tmp_path / "ev"
    assert run(["eval", "--input", str(clip), "--reference", str(clip), "--size", "64x64", "--out", str(out)]) == 0
    rows = (out / "eval.csv").read_text().splitlines()
    assert rows[1].startswith("0,0.000000,99.000000,1.000000")
    assert (out / "error_0000.pgm").read_bytes().startswith(b"P5\n64 64\n255\n")


def test_snippets_train_predict(clip, tmp_path):
    snip = tmp_path / "snip"
    assert run(["snippets", "--input", str(clip), "--size", "64x64", "--stride", "1", "--out", str(snip)]) == 0
    assert len(read_manifest(snip / "manifest.txt")) == 5
    sums = []
    for i in range(2):
        out = tmp_path / f"train{i}"
        args = ["train", "--manifest", str(snip / "manifest.txt"), "--seed", "7", "--epochs", "2",
                "--snippets-per-epoch", "4", "--channels", "3,4,8,16", "--crop", "32", "--out", str(out)]
        assert run(args) == 0
        sums.append(manifest(out)["model_sha256"])
        assert (out / "loss_history.csv").read_text().startswith("epoch,mean_loss,learning_rate\n")
    assert sums[0] == sums[1]
    pred = tmp_path / "pred"
    assert run(["predict", "--model", str(tmp_path / "train0" / "model.rpf"), "--input", str(clip), "--size", "64x64",
                "--out", str(pred)]) == 0
    assert len(read_raw_video(pred / "artificial.yuv", 64, 64)) == 5


def test_table1_oracle(tmp_path):
    out = tmp_path / "t1"
    assert run(["table1", "--oracle", "--heldout-sequences", "2", "--out", str(out)]) == 0
    last = (out / "table1.csv").read_text().splitlines()[-1].split(",")
    assert last[0] == "t0 (artificial)" and float(last[1]) == 0 and float(last[2]) == 1


def test_ab_test_oracle_small(tmp_path):
    out = tmp_path / "ab"
    assert run(["ab-test", "--oracle", "--heldout-sequences", "2", "--out", str(out)]) == 0
    rows = (out / "report.csv").read_text().splitlines()
    assert rows[0] == "video,bd_y,bd_cb,bd_cr,bd_weighted" and rows[-1].startswith("Mean,")
    assert all(float(r.split(",")[4]) <= 0 for r in rows[1:])
    assert np.isfinite(float(rows[-1].split(",")[1]))


@pytest.mark.parametrize("method", ["scale", "crop"])
def test_snippets_resize(clip, tmp_path, method):
    out = tmp_path / method
    assert run(["snippets", "--input", str(clip), "--size", "64x64", "--resize", "32x16", "--resize-method", method,
                "--out", str(out)]) == 0
    snips = read_manifest(out / "manifest.txt")
    assert len(snips) == 1 and (snips[0].target.width, snips[0].target.height) == (32, 16)
