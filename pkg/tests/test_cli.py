import os
import shutil
import subprocess
import sys

import pytest

from lddr.cli import main, read_net_config
from lddr.data import load_manifest, write_manifest, write_pts
from lddr.errors import ConfigurationError

NARROW = "16,32,48,48,256"


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["synth", "--out", str(root / "data"), "--count", "4", "--seed", "3"]) == 0
    assert main(["init-weights", "--out", str(root / "w.bin"), "--seed", "11", "--channels", NARROW]) == 0
    return root


@pytest.fixture(scope="module")
def model(workspace):
    args = ["train", "--manifest", str(workspace / "data/manifest.tsv"), "--weights", str(workspace / "w.bin")]
    assert main(args + ["--out", str(workspace / "m.bin"), "--no-augment", "--lambda", "1e-8", "--no-perturb"]) == 0
    return workspace / "m.bin"


def _align(ws, model, out, *extra):
    return main(
        ["align", "--model", str(model), "--weights", str(ws / "w.bin"), "--manifest", str(ws / "data/manifest.tsv"), "--out", str(out), *extra]
    )


def test_net_info_default(capsys):
    assert main(["net-info"]) == 0
    out = capsys.readouterr().out
    rows = [l.split("\t") for l in out.splitlines() if "\tconv5\t" in l]
    assert [r[2:5] for r in rows] == [["1", "1", "256"]] * 4
    assert "4\t21\t21" in out


def test_net_info_original(capsys):
    assert main(["net-info", "--preset", "original"]) == 0
    out = capsys.readouterr().out
    conv5 = next(l for l in out.splitlines() if "\tconv5\t" in l).split("\t")
    pool5 = next(l for l in out.splitlines() if "\tpool5\t" in l).split("\t")
    assert conv5[5] == "163" and pool5[5] == "195"
    assert "# receptive field" in out


def test_net_info_bad_stage(capsys):
    assert main(["net-info", "--stage", "5"]) == 2


def test_net_config_file(tmp_path, capsys):
    cfg = tmp_path / "net.cfg"
    cfg.write_text("# stage 4 layout\ninput_size = 25\nstrides = 1, 1, 1, 1\n")
    assert main(["net-info", "--net-config", str(cfg)]) == 0
    assert "\tconv5\t5\t5\t256" in capsys.readouterr().out
    cfg.write_text("input_size = 25\nstrides = 1 1\n")
    assert main(["net-info", "--net-config", str(cfg)]) == 2
    cfg.write_text("input_size 25\n")
    with pytest.raises(ConfigurationError):
        read_net_config(cfg)


def test_train_missing_weights_prints_usage(workspace, capsys):
    code = main(["train", "--manifest", str(workspace / "data/manifest.tsv"), "--out", "x.bin"])
    assert code == 2
    err = capsys.readouterr().err
    assert "usage:" in err and "--weights" in err


def test_train_report(model):
    report = (model.parent / "m.bin.report.tsv").read_text().splitlines()
    assert report[0] == "# seed\t0"
    assert report[3] == "stage\tlambda\tmean_error"
    errors = [float(l.split("\t")[2]) for l in report[4:]]
    assert len(errors) == 5 and errors[-1] < errors[0]


def test_align_then_eval_exact_fit(workspace, model, tmp_path, capsys):
    assert _align(workspace, model, tmp_path / "pred") == 0
    preds = load_manifest(tmp_path / "pred/predictions.tsv")
    assert [p.identifier for p in preds] == [f"face_{i:05d}" for i in range(4)]
    capsys.readouterr()
    ced = tmp_path / "ced.tsv"
    code = main(["eval", "--pred", str(tmp_path / "pred/predictions.tsv"), "--gt", str(workspace / "data/manifest.tsv"), "--ced", str(ced)])
    assert code == 0
    lines = dict(l.split("\t") for l in capsys.readouterr().out.splitlines())
    assert set(lines) == {"interpupil68", "interpupil49", "facesize"}
    assert float(lines["interpupil68"]) < 1e-4
    assert ced.read_text().splitlines()[-1] == "0.200000\t1.000000"


def test_align_predict_only_manifest(workspace, model, tmp_path):
    rows = [(str(s.image_path), None, s.box) for s in load_manifest(workspace / "data/manifest.tsv")]
    write_manifest(rows, tmp_path / "bare.tsv")
    args = ["align", "--model", str(model), "--weights", str(workspace / "w.bin"), "--manifest", str(tmp_path / "bare.tsv")]
    assert main(args + ["--out", str(tmp_path / "out")]) == 0
    assert len(list((tmp_path / "out").glob("*.pts"))) == 4


def test_align_partial_failure(workspace, model, tmp_path):
    data = tmp_path / "data"
    shutil.copytree(workspace / "data", data)
    (data / "images/face_00001.ppm").write_bytes(b"P6\n160 160\n255\n")  # truncated payload
    args = ["align", "--model", str(model), "--weights", str(workspace / "w.bin"), "--manifest", str(data / "manifest.tsv")]
    assert main(args + ["--out", str(tmp_path / "out")]) == 1
    assert sorted(p.name for p in (tmp_path / "out").glob("*.pts")) == ["face_00000.pts", "face_00002.pts", "face_00003.pts"]


@pytest.mark.skipif(os.geteuid() == 0, reason="root ignores directory permissions")
def test_align_unwritable_output(workspace, model, tmp_path):
    locked = tmp_path / "locked"
    locked.mkdir(mode=0o500)
    assert _align(workspace, model, locked / "sub") == 3


def test_align_output_is_a_file(workspace, model, tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert _align(workspace, model, blocker) == 3


def test_align_weight_mismatch(workspace, model, tmp_path):
    other = tmp_path / "other.bin"
    assert main(["init-weights", "--out", str(other), "--seed", "12", "--channels", NARROW]) == 0
    args = ["align", "--model", str(model), "--weights", str(other), "--manifest", str(workspace / "data/manifest.tsv")]
    assert main(args + ["--out", str(tmp_path / "o")]) == 2


def test_align_threads_match(workspace, model, tmp_path):
    assert _align(workspace, model, tmp_path / "one", "--threads", "1") == 0
    assert _align(workspace, model, tmp_path / "many", "--threads", "8") == 0
    for f in sorted((tmp_path / "one").iterdir()):
        assert f.read_bytes() == (tmp_path / "many" / f.name).read_bytes()


def _offset_fixture(tmp_path):
    """Ground truth with inter-pupil distance 60 and predictions shifted by (3, 0)."""
    from lddr.synth import face_template

    gt = face_template() * 100
    gt[36:42, 0] += -30 - gt[36:42, 0].mean()
    gt[42:48, 0] += 30 - gt[42:48, 0].mean()
    gt[42:48, 1] += gt[36:42, 1].mean() - gt[42:48, 1].mean()
    (tmp_path / "a.pgm").write_bytes(b"P5\n1 1\n255\n\0")
    write_pts(gt, tmp_path / "gt.pts")
    write_pts(gt + [3.0, 0.0], tmp_path / "pred.pts")
    write_manifest([("a.pgm", "gt.pts", (0, 0, 1, 1))], tmp_path / "gt.tsv")
    write_manifest([("a.pgm", "pred.pts", (0, 0, 1, 1))], tmp_path / "pred.tsv")


def test_eval_offset_fixture(tmp_path, capsys):
    _offset_fixture(tmp_path)
    assert main(["eval", "--pred", str(tmp_path / "pred.tsv"), "--gt", str(tmp_path / "gt.tsv"), "--protocol", "interpupil68"]) == 0
    assert capsys.readouterr().out == "interpupil68\t0.05000\n"


def test_eval_perfect(tmp_path, capsys):
    _offset_fixture(tmp_path)
    assert main(["eval", "--pred", str(tmp_path / "gt.tsv"), "--gt", str(tmp_path / "gt.tsv"), "--protocol", "interpupil68"]) == 0
    assert capsys.readouterr().out == "interpupil68\t0.00000\n"


def test_eval_identifier_mismatch(tmp_path):
    _offset_fixture(tmp_path)
    (tmp_path / "b.pgm").write_bytes(b"P5\n1 1\n255\n\0")
    write_manifest([("b.pgm", "pred.pts", (0, 0, 1, 1))], tmp_path / "other.tsv")
    assert main(["eval", "--pred", str(tmp_path / "other.tsv"), "--gt", str(tmp_path / "gt.tsv")]) == 3
    write_manifest([], tmp_path / "empty.tsv")
    assert main(["eval", "--pred", str(tmp_path / "empty.tsv"), "--gt", str(tmp_path / "gt.tsv")]) == 3


def test_config_file_and_override(workspace, tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# synth settings\ncount = 2\nseed = 9\nout = " + str(tmp_path / "a") + "\n")
    assert main(["synth", "--config", str(cfg)]) == 0
    assert len(load_manifest(tmp_path / "a/manifest.tsv")) == 2
    assert main(["synth", "--config", str(cfg), "--count", "1", "--out", str(tmp_path / "b")]) == 0
    assert len(load_manifest(tmp_path / "b/manifest.tsv")) == 1
    cfg.write_text("colour = blue\n")
    assert main(["synth", "--config", str(cfg)]) == 2
    cfg.write_text("count = many\n")
    assert main(["synth", "--config", str(cfg)]) == 2


def test_config_boolean_flag(workspace, tmp_path):
    cfg = tmp_path / "train.cfg"
    cfg.write_text(
        f"manifest = {workspace / 'data/manifest.tsv'}\nweights = {workspace / 'w.bin'}\n"
        f"out = {tmp_path / 'm.bin'}\nno_augment = yes\nno-perturb = true\nlambda = 1.0\nstages = 1\nseed = 5\n"
    )
    assert main(["train", "--config", str(cfg)]) == 0
    report = (tmp_path / "m.bin.report.tsv").read_text()
    assert "# seed\t5" in report and "# augment\toff" in report and "# samples\t4" in report


def test_threads_env_default(workspace, model, tmp_path, monkeypatch):
    monkeypatch.setenv("LDDR_THREADS", "lots")
    assert _align(workspace, model, tmp_path / "o") == 2


def test_synth_count_zero(tmp_path):
    assert main(["synth", "--out", str(tmp_path / "s"), "--count", "0"]) == 3


def test_bad_model_file(workspace, tmp_path):
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"LDDRM001" + b"\0" * 5)
    args = ["align", "--model", str(bad), "--weights", str(workspace / "w.bin"), "--manifest", str(workspace / "data/manifest.tsv")]
    assert main(args + ["--out", str(tmp_path / "o")]) == 3


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "lddr", "net-info", "--stage", "4"], capture_output=True, text=True)
    assert res.returncode == 0
    assert res.stdout.splitlines()[0] == "stage\tlayer\tout_h\tout_w\tout_c\trf\tjump"


def test_unknown_subcommand():
    with pytest.raises(SystemExit) as exc:
        main(["fly"])
    assert exc.value.code == 2


def test_init_weights_digest(tmp_path, capsys):
    assert main(["init-weights", "--out", str(tmp_path / "w"), "--seed", "1", "--channels", NARROW]) == 0
    digest = capsys.readouterr().out.strip()
    assert len(digest) == 64 and int(digest, 16) >= 0


def test_bad_channels_flag(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["init-weights", "--out", str(tmp_path / "w"), "--channels", "1,2,3"])
    assert exc.value.code == 2
