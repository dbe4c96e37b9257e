import numpy as np
import pytest

from hypnrsfm.cli import load_hypotheses, run
from hypnrsfm.trainer import load_checkpoint

CONFIG = """\
# tiny pipeline
n_f=24
n_p=8
k_b=2
k_d=4
k_b_true=2
k_d_true=4
feature_width=24
dim_z=4
n_m=4
batch_size=8
epochs=2
"""


@pytest.fixture
def workdir(tmp_path):
    (tmp_path / "c.cfg").write_text(CONFIG)
    return tmp_path


def pipeline(d):
    assert run(["gen-synth", "--config", str(d / "c.cfg"), "--out", str(d / "d.ds")]) == 0
    assert run(["train", "--data", str(d / "d.ds"), "--config", str(d / "c.cfg"),
                "--out", str(d / "ckpt")]) == 0


def test_pipeline_smoke(workdir, capsys):
    pipeline(workdir)
    assert (workdir / "ckpt" / "last").exists()
    history = (workdir / "ckpt" / "history.txt").read_text().splitlines()
    assert len(history) == 3
    assert run(["eval", "--ckpt", str(workdir / "ckpt" / "last"), "--data", str(workdir / "d.ds"),
                "--table", str(workdir / "t.txt")]) == 0
    report = dict(line.split("=") for line in capsys.readouterr().out.splitlines())
    assert all(np.isfinite(float(v)) for v in report.values())
    assert len((workdir / "t.txt").read_text().splitlines()) == 9


def test_reconstruct_schema(workdir):
    pipeline(workdir)
    out = workdir / "h.out"
    assert run(["reconstruct", "--ckpt", str(workdir / "ckpt" / "last"), "--data",
                str(workdir / "d.ds"), "--n-m", "3", "--out", str(out)]) == 0
    frames = load_hypotheses(out)
    assert len(frames) == 24
    for f in frames:
        assert f["hypotheses"].shape == (3, 3, 8)
        np.testing.assert_array_equal(f["hypotheses"], f["basis"] + f["deformations"])
        assert 0 <= f["best"] < 3


def test_outputs_deterministic(workdir):
    pipeline(workdir)
    first = (workdir / "ckpt" / "last").read_bytes()
    data = (workdir / "d.ds").read_bytes()
    pipeline(workdir)
    assert (workdir / "ckpt" / "last").read_bytes() == first
    assert (workdir / "d.ds").read_bytes() == data


def test_flags_override_config(workdir):
    d = workdir
    assert run(["gen-synth", "--config", str(d / "c.cfg"), "--out", str(d / "d.ds")]) == 0
    assert run(["train", "--data", str(d / "d.ds"), "--config", str(d / "c.cfg"),
                "--out", str(d / "ck"), "--epochs", "1", "--seed", "5",
                "--set", "learning_rate=0.01"]) == 0
    _, config, epoch = load_checkpoint(d / "ck" / "last")
    assert (epoch, config.seed, config.learning_rate) == (1, 5, 0.01)


def test_exit_codes(workdir, capsys):
    d = workdir
    assert run(["train", "--bogus"]) == 1
    assert "usage" in capsys.readouterr().err
    assert run(["gen-synth", "--set", "deformation_scale=2", "--out", str(d / "x")]) == 1
    assert "deformation_scale" in capsys.readouterr().err
    assert run(["gen-synth", "--set", "colour=red", "--out", str(d / "x")]) == 1
    assert run(["eval", "--ckpt", str(d / "missing"), "--data", str(d / "d.ds")]) == 2
    (d / "bad.ds").write_text("garbage\n")
    pipeline(d)
    assert run(["eval", "--ckpt", str(d / "ckpt" / "last"), "--data", str(d / "bad.ds")]) == 2
