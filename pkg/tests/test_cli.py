import numpy as np
import pytest

from robustfusion.cli import PALETTE, colorize, main
from robustfusion.scenegen import read_pgm, read_ppm


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["gen-data", "--out", str(root / "data"), "--seed", "2", "--train-n", "3", "--val-n", "4"]) == 0
    ckpt = root / "m.ckpt"
    args = ["train", "--data", str(root / "data"), "--arch", "late", "--policy", "rlm", "--iters", "2", "--seed", "1"]
    assert main(args + ["--out", str(ckpt)]) == 0
    return root


def test_gen_data_layout(workdir):
    data = workdir / "data"
    assert len(list((data / "train").iterdir())) == 3 and len(list((data / "val").iterdir())) == 4
    assert "data_seed = 2" in (data / "run_config.txt").read_text()


def test_gen_data_byte_identical(tmp_path, workdir):
    assert main(["gen-data", "--out", str(tmp_path / "d"), "--seed", "2", "--train-n", "3", "--val-n", "4"]) == 0
    for f in (workdir / "data").rglob("*"):
        if f.is_file():
            assert (tmp_path / "d" / f.relative_to(workdir / "data")).read_bytes() == f.read_bytes()


def test_gen_data_refuses_nonempty(workdir):
    assert main(["gen-data", "--out", str(workdir / "data")]) == 1


def test_train_outputs_echo_config(workdir):
    curve = (workdir / "m.ckpt.curve.csv").read_text().splitlines()
    assert "# run.arch=late" in curve and "# run.policy=rlm" in curve
    assert curve[[i for i, l in enumerate(curve) if not l.startswith("#")][0]] == "iter,loss,lr"
    assert len([l for l in curve if not l.startswith("#")]) == 3


def test_eval_bit_stable(workdir):
    ck, data = str(workdir / "m.ckpt"), str(workdir / "data")
    for name in ("a.csv", "b.csv"):
        assert main(["eval", "--checkpoint", ck, "--data", data, "--specs", "clean,adverse,fog:0.02", "--out", str(workdir / name)]) == 0
    a = (workdir / "a.csv").read_text()
    assert a == (workdir / "b.csv").read_text()
    assert "# checkpoint.run.policy=rlm" in a and "# eval.seed=0" in a
    assert len([l for l in a.splitlines() if not l.startswith("#")]) == 4


def test_eval_fog_sweep_rows(workdir):
    out = workdir / "fog.csv"
    assert main(["eval", "--checkpoint", str(workdir / "m.ckpt"), "--data", str(workdir / "data"),
                 "--specs", "fog:0.005,fog:0.01,fog:0.02", "--out", str(out)]) == 0
    body = [l for l in out.read_text().splitlines() if not l.startswith("#")]
    assert [l.split(",")[0] for l in body[1:]] == ["fog:0.005", "fog:0.01", "fog:0.02"]


def test_render(workdir):
    ck, data = str(workdir / "m.ckpt"), str(workdir / "data")
    for spec in ("clean", "fog:0.02"):
        assert main(["render", "--checkpoint", ck, "--data", data, "--index", "1", "--spec", spec, "--out", str(workdir / spec / "s")]) == 0
    clean_gt = (workdir / "clean" / "s_gt.ppm")
    fog_gt = (workdir / "fog:0.02" / "s_gt.ppm")
    assert read_ppm(clean_gt).tolist() == read_ppm(fog_gt).tolist()
    pred = read_ppm(workdir / "clean" / "s_pred.ppm")
    assert pred.shape == (3, 48, 96)
    gt_labels = read_pgm(workdir / "data" / "val" / "00001" / "labels.pgm")
    np.testing.assert_allclose(read_ppm(clean_gt), colorize(gt_labels), atol=1e-12)


def test_palette_fixed():
    assert len({tuple(c) for c in PALETTE}) == len(PALETTE)
    assert tuple(PALETTE[2]) == (0, 0, 255)


@pytest.mark.parametrize(
    "argv,code",
    [
        (["train", "--data", "x", "--arch", "middle", "--out", "y"], 1),
        (["eval", "--checkpoint", "missing.ckpt", "--data", "x"], 2),
        (["frobnicate"], 1),
        ([], 1),
    ],
)
def test_exit_codes(argv, code, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert main(argv) == code


def test_usage_errors(workdir):
    ck, data = str(workdir / "m.ckpt"), str(workdir / "data")
    assert main(["eval", "--checkpoint", ck, "--data", data, "--specs", "snow:3"]) == 1
    assert main(["render", "--checkpoint", ck, "--data", data, "--index", "4", "--out", str(workdir / "r")]) == 1
    assert main(["train", "--data", data, "--iters", "0", "--out", str(workdir / "z")]) == 1
