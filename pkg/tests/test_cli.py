import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from pointda.cli import main
from pointda.convert import CONVERTERS, convert_annotations, register_converter
from pointda.errors import AnnotationParseError, InvalidArgumentError

TINY = [
    "data.n_source=4",
    "data.n_target=4",
    "data.source.image_size=32",
    "data.target.image_size=32",
    "model.channels=8",
    "model.disc_channels=8",
    "train.crop_size=32",
    "train.batch_source=2",
    "train.batch_target=2",
    "train.steps=2",
    "train.eval_interval=1",
]


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def run(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["generate-data", "--out", str(root / "data"), *TINY]) == 0
    assert main(["train", "--data", str(root / "data"), "--out", str(root / "run"), *TINY]) == 0
    return root


def test_generate_data_layout(run):
    assert len(list((run / "data/source/images").glob("*.png"))) == 4
    assert (run / "data/resolved_config.toml").exists()


def test_train_outputs(run):
    for name in ("losses.csv", "metrics.csv", "last.pt", "best.pt", "resolved_config.toml"):
        assert (run / "run" / name).exists()


def test_refuses_non_empty_out(run, capsys):
    assert main(["train", "--data", str(run / "data"), "--out", str(run / "run"), *TINY]) == 2
    err = capsys.readouterr().err.strip()
    assert err.startswith("error: config:") and "\n" not in err


def test_resume_accepts_existing_out(run):
    assert main(["train", "--data", str(run / "data"), "--out", str(run / "run"), "--resume", *TINY]) == 0


def test_eval_writes_metrics_and_per_image(run, tmp_path):
    out = tmp_path / "eval"
    assert main(["eval", "--checkpoint", str(run / "run/last.pt"), "--data", str(run / "data"), "--out", str(out),
                 "eval.sweep=[0.3, 0.7]"]) == 0
    recs = _rows(out / "metrics.csv")
    assert [r["dataset"] for r in recs] == ["last", "last@0.3", "last@0.7"] * 2
    assert all(r["step"] == "2" for r in recs)
    assert all(float(r["mae"]) <= float(r["mse"]) for r in recs)
    per = _rows(out / "per_image_target.csv")
    assert len(per) == 4 and set(per[0]) == {"id", "gt_count", "pred_count", "confidence_mean"}


def test_visualize(run, tmp_path):
    out = tmp_path / "vis"
    assert main(["visualize", "--checkpoint", str(run / "run/best.pt"), "--data", str(run / "data"),
                 "--out", str(out), "--limit", "2"]) == 0
    assert len(list(out.glob("*_overlay.png"))) == 2 and len(list(out.glob("*_entropy.png"))) == 2


def test_config_errors_exit_2(tmp_path, capsys):
    code = main(["train", "--out", str(tmp_path / "x"), "train.steps=0", "model.bogus=1"])
    err = capsys.readouterr().err
    assert code == 2 and "train.steps" in err and "model.bogus" in err


def test_runtime_errors_exit_1(tmp_path, capsys):
    code = main(["train", "--data", str(tmp_path / "nowhere"), "--out", str(tmp_path / "x")])
    assert code == 1
    assert capsys.readouterr().err.startswith("error: dataset-integrity:")


def test_missing_checkpoint(tmp_path, capsys):
    assert main(["eval", "--checkpoint", str(tmp_path / "no.pt"), "--out", str(tmp_path / "e")]) == 1
    assert capsys.readouterr().err.startswith("error: io:")


def test_unknown_subcommand_exits_2():
    with pytest.raises(SystemExit) as info:
        main(["frobnicate"])
    assert info.value.code == 2


def test_console_script_module():
    proc = subprocess.run([sys.executable, "-m", "pointda.cli", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "generate-data" in proc.stdout


def test_convert_builtin_formats(tmp_path, capsys):
    src = tmp_path / "in"
    src.mkdir()
    (src / "GT_IMG_1.csv").write_text("x,y\n1.5,2\n3,4\n")
    (src / "IMG_2.csv").write_text("5,6\n")
    assert main(["convert-annotations", "--format", "csv", "--input", str(src), "--out", str(tmp_path / "o")]) == 0
    assert json.loads((tmp_path / "o/IMG_1.json").read_text()) == {"points": [[1.5, 2.0], [3.0, 4.0]]}
    assert json.loads((tmp_path / "o/IMG_2.json").read_text()) == {"points": [[5.0, 6.0]]}
    (src / "a.json").write_text(json.dumps([[1, 2]]))
    convert_annotations("points-json", src / "a.json", tmp_path / "j")
    assert json.loads((tmp_path / "j/a.json").read_text()) == {"points": [[1.0, 2.0]]}
    assert main(["convert-annotations", "--list-formats"]) == 0
    assert {"csv", "points-json", "shtech-mat"} <= set(capsys.readouterr().out.split())


def test_convert_shtech_mat(tmp_path):
    scipy_io = pytest.importorskip("scipy.io")
    pts = np.array([[10.5, 20.25], [3.0, 4.0]])
    info = np.empty((1, 1), dtype=object)
    info[0, 0] = np.array([[(pts, np.array([[2]]))]], dtype=[("location", object), ("number", object)])
    scipy_io.savemat(tmp_path / "GT_IMG_7.mat", {"image_info": info})
    (out,) = convert_annotations("shtech-mat", tmp_path / "GT_IMG_7.mat", tmp_path / "o")
    assert out.name == "IMG_7.json"
    assert json.loads(out.read_text())["points"] == pts.tolist()


def test_convert_errors(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("1,2\nthree,4\n")
    with pytest.raises(AnnotationParseError, match="line 2"):
        convert_annotations("csv", bad, tmp_path / "o")
    with pytest.raises(InvalidArgumentError, match="unknown annotation format"):
        convert_annotations("nope", bad, tmp_path / "o")


def test_register_custom_converter(tmp_path):
    @register_converter("halves", "*.txt")
    def halves(path):
        return np.array([[float(v) / 2 for v in path.read_text().split()]])

    try:
        (tmp_path / "p.txt").write_text("4 6")
        (out,) = convert_annotations("halves", tmp_path / "p.txt", tmp_path / "o")
        assert json.loads(out.read_text())["points"] == [[2.0, 3.0]]
    finally:
        CONVERTERS.pop("halves")
