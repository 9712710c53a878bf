import hashlib

import numpy as np
import pytest
from PIL import Image

from conftest import tiny_run_config
from roadmtl import config as cfgmod
from roadmtl.cli import main
from roadmtl.data.dataset import SampleStore, load_manifest, read_mask
from roadmtl.metrics import EvalReport, evaluate_set
from roadmtl.trainer import load_model
from roadmtl.viz import feature_overlay, steer_feature_panel

SYNTH_ARGS = ["--n-source", "6", "--n-target", "6", "--n-val", "3", "--n-test", "2",
              "--source-size", "48x64", "--target-size", "32x64"]


def _tree_digest(root):
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(root)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()


def _toy_source(root):
    (root / "images").mkdir(parents=True)
    (root / "labels").mkdir()
    rng = np.random.default_rng(0)
    for name, road_rows in (("a", 20), ("b", 10), ("c", 1)):
        labels = np.full((40, 60), 27, dtype=np.uint8)  # sky
        labels[40 - road_rows:] = 13  # road
        if name == "c":
            labels[-1, 30:] = 27  # 30 of 2400 pixels, well below 5%
        Image.fromarray(labels, mode="L").save(root / "labels" / f"{name}.png")
        Image.fromarray((rng.random((40, 60, 3)) * 255).astype(np.uint8)).save(root / "images" / f"{name}.png")


def test_preprocess_keeps_and_drops(tmp_path, capsys):
    _toy_source(tmp_path / "raw")
    out = tmp_path / "out"
    assert main(["preprocess", "--source-root", str(tmp_path / "raw"), "--out", str(out), "--size", "32x64"]) == 0
    assert "kept 2 dropped 1" in capsys.readouterr().out
    man = load_manifest(out / "train.tsv")
    assert [e.id for e in man.entries] == ["a", "b"]
    raw = np.asarray(Image.open(out / "masks" / "a.png"))
    assert set(np.unique(raw)) <= {0, 255} and raw.shape == (32, 64)
    first = _tree_digest(out)
    assert main(["preprocess", "--source-root", str(tmp_path / "raw"), "--out", str(out), "--size", "32x64"]) == 0
    assert _tree_digest(out) == first


def test_preprocess_bad_label_file(tmp_path, capsys):
    _toy_source(tmp_path / "raw")
    Image.new("RGB", (60, 40)).save(tmp_path / "raw" / "labels" / "bad.png")
    code = main(["preprocess", "--source-root", str(tmp_path / "raw"), "--out", str(tmp_path / "out")])
    err = capsys.readouterr().err
    assert code != 0 and "bad.png" in err
    assert err.strip().splitlines()[-1].startswith("E_DATA: ")


def test_synth_is_deterministic(tmp_path):
    for name in ("a", "b"):
        assert main(["synth", "--out", str(tmp_path / name), "--seed", "3"] + SYNTH_ARGS) == 0
    assert _tree_digest(tmp_path / "a") == _tree_digest(tmp_path / "b")
    val = load_manifest(tmp_path / "a" / "target" / "val.tsv")
    assert len(val) == 3 and val.annotated
    angles = [e.angle for e in load_manifest(tmp_path / "a" / "target" / "train.tsv").entries]
    assert all(-1.0 <= a <= 1.0 for a in angles)
    assert load_manifest(tmp_path / "a" / "source" / "train.tsv").entries[0].angle is None


def test_synth_default_val_size(tmp_path):
    from roadmtl.cli import build_parser

    assert build_parser().parse_args(["synth", "--out", str(tmp_path)]).n_val == 100


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("run")
    data = root / "data"
    assert main(["synth", "--out", str(data), "--seed", "0"] + SYNTH_ARGS) == 0
    cfg = tiny_run_config(total_steps=20, val_every=10)
    cfg.data.root = str(data)
    cfgmod.save(cfg, root / "run.toml")
    assert main(["train", "--config", str(root / "run.toml"), "--mode", "mtl", "--out", str(root / "mtl")]) == 0
    return root


def test_train_writes_checkpoints_and_log(trained):
    ckpts = sorted((trained / "mtl").glob("step_*.pt"))
    assert [p.name for p in ckpts] == ["step_0000010.pt", "step_0000020.pt"]
    assert (trained / "mtl" / "best.pt").is_file()
    assert len((trained / "mtl" / "run_log.tsv").read_text().splitlines()) == 21


def test_eval_matches_metrics_module(trained, tmp_path, monkeypatch):
    monkeypatch.setenv("ROADMTL_DATA_ROOT", str(trained / "data"))
    report_path = tmp_path / "report.tsv"
    assert main(["eval", "--checkpoint", str(trained / "mtl" / "best.pt"), "--split", "val",
                 "--out", str(report_path)]) == 0
    from_cli = EvalReport.from_text(report_path.read_text())
    model = load_model(trained / "mtl" / "best.pt")
    direct = evaluate_set(model, SampleStore(load_manifest(trained / "data" / "target" / "val.tsv"), "target"))
    assert from_cli.miou == direct.miou and from_cli.per_sample == direct.per_sample


def test_eval_rejects_unannotated_split(trained, capsys):
    code = main(["eval", "--checkpoint", str(trained / "mtl" / "best.pt"),
                 "--manifest", str(trained / "data" / "target" / "train.tsv")])
    assert code != 0 and capsys.readouterr().err.startswith("E_DATA: ")


def test_train_mode_mismatch_on_resume(trained, capsys):
    code = main(["train", "--config", str(trained / "run.toml"), "--mode", "tl", "--out", str(trained / "tl"),
                 "--resume", str(trained / "mtl" / "best.pt")])
    assert code != 0 and capsys.readouterr().err.startswith("E_CONFIG: ")


def test_visualize_writes_panels(trained, tmp_path):
    for what in ("steer_features", "segmentation"):
        out = tmp_path / what
        assert main(["visualize", "--checkpoint", str(trained / "mtl" / "best.pt"), "--data-root",
                     str(trained / "data"), "--split", "test", "--what", what, "--out", str(out)]) == 0
        files = sorted(out.glob("*.png"))
        assert len(files) == 2
        width = np.asarray(Image.open(files[0])).shape[1]
        assert width == 64 * (5 if what == "steer_features" else 3)


def test_zero_feature_renders_neutral():
    img = np.random.default_rng(0).random((8, 8, 3))
    assert np.array_equal(feature_overlay(img, np.zeros((8, 8))), img)
    panel = steer_feature_panel(img.transpose(2, 0, 1), np.zeros((4, 8, 8)))
    assert np.array_equal(panel, np.concatenate([img] * 5, axis=1))


def test_overlay_colours():
    img = np.zeros((1, 2, 3))
    out = feature_overlay(img, np.array([[2.0, -1.0]]))
    assert np.allclose(out[0, 0], [0.5, 0, 0]) and np.allclose(out[0, 1], [0, 0, 0.25])


def test_missing_config_is_single_line_error(tmp_path, capsys):
    code = main(["train", "--config", str(tmp_path / "nope.toml"), "--mode", "st"])
    err = capsys.readouterr().err.strip()
    assert code == 2 and err.startswith("E_CONFIG: ") and "\n" not in err
