import hashlib
import json
import os

import numpy as np
import pytest

from asaug import config
from asaug.cli import main
from asaug.data_io import read_manifest, read_probmap, write_image, write_probmap
from asaug.model import LinearSegModel, save_checkpoint

TINY = """
[data]
image_size = 16
seed = 2
val_count = 4
[split]
labeled_ratio = 0.5
[train]
lr_init = 5.0
epochs = 2
batch_size = 4
ema_alpha = 0.9
[eaw]
k_r = 1.0
d_r = 3.0
[ablation]
seeds = 0, 1
strategies = supervised_only, fixed, eaw
"""


def tree_hashes(root):
    out = {}
    for dirpath, _, files in os.walk(root):
        for name in files:
            path = os.path.join(dirpath, name)
            with open(path, "rb") as fh:
                out[os.path.relpath(path, root)] = hashlib.sha256(fh.read()).hexdigest()
    return out


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "tiny.ini"
    path.write_text(TINY)
    return str(path)


@pytest.fixture
def dataset(tmp_path, tiny_config):
    out = tmp_path / "data"
    assert main(["gen-data", "--config", tiny_config, "--out", str(out), "--count", "10"]) == 0
    return out


def test_gen_data_layout_and_split(dataset, capsys):
    m = read_manifest(dataset / "manifest.txt")
    assert (m.labeled_count, m.unlabeled_count) == (5, 5)
    assert len(os.listdir(dataset / "train" / "masks")) == 5
    assert read_manifest(dataset / "val_manifest.txt").labeled_count == 4


def test_gen_data_is_byte_identical(tmp_path, tiny_config, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert main(["gen-data", "--config", tiny_config, "--out", str(out), "--count", "10"]) == 0
    assert capsys.readouterr().out.strip().endswith("manifest.txt")
    assert tree_hashes(a) == tree_hashes(b)


def test_missing_config_exits_2(tmp_path, capsys):
    assert main(["gen-data", "--config", str(tmp_path / "nope.ini"), "--out", str(tmp_path)]) == 2
    assert "config not found" in capsys.readouterr().err


def test_bad_field_exits_2_naming_it(tmp_path, dataset, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text("[train]\nmode = sideways\n")
    assert main(["train", "--config", str(bad), "--manifest", str(dataset / "manifest.txt")]) == 2
    assert "train.mode" in capsys.readouterr().err


def test_train_outputs_and_determinism(tmp_path, tiny_config, dataset, capsys):
    runs = []
    for name in ("r1", "r2"):
        out = tmp_path / name
        assert main(["train", "--config", tiny_config, "--manifest", str(dataset / "manifest.txt"),
                     "--out", str(out)]) == 0
        runs.append(out)
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].startswith("final_miou=") and lines[0] == lines[1]
    assert set(os.listdir(runs[0])) == {"report.csv", "traces.csv", "teacher.asmd", "student.asmd", "config.json"}
    assert tree_hashes(runs[0]) == tree_hashes(runs[1])
    report = (runs[0] / "report.csv").read_text().splitlines()
    rot = [float(line.split(",")[5]) for line in report[2:]]
    assert all(r > 0 for r in rot)
    echo = json.loads((runs[0] / "config.json").read_text())
    assert echo["seed"] == 0 and "final_checksum" in echo


def test_supervised_only_on_fully_labeled(tmp_path, capsys):
    cfg = tmp_path / "c.ini"
    cfg.write_text(TINY.replace("labeled_ratio = 0.5", "labeled_ratio = 1.0")
                   .replace("[eaw]", "mode = supervised_only\n[eaw]"))
    data = tmp_path / "d"
    assert main(["gen-data", "--config", str(cfg), "--out", str(data), "--count", "6"]) == 0
    assert main(["train", "--config", str(cfg), "--manifest", str(data / "manifest.txt"),
                 "--out", str(tmp_path / "t")]) == 0
    rows = (tmp_path / "t" / "report.csv").read_text().splitlines()[1:]
    assert all(float(r.split(",")[3]) == 0.0 for r in rows)


def test_eval_matches_trainer(tmp_path, tiny_config, dataset, capsys):
    out = tmp_path / "run"
    manifest = str(dataset / "manifest.txt")
    assert main(["train", "--config", tiny_config, "--manifest", manifest, "--out", str(out)]) == 0
    final = capsys.readouterr().out.strip().split("=")[1]
    assert main(["eval", "--checkpoint", str(out / "teacher.asmd"), "--manifest", manifest,
                 "--out", str(tmp_path / "iou.csv")]) == 0
    assert capsys.readouterr().out.strip() == f"miou={final}"
    assert (tmp_path / "iou.csv").read_text().splitlines()[-1] == f"miou,{final}"


def test_eval_zero_checkpoint_predicts_class_zero(tmp_path, dataset, capsys):
    ckpt = tmp_path / "zero.asmd"
    save_checkpoint(ckpt, LinearSegModel.zeros(4))
    assert main(["eval", "--checkpoint", str(ckpt), "--manifest", str(dataset / "manifest.txt"),
                 "--out", str(tmp_path / "iou.csv")]) == 0
    rows = dict(line.split(",") for line in (tmp_path / "iou.csv").read_text().splitlines()[1:])
    assert all(rows[c] == "0.0" for c in ("1", "2", "3") if rows[c] != "absent")
    assert float(rows["0"]) > 0


def test_eval_errors(tmp_path, dataset, capsys):
    bad = tmp_path / "bad.asmd"
    bad.write_bytes(b"NOPE" + bytes(16))
    assert main(["eval", "--checkpoint", str(bad), "--manifest", str(dataset / "manifest.txt")]) == 2
    assert "magic" in capsys.readouterr().err
    ckpt = tmp_path / "zero.asmd"
    save_checkpoint(ckpt, LinearSegModel.zeros(4))
    empty = tmp_path / "empty.txt"
    empty.write_text("ASMANIFEST v1 labeled=0 unlabeled=0 confighash=-\n")
    assert main(["eval", "--checkpoint", str(ckpt), "--manifest", str(empty)]) == 2


def write_inputs(tmp_path, probs):
    img = tmp_path / "x.ppm"
    pm = tmp_path / "p.aspm"
    r = np.random.default_rng(0)
    write_image(img, r.random(probs.shape[1:] + (3,)))
    write_probmap(pm, probs)
    return str(img), str(pm)


def run_augment(capsys, img, pm, prefix, extra=()):
    assert main(["augment", "--image", img, "--probmap", pm, "--seed", "3",
                 "--out-prefix", str(prefix), *extra]) == 0
    return json.loads(capsys.readouterr().out)


def test_augment_uniform_probmap_hits_the_clamp(tmp_path, capsys):
    img, pm = write_inputs(tmp_path, np.full((4, 8, 8), 0.25))
    out = run_augment(capsys, img, pm, tmp_path / "o" / "a")
    assert out["H"] == pytest.approx(1.0)
    assert abs(out["rotation_deg"]) == 180.0
    assert np.hypot(out["dx"], out["dy"]) == pytest.approx(0.5)
    for suffix in ("_image.ppm", "_probmap.aspm", "_valid.pgm"):
        assert (tmp_path / "o" / f"a{suffix}").exists()
    assert read_probmap(tmp_path / "o" / "a_probmap.aspm").shape == (4, 8, 8)


def test_augment_confident_probmap_is_near_identity(tmp_path, capsys):
    probs = np.zeros((4, 8, 8))
    probs[2] = 1.0
    img, pm = write_inputs(tmp_path, probs)
    cfg = tmp_path / "eaw.ini"
    cfg.write_text("[eaw]\nd_r = 12\nd_t = 12\n")
    out = run_augment(capsys, img, pm, tmp_path / "b", ["--eaw-config", str(cfg)])
    assert out["H"] == 0.0 and abs(out["rotation_deg"]) < 0.1


def test_augment_is_reproducible_and_checks_dims(tmp_path, capsys):
    img, pm = write_inputs(tmp_path, np.full((3, 8, 8), 1 / 3))
    run_augment(capsys, img, pm, tmp_path / "r1" / "a")
    run_augment(capsys, img, pm, tmp_path / "r2" / "a")
    assert tree_hashes(tmp_path / "r1") == tree_hashes(tmp_path / "r2")
    write_probmap(tmp_path / "small.aspm", np.full((3, 4, 4), 1 / 3))
    assert main(["augment", "--image", img, "--probmap", str(tmp_path / "small.aspm"),
                 "--out-prefix", str(tmp_path / "z")]) == 2


def test_ablate_rows_and_reproducibility(tmp_path, tiny_config, dataset, capsys):
    args = ["ablate", "--config", tiny_config, "--manifest", str(dataset / "manifest.txt"),
            "--val-manifest", str(dataset / "val_manifest.txt")]
    assert main(args + ["--out", str(tmp_path / "a1")]) == 0
    assert main(args + ["--out", str(tmp_path / "a2"), "--jobs", "2"]) == 0
    rows = (tmp_path / "a1" / "ablation.csv").read_text().splitlines()
    assert rows[0] == "strategy,seed,final_miou" and len(rows) - 1 == 3 * 2
    assert any(r.startswith("supervised_only,") for r in rows)
    for name in ("ablation.csv", "ablation_summary.csv", "ablation_criteria.csv"):
        assert (tmp_path / "a1" / name).read_bytes() == (tmp_path / "a2" / name).read_bytes()
    crit = (tmp_path / "a1" / "ablation_criteria.csv").read_text().splitlines()
    assert crit[0] == "criterion,lhs,rhs,pass" and len(crit) == 3


def test_print_config_round_trips(tmp_path, tiny_config, capsys):
    assert main(["--print-config"]) == 0
    assert config.parse(capsys.readouterr().out) == config.ExperimentConfig()
    assert main(["train", "--config", tiny_config, "--manifest", "unused", "--print-config"]) == 0
    text = capsys.readouterr().out
    assert config.parse(text) == config.load(tiny_config)


def test_no_command_is_usage_error(capsys):
    assert main([]) == 2
