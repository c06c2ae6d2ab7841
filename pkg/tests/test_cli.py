import csv
import json

import numpy as np
import pytest

from scaunmix.cli import load_weights, main, save_weights
from scaunmix.data import load, load_ground_truth, write_hsx
from scaunmix.export import decode_png_gray
from scaunmix.model import ScaWeights


@pytest.fixture(scope="module")
def scene(tmp_path_factory):
    d = tmp_path_factory.mktemp("scene")
    assert main(["synth", "--k", "3", "--f", "20", "--n", "120", "--seed", "7", "--out", str(d)]) == 0
    return d


def run(*args):
    return main([str(a) for a in args])


def test_synth_outputs(scene, tmp_path):
    assert {p.name for p in scene.iterdir()} >= {"dataset.hsx", "endmembers.csv", "abundances.hsx", "manifest.json"}
    data = load(scene / "dataset.hsx")
    gt = load_ground_truth(scene / "endmembers.csv", scene / "abundances.hsx")
    assert np.linalg.norm(data.y - gt.abundances @ gt.endmembers) <= 1e-12
    assert (data.width, data.height) == (12, 10)
    run("synth", "--k", 3, "--f", 20, "--n", 120, "--seed", 7, "--out", tmp_path)
    assert (tmp_path / "dataset.hsx").read_bytes() == (scene / "dataset.hsx").read_bytes()
    assert (tmp_path / "abundances.hsx").read_bytes() == (scene / "abundances.hsx").read_bytes()


def test_synth_k_exceeds_f(tmp_path, capsys):
    assert run("synth", "--k", 10, "--f", 5, "--n", 20, "--out", tmp_path) == 1
    assert "k exceeds f" in capsys.readouterr().err


def test_synth_with_noise_and_outliers(tmp_path):
    assert run("synth", "--k", 3, "--f", 20, "--n", 120, "--snr", 30, "--outliers", 5, "--out", tmp_path) == 0
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert len(manifest["outlier_indices"]) == 5


def test_train_writes_artifacts_and_eym_holds(scene, tmp_path, capsys):
    out = tmp_path / "t"
    assert run("train", "--data", scene / "dataset.hsx", "--k", 3, "--epochs", 1, "--steps", 200, "--out", out) == 0
    printed = capsys.readouterr().out
    assert "final loss" in printed and "tail energy bound" in printed
    with open(out / "history.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert rows and all(float(r["recon"]) >= float(r["tail_energy"]) - 1e-9 for r in rows)
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["steps_per_epoch"] == 200
    assert manifest["eym_margin"] >= -1e-9
    w = load_weights(out / "weights.hsx")
    assert (w.n_bands, w.n_members) == (20, 3)


def test_train_is_bit_reproducible(scene, tmp_path):
    for name in ("a", "b"):
        assert run("train", "--data", scene / "dataset.hsx", "--k", 3, "--epochs", 1, "--steps", 150, "--out", tmp_path / name) == 0
        assert run("export", "--data", scene / "dataset.hsx", "--weights", tmp_path / name / "weights.hsx", "--out", tmp_path / name) == 0
    for f in ("weights.hsx", "history.csv", "abundance_0.png", "abundance_2.png", "simplex_scatter.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_config_precedence(scene, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"k": 3, "epochs": 1, "steps_per_epoch": 5, "lam": 0.5, "log_every": 5}))
    assert run("train", "--data", scene / "dataset.hsx", "--config", cfg, "--lambda", 0.2, "--out", tmp_path / "o") == 0
    resolved = json.loads((tmp_path / "o" / "manifest.json").read_text())["config"]
    assert resolved["lam"] == 0.2 and resolved["steps_per_epoch"] == 5 and resolved["lr"] == 1e-4


def test_config_unknown_key(scene, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"k": 3, "bogus": 1}))
    assert run("train", "--data", scene / "dataset.hsx", "--config", cfg, "--out", tmp_path) == 1


def test_gt_init_run_reports_drift(scene, tmp_path):
    out = tmp_path / "g"
    rc = run("train", "--data", scene / "dataset.hsx", "--lambda", 0, "--init", "gt", "--gt", scene / "endmembers.csv",
             "--epochs", 1, "--steps", 100, "--out", out)
    assert rc == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert {"max_weight_drift", "final_loss", "report"} <= set(manifest)
    assert manifest["report"]["sad_mean"] < 1e-2


def test_gt_init_needs_gt(scene, tmp_path):
    assert run("train", "--data", scene / "dataset.hsx", "--k", 3, "--init", "gt", "--out", tmp_path) == 1


@pytest.fixture(scope="module")
def gt_weights_file(scene, tmp_path_factory):
    out = tmp_path_factory.mktemp("gtw")
    assert run("train", "--data", scene / "dataset.hsx", "--init", "gt", "--gt", scene / "endmembers.csv",
               "--epochs", 0, "--out", out) == 0
    return out / "weights.hsx"


def test_eval_ground_truth_weights(scene, gt_weights_file, tmp_path):
    assert run("eval", "--data", scene / "dataset.hsx", "--weights", gt_weights_file, "--gt", scene / "endmembers.csv",
               "--reference", "samson", "--out", tmp_path) == 0
    report = json.loads((tmp_path / "report.json").read_text())
    assert max(report["sad_per_member"]) <= 1e-10 and report["rmse_e"] <= 1e-10
    assert report["reference"]["rmse_a"] == 1.18e-5
    with open(tmp_path / "report.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 1 and rows[0]["k_true"] == "3"


def test_eval_without_truth(scene, gt_weights_file, tmp_path, capsys):
    assert run("eval", "--data", scene / "dataset.hsx", "--weights", gt_weights_file, "--out", tmp_path) == 0
    assert "--gt" in capsys.readouterr().err
    summary = json.loads((tmp_path / "report.json").read_text())
    assert set(summary) == {"rmse_y", "biorth", "volume", "null_members"}


def test_eval_missing_gt_file(scene, gt_weights_file, tmp_path):
    assert run("eval", "--data", scene / "dataset.hsx", "--weights", gt_weights_file, "--gt", tmp_path / "nope.csv",
               "--out", tmp_path) == 1


def test_export_ground_truth_maps(scene, gt_weights_file, tmp_path):
    assert run("export", "--data", scene / "dataset.hsx", "--weights", gt_weights_file, "--gt", scene / "endmembers.csv",
               "--out", tmp_path) == 0
    for j in range(3):
        assert decode_png_gray((tmp_path / f"difference_{j}.png").read_bytes()).max() == 0
        assert decode_png_gray((tmp_path / f"abundance_{j}.png").read_bytes()).shape == (10, 12)
    s = np.loadtxt(tmp_path / "simplex_scatter.csv", delimiter=",", skiprows=1)
    np.testing.assert_allclose(s.sum(axis=1), 1.0, atol=1e-6)
    assert (tmp_path / "spectra.csv").read_text().startswith("band,wavelength,gt_0,extracted_0")


def test_export_without_geometry(tmp_path, capsys, gt_weights_file, scene):
    data = load(scene / "dataset.hsx")
    write_hsx(tmp_path / "flat.hsx", data.y)
    assert run("export", "--data", tmp_path / "flat.hsx", "--weights", gt_weights_file, "--out", tmp_path / "x") == 0
    assert "skipping abundance maps" in capsys.readouterr().err
    names = {p.name for p in (tmp_path / "x").iterdir()}
    assert "spectra.csv" in names and "simplex_scatter.csv" in names
    assert not any(n.endswith(".png") for n in names)


def test_tail_command(scene, gt_weights_file, capsys):
    assert run("tail", "--data", scene / "dataset.hsx", "--k", 3) == 0
    assert float(capsys.readouterr().out.split()[1]) <= 1e-9
    assert run("tail", "--data", scene / "dataset.hsx", "--k", 2) == 0
    assert float(capsys.readouterr().out.split()[1]) > 0
    assert run("tail", "--data", scene / "dataset.hsx", "--k", 3, "--weights", gt_weights_file) == 0
    margin = [l for l in capsys.readouterr().out.splitlines() if l.startswith("margin")][0]
    assert float(margin.split()[1]) >= -1e-9


def test_weights_file_round_trip(tmp_path, rng):
    w = ScaWeights(rng.random((7, 2)), rng.random((2, 7)))
    save_weights(tmp_path / "w.hsx", w)
    back = load_weights(tmp_path / "w.hsx")
    assert back.encoder.tobytes() == w.encoder.tobytes() and back.decoder.tobytes() == w.decoder.tobytes()


def test_exit_codes_on_bad_inputs(scene, tmp_path):
    bad_magic = tmp_path / "magic.hsx"
    bad_magic.write_bytes(b'{"magic":"XXXX","n":1,"f":1,"dtype":"f64"}\n' + bytes(8))
    assert run("tail", "--data", bad_magic, "--k", 1) == 1
    truncated = tmp_path / "short.hsx"
    truncated.write_bytes((scene / "dataset.hsx").read_bytes()[:-3])
    assert run("train", "--data", truncated, "--k", 3, "--out", tmp_path) == 1
    assert run("train", "--data", scene / "dataset.hsx", "--k", 3, "--lr", 1e300, "--epochs", 1, "--steps", 20,
               "--out", tmp_path / "div") == 2
    assert run("tail", "--data", tmp_path / "missing.hsx", "--k", 1) == 1
    with pytest.raises(SystemExit) as info:
        main(["train"])
    assert info.value.code == 1


def test_sweep_small_grid(tmp_path):
    rc = run("sweep", "--kind", "noise", "--f", 12, "--n", 60, "--snr", 30, 20, "--lambdas", 0.1,
             "--epochs", 1, "--steps", 20, "--out", tmp_path)
    assert rc == 0
    with open(tmp_path / "sweep_noise.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["snr_db"] for r in rows] == ["30.0", "20.0"]
    rc = run("sweep", "--kind", "outliers", "--f", 12, "--n", 60, "--counts", 3, "--lambdas", 0.1,
             "--epochs", 1, "--steps", 20, "--out", tmp_path)
    assert rc == 0
    with open(tmp_path / "sweep_outliers.csv") as fh:
        row = next(csv.DictReader(fh))
    assert row["k_extracted"] == "4" and row["outliers"] == "3"
