import json
import subprocess
import sys

import numpy as np
import pandas as pd
import pytest

from soilspec.cli import build_parser, main
from soilspec.data import save_library
from soilspec.maps import read_pgm
from soilspec.synthetic import mixture_library

SUBCOMMANDS = ["split", "train", "evaluate", "grid-search", "sensitivity", "simulate-sensor", "gradcam", "map",
               "summary"]


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    save_library(mixture_library(n_samples=120, n_bands=96, n_vars=3, seed=4, with_coords=True), root / "lib.csv")
    return root


@pytest.fixture(scope="module")
def trained(workdir):
    assert main(["split", "--data", str(workdir / "lib.csv"), "--out", str(workdir / "split.json")]) == 0
    cfg = {"seed": 3, "data": {"library": str(workdir / "lib.csv")}, "split": {"path": str(workdir / "split.json")},
           "crop": {"f_min": 400, "f_max": 2500, "f_insz": 32}, "net": {"p_min": 1, "p_max": 3, "proj_hidden": 6},
           "train": {"epochs": 2, "batch_size": 16, "lr": 1e-3}, "out": str(workdir / "run")}
    (workdir / "cfg.json").write_text(json.dumps(cfg))
    assert main(["train", "--config", str(workdir / "cfg.json")]) == 0
    return workdir


@pytest.mark.parametrize("command", SUBCOMMANDS)
def test_help_exits_zero(command, capsys):
    assert main([command, "--help"]) == 0
    assert "usage" in capsys.readouterr().out


def test_top_level_help_via_module():
    proc = subprocess.run([sys.executable, "-m", "soilspec.cli", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    for command in SUBCOMMANDS:
        assert command in proc.stdout


def test_unknown_subcommand(capsys):
    assert main(["frobnicate"]) == 2
    assert "usage" in capsys.readouterr().err


def test_unknown_flag(capsys):
    assert main(["summary", "--preset", "best", "--bogus"]) == 2


def test_parser_lists_all_commands():
    sub = next(a for a in build_parser()._actions if a.dest == "command")
    assert sorted(sub.choices) == sorted(SUBCOMMANDS)


def test_summary_spec_file(tmp_path, capsys):
    spec = {"n_in": 2048, "n_out": 4, "p_min": 4, "p_max": 7, "n_refine": 1, "use_norm": True, "leak": 0.2,
            "proj_hidden": 70, "n_vars": 12}
    (tmp_path / "best.json").write_text(json.dumps(spec))
    assert main(["summary", "--spec", str(tmp_path / "best.json"), "--out", str(tmp_path / "o")]) == 0
    out = capsys.readouterr().out
    assert "Total parameters: 723,974" in out and "16 x 1024" in out
    assert (tmp_path / "o" / "manifest.json").exists()


def test_summary_bad_spec(tmp_path, capsys):
    (tmp_path / "bad.json").write_text(json.dumps({"n_in": 100}))
    assert main(["summary", "--spec", str(tmp_path / "bad.json")]) == 2


def test_train_cross_field_error(workdir, capsys):
    code = main(["train", "--data", str(workdir / "lib.csv"), "--out", str(workdir / "x"),
                 "--set", "crop.f_insz=32", "--set", "net.n_in=64"])
    assert code == 2
    err = capsys.readouterr().err
    assert "f_insz" in err and "n_in" in err


def test_train_lists_every_problem(workdir, capsys):
    code = main(["train", "--data", str(workdir / "nope.csv"), "--set", "crop.f_insz=100",
                 "--set", "train.loss_kind=huber", "--set", "train.bogus=1"])
    assert code == 2
    err = capsys.readouterr().err
    for needle in ("data.library", "out: required", "f_insz", "loss_kind", "train.bogus"):
        assert needle in err


def test_missing_data_is_runtime_error(tmp_path, capsys):
    assert main(["simulate-sensor", "--data", str(tmp_path / "none.csv"), "--out", str(tmp_path / "o.csv")]) == 1


def test_split_command(workdir):
    out = workdir / "s2.json"
    assert main(["split", "--data", str(workdir / "lib.csv"), "--out", str(out), "--seed", "5",
                 "--audit", str(workdir / "audit.csv")]) == 0
    payload = json.loads(out.read_text())
    assert payload["seed"] == 5
    assert len(payload["train"]) + len(payload["val"]) + len(payload["test"]) == 120
    manifest = json.loads((workdir / "s2.manifest.json").read_text())
    assert manifest["seed"] == 5 and "numpy" in manifest["versions"] and len(manifest["config_hash"]) == 64
    assert pd.read_csv(workdir / "audit.csv").shape[0] == 4 * 3


def test_train_outputs(trained):
    run = trained / "run"
    for name in ("model.ckpt", "history.json", "metrics.json", "manifest.json"):
        assert (run / name).exists()
    manifest = json.loads((run / "manifest.json").read_text())
    assert manifest["seed"] == 3
    assert manifest["config"]["net"]["n_in"] == 32
    assert len(json.loads((run / "history.json").read_text())) == 2


def test_train_reproducible_from_manifest(trained, tmp_path):
    manifest = json.loads((trained / "run" / "manifest.json").read_text())
    cfg = dict(manifest["config"], out=str(tmp_path / "again"))
    (tmp_path / "cfg.json").write_text(json.dumps(cfg))
    assert main(["train", "--config", str(tmp_path / "cfg.json")]) == 0
    a = (trained / "run" / "model.ckpt").read_bytes()
    b = (tmp_path / "again" / "model.ckpt").read_bytes()
    assert a == b


def test_evaluate_outputs(trained):
    out = trained / "eval"
    assert main(["evaluate", "--checkpoint", str(trained / "run" / "model.ckpt"), "--data", str(trained / "lib.csv"),
                 "--split", str(trained / "split.json"), "--out", str(out)]) == 0
    metrics = json.loads((out / "metrics.json").read_text())
    assert set(metrics["standardized"]) == {"mae", "mse", "rmse", "r2", "pearson"}
    pred = pd.read_csv(out / "predictions.csv")
    assert list(pred.columns) == ["index", "lat", "lon", "var0", "var1", "var2"]
    assert len(pred) == metrics["n"]
    assert len((out / "scatter" / "var1.csv").read_text().splitlines()) == metrics["n"] + 1
    # r2 is scale free, so both unit systems agree
    np.testing.assert_allclose(metrics["standardized"]["r2"], metrics["original"]["r2"], atol=1e-9)


def test_gradcam_command(trained):
    out = trained / "curve.csv"
    assert main(["gradcam", "--checkpoint", str(trained / "run" / "model.ckpt"), "--data", str(trained / "lib.csv"),
                 "--split", str(trained / "split.json"), "--var", "var2", "--out", str(out)]) == 0
    curve = pd.read_csv(out)
    assert len(curve) == 32 and curve["weight"].between(0, 1).all()
    assert main(["gradcam", "--checkpoint", str(trained / "run" / "model.ckpt"), "--data", str(trained / "lib.csv"),
                 "--var", "OC", "--out", str(out)]) == 2


def test_map_command(trained):
    assert main(["evaluate", "--checkpoint", str(trained / "run" / "model.ckpt"), "--data", str(trained / "lib.csv"),
                 "--split", str(trained / "split.json"), "--out", str(trained / "eval")]) == 0
    out = trained / "map.pgm"
    assert main(["map", "--pred", str(trained / "eval" / "predictions.csv"), "--coords",
                 str(trained / "eval" / "coords.csv"), "--var", "var0", "--bbox", "35,70,-10,30",
                 "--size", "16x8", "--out", str(out)]) == 0
    assert read_pgm(out).shape == (8, 16)
    side = json.loads(out.with_suffix(".json").read_text())
    pred = pd.read_csv(trained / "eval" / "predictions.csv")
    assert pred["var0"].min() <= side["min"] <= side["max"] <= pred["var0"].max()
    assert main(["map", "--pred", str(trained / "eval" / "predictions.csv"), "--var", "var0",
                 "--size", "ax8", "--out", str(out)]) == 2


def test_simulate_sensor_command(workdir):
    out = workdir / "sim.csv"
    assert main(["simulate-sensor", "--data", str(workdir / "lib.csv"), "--out", str(out),
                 "--dump-sensor", str(workdir / "sensor.json")]) == 0
    frame = pd.read_csv(out)
    bands = [c for c in frame.columns if c[0].isdigit()]
    assert len(bands) == 170
    assert len(json.loads((workdir / "sensor.json").read_text())["bands"]) == 206


def test_grid_and_sensitivity_commands(trained):
    grid = {"base": {"f_min": 400, "f_max": 2500, "f_insz": 32, "p_min": 1, "p_max": 2, "proj_hidden": 4,
                     "epochs": 1, "batch_size": 16},
            "axes": {"leak": [0.0, 0.2], "use_norm": [True, False]}}
    (trained / "grid.json").write_text(json.dumps(grid))
    runs = trained / "runs.jsonl"
    args = ["grid-search", "--grid", str(trained / "grid.json"), "--data", str(trained / "lib.csv"),
            "--split", str(trained / "split.json"), "--out", str(runs), "--workers", "2"]
    assert main(args) == 0
    before = runs.read_bytes()
    assert main(args) == 0
    assert runs.read_bytes() == before
    tables = trained / "tables"
    assert main(["sensitivity", "--runs", str(runs), "--metric", "r2", "--out", str(tables)]) == 0
    leak = pd.read_csv(tables / "leak.csv")
    assert list(leak.columns) == ["param", "value", "var0", "var1", "var2", "global", "runs"]
    assert leak["runs"].tolist() == [2, 2]
    assert (tables / "manifest.json").exists()
