"""``soilspec`` command-line entry point.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
Every subcommand that produces files also writes a manifest next to them.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from .arch import BEST_MODEL, REAL_CASE_MODEL, ArchError, NetSpec, build_network, summary
from .config import apply_overrides, load_config_file, resolve_config, write_manifest
from .data import (SplitAssignment, TargetScaler, audit_max_deviation, load_library, quantile_audit, save_library,
                   stratified_split)
from .interpret import gradcam_average
from .losses import QuantileCodec
from .maps import RasterSpec, emit_raster, emit_scatter, idw_interpolate
from .nn import load_checkpoint, save_checkpoint
from .metrics import score_table
from .resample import SensorConfig, default_prisma_config, prepare_inputs, sensor_library
from .search import JobStore, checkpoint_meta, enumerate_grid, load_grid, run_grid, sensitivity_marginals
from .training import ConfigError, TrainConfig, build_model, evaluate, predict, prepare_data, train

logger = logging.getLogger("soilspec")


class UsageError(Exception):
    """Bad command-line input detected after argument parsing."""


def _manifest_for(out: Path) -> Path:
    """Directory outputs get ``manifest.json`` inside; file outputs get
    ``<stem>.manifest.json`` beside them."""
    if out.suffix == "" or out.is_dir():
        return out / "manifest.json"
    return out.with_name(out.stem + ".manifest.json")


def _args_dict(args: argparse.Namespace) -> dict:
    return {k: v for k, v in vars(args).items() if k not in ("func", "argv")}


# --- split ------------------------------------------------------------------


def cmd_split(args) -> int:
    lib = load_library(args.data)
    split = stratified_split(lib, tuple(args.fractions), seed=args.seed, n_strat_bins=args.bins, method=args.method)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    split.to_json(out)
    table = quantile_audit(lib, split, args.bins)
    outputs = [str(out)]
    if args.audit:
        _write_audit(table, lib.variable_names, args.audit)
        outputs.append(args.audit)
    dev = audit_max_deviation(table)
    print(f"train/val/test = {len(split.indices_train)}/{len(split.indices_val)}/{len(split.indices_test)}; "
          f"max bin deviation {dev:.2f} pp")
    write_manifest(_manifest_for(out), "split", args.argv, _args_dict(args), args.seed, outputs)
    return 0


def _write_audit(table: dict, names, path) -> None:
    rows = []
    for part, per_var in table.items():
        for name, pct in zip(names, per_var):
            rows.append({"split": part, "variable": name, **{f"bin{i}": float(v) for i, v in enumerate(pct)}})
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(rows).to_csv(path, index=False)


# --- train ------------------------------------------------------------------


def _engine_config(args, require=()):
    user = load_config_file(args.config) if args.config else {}
    overrides = list(args.set or [])
    for flag, key in (("data", "data.library"), ("split", "split.path"), ("out", "out"), ("seed", "seed"),
                      ("epochs", "train.epochs"), ("sensor", "sensor")):
        value = getattr(args, flag, None)
        if value is not None:
            overrides.append(f"{key}={json.dumps(value)}")
    return resolve_config(apply_overrides(user, overrides), require=require)


def cmd_train(args) -> int:
    eng = _engine_config(args, require=("data.library", "out"))
    out = Path(eng.out)
    out.mkdir(parents=True, exist_ok=True)
    lib = load_library(eng.library, eng.targets)
    if eng.sensor:
        lib = sensor_library(lib, SensorConfig.from_json(eng.sensor))
    if eng.split_path:
        split = SplitAssignment.from_json(eng.split_path)
        if split.n_samples != lib.n_samples:
            raise UsageError(f"split covers {split.n_samples} samples but the library has {lib.n_samples}")
    else:
        split = stratified_split(lib, eng.fractions, seed=eng.seed, n_strat_bins=eng.n_strat_bins,
                                 method=eng.split_method)
        split.to_json(out / "split.json")
    cfg = eng.train
    data = prepare_data(lib, split, cfg)
    model = build_model(cfg, data.n_vars)
    logger.info("training %d parameters for %d epochs", model.n_params, cfg.epochs)

    def progress(rec):
        if rec["epoch"] % max(1, args.log_every) == 0:
            logger.info("epoch %d loss %.5g val_r2 %s", rec["epoch"], rec["train_loss"], rec.get("val_r2"))

    result = train(model, data, cfg, on_epoch=progress)
    save_checkpoint(model, out / "model.ckpt", step=len(result.history), meta=checkpoint_meta(cfg, data))
    metrics = {"best_epoch": result.best_epoch, "best_val_r2": result.best_val_r2, "seconds": result.seconds,
               "variables": list(lib.variable_names)}
    for part, x, y in (("val", data.x_val, data.y_val), ("test", data.x_test, data.y_test)):
        if len(x) >= 2:
            metrics[part] = evaluate(model, x, y, cfg, data.codec)
    (out / "history.json").write_text(json.dumps(result.history))
    (out / "metrics.json").write_text(json.dumps(_jsonable(metrics), indent=1))
    write_manifest(out / "manifest.json", "train", args.argv, eng.to_dict(), eng.seed,
                   ["model.ckpt", "history.json", "metrics.json"])
    print(f"best epoch {result.best_epoch}, val global R2 {result.best_val_r2}")
    return 0


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


# --- checkpoint helpers -----------------------------------------------------


def _load_trained(path):
    model, manifest = load_checkpoint(path)
    meta = manifest.get("meta") or {}
    if "train_config" not in meta:
        raise UsageError(f"{path}: checkpoint lacks training metadata")
    cfg = TrainConfig.from_dict(meta["train_config"])
    codec = QuantileCodec.from_dict(meta["codec"], cfg.n_bins) if meta.get("codec") else None
    return model, cfg, codec, meta


def _subset_indices(split_path, which: str, n: int) -> np.ndarray:
    if split_path is None:
        return np.arange(n)
    split = SplitAssignment.from_json(split_path)
    if split.n_samples != n:
        raise UsageError(f"split covers {split.n_samples} samples but the library has {n}")
    return np.asarray({"train": split.indices_train, "val": split.indices_val, "test": split.indices_test}[which])


def _model_inputs(lib, cfg: TrainConfig, meta: dict) -> np.ndarray:
    x, wl = prepare_inputs(lib.spectra, lib.wavelengths, cfg.crop_spec)
    expected = meta.get("input_wavelengths")
    if expected is not None and not np.allclose(wl, expected, rtol=0, atol=1e-6):
        raise UsageError("library wavelength grid differs from the one the model was trained on")
    return x


# --- evaluate ---------------------------------------------------------------


def cmd_evaluate(args) -> int:
    model, cfg, codec, meta = _load_trained(args.checkpoint)
    lib = load_library(args.data, meta.get("variable_names"))
    scaler = TargetScaler.from_dict(meta["scaler"])
    idx = _subset_indices(args.split, args.subset, lib.n_samples)
    x = _model_inputs(lib, cfg, meta)[idx]
    names = list(lib.variable_names)
    y_std = scaler.apply(lib.targets[idx])
    pred_std = predict(model, x, cfg, codec, len(names))
    pred = scaler.invert(pred_std)
    truth = lib.targets[idx]
    out = Path(args.out)
    (out / "scatter").mkdir(parents=True, exist_ok=True)
    metrics = {"subset": args.subset, "n": int(len(idx)), "variables": names,
               "standardized": score_table(pred_std, y_std), "original": score_table(pred, truth)}
    (out / "metrics.json").write_text(json.dumps(_jsonable(metrics), indent=1))
    frame = pd.DataFrame({"index": idx})
    if lib.coords is not None:
        frame["lat"], frame["lon"] = lib.coords[idx, 0], lib.coords[idx, 1]
        pd.DataFrame({"index": idx, "lat": lib.coords[idx, 0], "lon": lib.coords[idx, 1]}).to_csv(
            out / "coords.csv", index=False)
    for j, name in enumerate(names):
        frame[name] = pred[:, j]
        emit_scatter(pred[:, j], truth[:, j], out / "scatter" / f"{_safe(name)}.csv")
    frame.to_csv(out / "predictions.csv", index=False)
    write_manifest(out / "manifest.json", "evaluate", args.argv, _args_dict(args), meta["train_config"]["seed"],
                   ["metrics.json", "predictions.csv", "scatter/"])
    r2s = metrics["standardized"]["r2"]
    finite = [v for v in r2s if np.isfinite(v)]
    print(f"{args.subset}: n={len(idx)} global R2 {np.mean(finite) if finite else float('nan'):.4f}")
    return 0


def _safe(name: str) -> str:
    return "".join(c if c.isalnum() or c in "-_." else "_" for c in name)


# --- grid-search / sensitivity ---------------------------------------------


def cmd_grid_search(args) -> int:
    axes, base = load_grid(args.grid)
    if args.epochs is not None:
        base = base.replace(epochs=args.epochs)
    configs = enumerate_grid(axes, base)
    lib = load_library(args.data)
    split = SplitAssignment.from_json(args.split)
    if split.n_samples != lib.n_samples:
        raise UsageError(f"split covers {split.n_samples} samples but the library has {lib.n_samples}")
    store = run_grid(configs, lib, split, args.out, workers=args.workers, checkpoint_dir=args.checkpoints)
    recs = store.records()
    done = sum(r["status"] == "done" for r in recs)
    failed = sum(r["status"] == "failed" for r in recs)
    write_manifest(_manifest_for(Path(args.out)), "grid-search", args.argv,
                   {"grid": json.loads(Path(args.grid).read_text()), **_args_dict(args)}, base.seed, [args.out])
    print(f"{len(configs)} configurations: {done} done, {failed} failed")
    return 0 if failed == 0 else 1


def cmd_sensitivity(args) -> int:
    records = JobStore(args.runs).records()
    tables = sensitivity_marginals(records, metric=args.metric, axes=args.axes, split=args.subset)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for t in tables:
        name = f"{t.parameter}.csv"
        t.to_csv(out / name)
        written.append(name)
        print(f"{t.parameter}: " + ", ".join(f"{v}={g:.4f}" for v, g in zip(t.values, t.global_scores)))
    write_manifest(out / "manifest.json", "sensitivity", args.argv, _args_dict(args), None, written)
    return 0


# --- sensor simulation ------------------------------------------------------


def cmd_simulate_sensor(args) -> int:
    cfg = SensorConfig.from_json(args.sensor) if args.sensor else default_prisma_config()
    if args.dump_sensor:
        cfg.to_json(args.dump_sensor)
    lib = load_library(args.data)
    sim = sensor_library(lib, cfg)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_library(sim, out)
    write_manifest(_manifest_for(out), "simulate-sensor", args.argv,
                   {**_args_dict(args), "sensor_config": cfg.to_dict()}, None, [str(out)])
    print(f"{sim.n_samples} spectra simulated on {sim.n_bands} bands")
    return 0


# --- gradcam / map ----------------------------------------------------------


def cmd_gradcam(args) -> int:
    model, cfg, codec, meta = _load_trained(args.checkpoint)
    lib = load_library(args.data, meta.get("variable_names"))
    names = list(lib.variable_names)
    if args.var not in names:
        raise UsageError(f"unknown variable {args.var!r}; choose from {names}")
    j = names.index(args.var)
    idx = _subset_indices(args.split, args.subset, lib.n_samples)
    x = _model_inputs(lib, cfg, meta)[idx]
    if args.limit:
        x = x[:args.limit]
    # hybrid networks: explain the offset output of the variable
    col = len(names) * cfg.n_bins + j if cfg.loss_kind == "hybrid" else j
    stage = args.stage
    if stage is not None and stage.isdigit():
        stage = f"Block {int(stage)}"
    curve = gradcam_average(model, x, j, target_stage=stage,
                            wavelengths=np.asarray(meta["input_wavelengths"]), output_index=col)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    curve.to_csv(out)
    write_manifest(_manifest_for(out), "gradcam", args.argv, _args_dict(args), meta["train_config"]["seed"],
                   [str(out)])
    peak = curve.wavelengths[int(np.argmax(curve.weights))]
    print(f"{args.var}: {len(x)} spectra, peak importance at {peak:.1f} nm")
    return 0


def _parse_bbox(text: str) -> tuple[float, float, float, float]:
    parts = text.replace(" ", ",").split(",")
    parts = [p for p in parts if p]
    if len(parts) != 4:
        raise argparse.ArgumentTypeError("bbox must be lat_min,lat_max,lon_min,lon_max")
    try:
        return tuple(float(p) for p in parts)
    except ValueError:
        raise argparse.ArgumentTypeError("bbox values must be numbers") from None


def _parse_size(text: str) -> tuple[int, int]:
    try:
        w, h = text.lower().split("x")
        return int(w), int(h)
    except ValueError:
        raise argparse.ArgumentTypeError("size must look like 200x150") from None


def cmd_map(args) -> int:
    pred = pd.read_csv(args.pred)
    if args.var not in pred.columns:
        raise UsageError(f"{args.pred} has no column {args.var!r}")
    if args.coords:
        coords = pd.read_csv(args.coords)
        if "index" in pred.columns and "index" in coords.columns:
            frame = pred.drop(columns=[c for c in ("lat", "lon") if c in pred.columns]).merge(
                coords[["index", "lat", "lon"]], on="index", how="inner")
        else:
            if len(coords) != len(pred):
                raise UsageError("prediction and coordinate files differ in length and share no index column")
            frame = pred.assign(lat=coords["lat"].to_numpy(), lon=coords["lon"].to_numpy())
    else:
        frame = pred
    if not {"lat", "lon"} <= set(frame.columns):
        raise UsageError("no lat/lon columns: pass --coords")
    points = frame[["lat", "lon", args.var]].dropna().to_numpy(dtype=float)
    if len(points) == 0:
        raise UsageError("no points to interpolate")
    if args.bbox is None:
        lat_min, lat_max = points[:, 0].min(), points[:, 0].max()
        lon_min, lon_max = points[:, 1].min(), points[:, 1].max()
    else:
        lat_min, lat_max, lon_min, lon_max = args.bbox
    width, height = args.size
    spec = RasterSpec(lat_min, lat_max, lon_min, lon_max, width, height, args.power, args.vmin, args.vmax)
    grid = idw_interpolate(points, spec)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    emit_raster(grid, out, spec.vmin, spec.vmax, extra={"variable": args.var, "bbox": [lat_min, lat_max, lon_min,
                                                                                       lon_max],
                                                        "power": args.power, "n_points": int(len(points))})
    np.savetxt(out.with_suffix(".csv"), grid, delimiter=",", fmt="%.10g")
    write_manifest(_manifest_for(out), "map", args.argv, _args_dict(args), None,
                   [str(out), str(out.with_suffix(".json")), str(out.with_suffix(".csv"))])
    print(f"{width}x{height} raster from {len(points)} points, range [{grid.min():.4g}, {grid.max():.4g}]")
    return 0


# --- summary ----------------------------------------------------------------


def cmd_summary(args) -> int:
    if args.spec:
        try:
            spec = NetSpec.from_json(args.spec)
        except FileNotFoundError:
            raise UsageError(f"spec file not found: {args.spec}") from None
        except (TypeError, json.JSONDecodeError, ArchError) as exc:
            raise ConfigError([f"{args.spec}: {exc}"]) from None
    else:
        spec = {"best": BEST_MODEL, "real-case": REAL_CASE_MODEL}[args.preset]
    text = summary(build_network(spec))
    print(text)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "summary.txt").write_text(text + "\n")
        write_manifest(out / "manifest.json", "summary", args.argv, {"net": spec.to_dict()}, None, ["summary.txt"])
    return 0


# --- parser -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="soilspec", description="Soil property regression from reflectance spectra.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", metavar="command", required=True)

    s = sub.add_parser("split", help="stratified train/val/test split of a library")
    s.add_argument("--data", required=True, help="library CSV")
    s.add_argument("--out", required=True, help="split JSON to write")
    s.add_argument("--fractions", type=float, nargs=3, default=(0.8, 0.1, 0.1), metavar=("TRAIN", "VAL", "TEST"))
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--bins", type=int, default=10, help="quantile bins per variable")
    s.add_argument("--method", choices=("joint", "pivot"), default="joint")
    s.add_argument("--audit", help="optional CSV with per-split bin percentages")
    s.set_defaults(func=cmd_split)

    t = sub.add_parser("train", help="train one network from an engine config")
    t.add_argument("--config", help="engine config JSON")
    t.add_argument("--data", help="library CSV (overrides data.library)")
    t.add_argument("--split", help="split JSON (overrides split.path)")
    t.add_argument("--sensor", help="sensor config JSON; spectra are simulated first")
    t.add_argument("--out", help="output directory (overrides out)")
    t.add_argument("--seed", type=int)
    t.add_argument("--epochs", type=int)
    t.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override any config field")
    t.add_argument("--log-every", type=int, default=10)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="score a checkpoint and write predictions")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--split", help="split JSON; without it the whole library is used")
    e.add_argument("--subset", choices=("train", "val", "test"), default="test")
    e.add_argument("--out", required=True, help="output directory")
    e.set_defaults(func=cmd_evaluate)

    g = sub.add_parser("grid-search", help="run a configuration grid with a resumable job store")
    g.add_argument("--grid", required=True, help='grid JSON {"base": {...}, "axes": {...}}')
    g.add_argument("--data", required=True)
    g.add_argument("--split", required=True)
    g.add_argument("--out", required=True, help="job store (JSON lines)")
    g.add_argument("--workers", type=int, default=1)
    g.add_argument("--epochs", type=int, help="override the epoch budget of every run")
    g.add_argument("--checkpoints", help="directory for per-run checkpoints")
    g.set_defaults(func=cmd_grid_search)

    m = sub.add_parser("sensitivity", help="per-parameter marginal tables from a job store")
    m.add_argument("--runs", required=True)
    m.add_argument("--metric", default="r2", choices=("mae", "mse", "rmse", "r2", "pearson"))
    m.add_argument("--subset", choices=("val", "test"), default="test")
    m.add_argument("--axes", nargs="+", help="parameters to tabulate (default: those that vary)")
    m.add_argument("--out", required=True, help="output directory")
    m.set_defaults(func=cmd_sensitivity)

    r = sub.add_parser("simulate-sensor", help="resample a library onto satellite bands")
    r.add_argument("--data", required=True)
    r.add_argument("--sensor", help="sensor config JSON (default: built-in PRISMA-like)")
    r.add_argument("--dump-sensor", help="also write the sensor config used to this path")
    r.add_argument("--out", required=True, help="simulated library CSV")
    r.set_defaults(func=cmd_simulate_sensor)

    c = sub.add_parser("gradcam", help="averaged Grad-CAM importance curve")
    c.add_argument("--checkpoint", required=True)
    c.add_argument("--data", required=True)
    c.add_argument("--split", help="split JSON; without it the whole library is used")
    c.add_argument("--subset", choices=("train", "val", "test"), default="test")
    c.add_argument("--var", required=True, help="target variable name")
    c.add_argument("--stage", help="block index (0-based) or stage name; default last block")
    c.add_argument("--limit", type=int, help="use at most this many spectra")
    c.add_argument("--out", required=True, help="curve CSV")
    c.set_defaults(func=cmd_gradcam)

    a = sub.add_parser("map", help="IDW raster of predictions")
    a.add_argument("--pred", required=True, help="CSV with an index column and one column per variable")
    a.add_argument("--coords", help="CSV with index, lat, lon (optional if --pred has lat/lon)")
    a.add_argument("--var", required=True)
    a.add_argument("--bbox", type=_parse_bbox, help="lat_min,lat_max,lon_min,lon_max (default: data extent)")
    a.add_argument("--size", type=_parse_size, default=(200, 200), help="WxH pixels")
    a.add_argument("--power", type=float, default=2.0)
    a.add_argument("--vmin", type=float)
    a.add_argument("--vmax", type=float)
    a.add_argument("--out", required=True, help="PGM file")
    a.set_defaults(func=cmd_map)

    y = sub.add_parser("summary", help="print the architecture table of a network spec")
    src = y.add_mutually_exclusive_group(required=True)
    src.add_argument("--spec", help="NetSpec JSON")
    src.add_argument("--preset", choices=("best", "real-case"))
    y.add_argument("--out", help="directory for summary.txt and a manifest")
    y.set_defaults(func=cmd_summary)
    return p


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    args.argv = argv
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print("configuration error:", file=sys.stderr)
        for problem in exc.problems:
            print(f"  - {problem}", file=sys.stderr)
        return 2
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, RuntimeError, KeyError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
