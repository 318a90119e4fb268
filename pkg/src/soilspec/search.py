"""Grid search over training configurations with a resumable job store, and
one-parameter-at-a-time sensitivity tables."""

from __future__ import annotations

import csv
import hashlib
import itertools
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from concurrent.futures.process import BrokenProcessPool
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .data import SpectralLibrary, SplitAssignment
from .metrics import METRICS
from .nn import save_checkpoint
from .training import TrainConfig, TrainingFailed, build_model, evaluate, prepare_data, train

logger = logging.getLogger(__name__)

# investigated parameter space of the original study
DEFAULT_AXES: dict[str, list] = {
    "f_min": [450.0, 800.0, 1200.0],
    "f_max": [2300.0, 2400.0, 2500.0],
    "f_insz": [512, 1024, 2048],
    "leak": [0.0, 0.2],
    "use_norm": [True, False],
    "lr": [1e-3, 1e-4],
    "loss_kind": ["l1", "l2", "hybrid"],
}


class SearchError(ValueError):
    pass


def enumerate_grid(axes: dict[str, Sequence], base: TrainConfig | None = None) -> list[TrainConfig]:
    """Cartesian product of ``axes`` over ``base``, in lexicographic order
    (first axis varies slowest)."""
    base = base or TrainConfig()
    for name, values in axes.items():
        if len(values) == 0:
            raise SearchError(f"axis {name!r} is empty")
    names = list(axes)
    configs, seen = [], set()
    for combo in itertools.product(*(axes[n] for n in names)):
        cfg = base.replace(**dict(zip(names, combo)))
        key = run_id(cfg)
        if key in seen:
            raise SearchError(f"duplicate configuration in grid: {dict(zip(names, combo))}")
        seen.add(key)
        configs.append(cfg)
    return configs


def load_grid(path: str | Path) -> tuple[dict[str, list], TrainConfig]:
    """Grid file: ``{"base": {...TrainConfig fields}, "axes": {name: [values]}}``."""
    payload = json.loads(Path(path).read_text())
    base = TrainConfig.from_dict(payload.get("base", {}))
    axes = payload.get("axes", DEFAULT_AXES)
    return axes, base


def run_id(cfg: TrainConfig) -> str:
    blob = json.dumps(cfg.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _clean(value):
    if isinstance(value, float) and not np.isfinite(value):
        return None
    if isinstance(value, dict):
        return {k: _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    return value


class JobStore:
    """Append-only JSON-lines file, one line per state transition. The last
    line for a run id wins."""

    def __init__(self, path: str | Path) -> None:
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)

    def append(self, record: dict) -> None:
        line = json.dumps(_clean(record), sort_keys=True) + "\n"
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(line)
            fh.flush()
            os.fsync(fh.fileno())

    def lines(self) -> list[dict]:
        if not self.path.exists():
            return []
        out = []
        with open(self.path, encoding="utf-8") as fh:
            for raw in fh:
                raw = raw.strip()
                if not raw:
                    continue
                try:
                    out.append(json.loads(raw))
                except json.JSONDecodeError:
                    # torn final line from a crash mid-write
                    logger.warning("%s: skipping unreadable line", self.path)
        return out

    def latest(self) -> dict[str, dict]:
        state: dict[str, dict] = {}
        for rec in self.lines():
            state[rec["run_id"]] = rec
        return state

    def records(self, status: str | None = None) -> list[dict]:
        recs = list(self.latest().values())
        return [r for r in recs if status is None or r["status"] == status]


# --- single run -------------------------------------------------------------


def run_one(cfg: TrainConfig, lib: SpectralLibrary, split: SplitAssignment,
            checkpoint_dir: str | Path | None = None) -> dict:
    """Train one configuration and score it on the validation and test sets."""
    data = prepare_data(lib, split, cfg)
    model = build_model(cfg, data.n_vars)
    result = train(model, data, cfg)
    rec = {
        "val": evaluate(model, data.x_val, data.y_val, cfg, data.codec) if len(data.x_val) >= 2 else None,
        "test": evaluate(model, data.x_test, data.y_test, cfg, data.codec) if len(data.x_test) >= 2 else None,
        "best_epoch": result.best_epoch,
        "variables": list(lib.variable_names),
    }
    if checkpoint_dir is not None:
        path = Path(checkpoint_dir) / f"{run_id(cfg)}.ckpt"
        path.parent.mkdir(parents=True, exist_ok=True)
        save_checkpoint(model, path, step=len(result.history), meta=checkpoint_meta(cfg, data))
        rec["checkpoint"] = str(path)
    return rec


def checkpoint_meta(cfg: TrainConfig, data) -> dict:
    return {
        "train_config": cfg.to_dict(),
        "net_spec": cfg.net_spec(data.n_vars).to_dict(),
        "scaler": data.scaler.to_dict(),
        "codec": data.codec.to_dict() if data.codec is not None else None,
        "variable_names": list(data.variable_names),
        "input_wavelengths": data.wavelengths.tolist(),
    }


def _all_finite(rec: dict) -> bool:
    for part in ("val", "test"):
        table = rec.get(part)
        if table is None:
            continue
        for vals in table.values():
            if not np.all(np.isfinite(np.asarray(vals, dtype=float))):
                return False
    return True


# worker-process globals, set once per process by the pool initializer
_WORKER: dict = {}


def _init_worker(lib, split, train_fn, checkpoint_dir):
    _WORKER.update(lib=lib, split=split, train_fn=train_fn, checkpoint_dir=checkpoint_dir)


def _execute(cfg_dict: dict) -> dict:
    cfg = TrainConfig.from_dict(cfg_dict)
    t0 = time.perf_counter()
    try:
        rec = _WORKER["train_fn"](cfg, _WORKER["lib"], _WORKER["split"], _WORKER["checkpoint_dir"])
    except TrainingFailed as exc:
        return {"status": "failed", "error": str(exc), "failed_epoch": exc.epoch,
                "seconds": time.perf_counter() - t0}
    except Exception as exc:  # a failing run must not take the grid down
        return {"status": "failed", "error": f"{type(exc).__name__}: {exc}", "seconds": time.perf_counter() - t0}
    rec = dict(rec)
    rec["seconds"] = time.perf_counter() - t0
    if not _all_finite(rec):
        rec.update(status="failed", error="non-finite metric")
    else:
        rec["status"] = "done"
    return rec


def run_grid(configs: Iterable[TrainConfig], lib: SpectralLibrary, split: SplitAssignment,
             store_path: str | Path, workers: int = 1,
             train_fn: Callable = run_one, checkpoint_dir: str | Path | None = None,
             retry_failed: bool = True) -> JobStore:
    """Run every configuration not already done in the store.

    Safe to re-invoke after an interruption: done runs are skipped, runs
    left ``pending``/``running`` (and ``failed`` ones, if ``retry_failed``)
    are executed again. Only this process writes to the store.
    """
    store = JobStore(store_path)
    state = store.latest()
    todo = []
    for cfg in configs:
        rid = run_id(cfg)
        prev = state.get(rid)
        if prev is not None and (prev["status"] == "done" or (prev["status"] == "failed" and not retry_failed)):
            continue
        todo.append((rid, cfg))
    if not todo:
        return store
    for rid, cfg in todo:
        store.append({"run_id": rid, "status": "pending", "config": cfg.to_dict()})

    def finish(rid, cfg, rec):
        store.append({"run_id": rid, "config": cfg.to_dict(), **rec})

    if workers <= 1:
        _init_worker(lib, split, train_fn, checkpoint_dir)
        for rid, cfg in todo:
            store.append({"run_id": rid, "status": "running", "config": cfg.to_dict()})
            finish(rid, cfg, _execute(cfg.to_dict()))
        return store

    with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker,
                             initargs=(lib, split, train_fn, checkpoint_dir)) as pool:
        futures = {}
        for k, (rid, cfg) in enumerate(todo):
            try:
                fut = pool.submit(_execute, cfg.to_dict())
            except BrokenProcessPool as exc:
                # a worker died before everything was queued; the rest are retried on resume
                for rid_left, cfg_left in todo[k:]:
                    finish(rid_left, cfg_left, {"status": "failed", "error": f"worker pool broken: {exc}"})
                break
            store.append({"run_id": rid, "status": "running", "config": cfg.to_dict()})
            futures[fut] = (rid, cfg)
        for fut in as_completed(futures):
            rid, cfg = futures[fut]
            try:
                rec = fut.result()
            except BrokenProcessPool as exc:
                rec = {"status": "failed", "error": f"worker crashed: {exc}"}
            finish(rid, cfg, rec)
    return store


# --- sensitivity ------------------------------------------------------------


@dataclass
class SensitivityTable:
    parameter: str
    values: list
    variables: list[str]
    scores: np.ndarray  # (n_values, n_vars) mean metric per value and variable
    counts: list[int]

    @property
    def global_scores(self) -> np.ndarray:
        return self.scores.mean(axis=1)

    def rows(self) -> list[list]:
        return [[self.parameter, v, *row.tolist(), float(g)]
                for v, row, g in zip(self.values, self.scores, self.global_scores)]

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["param", "value", *self.variables, "global", "runs"])
            for row, n in zip(self.rows(), self.counts):
                w.writerow([*row, n])


def _varying_axes(configs: list[dict]) -> list[str]:
    names = list(configs[0])
    return [n for n in names if len({json.dumps(c[n]) for c in configs}) > 1]


def sensitivity_marginals(records: Iterable[dict], metric: str = "r2", axes: Sequence[str] | dict | None = None,
                          split: str = "test") -> list[SensitivityTable]:
    """For each axis, average ``metric`` per variable over all done runs that
    share each axis value.

    ``axes`` defaults to the config fields that vary across the done runs; a
    mapping ``{axis: [values]}`` pins the rows (every value must have runs).
    """
    if metric not in METRICS:
        raise SearchError(f"unknown metric {metric!r}")
    done = [r for r in records if r.get("status") == "done"]
    if not done:
        raise SearchError("no done runs")
    configs = [r["config"] for r in done]
    if axes is None:
        axes = _varying_axes(configs) or list(DEFAULT_AXES)
    variables = done[0].get("variables") or [str(j) for j in range(len(done[0][split][metric]))]
    scores = np.array([r[split][metric] for r in done], dtype=float)
    tables = []
    for axis in axes:
        if axis not in configs[0]:
            raise SearchError(f"unknown axis {axis!r}")
        if isinstance(axes, dict):
            values = list(axes[axis])
        else:
            values = []
            for c in configs:
                if c[axis] not in values:
                    values.append(c[axis])
            try:
                values.sort()
            except TypeError:
                pass
        rows, counts = [], []
        for v in values:
            mask = np.array([c[axis] == v for c in configs])
            if not mask.any():
                raise SearchError(f"axis {axis!r} has no done runs for value {v!r}")
            rows.append(scores[mask].mean(axis=0))
            counts.append(int(mask.sum()))
        tables.append(SensitivityTable(axis, values, list(variables), np.array(rows), counts))
    return tables


def metric_table(records: Iterable[dict], metric: str = "r2", split: str = "test") -> dict[str, list[float]]:
    """run id -> per-variable metric for done runs."""
    return {r["run_id"]: r[split][metric] for r in records if r.get("status") == "done"}
