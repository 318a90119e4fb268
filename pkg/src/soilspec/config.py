"""Declarative engine configuration shared by the command-line tools.

Schema (JSON, every section optional)::

    {
      "seed": 0,
      "data": {"library": "lib.csv", "targets": null},
      "split": {"path": null, "fractions": [0.8, 0.1, 0.1], "n_strat_bins": 10, "method": "joint"},
      "crop": {"f_min": 450, "f_max": 2400, "f_insz": 2048},
      "net": {"n_in": 2048, "n_out": 4, "p_min": 4, "p_max": 7, "n_refine": 1,
              "use_norm": true, "leak": 0.2, "proj_hidden": 70},
      "train": {"lr": 1e-4, "loss_kind": "l1", "epochs": 5000, "batch_size": 64,
                "weight_decay": 0.01, "n_bins": 10, "hybrid_weight": 1.0,
                "momentum": 0.01, "dtype": "float64"},
      "sensor": null,
      "out": "runs/example"
    }

``net.n_in`` defaults to ``crop.f_insz`` and must equal it when both are given.
The top-level seed drives both the split and the training run.
"""

from __future__ import annotations

import copy
import hashlib
import json
import platform
import sys
from dataclasses import dataclass, fields
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .training import ConfigError, TrainConfig

SECTIONS = ("seed", "data", "split", "crop", "net", "train", "sensor", "out")
DATA_KEYS = ("library", "targets")
SPLIT_KEYS = ("path", "fractions", "n_strat_bins", "method")
CROP_KEYS = ("f_min", "f_max", "f_insz")
NET_KEYS = ("n_in", "n_out", "p_min", "p_max", "n_refine", "use_norm", "leak", "proj_hidden")
TRAIN_KEYS = tuple(f.name for f in fields(TrainConfig)
                   if f.name not in CROP_KEYS + NET_KEYS + ("seed",))


def default_config() -> dict:
    d = TrainConfig().to_dict()
    return {
        "seed": 0,
        "data": {"library": None, "targets": None},
        "split": {"path": None, "fractions": [0.8, 0.1, 0.1], "n_strat_bins": 10, "method": "joint"},
        "crop": {k: d[k] for k in CROP_KEYS},
        "net": {"n_in": None, **{k: d[k] for k in NET_KEYS if k != "n_in"}},
        "train": {k: d[k] for k in TRAIN_KEYS},
        "sensor": None,
        "out": None,
    }


@dataclass(frozen=True)
class EngineConfig:
    seed: int
    library: str | None
    targets: tuple[str, ...] | None
    split_path: str | None
    fractions: tuple[float, float, float]
    n_strat_bins: int
    split_method: str
    train: TrainConfig
    sensor: str | None
    out: str | None
    raw: dict

    def to_dict(self) -> dict:
        return copy.deepcopy(self.raw)

    def hash(self) -> str:
        return config_hash(self.raw)


def config_hash(d: dict) -> str:
    blob = json.dumps(d, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(cfg: dict, assignments: list[str]) -> dict:
    """Apply ``section.key=value`` (or ``key=value`` for top-level fields)
    assignments; values are parsed as JSON when possible."""
    cfg = copy.deepcopy(cfg)
    for item in assignments:
        if "=" not in item:
            raise ConfigError([f"override {item!r} is not of the form section.key=value"])
        key, value = item.split("=", 1)
        parts = key.strip().split(".")
        if len(parts) == 1:
            cfg[parts[0]] = _parse_value(value)
        elif len(parts) == 2:
            section = cfg.setdefault(parts[0], {})
            if not isinstance(section, dict):
                raise ConfigError([f"override {item!r}: {parts[0]!r} is not a section"])
            section[parts[1]] = _parse_value(value)
        else:
            raise ConfigError([f"override {item!r}: keys nest at most one level"])
    return cfg


def merge(base: dict, update: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in update.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = {**out[k], **v}
        else:
            out[k] = copy.deepcopy(v)
    return out


def load_config_file(path: str | Path) -> dict:
    try:
        payload = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError([f"config file not found: {path}"]) from None
    except json.JSONDecodeError as exc:
        raise ConfigError([f"config file {path} is not valid JSON: {exc}"]) from None
    if not isinstance(payload, dict):
        raise ConfigError([f"config file {path} must hold a JSON object"])
    return payload


def _unknown(section: str, given: dict, allowed) -> list[str]:
    return [f"{section}.{k}: unknown field" for k in sorted(set(given) - set(allowed))]


def _path_problem(field_name: str, value, must_exist: bool) -> list[str]:
    if value is None or not must_exist:
        return []
    return [] if Path(value).exists() else [f"{field_name}: path does not exist: {value}"]


def resolve_config(user: dict, check_paths: bool = True, require: tuple[str, ...] = ()) -> EngineConfig:
    """Merge ``user`` over the defaults and validate everything at once.

    Raises :class:`ConfigError` listing every violated field. ``require``
    names fields (``"data.library"``, ``"out"``...) that must be set.
    """
    problems = [f"{k}: unknown section" for k in sorted(set(user) - set(SECTIONS))]
    for section in ("data", "split", "crop", "net", "train"):
        if section in user and not isinstance(user[section], dict):
            problems.append(f"{section}: must be an object")
    if problems:
        raise ConfigError(problems)
    cfg = merge(default_config(), user)
    data, split, crop, net, trn = (cfg[s] for s in ("data", "split", "crop", "net", "train"))
    problems += _unknown("data", data, DATA_KEYS)
    problems += _unknown("split", split, SPLIT_KEYS)
    problems += _unknown("crop", crop, CROP_KEYS)
    problems += _unknown("net", net, NET_KEYS)
    if "seed" in trn:
        problems.append("train.seed: set the top-level seed instead")
    problems += _unknown("train", {k: v for k, v in trn.items() if k != "seed"}, TRAIN_KEYS)

    for name in require:
        section, _, key = name.partition(".")
        value = cfg.get(section) if not key else cfg.get(section, {}).get(key)
        if value is None:
            problems.append(f"{name}: required")

    problems += _path_problem("data.library", data.get("library"), check_paths)
    problems += _path_problem("split.path", split.get("path"), check_paths)
    problems += _path_problem("sensor", cfg.get("sensor"), check_paths)

    seed = cfg.get("seed")
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        problems.append(f"seed: must be a non-negative integer, got {seed!r}")
        seed = 0
    fractions = split.get("fractions")
    if not (isinstance(fractions, (list, tuple)) and len(fractions) == 3
            and all(isinstance(f, (int, float)) and f >= 0 for f in fractions)
            and abs(sum(fractions) - 1.0) < 1e-9):
        problems.append(f"split.fractions: need three non-negative numbers summing to 1, got {fractions!r}")
        fractions = (0.8, 0.1, 0.1)
    if split.get("method") not in ("joint", "pivot"):
        problems.append(f"split.method: must be 'joint' or 'pivot', got {split.get('method')!r}")
    if not isinstance(split.get("n_strat_bins"), int) or split["n_strat_bins"] < 1:
        problems.append(f"split.n_strat_bins: must be a positive integer, got {split.get('n_strat_bins')!r}")

    if net.get("n_in") is None:
        net["n_in"] = crop.get("f_insz")
    elif net["n_in"] != crop.get("f_insz"):
        problems.append(f"crop.f_insz ({crop.get('f_insz')}) must equal net.n_in ({net['n_in']})")

    merged = {**{k: v for k, v in trn.items() if k in TRAIN_KEYS},
              **{k: v for k, v in crop.items() if k in CROP_KEYS},
              **{k: v for k, v in net.items() if k in NET_KEYS and k != "n_in"},
              "seed": seed}
    train_cfg = None
    try:
        train_cfg = TrainConfig(**merged)
    except ConfigError as exc:
        problems += [_qualify(p) for p in exc.problems]
    except TypeError as exc:
        problems.append(str(exc))
    if train_cfg is not None:
        try:
            train_cfg.net_spec(1)
        except ValueError as exc:
            problems += [f"net: {p}" for p in str(exc).split("; ")]

    if problems:
        raise ConfigError(problems)
    targets = data.get("targets")
    return EngineConfig(
        seed=seed,
        library=data.get("library"),
        targets=tuple(targets) if targets else None,
        split_path=split.get("path"),
        fractions=tuple(float(f) for f in fractions),
        n_strat_bins=int(split["n_strat_bins"]),
        split_method=split["method"],
        train=train_cfg,
        sensor=cfg.get("sensor"),
        out=cfg.get("out"),
        raw=cfg,
    )


def _qualify(problem: str) -> str:
    """Prefix a TrainConfig problem with the section its field lives in."""
    head = problem.split(" ", 1)[0]
    for section, keys in (("crop", CROP_KEYS), ("net", NET_KEYS), ("train", TRAIN_KEYS)):
        if head in keys:
            return f"{section}.{problem}"
    return problem


def versions() -> dict:
    from . import __version__

    import pandas

    return {"soilspec": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "pandas": pandas.__version__}


def write_manifest(path: str | Path, command: str, argv: list[str], config: dict, seed: int | None,
                   outputs: list[str] | None = None) -> Path:
    """Record what produced an output: the resolved configuration, its hash,
    the seed, the command line and library versions."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "argv": list(argv),
        "config": config,
        "config_hash": config_hash(config),
        "seed": seed,
        "versions": versions(),
        "platform": sys.platform,
        "created": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "outputs": outputs or [],
    }
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True, default=str))
    return path


__all__ = ["EngineConfig", "apply_overrides", "config_hash", "default_config", "load_config_file",
           "merge", "resolve_config", "write_manifest"]
