"""Training loop and evaluation."""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field, fields
from typing import Callable

import numpy as np

from .arch import NetSpec, build_network
from .data import SpectralLibrary, SplitAssignment, TargetScaler, fit_target_scaler
from .losses import QuantileCodec, codec_fit, hybrid_decode, hybrid_loss, l1_loss, l2_loss, split_hybrid_output
from .metrics import global_score, r2, score_table
from .nn import AdamW, Model
from .resample import CropResampleSpec, is_power_of_two, prepare_inputs

logger = logging.getLogger(__name__)

LOSS_KINDS = ("l1", "l2", "hybrid")


class ConfigError(ValueError):
    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class TrainingFailed(RuntimeError):
    def __init__(self, epoch: int, reason: str):
        self.epoch = epoch
        super().__init__(f"epoch {epoch}: {reason}")


@dataclass(frozen=True)
class TrainConfig:
    f_min: float = 450.0
    f_max: float = 2400.0
    f_insz: int = 2048
    leak: float = 0.2
    use_norm: bool = True
    lr: float = 1e-4
    loss_kind: str = "l1"
    epochs: int = 5000
    batch_size: int = 64
    weight_decay: float = 0.01
    seed: int = 0
    p_min: int = 4
    p_max: int = 7
    n_out: int = 4
    proj_hidden: int = 70
    n_refine: int = 1
    n_bins: int = 10
    hybrid_weight: float = 1.0
    momentum: float = 0.01
    dtype: str = "float64"

    def __post_init__(self) -> None:
        problems = config_problems(self)
        if problems:
            raise ConfigError(problems)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError([f"unknown train config field(s): {unknown}"])
        return cls(**d)

    def replace(self, **changes) -> "TrainConfig":
        return TrainConfig(**{**self.to_dict(), **changes})

    @property
    def crop_spec(self) -> CropResampleSpec:
        return CropResampleSpec(self.f_min, self.f_max, self.f_insz)

    def net_spec(self, n_vars: int) -> NetSpec:
        per_var = self.n_bins + 1 if self.loss_kind == "hybrid" else 1
        return NetSpec(n_in=self.f_insz, n_out=self.n_out, p_min=self.p_min, p_max=self.p_max,
                       n_refine=self.n_refine, use_norm=self.use_norm, leak=self.leak,
                       proj_hidden=self.proj_hidden, n_vars=n_vars, outputs_per_var=per_var,
                       momentum=self.momentum)


def config_problems(cfg: TrainConfig) -> list[str]:
    problems = []
    if not cfg.f_min < cfg.f_max:
        problems.append(f"f_min ({cfg.f_min}) must be < f_max ({cfg.f_max})")
    if not is_power_of_two(cfg.f_insz):
        problems.append(f"f_insz must be a power of 2, got {cfg.f_insz}")
    if cfg.loss_kind not in LOSS_KINDS:
        problems.append(f"loss_kind must be one of {LOSS_KINDS}, got {cfg.loss_kind!r}")
    if cfg.lr < 0:
        problems.append("lr must be >= 0")
    if cfg.epochs < 0:
        problems.append("epochs must be >= 0")
    if cfg.batch_size < 1:
        problems.append("batch_size must be >= 1")
    if not 0.0 <= cfg.leak < 1.0:
        problems.append(f"leak must lie in [0, 1), got {cfg.leak}")
    if cfg.dtype not in ("float32", "float64"):
        problems.append("dtype must be float32 or float64")
    if cfg.n_bins < 2:
        problems.append("n_bins must be >= 2")
    return problems


@dataclass
class PreparedData:
    """Network-ready arrays. Targets are standardized with the training-set
    scaler; ``codec`` is set for the hybrid loss."""

    x_train: np.ndarray
    y_train: np.ndarray
    x_val: np.ndarray
    y_val: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray
    wavelengths: np.ndarray
    scaler: TargetScaler
    variable_names: tuple[str, ...]
    codec: QuantileCodec | None = None

    @property
    def n_vars(self) -> int:
        return self.y_train.shape[1]


def prepare_data(lib: SpectralLibrary, split: SplitAssignment, cfg: TrainConfig) -> PreparedData:
    x, wl = prepare_inputs(lib.spectra, lib.wavelengths, cfg.crop_spec)
    tr, va, te = (np.asarray(i, dtype=int) for i in split)
    scaler = fit_target_scaler(lib.targets[tr], lib.variable_names)
    y = scaler.apply(lib.targets)
    codec = codec_fit(y[tr], cfg.n_bins, lib.variable_names) if cfg.loss_kind == "hybrid" else None
    return PreparedData(x[tr], y[tr], x[va], y[va], x[te], y[te], wl, scaler, lib.variable_names, codec)


# --- loss / prediction plumbing --------------------------------------------


def compute_loss(out: np.ndarray, y: np.ndarray, cfg: TrainConfig, codec: QuantileCodec | None):
    if cfg.loss_kind == "l1":
        return l1_loss(out, y)
    if cfg.loss_kind == "l2":
        return l2_loss(out, y)
    n_vars = y.shape[1]
    logits, r_pred = split_hybrid_output(out, n_vars, cfg.n_bins)
    c, r = codec.encode(y)
    loss, g_logits, g_r = hybrid_loss(logits, r_pred, c, r, codec.bins_per_var, cfg.hybrid_weight)
    return loss, np.concatenate([g_logits.reshape(len(y), -1), g_r], axis=1)


def outputs_to_targets(out: np.ndarray, n_vars: int, loss_kind: str, codec: QuantileCodec | None = None,
                       n_bins: int = 10) -> np.ndarray:
    """Network output -> standardized target estimates."""
    if loss_kind != "hybrid":
        return np.asarray(out, dtype=float)
    logits, r_pred = split_hybrid_output(out, n_vars, n_bins)
    return hybrid_decode(codec, logits, r_pred)


def predict(model: Model, x: np.ndarray, cfg: TrainConfig, codec: QuantileCodec | None, n_vars: int,
            batch_size: int = 256) -> np.ndarray:
    return outputs_to_targets(model.predict(x, batch_size), n_vars, cfg.loss_kind, codec, cfg.n_bins)


def evaluate(model: Model, x: np.ndarray, y: np.ndarray, cfg: TrainConfig,
             codec: QuantileCodec | None = None) -> dict[str, list[float]]:
    """All metrics per variable, in standardized target units."""
    return score_table(predict(model, x, cfg, codec, y.shape[1]), y)


def global_r2(pred: np.ndarray, y: np.ndarray) -> float:
    vals = []
    for j in range(y.shape[1]):
        try:
            vals.append(r2(pred[:, j], y[:, j]))
        except ValueError:
            vals.append(float("nan"))
    return global_score(vals)


# --- training loop ----------------------------------------------------------


@dataclass
class TrainResult:
    model: Model
    history: list[dict] = field(default_factory=list)
    best_epoch: int | None = None
    best_val_r2: float | None = None
    seconds: float = 0.0


def build_model(cfg: TrainConfig, n_vars: int) -> Model:
    return build_network(cfg.net_spec(n_vars), seed=cfg.seed, dtype=np.dtype(cfg.dtype))


def train(model: Model, data: PreparedData, cfg: TrainConfig,
          on_epoch: Callable[[dict], None] | None = None) -> TrainResult:
    """Mini-batch AdamW training; the weights with the best validation global
    R2 are restored at the end. Raises :class:`TrainingFailed` on a
    non-finite loss."""
    t0 = time.perf_counter()
    result = TrainResult(model)
    if cfg.epochs == 0:
        return result
    rng = np.random.default_rng([cfg.seed, 1])
    opt = AdamW(model, lr=cfg.lr, weight_decay=cfg.weight_decay)
    x, y = data.x_train, data.y_train
    n = len(x)
    has_val = len(data.x_val) >= 2
    best_snap, best_score = None, -np.inf
    for epoch in range(cfg.epochs):
        perm = rng.permutation(n)
        total, seen = 0.0, 0
        for start in range(0, n, cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            if len(idx) < 2 and cfg.use_norm:
                continue
            model.zero_grad()
            out = model.forward(x[idx], train=True)
            loss, grad = compute_loss(out, y[idx], cfg, data.codec)
            if not np.isfinite(loss):
                raise TrainingFailed(epoch, "non-finite loss")
            model.backward(grad)
            opt.step()
            total += loss * len(idx)
            seen += len(idx)
        record = {"epoch": epoch, "train_loss": total / max(seen, 1)}
        if has_val:
            pred = predict(model, data.x_val, cfg, data.codec, data.n_vars)
            if not np.all(np.isfinite(pred)):
                raise TrainingFailed(epoch, "non-finite validation prediction")
            record["val_r2"] = global_r2(pred, data.y_val)
            score = record["val_r2"] if np.isfinite(record["val_r2"]) else -np.inf
        else:
            score = float(epoch)
        if score > best_score or best_snap is None:
            best_score, best_snap = score, model.snapshot()
            result.best_epoch = epoch
        result.history.append(record)
        if on_epoch is not None:
            on_epoch(record)
    model.restore(best_snap)
    result.best_val_r2 = best_score if has_val else None
    result.seconds = time.perf_counter() - t0
    return result
