"""Training losses: l1, l2 and the quantile classification + regression
hybrid. Each loss returns ``(value, d value / d prediction)``."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import assign_bins, quantile_edges


class LossError(ValueError):
    pass


def _check_pair(pred, target):
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise LossError(f"shape mismatch: {pred.shape} vs {target.shape}")
    if pred.size == 0:
        raise LossError("empty input")
    return pred, target


def l1_loss(pred, target):
    pred, target = _check_pair(pred, target)
    diff = pred - target
    return float(np.mean(np.abs(diff))), np.sign(diff) / diff.size


def l2_loss(pred, target):
    pred, target = _check_pair(pred, target)
    diff = pred - target
    return float(np.mean(diff ** 2)), 2.0 * diff / diff.size


# --- quantile codec ---------------------------------------------------------


@dataclass(frozen=True)
class QuantileCodec:
    """Per-variable equal-mass bin edges.

    A value ``v`` is coded as a bin index ``c`` and an offset
    ``r = (v - edge_c) / (edge_{c+1} - edge_c)``. Bins are half-open except
    the last, which is closed so the largest training value round-trips.
    """

    edges: tuple[np.ndarray, ...]
    n_bins: int
    variable_names: tuple[str, ...] = ()

    @property
    def bins_per_var(self) -> list[int]:
        return [len(e) - 1 for e in self.edges]

    def encode(self, values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """``values`` is (n_samples, n_vars) or (n_vars,)."""
        v = np.asarray(values, dtype=float)
        single = v.ndim == 1
        v = np.atleast_2d(v)
        c = np.empty(v.shape, dtype=int)
        r = np.empty(v.shape)
        for j, edges in enumerate(self.edges):
            cj = assign_bins(v[:, j], edges)
            lo, hi = edges[cj], edges[cj + 1]
            c[:, j] = cj
            r[:, j] = np.clip((v[:, j] - lo) / (hi - lo), 0.0, 1.0)
        return (c[0], r[0]) if single else (c, r)

    def decode(self, c: np.ndarray, r: np.ndarray) -> np.ndarray:
        c = np.atleast_1d(np.asarray(c, dtype=int))
        r = np.atleast_1d(np.asarray(r, dtype=float))
        single = c.ndim == 1
        c, r = np.atleast_2d(c), np.atleast_2d(r)
        out = np.empty(c.shape)
        for j, edges in enumerate(self.edges):
            cj = np.clip(c[:, j], 0, len(edges) - 2)
            out[:, j] = edges[cj] + r[:, j] * (edges[cj + 1] - edges[cj])
        return out[0] if single else out

    def to_dict(self) -> list[dict]:
        names = self.variable_names or tuple(str(j) for j in range(len(self.edges)))
        return [{"variable": n, "edges": e.tolist()} for n, e in zip(names, self.edges)]

    @classmethod
    def from_dict(cls, items: list[dict], n_bins: int | None = None) -> "QuantileCodec":
        edges = tuple(np.asarray(it["edges"], dtype=float) for it in items)
        return cls(edges, n_bins or max(len(e) - 1 for e in edges), tuple(it["variable"] for it in items))

    def to_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def from_json(cls, path: str | Path) -> "QuantileCodec":
        return cls.from_dict(json.loads(Path(path).read_text()))


def codec_fit(train_values: np.ndarray, n_bins: int = 10, variable_names: Sequence[str] = ()) -> QuantileCodec:
    y = np.asarray(train_values, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    edges = []
    for j in range(y.shape[1]):
        distinct = np.unique(y[:, j]).size
        if distinct < n_bins:
            raise LossError(f"variable {j} has {distinct} distinct values, fewer than {n_bins} bins")
        edges.append(quantile_edges(y[:, j], n_bins))
    return QuantileCodec(tuple(edges), n_bins, tuple(variable_names))


def codec_encode(codec: QuantileCodec, v):
    return codec.encode(v)


def codec_decode(codec: QuantileCodec, c, r):
    return codec.decode(c, r)


# --- hybrid loss ------------------------------------------------------------


def split_hybrid_output(out: np.ndarray, n_vars: int, n_bins: int):
    """Network output (batch, n_vars * (n_bins + 1)) -> logits (batch, n_vars,
    n_bins) and offsets (batch, n_vars)."""
    out = np.asarray(out)
    if out.shape[-1] != n_vars * (n_bins + 1):
        raise LossError(f"hybrid output has {out.shape[-1]} columns, expected {n_vars * (n_bins + 1)}")
    logits = out[:, :n_vars * n_bins].reshape(-1, n_vars, n_bins)
    return logits, out[:, n_vars * n_bins:]


def _masked_log_softmax(logits, valid):
    z = np.where(valid, logits, -np.inf)
    z = z - z.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    return np.where(valid, z - lse, -np.inf)


def hybrid_loss(logits, r_pred, c, r, bins_per_var: Sequence[int] | None = None, weight: float = 1.0):
    """Cross-entropy on the bin index plus ``weight * |r_pred - r|``, averaged
    over samples and variables.

    ``logits`` is (batch, n_vars, n_bins); ``r_pred``, ``c``, ``r`` are
    (batch, n_vars). Classes beyond a variable's bin count are masked out.
    Returns ``(loss, grad_logits, grad_r_pred)``.
    """
    logits = np.asarray(logits, dtype=float)
    r_pred = np.asarray(r_pred, dtype=float)
    c = np.asarray(c, dtype=int)
    r = np.asarray(r, dtype=float)
    if logits.ndim != 3 or r_pred.shape != logits.shape[:2] or c.shape != r_pred.shape or r.shape != r_pred.shape:
        raise LossError("hybrid_loss shape mismatch")
    batch, n_vars, n_bins = logits.shape
    if bins_per_var is None:
        bins_per_var = [n_bins] * n_vars
    valid = np.arange(n_bins)[None, None, :] < np.asarray(bins_per_var)[None, :, None]
    logp = _masked_log_softmax(logits, valid)
    picked = np.take_along_axis(logp, c[..., None], axis=-1)[..., 0]
    count = batch * n_vars
    ce = -picked.sum() / count
    reg = np.abs(r_pred - r).sum() / count
    prob = np.where(valid, np.exp(logp), 0.0)
    onehot = np.zeros_like(prob)
    np.put_along_axis(onehot, c[..., None], 1.0, axis=-1)
    grad_logits = (prob - onehot) / count
    grad_r = weight * np.sign(r_pred - r) / count
    return float(ce + weight * reg), grad_logits, grad_r


def hybrid_decode(codec: QuantileCodec, logits, r_pred, eps: float = 1e-6) -> np.ndarray:
    """Inference: arg-max bin plus the clamped offset."""
    logits = np.asarray(logits, dtype=float)
    n_bins = logits.shape[-1]
    valid = np.arange(n_bins)[None, None, :] < np.asarray(codec.bins_per_var)[None, :, None]
    c = np.argmax(np.where(valid, logits, -np.inf), axis=-1)
    r = np.clip(np.asarray(r_pred, dtype=float), 0.0, 1.0 - eps)
    return codec.decode(c, r)
