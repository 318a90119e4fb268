"""Regression metrics. ``x`` is the prediction, ``y`` the reference."""

from __future__ import annotations

import numpy as np

METRICS = ("mae", "mse", "rmse", "r2", "pearson")
# direction in which each metric improves
HIGHER_IS_BETTER = {"mae": False, "mse": False, "rmse": False, "r2": True, "pearson": True}


class MetricError(ValueError):
    pass


def _pair(x, y, min_n: int = 1):
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.shape != y.shape:
        raise MetricError(f"shape mismatch: {x.shape} vs {y.shape}")
    if x.size < min_n:
        raise MetricError(f"need at least {min_n} samples")
    return x, y


def mae(x, y) -> float:
    x, y = _pair(x, y)
    return float(np.mean(np.abs(x - y)))


def mse(x, y) -> float:
    x, y = _pair(x, y)
    return float(np.mean((x - y) ** 2))


def rmse(x, y) -> float:
    return float(np.sqrt(mse(x, y)))


def r2(x, y) -> float:
    """Coefficient of determination ``1 - SS_res / SS_tot``."""
    x, y = _pair(x, y, min_n=2)
    ss_tot = np.sum((y - y.mean()) ** 2)
    if ss_tot == 0:
        raise MetricError("r2 undefined: reference has zero variance")
    return float(1.0 - np.sum((y - x) ** 2) / ss_tot)


def pearson(x, y) -> float:
    x, y = _pair(x, y, min_n=2)
    dx, dy = x - x.mean(), y - y.mean()
    sx, sy = np.sqrt(np.sum(dx * dx)), np.sqrt(np.sum(dy * dy))
    if sx == 0 or sy == 0:
        raise MetricError("pearson undefined: zero variance")
    return float(np.sum(dx * dy) / (sx * sy))


_FUNCS = {"mae": mae, "mse": mse, "rmse": rmse, "r2": r2, "pearson": pearson}


def metric(name: str):
    try:
        return _FUNCS[name]
    except KeyError:
        raise MetricError(f"unknown metric {name!r}") from None


def score_table(pred: np.ndarray, target: np.ndarray, names=None) -> dict[str, list[float]]:
    """All metrics per column. Undefined values (e.g. Pearson on a constant
    prediction) are reported as NaN."""
    pred = np.atleast_2d(np.asarray(pred, dtype=float))
    target = np.atleast_2d(np.asarray(target, dtype=float))
    out = {}
    for m in METRICS:
        vals = []
        for j in range(target.shape[1]):
            try:
                vals.append(_FUNCS[m](pred[:, j], target[:, j]))
            except MetricError:
                vals.append(float("nan"))
        out[m] = vals
    return out


def global_score(values) -> float:
    return float(np.mean(values))
