from __future__ import annotations

import numpy as np

from .layers import Layer
from .model import Model


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-5) -> float:
    """max_i |a_i - n_i| / max(|a_i|, |n_i|, floor)."""
    a, n = np.ravel(analytic), np.ravel(numeric)
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom))


def gradient_check(target: Model | Layer, x: np.ndarray, eps: float = 1e-5, train: bool = True,
                   seed: int = 0, check_input: bool = True) -> float:
    """Compare back-propagated gradients with central differences.

    The scalar probed is ``sum(forward(x) * R)`` for a fixed random ``R``.
    Every parameter and (optionally) every input element is perturbed.
    Returns the maximum relative error. Runs in double precision.
    """
    x = np.asarray(x, dtype=np.float64)
    if isinstance(target, Layer):
        model = Model([target], x.shape[1:], seed=seed)
        model.initialize(seed)
    else:
        model = target if target.dtype == np.float64 else target.astype(np.float64)

    rng = np.random.default_rng(seed)
    out = model.forward(x, train=train)
    proj = rng.normal(size=out.shape)

    def probe() -> float:
        return float(np.sum(model.forward(x, train=train) * proj))

    model.zero_grad()
    model.forward(x, train=train)
    grad_x = model.backward(proj)
    analytic = [model.grad.copy()]

    theta = model.theta
    numeric_theta = np.empty_like(theta)
    for i in range(theta.size):
        old = theta[i]
        theta[i] = old + eps
        f_plus = probe()
        theta[i] = old - eps
        f_minus = probe()
        theta[i] = old
        numeric_theta[i] = (f_plus - f_minus) / (2 * eps)
    numeric = [numeric_theta]

    if check_input:
        flat = x.reshape(-1)
        numeric_x = np.empty_like(flat)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + eps
            f_plus = probe()
            flat[i] = old - eps
            f_minus = probe()
            flat[i] = old
            numeric_x[i] = (f_plus - f_minus) / (2 * eps)
        analytic.append(grad_x.reshape(-1))
        numeric.append(numeric_x)

    return max(relative_error(a, n) for a, n in zip(analytic, numeric))
