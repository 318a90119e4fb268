from __future__ import annotations

import numpy as np

from .model import Model


class NonFiniteGradient(FloatingPointError):
    pass


class AdamW:
    """Adam with decoupled weight decay over a model's flat parameter vector.

    ``p <- p - lr * m_hat / (sqrt(v_hat) + eps) - lr * wd * p``; the decay term
    is skipped for biases and batch-norm gamma/beta.
    """

    def __init__(self, model: Model, lr: float = 1e-4, weight_decay: float = 0.01,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8) -> None:
        if lr < 0:
            raise ValueError("lr must be non-negative")
        self.model = model
        self.lr, self.weight_decay = lr, weight_decay
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.m = np.zeros_like(model.theta)
        self.v = np.zeros_like(model.theta)
        self.step_count = 0
        self._decay = model.decay_mask()

    def step(self) -> None:
        theta, g = self.model.theta, self.model.grad
        if not np.all(np.isfinite(g)):
            bad = int(np.flatnonzero(~np.isfinite(g))[0])
            raise NonFiniteGradient(f"non-finite gradient in {self.model.param_at(bad).name}")
        self.step_count += 1
        t = self.step_count
        self.m *= self.beta1
        self.m += (1.0 - self.beta1) * g
        self.v *= self.beta2
        self.v += (1.0 - self.beta2) * g * g
        m_hat = self.m / (1.0 - self.beta1 ** t)
        v_hat = self.v / (1.0 - self.beta2 ** t)
        update = self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
        if self.weight_decay:
            update += np.where(self._decay, self.lr * self.weight_decay * theta, 0.0)
        theta -= update.astype(theta.dtype, copy=False)
