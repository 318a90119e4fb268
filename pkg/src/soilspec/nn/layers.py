"""Layer objects. Parameters are bound by :class:`~soilspec.nn.model.Model`
as views into its flat parameter and gradient stores."""

from __future__ import annotations

import math

import numpy as np

from . import functional as F


class Layer:
    kind = "layer"

    def __init__(self) -> None:
        self.p: dict[str, np.ndarray] = {}
        self.g: dict[str, np.ndarray] = {}
        self.buf: dict[str, np.ndarray] = {}
        self._cache = None

    # (name, shape, weight-decay flag)
    def param_shapes(self) -> list[tuple[str, tuple[int, ...], bool]]:
        return []

    def buffer_shapes(self) -> list[tuple[str, tuple[int, ...]]]:
        return []

    def init(self, rng: np.random.Generator) -> None:
        pass

    def output_shape(self, in_shape: tuple[int, ...]) -> tuple[int, ...]:
        return in_shape

    def forward(self, x: np.ndarray, train: bool) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def config(self) -> dict:
        return {}

    def to_dict(self) -> dict:
        return {"kind": self.kind, **self.config()}

    def __repr__(self) -> str:
        args = ", ".join(f"{k}={v}" for k, v in self.config().items())
        return f"{type(self).__name__}({args})"


def _kaiming_uniform(rng, shape, fan_in):
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Conv1d(Layer):
    kind = "conv1d"

    def __init__(self, in_ch: int, out_ch: int, kernel: int, stride: int = 1, padding: int = 0,
                 bias: bool = True) -> None:
        super().__init__()
        self.in_ch, self.out_ch = in_ch, out_ch
        self.kernel, self.stride, self.padding = kernel, stride, padding
        self.bias = bias

    def param_shapes(self):
        shapes = [("weight", (self.out_ch, self.in_ch, self.kernel), True)]
        if self.bias:
            shapes.append(("bias", (self.out_ch,), False))
        return shapes

    def init(self, rng):
        self.p["weight"][...] = _kaiming_uniform(rng, self.p["weight"].shape, self.in_ch * self.kernel)
        if self.bias:
            self.p["bias"][...] = 0.0

    def output_shape(self, in_shape):
        ch, length = in_shape
        if ch != self.in_ch:
            raise F.ShapeError(f"{self!r} got {ch} input channels")
        return (self.out_ch, F.conv1d_output_length(length, self.kernel, self.stride, self.padding))

    def forward(self, x, train):
        y, self._cache = F.conv1d_forward(x, self.p["weight"], self.p.get("bias"), self.stride, self.padding)
        return y

    def backward(self, grad):
        gx, gw, gb = F.conv1d_backward(grad, self.p["weight"], self._cache)
        self.g["weight"] += gw
        if self.bias:
            self.g["bias"] += gb
        return gx

    def config(self):
        return {"in_ch": self.in_ch, "out_ch": self.out_ch, "kernel": self.kernel,
                "stride": self.stride, "padding": self.padding, "bias": self.bias}


class BatchNorm(Layer):
    """Batch normalization for (B, C, L) maps or (B, F) vectors."""

    kind = "batchnorm"

    def __init__(self, n_features: int, momentum: float = 0.01, eps: float = 1e-5) -> None:
        super().__init__()
        self.n_features, self.momentum, self.eps = n_features, momentum, eps

    def param_shapes(self):
        return [("gamma", (self.n_features,), False), ("beta", (self.n_features,), False)]

    def buffer_shapes(self):
        return [("running_mean", (self.n_features,)), ("running_var", (self.n_features,))]

    def init(self, rng):
        self.p["gamma"][...] = 1.0
        self.p["beta"][...] = 0.0
        self.buf["running_mean"][...] = 0.0
        self.buf["running_var"][...] = 1.0

    def output_shape(self, in_shape):
        if in_shape[0] != self.n_features:
            raise F.ShapeError(f"{self!r} got {in_shape[0]} channels")
        return in_shape

    def forward(self, x, train):
        y, self._cache = F.batchnorm_forward(
            x, self.p["gamma"], self.p["beta"], self.buf.get("running_mean"), self.buf.get("running_var"),
            train, self.momentum, self.eps)
        return y

    def backward(self, grad):
        gx, gg, gb = F.batchnorm_backward(grad, self.p["gamma"], self._cache)
        self.g["gamma"] += gg
        self.g["beta"] += gb
        return gx

    def config(self):
        return {"n_features": self.n_features, "momentum": self.momentum, "eps": self.eps}


class LeakyReLU(Layer):
    """``leak == 0`` is a plain ReLU."""

    kind = "leaky_relu"

    def __init__(self, leak: float = 0.0) -> None:
        super().__init__()
        if not 0.0 <= leak < 1.0:
            raise ValueError(f"leak must lie in [0, 1), got {leak}")
        self.leak = leak

    def forward(self, x, train):
        self._cache = x
        return F.leaky_relu(x, self.leak)

    def backward(self, grad):
        return grad * F.leaky_relu_grad(self._cache, self.leak)

    def config(self):
        return {"leak": self.leak}


class Flatten(Layer):
    kind = "flatten"

    def output_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, x, train):
        self._cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad):
        return grad.reshape(self._cache)


class Linear(Layer):
    kind = "linear"

    def __init__(self, in_features: int, out_features: int) -> None:
        super().__init__()
        self.in_features, self.out_features = in_features, out_features

    def param_shapes(self):
        return [("weight", (self.out_features, self.in_features), True),
                ("bias", (self.out_features,), False)]

    def init(self, rng):
        self.p["weight"][...] = _kaiming_uniform(rng, self.p["weight"].shape, self.in_features)
        self.p["bias"][...] = 0.0

    def output_shape(self, in_shape):
        if in_shape != (self.in_features,):
            raise F.ShapeError(f"{self!r} got input shape {in_shape}")
        return (self.out_features,)

    def forward(self, x, train):
        self._cache = x
        return F.linear_forward(x, self.p["weight"], self.p["bias"])

    def backward(self, grad):
        gx, gw, gb = F.linear_backward(grad, self._cache, self.p["weight"])
        self.g["weight"] += gw
        self.g["bias"] += gb
        return gx

    def config(self):
        return {"in_features": self.in_features, "out_features": self.out_features}


LAYER_TYPES = {cls.kind: cls for cls in (Conv1d, BatchNorm, LeakyReLU, Flatten, Linear)}


def layer_from_dict(d: dict) -> Layer:
    d = dict(d)
    cls = LAYER_TYPES[d.pop("kind")]
    return cls(**d)
