from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .functional import ShapeError
from .layers import Layer, layer_from_dict


@dataclass(frozen=True)
class ParamInfo:
    name: str
    layer: int
    key: str
    offset: int
    shape: tuple[int, ...]
    decay: bool

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))


@dataclass(frozen=True)
class Stage:
    name: str
    operation: str
    end: int  # index one past the stage's last layer
    shape: tuple[int, ...]


class Model:
    """Sequential network over a flat parameter vector ``theta``.

    Every layer parameter is a view into ``theta`` (and its gradient a view
    into ``grad``); batch-norm running statistics live in ``state``. Updating
    ``theta`` in place therefore updates the layers.
    """

    def __init__(self, layers: list[Layer], in_shape: tuple[int, ...],
                 stages: list[tuple[str, str, int]] | None = None,
                 seed: int = 0, dtype=np.float64, init: bool = True) -> None:
        self.layers = list(layers)
        self.in_shape = tuple(in_shape)
        self.seed = int(seed)
        self.dtype = np.dtype(dtype)

        shapes = [self.in_shape]
        for layer in self.layers:
            shapes.append(tuple(layer.output_shape(shapes[-1])))
        self.layer_shapes = shapes

        params, buffers, p_off, b_off = [], [], 0, 0
        for i, layer in enumerate(self.layers):
            for key, shape, decay in layer.param_shapes():
                params.append(ParamInfo(f"{i}.{layer.kind}.{key}", i, key, p_off, tuple(shape), decay))
                p_off += params[-1].size
            for key, shape in layer.buffer_shapes():
                buffers.append(ParamInfo(f"{i}.{layer.kind}.{key}", i, key, b_off, tuple(shape), False))
                b_off += buffers[-1].size
        self.params, self.buffers = params, buffers
        self.theta = np.zeros(p_off, dtype=self.dtype)
        self.grad = np.zeros(p_off, dtype=self.dtype)
        self.state = np.zeros(b_off, dtype=self.dtype)
        self._bind()

        if stages is None:
            stages = [(f"layer {i + 1}", layer.kind, i + 1) for i, layer in enumerate(self.layers)]
        self.stages = [Stage(name, op, end, shapes[end]) for name, op, end in stages]
        if init:
            self.initialize()

    def _bind(self) -> None:
        for info in self.params:
            layer = self.layers[info.layer]
            sl = slice(info.offset, info.offset + info.size)
            layer.p[info.key] = self.theta[sl].reshape(info.shape)
            layer.g[info.key] = self.grad[sl].reshape(info.shape)
        for info in self.buffers:
            sl = slice(info.offset, info.offset + info.size)
            self.layers[info.layer].buf[info.key] = self.state[sl].reshape(info.shape)

    def initialize(self, seed: int | None = None) -> None:
        rng = np.random.default_rng(self.seed if seed is None else seed)
        for layer in self.layers:
            layer.init(rng)

    @property
    def out_shape(self) -> tuple[int, ...]:
        return self.layer_shapes[-1]

    @property
    def n_params(self) -> int:
        return self.theta.size

    def decay_mask(self) -> np.ndarray:
        mask = np.zeros(self.theta.size, dtype=bool)
        for info in self.params:
            if info.decay:
                mask[info.offset:info.offset + info.size] = True
        return mask

    def param_at(self, flat_index: int) -> ParamInfo:
        for info in self.params:
            if info.offset <= flat_index < info.offset + info.size:
                return info
        raise IndexError(flat_index)

    def zero_grad(self) -> None:
        self.grad[...] = 0.0

    def forward(self, x: np.ndarray, train: bool = False, keep: bool = False) -> np.ndarray:
        """Run the network. With ``keep=True`` every layer output is stored in
        ``self.activations`` (index i is the input of layer i)."""
        x = np.asarray(x, dtype=self.dtype)
        if x.shape[1:] != self.in_shape:
            if x.shape == self.in_shape:
                x = x[None]
            elif len(self.in_shape) == 2 and self.in_shape[0] == 1 and x.shape[1:] == self.in_shape[1:]:
                x = x[:, None, :]
            else:
                raise ShapeError(f"model expects input {self.in_shape}, got {x.shape[1:]}")
        acts = [x] if keep else None
        for layer in self.layers:
            x = layer.forward(x, train)
            if keep:
                acts.append(x)
        self.activations = acts
        return x

    def backward(self, grad: np.ndarray, stop: int = 0) -> np.ndarray:
        """Back-propagate ``grad`` (d loss / d output), accumulating parameter
        gradients. Returns the gradient w.r.t. the input of layer ``stop``."""
        grad = np.asarray(grad, dtype=self.dtype)
        for layer in reversed(self.layers[stop:]):
            grad = layer.backward(grad)
        return grad

    def predict(self, x: np.ndarray, batch_size: int = 256) -> np.ndarray:
        outs = [self.forward(x[i:i + batch_size], train=False) for i in range(0, len(x), batch_size)]
        return np.concatenate(outs, axis=0)

    def snapshot(self) -> tuple[np.ndarray, np.ndarray]:
        return self.theta.copy(), self.state.copy()

    def restore(self, snap: tuple[np.ndarray, np.ndarray]) -> None:
        self.theta[...] = snap[0]
        self.state[...] = snap[1]

    def stage_index(self, name_or_index) -> int:
        if isinstance(name_or_index, (int, np.integer)):
            return int(name_or_index)
        for i, st in enumerate(self.stages):
            if st.name == name_or_index:
                return i
        raise KeyError(name_or_index)

    def describe(self) -> dict:
        return {
            "in_shape": list(self.in_shape),
            "seed": self.seed,
            "dtype": self.dtype.str,
            "layers": [layer.to_dict() for layer in self.layers],
            "stages": [[s.name, s.operation, s.end] for s in self.stages],
        }

    @classmethod
    def from_description(cls, d: dict, dtype=None) -> "Model":
        layers = [layer_from_dict(ld) for ld in d["layers"]]
        return cls(layers, tuple(d["in_shape"]), [tuple(s) for s in d["stages"]],
                   seed=d.get("seed", 0), dtype=dtype or np.dtype(d.get("dtype", "<f8")), init=False)

    def astype(self, dtype) -> "Model":
        other = Model.from_description(self.describe(), dtype=dtype)
        other.theta[...] = self.theta
        other.state[...] = self.state
        return other
