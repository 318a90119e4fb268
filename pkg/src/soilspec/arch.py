"""Building-block network family: composition rules, closed-form parameter
and field-of-view accounting, and model construction."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .nn import BatchNorm, Conv1d, Flatten, LeakyReLU, Linear, Model
from .resample import is_power_of_two


class ArchError(ValueError):
    pass


@dataclass(frozen=True)
class BlockSpec:
    ch_in: int
    ch_out: int
    n_refine: int = 1
    use_norm: bool = True
    leak: float = 0.2

    def __post_init__(self) -> None:
        if self.ch_in < 1 or self.ch_out < 1:
            raise ArchError("channel counts must be >= 1")
        if self.n_refine < 0:
            raise ArchError("n_refine must be >= 0")
        if not 0.0 <= self.leak < 1.0:
            raise ArchError("leak must lie in [0, 1)")


@dataclass(frozen=True)
class NetSpec:
    n_in: int
    n_out: int = 4
    p_min: int = 4
    p_max: int = 7
    n_refine: int = 1
    use_norm: bool = True
    leak: float = 0.2
    proj_hidden: int = 70
    n_vars: int = 12
    # extra outputs per variable (the hybrid loss needs n_bins logits + 1 offset)
    outputs_per_var: int = 1
    momentum: float = 0.01

    def __post_init__(self) -> None:
        problems = netspec_problems(self)
        if problems:
            raise ArchError("; ".join(problems))

    @property
    def n_blocks(self) -> int:
        return num_blocks(self.n_in, self.n_out)

    @property
    def n_outputs(self) -> int:
        return self.n_vars * self.outputs_per_var

    def blocks(self) -> list[BlockSpec]:
        specs, ch = [], 1
        for i in range(self.n_blocks):
            f = filters_for_block(i, self.p_min, self.p_max)
            specs.append(BlockSpec(ch, f, self.n_refine, self.use_norm, self.leak))
            ch = f
        return specs

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "NetSpec":
        return cls(**d)

    @classmethod
    def from_json(cls, path: str | Path) -> "NetSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))


def netspec_problems(spec: NetSpec) -> list[str]:
    problems = []
    if not is_power_of_two(spec.n_in):
        problems.append(f"n_in must be a power of 2, got {spec.n_in}")
    if not is_power_of_two(spec.n_out):
        problems.append(f"n_out must be a power of 2, got {spec.n_out}")
    if not problems and spec.n_in <= spec.n_out:
        problems.append(f"n_in ({spec.n_in}) must exceed n_out ({spec.n_out})")
    if spec.p_min < 0 or spec.p_min > spec.p_max:
        problems.append(f"need 0 <= p_min <= p_max, got p_min={spec.p_min}, p_max={spec.p_max}")
    if spec.n_refine < 0:
        problems.append("n_refine must be >= 0")
    if not 0.0 <= spec.leak < 1.0:
        problems.append(f"leak must lie in [0, 1), got {spec.leak}")
    if spec.proj_hidden < 0:
        problems.append("proj_hidden must be >= 0")
    if spec.n_vars < 1 or spec.outputs_per_var < 1:
        problems.append("n_vars and outputs_per_var must be >= 1")
    return problems


# --- closed forms -----------------------------------------------------------


def num_blocks(n_in: int, n_out: int) -> int:
    if not (is_power_of_two(n_in) and is_power_of_two(n_out)):
        raise ArchError(f"n_in and n_out must be a power of 2, got {n_in}, {n_out}")
    if n_in <= n_out:
        raise ArchError(f"n_in ({n_in}) must exceed n_out ({n_out})")
    return int(n_in).bit_length() - int(n_out).bit_length()


def filters_for_block(i: int, p_min: int, p_max: int) -> int:
    """Filter count of the zero-based block ``i``."""
    if i < 0:
        raise ArchError("block index must be >= 0")
    return 2 ** min(i + p_min, p_max)


def block_param_count(spec: BlockSpec, with_bias: bool = True) -> int:
    norm = 1 if spec.use_norm else 0
    down = 4 * spec.ch_in * spec.ch_out + norm * 2 * spec.ch_out
    ref = 3 * spec.ch_out * spec.ch_out + norm * 2 * spec.ch_out
    total = down + spec.n_refine * ref
    if with_bias:
        total += spec.ch_out * (1 + spec.n_refine)
    return total


def projection_param_count(spec: NetSpec) -> int:
    flat = filters_for_block(spec.n_blocks - 1, spec.p_min, spec.p_max) * spec.n_out
    if spec.proj_hidden == 0:
        return flat * spec.n_outputs + spec.n_outputs
    h = spec.proj_hidden
    return flat * h + h + (2 * h if spec.use_norm else 0) + h * spec.n_outputs + spec.n_outputs


def closed_form_param_count(spec: NetSpec) -> int:
    return sum(block_param_count(b, with_bias=True) for b in spec.blocks()) + projection_param_count(spec)


def block_fov(n_refine: int) -> int:
    return 4 + 3 * n_refine


def net_fov(n_blocks: int, n_refine: int) -> int:
    """Field of view of the last block, as given by the family's composition
    formula ``2 * N_b * (4 + 3N)``."""
    return 2 * n_blocks * block_fov(n_refine)


def receptive_field(n_blocks: int, n_refine: int) -> int:
    """Exact receptive field (in input samples) of one last-block output.

    Diagnostic only: the stride-aware recurrence ``r += (k - 1) * jump`` over
    every convolution. It differs from :func:`net_fov`.
    """
    r, jump = 1, 1
    for _ in range(n_blocks):
        r += 3 * jump
        jump *= 2
        for _ in range(n_refine):
            r += 2 * jump
    return r


# --- construction -----------------------------------------------------------


def build_network(spec: NetSpec, seed: int = 0, dtype=np.float64) -> Model:
    """Input (1 x n_in) -> blocks -> flatten -> [linear -> BN -> act] -> linear."""
    layers, stages = [], [("Input", "Input", 0)]
    for i, block in enumerate(spec.blocks()):
        layers.append(Conv1d(block.ch_in, block.ch_out, kernel=4, stride=2, padding=1))
        if block.use_norm:
            layers.append(BatchNorm(block.ch_out, momentum=spec.momentum))
        layers.append(LeakyReLU(block.leak))
        for _ in range(block.n_refine):
            layers.append(Conv1d(block.ch_out, block.ch_out, kernel=3, stride=1, padding=1))
            if block.use_norm:
                layers.append(BatchNorm(block.ch_out, momentum=spec.momentum))
            layers.append(LeakyReLU(block.leak))
        stages.append((f"Block {i + 1}", "Block", len(layers)))
    layers.append(Flatten())
    flat = filters_for_block(spec.n_blocks - 1, spec.p_min, spec.p_max) * spec.n_out
    if spec.proj_hidden:
        layers.append(Linear(flat, spec.proj_hidden))
        op = "Linear+LReLU"
        if spec.use_norm:
            layers.append(BatchNorm(spec.proj_hidden, momentum=spec.momentum))
            op = "Linear+BN+LReLU"
        layers.append(LeakyReLU(spec.leak))
        stages.append(("Hidden", op, len(layers)))
        flat = spec.proj_hidden
    layers.append(Linear(flat, spec.n_outputs))
    stages.append(("Output", "Linear", len(layers)))
    model = Model(layers, (1, spec.n_in), stages, seed=seed, dtype=dtype)
    if model.layer_shapes[stages[spec.n_blocks][2]] != (filters_for_block(spec.n_blocks - 1, spec.p_min, spec.p_max), spec.n_out):
        raise ArchError("block chain does not end at n_out")
    return model


def count_params(model: Model) -> int:
    return int(sum(info.size for info in model.params))


def stage_shapes(model: Model) -> list[tuple[int, ...]]:
    return [s.shape for s in model.stages]


def stage_param_counts(model: Model) -> list[int]:
    counts, start = [], 0
    for st in model.stages:
        counts.append(sum(info.size for info in model.params if start <= info.layer < st.end))
        start = st.end
    return counts


def summary(model: Model) -> str:
    """Text table: stage, operation, output size, parameters."""
    rows = [("Stage", "Operation", "Output size", "Params")]
    for st, n in zip(model.stages, stage_param_counts(model)):
        if st.operation == "Input":
            stage, op = "Pre-processing", "Input"
        elif st.operation == "Block":
            stage, op = "Encoding", st.name
        else:
            stage, op = "Projection", st.operation
        rows.append((stage, op, " x ".join(str(d) for d in st.shape), f"{n:,}"))
    widths = [max(len(r[i]) for r in rows) for i in range(4)]
    lines = []
    for j, r in enumerate(rows):
        lines.append("  ".join(c.ljust(w) if i < 3 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths))))
        if j == 0:
            lines.append("-" * len(lines[0]))
    lines.append("-" * len(lines[0]))
    lines.append(f"Total parameters: {count_params(model):,}")
    return "\n".join(lines)


BEST_MODEL = NetSpec(n_in=2048, n_out=4, p_min=4, p_max=7, n_refine=1, use_norm=True, leak=0.2,
                     proj_hidden=70, n_vars=12)
REAL_CASE_MODEL = NetSpec(n_in=128, n_out=4, p_min=4, p_max=7, n_refine=1, use_norm=True, leak=0.2,
                          proj_hidden=70, n_vars=12)
