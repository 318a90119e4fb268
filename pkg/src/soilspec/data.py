"""Spectral library ingestion, stratified splitting and standardization."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

COORD_COLUMNS = ("lat", "lon")


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class SpectralLibrary:
    wavelengths: np.ndarray
    spectra: np.ndarray
    targets: np.ndarray
    variable_names: tuple[str, ...]
    coords: np.ndarray | None = None
    dropped_count: int = 0

    def __post_init__(self) -> None:
        wl = np.asarray(self.wavelengths, dtype=float)
        spectra = np.atleast_2d(np.asarray(self.spectra, dtype=float))
        targets = np.asarray(self.targets, dtype=float)
        if targets.ndim == 1:
            targets = targets[:, None]
        if wl.ndim != 1 or wl.size == 0:
            raise DataError("wavelengths must be a non-empty 1-D array")
        if np.any(np.diff(wl) <= 0):
            raise DataError("wavelengths must be strictly increasing")
        if spectra.shape[1] != wl.size:
            raise DataError(f"spectra have {spectra.shape[1]} bands, wavelength grid has {wl.size}")
        if not np.all(np.isfinite(spectra)):
            raise DataError("spectra contain non-finite values")
        if targets.shape[0] != spectra.shape[0]:
            raise DataError("targets and spectra disagree on sample count")
        if targets.shape[1] != len(self.variable_names):
            raise DataError("variable_names length does not match target columns")
        if not np.all(np.isfinite(targets)):
            raise DataError("targets contain non-finite values")
        coords = self.coords
        if coords is not None:
            coords = np.asarray(coords, dtype=float)
            if coords.shape != (spectra.shape[0], 2):
                raise DataError("coords must be n_samples x 2 (lat, lon)")
        object.__setattr__(self, "wavelengths", wl)
        object.__setattr__(self, "spectra", spectra)
        object.__setattr__(self, "targets", targets)
        object.__setattr__(self, "variable_names", tuple(self.variable_names))
        object.__setattr__(self, "coords", coords)

    @property
    def n_samples(self) -> int:
        return self.spectra.shape[0]

    @property
    def n_bands(self) -> int:
        return self.wavelengths.size

    @property
    def n_vars(self) -> int:
        return len(self.variable_names)

    def subset(self, indices: Sequence[int]) -> "SpectralLibrary":
        idx = np.asarray(indices, dtype=int)
        return SpectralLibrary(
            self.wavelengths,
            self.spectra[idx],
            self.targets[idx],
            self.variable_names,
            None if self.coords is None else self.coords[idx],
        )

    def variable_index(self, name: str) -> int:
        try:
            return self.variable_names.index(name)
        except ValueError:
            raise KeyError(f"unknown variable {name!r}; have {list(self.variable_names)}") from None


def _parse_wavelength(header: str) -> float | None:
    try:
        value = float(header)
    except (TypeError, ValueError):
        return None
    return value if np.isfinite(value) else None


def load_library(path: str | Path, targets: Sequence[str] | None = None) -> SpectralLibrary:
    """Read a spectral library CSV.

    Numeric headers are band centers in nm. Named columns are targets unless
    they are ``lat``/``lon``; ``targets`` restricts (and orders) the target
    columns. Rows with a missing spectral or target value are dropped.
    """
    path = Path(path)
    try:
        frame = pd.read_csv(path)
    except pd.errors.EmptyDataError:
        raise DataError(f"{path}: zero usable rows") from None
    except pd.errors.ParserError as exc:
        raise DataError(f"{path}: malformed CSV ({exc})") from None

    band_cols, band_wl, named = [], [], []
    for col in frame.columns:
        wl = _parse_wavelength(col)
        if wl is None:
            named.append(col)
        else:
            band_cols.append(col)
            band_wl.append(wl)
    if not band_cols:
        raise DataError(f"{path}: no numeric wavelength headers")
    if np.any(np.diff(band_wl) <= 0):
        raise DataError(f"{path}: wavelength headers are not strictly increasing")

    has_coords = all(c in frame.columns for c in COORD_COLUMNS)
    if targets is None:
        targets = [c for c in named if c not in COORD_COLUMNS]
    else:
        missing = [t for t in targets if t not in frame.columns]
        if missing:
            raise DataError(f"{path}: target columns not found: {missing}")
    if not targets:
        raise DataError(f"{path}: no target columns")

    used = band_cols + list(targets) + (list(COORD_COLUMNS) if has_coords else [])
    block = frame[used].apply(pd.to_numeric, errors="coerce")
    keep = np.isfinite(block[band_cols + list(targets)].to_numpy(dtype=float)).all(axis=1)
    dropped = int((~keep).sum())
    if not keep.any():
        raise DataError(f"{path}: zero usable rows")
    if dropped:
        logger.info("%s: dropped %d rows with missing values", path, dropped)
    block = block[keep]
    return SpectralLibrary(
        wavelengths=np.asarray(band_wl),
        spectra=block[band_cols].to_numpy(dtype=float),
        targets=block[list(targets)].to_numpy(dtype=float),
        variable_names=tuple(targets),
        coords=block[list(COORD_COLUMNS)].to_numpy(dtype=float) if has_coords else None,
        dropped_count=dropped,
    )


def save_library(lib: SpectralLibrary, path: str | Path) -> None:
    cols = {f"{w:g}": lib.spectra[:, i] for i, w in enumerate(lib.wavelengths)}
    frame = pd.DataFrame(cols)
    for j, name in enumerate(lib.variable_names):
        frame[name] = lib.targets[:, j]
    if lib.coords is not None:
        frame["lat"] = lib.coords[:, 0]
        frame["lon"] = lib.coords[:, 1]
    frame.to_csv(path, index=False, float_format="%.10g")


# --- quantile binning -------------------------------------------------------


def quantile_edges(values: np.ndarray, n_bins: int) -> np.ndarray:
    """Equal-mass bin edges; coincident quantiles are merged, so heavily tied
    variables end up with fewer than ``n_bins`` bins."""
    values = np.asarray(values, dtype=float)
    edges = np.quantile(values, np.linspace(0.0, 1.0, n_bins + 1))
    return np.unique(edges)


def assign_bins(values: np.ndarray, edges: np.ndarray) -> np.ndarray:
    """Bin index of each value; bins are half-open except the last, values
    outside the edge range clamp to the first/last bin."""
    n_bins = max(len(edges) - 1, 1)
    idx = np.searchsorted(edges, values, side="right") - 1
    return np.clip(idx, 0, n_bins - 1)


# --- splitting --------------------------------------------------------------


@dataclass(frozen=True)
class SplitAssignment:
    indices_train: np.ndarray
    indices_val: np.ndarray
    indices_test: np.ndarray
    fractions: tuple[float, float, float]
    seed: int
    n_strat_bins: int
    method: str = "joint"

    def __iter__(self):
        return iter((self.indices_train, self.indices_val, self.indices_test))

    @property
    def n_samples(self) -> int:
        return sum(len(i) for i in self)

    def to_json(self, path: str | Path) -> None:
        payload = {
            "seed": self.seed,
            "fractions": list(self.fractions),
            "n_strat_bins": self.n_strat_bins,
            "method": self.method,
            "train": [int(i) for i in self.indices_train],
            "val": [int(i) for i in self.indices_val],
            "test": [int(i) for i in self.indices_test],
        }
        Path(path).write_text(json.dumps(payload))

    @classmethod
    def from_json(cls, path: str | Path) -> "SplitAssignment":
        payload = json.loads(Path(path).read_text())
        tr, va, te = (np.asarray(payload[k], dtype=int) for k in ("train", "val", "test"))
        n = len(tr) + len(va) + len(te)
        fractions = payload.get("fractions") or [len(tr) / n, len(va) / n, len(te) / n]
        return cls(tr, va, te, tuple(fractions), int(payload["seed"]),
                   int(payload.get("n_strat_bins", 10)), payload.get("method", "joint"))


def split_sizes(n: int, fractions: Sequence[float]) -> tuple[int, int, int]:
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    n_val = min(n_val, n - n_train)
    return n_train, n_val, n - n_train - n_val


def _validate_fractions(fractions: Sequence[float]) -> tuple[float, float, float]:
    if len(fractions) != 3:
        raise DataError("fractions must have three entries (train, val, test)")
    fr = tuple(float(f) for f in fractions)
    if any(f < 0 for f in fr) or abs(sum(fr) - 1.0) > 1e-9:
        raise DataError(f"fractions must be non-negative and sum to 1, got {fr}")
    return fr


def _quota_sequence(n: int, sizes: Sequence[int]) -> np.ndarray:
    # Sequential largest-deficit apportionment: any prefix of length j holds
    # each label within one sample of its proportional share.
    sizes = np.asarray(sizes, dtype=float)
    assigned = np.zeros(len(sizes))
    labels = np.empty(n, dtype=int)
    for j in range(n):
        deficit = sizes * (j + 1) / n - assigned
        deficit[assigned >= sizes] = -np.inf
        k = int(np.argmax(deficit))
        labels[j] = k
        assigned[k] += 1
    return labels


def _pivot_labels(targets: np.ndarray, sizes, n_bins: int, rng: np.random.Generator) -> np.ndarray:
    n = targets.shape[0]
    distinct = [np.unique(targets[:, v]).size for v in range(targets.shape[1])]
    pivot = targets[:, int(np.argmax(distinct))]
    # rank-based bins: ties broken at random so every bin gets equal mass
    order = np.lexsort((rng.permutation(n), pivot))
    rank_bin = np.empty(n, dtype=int)
    rank_bin[order] = np.arange(n) * n_bins // n
    sequence = np.concatenate([rng.permutation(np.flatnonzero(rank_bin == b)) for b in range(n_bins)])
    labels = np.empty(n, dtype=int)
    labels[sequence] = _quota_sequence(n, sizes)
    return labels


def _joint_labels(targets: np.ndarray, sizes, n_bins: int, rng: np.random.Generator) -> np.ndarray:
    n, n_vars = targets.shape
    bins = np.stack([assign_bins(targets[:, v], quantile_edges(targets[:, v], n_bins))
                     for v in range(n_vars)], axis=1)
    width = int(bins.max()) + 1
    sizes = np.asarray(sizes, dtype=float)
    cell_total = np.zeros((n_vars, width))
    for v in range(n_vars):
        cell_total[v] = np.bincount(bins[:, v], minlength=width)
    desired = sizes[:, None, None] * cell_total[None] / n
    counts = np.zeros_like(desired)
    filled = np.zeros(len(sizes))
    labels = np.empty(n, dtype=int)
    var_idx = np.arange(n_vars)
    for s in rng.permutation(n):
        cells = bins[s]
        want = desired[:, var_idx, cells]
        score = ((want - counts[:, var_idx, cells]) / np.maximum(want, 1e-12)).sum(axis=1)
        score += n_vars * (sizes - filled) / np.maximum(sizes, 1e-12)
        score[filled >= sizes] = -np.inf
        k = int(np.argmax(score))
        labels[s] = k
        filled[k] += 1
        counts[k, var_idx, cells] += 1
    return labels


def stratified_split(
    lib: SpectralLibrary | np.ndarray,
    fractions: Sequence[float] = (0.8, 0.1, 0.1),
    seed: int = 0,
    n_strat_bins: int = 10,
    method: str = "joint",
) -> SplitAssignment:
    """Partition sample indices into train/val/test preserving target
    distributions.

    ``method="pivot"`` stratifies on the single variable with the most
    distinct values. ``method="joint"`` (default) greedily assigns samples so
    that every variable's quantile-bin counts track their proportional
    targets; it subsumes the pivot scheme and keeps all variables balanced.
    """
    targets = lib.targets if isinstance(lib, SpectralLibrary) else np.asarray(lib, dtype=float)
    if targets.ndim == 1:
        targets = targets[:, None]
    fractions = _validate_fractions(fractions)
    if n_strat_bins < 2:
        raise DataError("n_strat_bins must be >= 2")
    n = targets.shape[0]
    if n < n_strat_bins:
        raise DataError(f"n_samples ({n}) < n_strat_bins ({n_strat_bins})")
    sizes = split_sizes(n, fractions)
    rng = np.random.default_rng(seed)
    if method == "pivot":
        labels = _pivot_labels(targets, sizes, n_strat_bins, rng)
    elif method == "joint":
        labels = _joint_labels(targets, sizes, n_strat_bins, rng)
    else:
        raise DataError(f"unknown split method {method!r}")
    parts = [np.sort(np.flatnonzero(labels == k)) for k in range(3)]
    return SplitAssignment(*parts, fractions=fractions, seed=seed, n_strat_bins=n_strat_bins, method=method)


def quantile_audit(lib: SpectralLibrary | np.ndarray, split: SplitAssignment | None = None,
                   n_bins: int | None = None) -> dict:
    """Percentage of each split's samples falling in each full-library
    quantile bin.

    Returns ``{"full": [...], "train": [...], "val": [...], "test": [...]}``
    where each entry is a list (one per variable) of per-bin percentages.
    Empty splits are omitted.
    """
    targets = lib.targets if isinstance(lib, SpectralLibrary) else np.asarray(lib, dtype=float)
    if targets.ndim == 1:
        targets = targets[:, None]
    if n_bins is None:
        n_bins = split.n_strat_bins if split is not None else 10
    groups = {"full": np.arange(targets.shape[0])}
    if split is not None:
        for name, idx in zip(("train", "val", "test"), split):
            if len(idx):
                groups[name] = np.asarray(idx)
    table: dict[str, list[np.ndarray]] = {k: [] for k in groups}
    for v in range(targets.shape[1]):
        edges = quantile_edges(targets[:, v], n_bins)
        bins = assign_bins(targets[:, v], edges)
        width = max(len(edges) - 1, 1)
        for name, idx in groups.items():
            counts = np.bincount(bins[idx], minlength=width)
            table[name].append(100.0 * counts / len(idx))
    return table


def audit_max_deviation(table: dict) -> float:
    """Largest absolute gap (percentage points) between any split cell and
    the full-library share of the same bin."""
    worst = 0.0
    for name, rows in table.items():
        if name == "full":
            continue
        for row, ref in zip(rows, table["full"]):
            worst = max(worst, float(np.max(np.abs(row - ref))))
    return worst


# --- standardization --------------------------------------------------------


def standardize_spectrum(s: np.ndarray) -> np.ndarray:
    """Zero-mean, unit population-variance copy of a spectrum (or of each row
    of a 2-D array)."""
    s = np.asarray(s, dtype=float)
    if s.shape[-1] < 2:
        raise DataError("spectrum needs at least two bands")
    mean = s.mean(axis=-1, keepdims=True)
    centered = s - mean
    std = np.sqrt((centered ** 2).mean(axis=-1, keepdims=True))
    if np.any(std <= 1e-300):
        raise DataError("degenerate spectrum (zero variance)")
    return centered / std


@dataclass(frozen=True)
class TargetScaler:
    mean: np.ndarray
    std: np.ndarray
    variable_names: tuple[str, ...] = field(default=())

    def apply(self, targets: np.ndarray) -> np.ndarray:
        return (np.asarray(targets, dtype=float) - self.mean) / self.std

    def invert(self, scaled: np.ndarray) -> np.ndarray:
        return np.asarray(scaled, dtype=float) * self.std + self.mean

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist(),
                "variable_names": list(self.variable_names)}

    @classmethod
    def from_dict(cls, d: dict) -> "TargetScaler":
        return cls(np.asarray(d["mean"], dtype=float), np.asarray(d["std"], dtype=float),
                   tuple(d.get("variable_names", ())))


def fit_target_scaler(train_targets: np.ndarray, variable_names: Sequence[str] = ()) -> TargetScaler:
    y = np.asarray(train_targets, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    if y.shape[0] < 2:
        raise DataError("need at least two training rows to fit a scaler")
    mean = y.mean(axis=0)
    std = np.sqrt(((y - mean) ** 2).mean(axis=0))
    bad = np.flatnonzero(std <= 0)
    if bad.size:
        names = [variable_names[i] if i < len(variable_names) else str(i) for i in bad]
        raise DataError(f"zero training variance for variable(s) {names}")
    return TargetScaler(mean, std, tuple(variable_names))
