"""Inverse-distance-weighted rasters and plain-file figure outputs."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class RasterSpec:
    lat_min: float
    lat_max: float
    lon_min: float
    lon_max: float
    width: int
    height: int
    power: float = 2.0
    vmin: float | None = None
    vmax: float | None = None

    def __post_init__(self) -> None:
        if self.width < 1 or self.height < 1:
            raise ValueError("raster width and height must be >= 1")
        if self.power <= 0:
            raise ValueError("idw power must be > 0")
        if not (self.lat_min <= self.lat_max and self.lon_min <= self.lon_max):
            raise ValueError("bounding box is reversed")

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """(lat, lon) of every cell center, each (height, width). Row 0 is the
        northern edge."""
        dlat = (self.lat_max - self.lat_min) / self.height
        dlon = (self.lon_max - self.lon_min) / self.width
        lats = self.lat_max - (np.arange(self.height) + 0.5) * dlat
        lons = self.lon_min + (np.arange(self.width) + 0.5) * dlon
        return np.meshgrid(lats, lons, indexing="ij")


def idw_at(points: np.ndarray, query: np.ndarray, power: float = 2.0, chunk: int = 4096) -> np.ndarray:
    """IDW estimate at ``query`` (m, 2) from ``points`` rows (lat, lon, value).

    Distances are Euclidean in degrees. A query closer than 1e-12 to a sample
    takes that sample's value.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[0] == 0:
        raise ValueError("idw needs at least one sample point")
    xy, vals = pts[:, :2], pts[:, 2]
    query = np.atleast_2d(np.asarray(query, dtype=float))
    out = np.empty(len(query))
    for s in range(0, len(query), chunk):
        q = query[s:s + chunk]
        d = np.sqrt(((q[:, None, :] - xy[None, :, :]) ** 2).sum(axis=2))
        hit = d < 1e-12
        with np.errstate(divide="ignore", invalid="ignore"):
            w = 1.0 / d ** power
            w[hit] = 0.0
            est = (w @ vals) / w.sum(axis=1)
        rows = np.flatnonzero(hit.any(axis=1))
        est[rows] = vals[np.argmax(hit[rows], axis=1)]
        out[s:s + chunk] = est
    return out


def idw_interpolate(points: np.ndarray, spec: RasterSpec) -> np.ndarray:
    lat, lon = spec.cell_centers()
    grid = idw_at(points, np.column_stack([lat.ravel(), lon.ravel()]), spec.power)
    return grid.reshape(spec.height, spec.width)


def emit_raster(grid: np.ndarray, path: str | Path, vmin: float | None = None, vmax: float | None = None,
                extra: dict | None = None) -> Path:
    """Write a binary PGM (maxval 255) plus a ``.json`` sidecar holding the
    value range that maps to 0..255."""
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 2:
        raise ValueError("raster must be 2-D")
    if not np.all(np.isfinite(grid)):
        raise ValueError("raster contains non-finite values")
    lo = float(grid.min()) if vmin is None else float(vmin)
    hi = float(grid.max()) if vmax is None else float(vmax)
    if hi > lo:
        scaled = np.clip((grid - lo) / (hi - lo), 0.0, 1.0)
    else:
        scaled = np.zeros_like(grid)
    pixels = np.rint(scaled * 255).astype(np.uint8)
    path = Path(path)
    height, width = grid.shape
    path.write_bytes(f"P5\n{width} {height}\n255\n".encode("ascii") + pixels.tobytes())
    sidecar = {"min": lo, "max": hi, "width": width, "height": height, **(extra or {})}
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=1))
    return path


def read_pgm(path: str | Path) -> np.ndarray:
    blob = Path(path).read_bytes()
    parts = blob.split(b"\n", 3)
    if parts[0] != b"P5":
        raise ValueError("not a binary PGM")
    width, height = (int(v) for v in parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(height, width)


def emit_scatter(pred, target, path: str | Path, names: tuple[str, str] = ("target", "prediction")) -> Path:
    """Ground-truth vs prediction pairs as CSV, with a range sidecar."""
    pred = np.asarray(pred, dtype=float).ravel()
    target = np.asarray(target, dtype=float).ravel()
    if pred.shape != target.shape:
        raise ValueError("pred and target lengths differ")
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for t, p in zip(target, pred):
            w.writerow([repr(float(t)), repr(float(p))])
    both = np.concatenate([pred, target]) if pred.size else np.zeros(1)
    path.with_suffix(".json").write_text(json.dumps({"min": float(both.min()), "max": float(both.max()),
                                                     "n": int(pred.size)}, indent=1))
    return path


def raster_spec_dict(spec: RasterSpec) -> dict:
    return asdict(spec)
