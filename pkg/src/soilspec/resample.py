"""Spectral cropping, resampling and satellite-sensor simulation."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

# 2 * sqrt(2 ln 2)
FWHM_TO_SIGMA = 2.3548

PRISMA_WATER_WINDOWS = ((1338.9, 1501.7), (1784.4, 1993.2))


class ResampleError(ValueError):
    pass


def is_power_of_two(n: int) -> bool:
    return isinstance(n, (int, np.integer)) and n >= 1 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class CropResampleSpec:
    f_min: float
    f_max: float
    f_insz: int

    def __post_init__(self) -> None:
        if not self.f_min < self.f_max:
            raise ResampleError(f"f_min ({self.f_min}) must be < f_max ({self.f_max})")
        if not is_power_of_two(self.f_insz):
            raise ResampleError(f"f_insz must be a power of 2, got {self.f_insz}")


def crop(spectrum: np.ndarray, wavelengths: np.ndarray, f_min: float, f_max: float):
    """Keep the bands with ``f_min <= wavelength <= f_max``. Works on a single
    spectrum or on an (n_samples, n_bands) block."""
    wavelengths = np.asarray(wavelengths, dtype=float)
    mask = (wavelengths >= f_min) & (wavelengths <= f_max)
    if not mask.any():
        raise ResampleError(f"empty crop: no bands in [{f_min}, {f_max}]")
    return np.asarray(spectrum)[..., mask], wavelengths[mask]


def resample_linear(spectrum: np.ndarray, n_out: int) -> np.ndarray:
    """Piecewise-linear resampling on a uniform index axis; endpoints are kept.

    Accepts a 1-D spectrum or a 2-D block (resampled row-wise).
    """
    x = np.asarray(spectrum, dtype=float)
    n_in = x.shape[-1]
    if n_in < 2 or n_out < 2:
        raise ResampleError("resample_linear needs at least two input and output samples")
    pos = np.arange(n_out) * ((n_in - 1) / (n_out - 1))
    lo = np.minimum(pos.astype(int), n_in - 2)
    frac = pos - lo
    left = x[..., lo]
    out = left + (x[..., lo + 1] - left) * frac
    out[..., 0] = x[..., 0]
    out[..., -1] = x[..., -1]
    return out


def prepare_inputs(spectra: np.ndarray, wavelengths: np.ndarray, spec: CropResampleSpec):
    """Crop, resample to ``f_insz`` and standardize each spectrum.

    Returns ``(inputs, input_wavelengths)``.
    """
    from .data import standardize_spectrum

    cropped, wl = crop(spectra, wavelengths, spec.f_min, spec.f_max)
    return standardize_spectrum(resample_linear(cropped, spec.f_insz)), resample_linear(wl, spec.f_insz)


# --- sensor simulation ------------------------------------------------------


@dataclass(frozen=True)
class SensorConfig:
    """Gaussian-SRF sensor. ``centers``/``fwhm`` list every band of the
    instrument; bands whose centers fall in a removed window are dropped
    from the simulated output."""

    centers: np.ndarray
    fwhm: np.ndarray
    removed_windows: tuple[tuple[float, float], ...] = field(default=())
    name: str = "sensor"

    def __post_init__(self) -> None:
        centers = np.asarray(self.centers, dtype=float)
        fwhm = np.broadcast_to(np.asarray(self.fwhm, dtype=float), centers.shape).copy()
        if centers.ndim != 1 or centers.size == 0:
            raise ResampleError("sensor needs at least one band")
        if np.any(np.diff(centers) <= 0):
            raise ResampleError("band centers must be strictly increasing")
        if np.any(fwhm <= 0):
            raise ResampleError("fwhm must be positive")
        windows = tuple((float(lo), float(hi)) for lo, hi in self.removed_windows)
        for lo, hi in windows:
            if lo > hi:
                raise ResampleError(f"removed window [{lo}, {hi}] is reversed")
        object.__setattr__(self, "centers", centers)
        object.__setattr__(self, "fwhm", fwhm)
        object.__setattr__(self, "removed_windows", windows)

    @property
    def active(self) -> np.ndarray:
        keep = np.ones(self.centers.size, dtype=bool)
        for lo, hi in self.removed_windows:
            keep &= ~((self.centers >= lo) & (self.centers <= hi))
        return keep

    @property
    def band_centers(self) -> np.ndarray:
        return self.centers[self.active]

    @property
    def n_bands(self) -> int:
        return int(self.active.sum())

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "bands": [{"center": float(c), "fwhm": float(f)} for c, f in zip(self.centers, self.fwhm)],
            "removed_windows": [list(w) for w in self.removed_windows],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SensorConfig":
        bands = d["bands"]
        return cls(
            centers=np.array([b["center"] for b in bands], dtype=float),
            fwhm=np.array([b["fwhm"] for b in bands], dtype=float),
            removed_windows=tuple(tuple(w) for w in d.get("removed_windows", ())),
            name=d.get("name", "sensor"),
        )

    @classmethod
    def from_json(cls, path: str | Path) -> "SensorConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))


def srf_weights(wavelengths: np.ndarray, cfg: SensorConfig) -> np.ndarray:
    """Unnormalized Gaussian response of each active band on the grid,
    shape (n_active_bands, n_grid)."""
    wl = np.asarray(wavelengths, dtype=float)
    keep = cfg.active
    centers, sigma = cfg.centers[keep], cfg.fwhm[keep] / FWHM_TO_SIGMA
    w = np.exp(-((wl[None, :] - centers[:, None]) ** 2) / (2.0 * sigma[:, None] ** 2))
    totals = w.sum(axis=1)
    starved = np.flatnonzero(totals < 1e-12)
    if starved.size:
        raise ResampleError(
            f"band(s) at {centers[starved].tolist()} nm have no support on the wavelength grid")
    return w


def simulate_sensor(spectrum: np.ndarray, wavelengths: np.ndarray, cfg: SensorConfig) -> np.ndarray:
    """Gaussian-weighted band means; a 2-D input is simulated row-wise."""
    w = srf_weights(wavelengths, cfg)
    w /= w.sum(axis=1, keepdims=True)
    return np.asarray(spectrum, dtype=float) @ w.T


def prisma_like_bands() -> tuple[np.ndarray, np.ndarray]:
    """Band grid used to build the shipped PRISMA-like config.

    10 nm spacing / 10 nm FWHM in the VNIR (405-1005 nm), 10.25 nm spacing /
    11 nm FWHM in the SWIR (1015-2491 nm). 206 bands in total, 170 after the
    two water windows are removed.
    """
    vnir = np.arange(405.0, 1006.0, 10.0)
    swir = 1015.0 + 10.25 * np.arange(145)
    centers = np.concatenate([vnir, swir])
    fwhm = np.concatenate([np.full(vnir.size, 10.0), np.full(swir.size, 11.0)])
    return centers, fwhm


def default_prisma_config() -> SensorConfig:
    text = resources.files("soilspec.resources").joinpath("prisma_like.json").read_text()
    return SensorConfig.from_dict(json.loads(text))


def sensor_library(lib, cfg: SensorConfig):
    """Simulate every spectrum of a library, returning a new library on the
    sensor's band centers."""
    from .data import SpectralLibrary

    return SpectralLibrary(
        wavelengths=cfg.band_centers,
        spectra=simulate_sensor(lib.spectra, lib.wavelengths, cfg),
        targets=lib.targets,
        variable_names=lib.variable_names,
        coords=lib.coords,
    )

