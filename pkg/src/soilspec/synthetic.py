"""Synthetic spectral libraries for tests and demos."""

from __future__ import annotations

import numpy as np

from .data import SpectralLibrary


def gaussian_endmembers(wavelengths: np.ndarray, n_endmembers: int = 5, seed: int = 0) -> np.ndarray:
    """Fixed endmember spectra, each a Gaussian reflectance bump with its own
    center and width on top of a small offset. Shape (n_endmembers, n_bands)."""
    rng = np.random.default_rng(seed)
    lo, hi = wavelengths[0], wavelengths[-1]
    centers = np.linspace(lo, hi, n_endmembers + 2)[1:-1] + rng.uniform(-50, 50, n_endmembers)
    widths = rng.uniform(0.05, 0.15, n_endmembers) * (hi - lo)
    heights = rng.uniform(0.3, 0.7, n_endmembers)
    bumps = np.exp(-0.5 * ((wavelengths[None, :] - centers[:, None]) / widths[:, None]) ** 2)
    return 0.1 + heights[:, None] * bumps


def mixture_library(n_samples: int = 2000, n_bands: int = 256, n_endmembers: int = 5, n_vars: int = 12,
                    noise: float = 0.01, seed: int = 0, wl_range=(400.0, 2500.0),
                    with_coords: bool = False) -> SpectralLibrary:
    """Spectra that are random convex mixtures of fixed Gaussian endmembers
    plus ``noise`` (relative) Gaussian noise; each target is a fixed linear
    functional of the mixture weights."""
    rng = np.random.default_rng(seed)
    wl = np.linspace(wl_range[0], wl_range[1], n_bands)
    endmembers = gaussian_endmembers(wl, n_endmembers, seed=seed + 1)
    weights = rng.dirichlet(np.ones(n_endmembers), size=n_samples)
    clean = weights @ endmembers
    spectra = clean + noise * clean.mean() * rng.standard_normal(clean.shape)
    functionals = rng.normal(size=(n_endmembers, n_vars))
    targets = weights @ functionals
    coords = None
    if with_coords:
        coords = np.column_stack([rng.uniform(35, 70, n_samples), rng.uniform(-10, 30, n_samples)])
    names = tuple(f"var{j}" for j in range(n_vars))
    return SpectralLibrary(wl, spectra, targets, names, coords)


LUCAS_VARIABLES = ("coarse", "clay", "silt", "sand", "pH.in.CaCl2", "pH.in.H2O",
                   "OC", "CaCO3", "N", "P", "K", "CEC")
