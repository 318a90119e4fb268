"""Grad-CAM importance curves for 1-D convolutional regressors."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import Model
from .resample import resample_linear


class InterpretError(ValueError):
    pass


@dataclass(frozen=True)
class ImportanceCurve:
    wavelengths: np.ndarray
    weights: np.ndarray

    def to_csv(self, path) -> None:
        np.savetxt(path, np.column_stack([self.wavelengths, self.weights]), delimiter=",",
                   header="wavelength,weight", comments="", fmt="%.10g")


def _default_stage(model: Model) -> int:
    blocks = [i for i, st in enumerate(model.stages) if st.operation == "Block"]
    if not blocks:
        raise InterpretError("model has no convolutional block stage")
    return blocks[-1]


def _upsample(cam: np.ndarray, n: int) -> np.ndarray:
    if cam.size == n:
        return cam.copy()
    if cam.size == 1:
        return np.full(n, cam[0])
    return resample_linear(cam, n)


def _normalize(curve: np.ndarray) -> np.ndarray:
    peak = curve.max() if curve.size else 0.0
    return curve / peak if peak > 0 else np.zeros_like(curve)


def gradcam_raw(model: Model, spectra: np.ndarray, var_index: int, target_stage=None,
                output_index: int | None = None) -> np.ndarray:
    """Un-normalized class activation maps at input resolution, one row per
    spectrum.

    ``alpha_k`` is the positional mean of d y / d A_k for channel k of the
    target stage's output ``A``; the map is ``relu(sum_k alpha_k A_k)``,
    linearly upsampled to the input length.
    """
    n_in = model.in_shape[-1]
    x = np.atleast_2d(np.asarray(spectra, dtype=model.dtype))
    n_out = int(np.prod(model.out_shape))
    col = var_index if output_index is None else output_index
    if not 0 <= var_index < n_out or not 0 <= col < n_out:
        raise InterpretError(f"var_index {var_index} out of range for {n_out} outputs")
    stage = model.stages[_default_stage(model) if target_stage is None else model.stage_index(target_stage)]
    if len(stage.shape) != 2:
        raise InterpretError(f"stage {stage.name!r} is not a feature map")

    out = model.forward(x, train=False, keep=True)
    acts = model.activations[stage.end]
    seed = np.zeros_like(out)
    seed[:, col] = 1.0
    grad_snapshot = model.grad.copy()
    grads = model.backward(seed, stop=stage.end)
    model.grad[...] = grad_snapshot

    alpha = grads.mean(axis=2, keepdims=True)
    cam = np.maximum((alpha * acts).sum(axis=1), 0.0)
    return np.stack([_upsample(row.astype(float), n_in) for row in cam])


def gradcam_1d(model: Model, spectrum: np.ndarray, var_index: int, target_stage=None,
               wavelengths: np.ndarray | None = None, output_index: int | None = None) -> ImportanceCurve:
    """Max-normalized Grad-CAM curve for one spectrum (all-zero maps stay zero)."""
    cam = gradcam_raw(model, np.asarray(spectrum)[None], var_index, target_stage, output_index)[0]
    wl = np.arange(cam.size, dtype=float) if wavelengths is None else np.asarray(wavelengths, dtype=float)
    return ImportanceCurve(wl, _normalize(cam))


def gradcam_average(model: Model, spectra: np.ndarray, var_index: int, target_stage=None,
                    wavelengths: np.ndarray | None = None, output_index: int | None = None,
                    batch_size: int = 256) -> ImportanceCurve:
    """Pointwise mean of the per-sample normalized curves, re-normalized."""
    spectra = np.asarray(spectra)
    if spectra.ndim == 1 or len(spectra) == 0:
        if len(spectra) == 0:
            raise InterpretError("empty sample set")
        spectra = spectra[None]
    total = None
    for i in range(0, len(spectra), batch_size):
        cams = gradcam_raw(model, spectra[i:i + batch_size], var_index, target_stage, output_index)
        peaks = cams.max(axis=1, keepdims=True)
        normed = np.divide(cams, peaks, out=np.zeros_like(cams), where=peaks > 0)
        part = normed.sum(axis=0)
        total = part if total is None else total + part
    mean = total / len(spectra)
    wl = np.arange(mean.size, dtype=float) if wavelengths is None else np.asarray(wavelengths, dtype=float)
    return ImportanceCurve(wl, _normalize(mean))
