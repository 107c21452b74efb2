"""Synthetic turbulence degradation: tilt warps, thermal blur, grayscale drift.

The generator is a phase-screen-lite model: per-frame smooth random tilt
fields, an isotropic Gaussian PSF, low-frequency intensity drift, then box
downsampling.  It is deliberately simple and fully reproducible; physical
fidelity (Kolmogorov screens, anisoplanatic PSFs) is out of scope.

Every random draw is keyed by (seed, frame_index, role) so individual frames
can be regenerated independently and runs are byte-reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import DataError, ShapeError
from .video import load_irv, save_irv, validate_video, warp

_ROLE_TILT = 0
_ROLE_DRIFT_CONST = 1
_ROLE_DRIFT_FIELD = 2


@dataclass(frozen=True)
class TurbulenceParams:
    """Degradation strengths; all magnitudes in pixels or intensity units."""

    tilt_strength: float = 0.0
    tilt_correlation: float = 4.0
    blur_sigma: float = 0.0
    drift_amplitude: float = 0.0
    scale: int = 1
    seed: int = 0

    def validate(self) -> None:
        for name in ("tilt_strength", "tilt_correlation", "blur_sigma", "drift_amplitude"):
            if getattr(self, name) < 0:
                raise DataError(f"{name} must be >= 0, got {getattr(self, name)}")
        if self.scale < 1:
            raise DataError(f"scale must be >= 1, got {self.scale}")


def _rng(seed: int, frame_index: int, role: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, frame_index, role])))


def random_tilt_field(
    height: int, width: int, params: TurbulenceParams, frame_index: int
) -> np.ndarray:
    """Smooth zero-mean displacement field with RMS magnitude = tilt_strength.

    White noise per component, Gaussian-smoothed with radius tilt_correlation,
    centred, then rescaled so sqrt(mean(dx^2 + dy^2)) equals tilt_strength.
    """
    params.validate()
    if params.tilt_strength == 0.0:
        return np.zeros((height, width, 2), dtype=np.float32)
    gen = _rng(params.seed, frame_index, _ROLE_TILT)
    field = gen.standard_normal((height, width, 2))
    if params.tilt_correlation > 0:
        for k in range(2):
            field[:, :, k] = ndimage.gaussian_filter(
                field[:, :, k], params.tilt_correlation, mode="nearest"
            )
    field -= field.mean(axis=(0, 1))
    rms = np.sqrt(np.mean(field[:, :, 0] ** 2 + field[:, :, 1] ** 2))
    if rms < 1e-12:
        return np.zeros((height, width, 2), dtype=np.float32)
    return (field * (params.tilt_strength / rms)).astype(np.float32)


def _drift_field(height: int, width: int, params: TurbulenceParams, frame_index: int) -> np.ndarray:
    """Per-frame constant plus unit-RMS smoothed noise, scaled by drift_amplitude."""
    const = float(_rng(params.seed, frame_index, _ROLE_DRIFT_CONST).standard_normal())
    gen = _rng(params.seed, frame_index, _ROLE_DRIFT_FIELD)
    noise = gen.standard_normal((height, width))
    sigma = max(min(height, width) / 4.0, 1.0)
    smooth = ndimage.gaussian_filter(noise, sigma, mode="nearest")
    rms = np.sqrt(np.mean(smooth**2))
    if rms > 1e-12:
        smooth = smooth / rms
    return (params.drift_amplitude * (const + smooth)).astype(np.float32)


def _box_downsample(frame: np.ndarray, scale: int) -> np.ndarray:
    h, w = frame.shape[:2]
    c = frame.shape[2]
    view = frame.reshape(h // scale, scale, w // scale, scale, c)
    return view.mean(axis=(1, 3), dtype=np.float64).astype(frame.dtype)


def degrade(hr: np.ndarray, params: TurbulenceParams) -> np.ndarray:
    """Degrade an HR sequence: tilt warp -> blur -> drift -> box downsample.

    Output dims are T x H/scale x W/scale x C.  Deterministic for a fixed
    seed; with all strengths at zero the result is exactly the box average
    of the input (the identity for scale 1).
    """
    vid = validate_video(hr).astype(np.float32)
    params.validate()
    t_count, h, w, c = vid.shape
    if h % params.scale or w % params.scale:
        raise ShapeError(
            f"frame dims {h}x{w} not divisible by scale {params.scale}"
        )
    out = np.empty((t_count, h // params.scale, w // params.scale, c), dtype=np.float32)
    for i in range(t_count):
        frame = vid[i]
        if params.tilt_strength > 0:
            frame = warp(frame, random_tilt_field(h, w, params, i))
        if params.blur_sigma > 0:
            blurred = np.empty_like(frame)
            for k in range(c):
                blurred[:, :, k] = ndimage.gaussian_filter(
                    frame[:, :, k], params.blur_sigma, mode="nearest"
                )
            frame = blurred
        if params.drift_amplitude > 0:
            frame = frame + _drift_field(h, w, params, i)[:, :, None]
        out[i] = _box_downsample(frame, params.scale) if params.scale > 1 else frame
    return out


def params_manifest(params: TurbulenceParams) -> str:
    """Render parameters as diff-friendly key=value lines."""
    lines = [f"{f.name}={getattr(params, f.name)!r}" for f in fields(params)]
    return "\n".join(lines) + "\n"


def make_pair(
    hr_path: str | Path,
    params: TurbulenceParams,
    out_lr_path: str | Path,
    out_hr_path: str | Path,
    manifest_path: str | Path | None = None,
) -> None:
    """Write a degraded LR copy and a pass-through HR copy of a sequence.

    A sidecar manifest recording the seed and every parameter value is written
    next to the LR file unless an explicit path is given.
    """
    hr = load_irv(hr_path)
    lr = degrade(hr, params)
    save_irv(lr, out_lr_path)
    save_irv(hr, out_hr_path)
    if manifest_path is None:
        manifest_path = Path(out_lr_path).with_suffix(".manifest.txt")
    Path(manifest_path).write_text(params_manifest(params))
