"""Temporal DFT analysis of infrared sequences and the soft phasor mask.

Heat-emitting regions keep a consistent temporal signature, so the magnitude
of a low temporal harmonic separates thermally stable pixels from
turbulence-dominated ones.  The mask is a logistic squashing of that
magnitude around its spatial mean.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, RangeError
from .video import validate_video

# Logistic output is clipped into the open interval so downstream code can
# rely on mask values being strictly inside (0, 1) even after float32 rounding.
_MASK_EPS = 1e-7


@dataclass(frozen=True)
class PhasorConfig:
    """Harmonic index and logistic sharpness for mask construction."""

    harmonic: int = 1
    alpha: float = 10.0

    def validate(self, frames: int) -> None:
        if not 1 <= self.harmonic < frames:
            raise RangeError(
                f"harmonic must satisfy 1 <= k < T, got k={self.harmonic}, T={frames}"
            )
        if self.alpha <= 0:
            raise DataError(f"alpha must be positive, got {self.alpha}")


def temporal_dft(video: np.ndarray, harmonic: int) -> np.ndarray:
    """Per-pixel unnormalized forward DFT coefficient of one temporal harmonic.

    Returns a complex128 (H, W) frame holding sum_t I(x, t) * exp(-2i*pi*k*t/T).
    Evaluation is a direct O(T) sum per bin; sequences are short enough that a
    full FFT buys nothing.
    """
    vid = validate_video(video)
    t_count = vid.shape[0]
    if vid.shape[3] != 1:
        raise DataError(f"temporal DFT expects single-channel video, got C={vid.shape[3]}")
    if t_count < 2:
        raise DataError(f"temporal DFT needs T >= 2, got T={t_count}")
    if not 0 <= harmonic < t_count:
        raise RangeError(f"harmonic must satisfy 0 <= k < T, got k={harmonic}, T={t_count}")
    frames = vid[:, :, :, 0].astype(np.float64)
    phase = -2.0j * np.pi * harmonic * np.arange(t_count) / t_count
    basis = np.exp(phase)
    return np.einsum("t,thw->hw", basis, frames)


def phasor_mask(video: np.ndarray, cfg: PhasorConfig = PhasorConfig()) -> np.ndarray:
    """Soft mask from the harmonic magnitude: logistic(alpha * (|coef| - mean)).

    The spatial mean of the magnitudes centres the logistic, so the mask is
    invariant to the DFT normalization convention and to constant intensity
    offsets.  Values are strictly inside (0, 1); returned as float32 (H, W).
    """
    vid = validate_video(video)
    cfg.validate(vid.shape[0])
    magnitude = np.abs(temporal_dft(vid, cfg.harmonic))
    mu = magnitude.mean()
    mask = 1.0 / (1.0 + np.exp(-cfg.alpha * (magnitude - mu)))
    return np.clip(mask, _MASK_EPS, 1.0 - _MASK_EPS).astype(np.float32)
