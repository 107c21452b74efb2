"""Full-reference quality metrics and temporal-stability diagnostics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import DataError, ShapeError
from .video import SamplingLine, sample_line, validate_video

_SSIM_WINDOW = 11
_SSIM_SIGMA = 1.5


def psnr(ref: np.ndarray, test: np.ndarray, peak: float) -> float:
    """Peak signal-to-noise ratio in dB; identical frames return math.inf."""
    a = np.asarray(ref, dtype=np.float64)
    b = np.asarray(test, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"frame shapes differ: {a.shape} vs {b.shape}")
    if peak <= 0:
        raise DataError(f"peak must be positive, got {peak}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def _ssim_window() -> np.ndarray:
    half = (_SSIM_WINDOW - 1) // 2
    x = np.arange(-half, half + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / _SSIM_SIGMA) ** 2)
    k /= k.sum()
    return np.outer(k, k)


def ssim(ref: np.ndarray, test: np.ndarray, peak: float) -> float:
    """Mean local SSIM with an 11x11 Gaussian window (sigma 1.5).

    Local statistics are evaluated on the valid interior (a 5-pixel margin is
    dropped), matching the reference formulation; C1 = (0.01*peak)^2 and
    C2 = (0.03*peak)^2.
    """
    a = np.asarray(ref, dtype=np.float64)
    b = np.asarray(test, dtype=np.float64)
    if a.ndim == 3 and a.shape[2] == 1:
        a = a[:, :, 0]
    if b.ndim == 3 and b.shape[2] == 1:
        b = b[:, :, 0]
    if a.shape != b.shape:
        raise ShapeError(f"frame shapes differ: {a.shape} vs {b.shape}")
    if a.ndim != 2:
        raise ShapeError(f"SSIM expects single-channel frames, got {a.shape}")
    if min(a.shape) < _SSIM_WINDOW:
        raise DataError(f"frames must be at least {_SSIM_WINDOW}x{_SSIM_WINDOW} for SSIM")
    if peak <= 0:
        raise DataError(f"peak must be positive, got {peak}")

    c1 = (0.01 * peak) ** 2
    c2 = (0.03 * peak) ** 2
    win = _ssim_window()
    half = (_SSIM_WINDOW - 1) // 2

    def filt(img):
        return ndimage.correlate(img, win, mode="nearest")[half:-half, half:-half]

    mu1, mu2 = filt(a), filt(b)
    mu1_sq, mu2_sq, mu1_mu2 = mu1 * mu1, mu2 * mu2, mu1 * mu2
    sigma1_sq = filt(a * a) - mu1_sq
    sigma2_sq = filt(b * b) - mu2_sq
    sigma12 = filt(a * b) - mu1_mu2
    ssim_map = ((2 * mu1_mu2 + c1) * (2 * sigma12 + c2)) / (
        (mu1_sq + mu2_sq + c1) * (sigma1_sq + sigma2_sq + c2)
    )
    return float(ssim_map.mean())


def temporal_profile_variance(video: np.ndarray, line: SamplingLine) -> np.ndarray:
    """Per-sample variance over time of a grayscale line profile.

    Low values mean the intensity along the line is temporally stable;
    turbulence shows up as elevated variance.
    """
    profile = sample_line(video, line).astype(np.float64)
    return profile.var(axis=1)


@dataclass
class MetricReport:
    """Per-frame and sequence-level quality figures."""

    peak: float
    psnr_frames: list[float] = field(default_factory=list)
    ssim_frames: list[float] = field(default_factory=list)
    profile_variance: np.ndarray | None = None

    @property
    def psnr_mean(self) -> float:
        return float(np.mean(self.psnr_frames)) if self.psnr_frames else math.nan

    @property
    def ssim_mean(self) -> float:
        return float(np.mean(self.ssim_frames)) if self.ssim_frames else math.nan


def resolve_peak(ref: np.ndarray, requested: float | None) -> float:
    """Default peak: the reference-sequence maximum for floating-point data."""
    if requested is not None:
        if requested <= 0:
            raise DataError(f"peak must be positive, got {requested}")
        return float(requested)
    peak = float(np.max(ref))
    if peak <= 0:
        raise DataError("reference maximum is not positive; supply an explicit peak")
    return peak


def evaluate_sequences(
    ref: np.ndarray, test: np.ndarray, peak: float | None = None
) -> MetricReport:
    """Frame-by-frame PSNR/SSIM of a test sequence against a reference."""
    ref_v = validate_video(ref)
    test_v = validate_video(test)
    if ref_v.shape != test_v.shape:
        raise ShapeError(f"sequence shapes differ: {ref_v.shape} vs {test_v.shape}")
    pk = resolve_peak(ref_v, peak)
    report = MetricReport(peak=pk)
    for i in range(ref_v.shape[0]):
        report.psnr_frames.append(psnr(ref_v[i], test_v[i], pk))
        report.ssim_frames.append(ssim(ref_v[i], test_v[i], pk))
    return report
