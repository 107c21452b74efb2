"""Figure rendering for the report-producing subcommands.

Figures are written next to the delimited output so a single evaluate or
profile run leaves both a machine-readable CSV and a quick-look plot.
"""

from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .metrics import MetricReport


def save_metric_figure(report: MetricReport, path: str | Path) -> None:
    """Per-frame PSNR and SSIM curves on twin axes."""
    frames = np.arange(len(report.psnr_frames))
    finite = [p if math.isfinite(p) else np.nan for p in report.psnr_frames]
    fig, ax1 = plt.subplots(figsize=(7, 3.5))
    ax1.plot(frames, finite, "o-", color="tab:blue", label="PSNR")
    ax1.set_xlabel("frame")
    ax1.set_ylabel("PSNR (dB)", color="tab:blue")
    ax1.tick_params(axis="y", labelcolor="tab:blue")
    ax2 = ax1.twinx()
    ax2.plot(frames, report.ssim_frames, "s--", color="tab:red", label="SSIM")
    ax2.set_ylabel("SSIM", color="tab:red")
    ax2.tick_params(axis="y", labelcolor="tab:red")
    ax1.set_title(f"mean PSNR {report.psnr_mean:.2f} dB, mean SSIM {report.ssim_mean:.4f}")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_profile_figure(matrix: np.ndarray, path: str | Path) -> None:
    """Temporal grayscale profile: heatmap plus a few sample traces."""
    mat = np.asarray(matrix, dtype=np.float64)
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.5))
    im = ax1.imshow(mat, aspect="auto", origin="lower", cmap="inferno")
    ax1.set_xlabel("frame")
    ax1.set_ylabel("sample along line")
    fig.colorbar(im, ax=ax1, label="intensity")
    step = max(1, mat.shape[0] // 8)
    for s in range(0, mat.shape[0], step):
        ax2.plot(mat[s], alpha=0.7, lw=1.0)
    ax2.set_xlabel("frame")
    ax2.set_ylabel("intensity")
    ax2.set_title("sample traces over time")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
