"""End-to-end restoration pipeline and its flat key=value configuration.

Chain: phasor mask -> bidirectional refined flows -> guided reverse sampling
over the pluggable denoiser -> turbulence-gated temporal pass -> bilinear
upsampling to the output resolution.  Every stage is deterministic under a
fixed seed, and the resolved configuration is written to a manifest so runs
can be reconstructed exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import guidance, tad
from .errors import DataError
from .flow import FlowConfig, RefinerWeights, phasorflow
from .metrics import MetricReport, evaluate_sequences
from .phasor import PhasorConfig, phasor_mask
from .video import load_irv, save_irv, upscale_video, validate_video, warp


@dataclass
class PipelineConfig:
    """Flat, manifest-serializable configuration for the full pipeline."""

    seed: int = 0
    scale: int = 1
    phasor_alpha: float = 10.0
    phasor_harmonic: int = 1
    flow_levels: int = 3
    flow_search_radius: int = 4
    flow_block_radius: int = 3
    flow_clip_len: int = 4
    flow_layers: int = 2
    flow_offsets: int = 3
    flow_channels: int = 16
    flow_residual_scale: float = 0.0
    steps: int = 20
    eta: float = 0.02
    tau_occ: float = 1.0
    denoiser: str = "zero"
    tad_seed: int = 0
    tad_lambda: float = 0.0
    tad_gate_weight: float = -4.0
    tad_gate_bias: float = 1.0
    metric_peak: float = 0.0  # 0 means auto (reference maximum)

    def validate(self) -> None:
        if self.scale < 1:
            raise DataError(f"scale must be >= 1, got {self.scale}")
        if self.steps < 1:
            raise DataError(f"steps must be >= 1, got {self.steps}")
        if self.eta < 0:
            raise DataError(f"eta must be >= 0, got {self.eta}")
        if self.tau_occ <= 0:
            raise DataError(f"tau-occ must be positive, got {self.tau_occ}")
        if self.denoiser not in ("zero", "oracle"):
            raise DataError(f"denoiser must be 'zero' or 'oracle', got {self.denoiser!r}")

    def flow_config(self) -> FlowConfig:
        return FlowConfig(
            levels=self.flow_levels,
            search_radius=self.flow_search_radius,
            block_radius=self.flow_block_radius,
            clip_len=self.flow_clip_len,
            layers=self.flow_layers,
            offsets=self.flow_offsets,
            channels=self.flow_channels,
            mask_alpha=self.phasor_alpha,
            mask_harmonic=self.phasor_harmonic,
            seed=self.seed,
            residual_scale=self.flow_residual_scale,
        )

    def to_text(self) -> str:
        lines = [f"{f.name}={getattr(self, f.name)}" for f in fields(self)]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "PipelineConfig":
        known = {f.name: f.type for f in fields(cls)}
        casts = {"int": int, "float": float, "str": str}
        cfg = cls()
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise DataError(f"manifest line {lineno}: expected key=value, got {raw!r}")
            key, value = line.split("=", 1)
            key = key.strip()
            if key not in known:
                raise DataError(f"manifest line {lineno}: unknown key {key!r}")
            setattr(cfg, key, casts[known[key]](value.strip()))
        cfg.validate()
        return cfg


def auto_flow_levels(height: int, width: int, requested: int) -> int:
    """Clamp the pyramid depth so the coarsest level stays at least 8 px."""
    deepest = max(int(np.floor(np.log2(min(height, width) / 8.0))), 1)
    return max(1, min(requested, deepest))


def aggregate_occlusion(
    flows_fwd: np.ndarray, flows_bwd: np.ndarray, tau_occ: float
) -> np.ndarray:
    """Sequence-level occlusion mask: a pixel must be consistent in every pair."""
    masks = [
        guidance.occlusion_mask(flows_fwd[k], flows_bwd[k], tau_occ)
        for k in range(flows_fwd.shape[0])
    ]
    return np.minimum.reduce(masks)


def tad_pass(
    z: np.ndarray,
    flows_fwd: np.ndarray,
    flows_bwd: np.ndarray,
    weights: tad.TadWeights,
    lam: float,
) -> np.ndarray:
    """Turbulence-gated flow-compensated temporal correction per frame.

    The temporal branch is the flow-compensated neighbour average minus the
    frame itself; the gate suppresses it where the disturbance heatmap is
    high, so cross-frame aggregation only acts on stable pixels.  Structure
    attention is applied when lam > 0.
    """
    vid = validate_video(z).astype(np.float32)
    n = vid.shape[0]
    out = np.empty_like(vid)
    centre = float(weights.temporal_kernel[1])
    for t in range(n):
        cur = vid[t, :, :, 0]
        prev_w = warp(vid[t - 1, :, :, 0], flows_bwd[t - 1]) if t > 0 else None
        next_w = warp(vid[t + 1, :, :, 0], flows_fwd[t]) if t < n - 1 else None
        t_map = tad.turbulence_map(
            vid[t - 1, :, :, 0] if t > 0 else None,
            cur,
            vid[t + 1, :, :, 0] if t < n - 1 else None,
            flows_bwd[t - 1] if t > 0 else None,
            flows_fwd[t] if t < n - 1 else None,
        )
        gate = tad.gate_mask(t_map, weights)
        neighbours = [v for v in (prev_w, next_w) if v is not None]
        side = (1.0 - centre) / len(neighbours)
        smooth = centre * cur + side * np.sum(neighbours, axis=0)
        correction = tad.tmg(smooth - cur, gate, weights)
        frame = cur + correction
        if lam > 0:
            frame = tad.ir_saa(frame, weights, lam)
        out[t, :, :, 0] = frame
    return out


def run_pipeline(
    cfg: PipelineConfig,
    input_path: str | Path,
    output_path: str | Path,
    clean_path: str | Path | None = None,
    ref_path: str | Path | None = None,
    manifest_path: str | Path | None = None,
    trajectory_dir: str | Path | None = None,
) -> MetricReport | None:
    """Run the restoration chain on an IRV file and write the result.

    Args:
        cfg: resolved pipeline configuration (validated here).
        input_path: LR input sequence.
        output_path: output sequence (input dims times cfg.scale).
        clean_path: clean latent for the oracle denoiser (oracle only).
        ref_path: reference sequence; when given, the return value carries
            frame metrics of the output against it.
        manifest_path: where to write the resolved config (defaults next to
            the output).
        trajectory_dir: when set, every sampling iterate is dumped there.

    Returns:
        MetricReport when ref_path is supplied, else None.
    """
    cfg.validate()
    video = load_irv(input_path)
    if video.shape[3] != 1:
        raise DataError(f"pipeline expects single-channel video, got C={video.shape[3]}")
    t_count, h, w, _ = video.shape

    mask = phasor_mask(video, PhasorConfig(harmonic=cfg.phasor_harmonic, alpha=cfg.phasor_alpha))

    flow_cfg = cfg.flow_config()
    levels = auto_flow_levels(h, w, flow_cfg.levels)
    if levels != flow_cfg.levels:
        flow_cfg = replace(flow_cfg, levels=levels)
    weights = RefinerWeights.create(flow_cfg)
    fwd, bwd = phasorflow(video, flow_cfg, weights)

    m_occ = aggregate_occlusion(fwd, bwd, cfg.tau_occ)
    m_joint = guidance.joint_mask(m_occ, mask)

    schedule = guidance.NoiseSchedule.linear(cfg.steps)
    if cfg.denoiser == "oracle":
        if clean_path is None:
            raise DataError("oracle denoiser requires a clean latent (--clean)")
        clean = load_irv(clean_path)
        if clean.shape != video.shape:
            raise DataError(
                f"clean latent shape {clean.shape} does not match input {video.shape}"
            )
        denoiser: guidance.Denoiser = guidance.OracleDenoiser(clean, schedule)
    else:
        denoiser = guidance.ZeroDenoiser()

    keep_traj = trajectory_dir is not None
    restored, trajectory = guidance.sample(
        video, denoiser, schedule, fwd, bwd, m_joint, cfg.eta, keep_trajectory=keep_traj
    )
    if keep_traj:
        traj_dir = Path(trajectory_dir)
        traj_dir.mkdir(parents=True, exist_ok=True)
        for i, z in enumerate(trajectory):
            save_irv(z, traj_dir / f"step_{i:03d}.irv")

    tad_weights = tad.TadWeights(
        gate_weight=cfg.tad_gate_weight, gate_bias=cfg.tad_gate_bias, lam=cfg.tad_lambda
    )
    decoded = tad_pass(restored, fwd, bwd, tad_weights, cfg.tad_lambda)
    output = upscale_video(decoded, cfg.scale)
    save_irv(output, output_path)

    if manifest_path is None:
        manifest_path = Path(output_path).with_suffix(".manifest.txt")
    Path(manifest_path).write_text(cfg.to_text())

    if ref_path is not None:
        ref = load_irv(ref_path)
        peak = cfg.metric_peak if cfg.metric_peak > 0 else None
        return evaluate_sequences(ref, output, peak)
    return None
