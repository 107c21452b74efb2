"""Multi-subcommand entry point wiring the modules into reproducible runs.

Exit codes: 0 success, 1 runtime or data error, 2 usage error.
"""

from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path

import numpy as np

from . import guidance, report, tad, turbsim
from .flow import FlowConfig, RefinerWeights, phasorflow
from .metrics import evaluate_sequences, temporal_profile_variance
from .phasor import PhasorConfig, phasor_mask
from .pipeline import PipelineConfig, run_pipeline
from .video import (
    SamplingLine,
    load_irv,
    sample_line,
    save_irv,
    save_pgm,
    save_profile_csv,
)


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def _nonnegative_float(text: str) -> float:
    value = float(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {value}")
    return value


def _positive_float(text: str) -> float:
    value = float(text)
    if value <= 0:
        raise argparse.ArgumentTypeError(f"must be > 0, got {value}")
    return value


def _peak(text: str) -> float | None:
    if text == "auto":
        return None
    return _positive_float(text)


def _line(text: str) -> tuple[float, float, float, float]:
    parts = text.split(",")
    if len(parts) != 4:
        raise argparse.ArgumentTypeError("line must be x0,y0,x1,y1")
    return tuple(float(p) for p in parts)  # type: ignore[return-value]


def _say(args, message: str) -> None:
    if not args.quiet:
        print(message)


def cmd_simulate(args) -> int:
    params = turbsim.TurbulenceParams(
        tilt_strength=args.tilt,
        tilt_correlation=args.corr,
        blur_sigma=args.blur,
        drift_amplitude=args.drift,
        scale=args.scale,
        seed=args.seed,
    )
    hr = load_irv(args.input)
    lr = turbsim.degrade(hr, params)
    save_irv(lr, args.output)
    manifest = args.manifest or Path(args.output).with_suffix(".manifest.txt")
    Path(manifest).write_text(turbsim.params_manifest(params))
    _say(args, f"degraded {hr.shape} -> {lr.shape}, wrote {args.output}")
    return 0


def cmd_mask(args) -> int:
    video = load_irv(args.input)
    mask = phasor_mask(video, PhasorConfig(harmonic=args.harmonic, alpha=args.alpha))
    out = Path(args.output)
    if out.suffix == ".pgm":
        save_pgm(mask, out)
    else:
        save_irv(mask[None, :, :, None], out)
    _say(args, f"phasor mask {mask.shape}: min {mask.min():.4f}, max {mask.max():.4f}")
    return 0


def cmd_flow(args) -> int:
    video = load_irv(args.input)
    cfg = FlowConfig(
        levels=args.levels,
        search_radius=args.radius,
        clip_len=args.clip,
        layers=args.layers,
        offsets=args.offsets,
        seed=args.seed,
        residual_scale=args.residual_scale if args.refine else 0.0,
    )
    weights = RefinerWeights.create(cfg)
    fwd, bwd = phasorflow(video, cfg, weights)
    flows = fwd if args.direction == "forward" else bwd
    save_irv(flows.astype(np.float32), args.output)
    if args.viz:
        magnitude = np.sqrt(flows[..., 0] ** 2 + flows[..., 1] ** 2).mean(axis=0)
        save_pgm(magnitude, args.viz)
    _say(args, f"{args.direction} flows {flows.shape}, wrote {args.output}")
    return 0


def cmd_restore(args) -> int:
    cfg = PipelineConfig(
        seed=args.seed,
        scale=args.scale,
        phasor_alpha=args.alpha,
        steps=args.steps,
        eta=args.eta,
        tau_occ=args.tau_occ,
        denoiser=args.denoiser,
        tad_lambda=args.tad_lambda,
    )
    run_pipeline(
        cfg,
        args.input,
        args.output,
        clean_path=args.clean,
        manifest_path=args.manifest,
        trajectory_dir=args.dump_trajectory,
    )
    _say(args, f"restored {args.input} -> {args.output}")
    return 0


def cmd_losses(args) -> int:
    pred = load_irv(args.pred)
    gt = load_irv(args.gt)
    mask = load_irv(args.mask)[0, :, :, 0]
    rep = tad.total_loss(pred, gt, mask, args.w_thermal, args.w_edge, args.w_diff)
    header = "thermal,edge,diff,total,w_thermal,w_edge,w_diff"
    row = (
        f"{rep.thermal:.9g},{rep.edge:.9g},{rep.diff:.9g},{rep.total:.9g},"
        f"{rep.w_thermal:.9g},{rep.w_edge:.9g},{rep.w_diff:.9g}"
    )
    Path(args.csv).write_text(header + "\n" + row + "\n")
    _say(args, f"total loss {rep.total:.6g} (thermal {rep.thermal:.6g}, "
               f"edge {rep.edge:.6g}, diff {rep.diff:.6g})")
    return 0


def cmd_evaluate(args) -> int:
    ref = load_irv(args.ref)
    test = load_irv(args.test)
    rep = evaluate_sequences(ref, test, args.peak)
    lines = ["frame,psnr_db,ssim"]
    for i, (p, s) in enumerate(zip(rep.psnr_frames, rep.ssim_frames)):
        lines.append(f"{i},{'inf' if math.isinf(p) else format(p, '.9g')},{s:.9g}")
    mean_p = rep.psnr_mean
    lines.append(f"mean,{'inf' if math.isinf(mean_p) else format(mean_p, '.9g')},{rep.ssim_mean:.9g}")
    Path(args.csv).write_text("\n".join(lines) + "\n")
    plot_path = args.plot or Path(args.csv).with_suffix(".png")
    report.save_metric_figure(rep, plot_path)
    _say(args, f"mean PSNR {mean_p:.4g} dB, mean SSIM {rep.ssim_mean:.6g} "
               f"-> {args.csv}, {plot_path}")
    return 0


def cmd_profile(args) -> int:
    video = load_irv(args.input)
    x0, y0, x1, y1 = args.line
    line = SamplingLine(x0, y0, x1, y1, samples=args.samples)
    matrix = sample_line(video, line)
    save_profile_csv(matrix, args.csv)
    plot_path = args.plot or Path(args.csv).with_suffix(".png")
    report.save_profile_figure(matrix, plot_path)
    variance = temporal_profile_variance(video, line)
    _say(args, f"profile {matrix.shape}, mean temporal variance {variance.mean():.6g} "
               f"-> {args.csv}, {plot_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="turbvsr",
        description="Turbulence-aware infrared video restoration toolchain",
    )
    sub = p.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="RNG seed (default 0)")
    common.add_argument("--threads", type=_positive_int, default=1,
                        help="worker threads (reserved; processing is single-threaded)")
    common.add_argument("--quiet", action="store_true", help="suppress progress output")

    ps = sub.add_parser("simulate", parents=[common],
                        help="degrade a clean sequence with synthetic turbulence")
    ps.add_argument("--input", required=True, help="clean IRV sequence")
    ps.add_argument("--tilt", type=_nonnegative_float, default=0.0, help="tilt RMS in pixels")
    ps.add_argument("--corr", type=_nonnegative_float, default=4.0,
                    help="tilt spatial correlation radius in pixels")
    ps.add_argument("--blur", type=_nonnegative_float, default=0.0, help="Gaussian PSF sigma")
    ps.add_argument("--drift", type=_nonnegative_float, default=0.0,
                    help="grayscale drift amplitude")
    ps.add_argument("--scale", type=_positive_int, default=1, help="integer downscale factor")
    ps.add_argument("--output", required=True, help="degraded IRV output")
    ps.add_argument("--output-hr", default=None, help=argparse.SUPPRESS)
    ps.add_argument("--manifest", default=None, help="parameter manifest path")
    ps.set_defaults(func=cmd_simulate)

    pm = sub.add_parser("mask", parents=[common], help="compute the phasor mask")
    pm.add_argument("--input", required=True)
    pm.add_argument("--alpha", type=_positive_float, default=10.0, help="logistic sharpness")
    pm.add_argument("--harmonic", type=_positive_int, default=1, help="temporal harmonic index")
    pm.add_argument("--output", required=True, help=".irv or .pgm output")
    pm.set_defaults(func=cmd_mask)

    pf = sub.add_parser("flow", parents=[common], help="estimate bidirectional flows")
    pf.add_argument("--input", required=True)
    pf.add_argument("--refine", action="store_true",
                    help="activate the residual refinement heads")
    pf.add_argument("--clip", type=_positive_int, default=4, help="frames per clip")
    pf.add_argument("--layers", type=_positive_int, default=2, help="refinement layers")
    pf.add_argument("--offsets", type=_positive_int, default=3, help="averaged offsets per update")
    pf.add_argument("--levels", type=_positive_int, default=3, help="pyramid levels")
    pf.add_argument("--radius", type=_positive_int, default=4, help="search radius per level")
    pf.add_argument("--residual-scale", type=_nonnegative_float, default=0.1,
                    help="residual head weight scale when --refine is set")
    pf.add_argument("--direction", choices=("forward", "backward"), default="forward")
    pf.add_argument("--output", required=True, help="T-1 x H x W x 2 IRV tensor")
    pf.add_argument("--viz", default=None, help="optional PGM magnitude rendering")
    pf.set_defaults(func=cmd_flow)

    pr = sub.add_parser("restore", parents=[common], help="run the restoration pipeline")
    pr.add_argument("--input", required=True, help="degraded IRV sequence")
    pr.add_argument("--steps", type=_positive_int, default=20, help="sampling steps")
    pr.add_argument("--eta", type=_nonnegative_float, default=0.02, help="guidance strength")
    pr.add_argument("--tau-occ", type=_positive_float, default=1.0,
                    help="occlusion consistency threshold in pixels")
    pr.add_argument("--alpha", type=_positive_float, default=10.0, help="phasor mask sharpness")
    pr.add_argument("--scale", type=_positive_int, default=1, help="output upsampling factor")
    pr.add_argument("--denoiser", choices=("oracle", "zero"), default="zero")
    pr.add_argument("--clean", default=None, help="clean IRV latent (oracle denoiser only)")
    pr.add_argument("--tad-lambda", type=_nonnegative_float, default=0.0,
                    help="structure-attention strength in the decoder pass")
    pr.add_argument("--output", required=True)
    pr.add_argument("--manifest", default=None, help="resolved-config manifest path")
    pr.add_argument("--dump-trajectory", default=None, help="directory for per-step latents")
    pr.set_defaults(func=cmd_restore)

    pl = sub.add_parser("losses", parents=[common], help="evaluate reconstruction losses")
    pl.add_argument("--pred", required=True)
    pl.add_argument("--gt", required=True)
    pl.add_argument("--mask", required=True, help="phasor mask as 1xHxWx1 IRV")
    pl.add_argument("--w-thermal", type=_nonnegative_float, default=1.0)
    pl.add_argument("--w-edge", type=_nonnegative_float, default=0.5)
    pl.add_argument("--w-diff", type=_nonnegative_float, default=0.5)
    pl.add_argument("--csv", required=True)
    pl.set_defaults(func=cmd_losses)

    pe = sub.add_parser("evaluate", parents=[common], help="PSNR/SSIM report")
    pe.add_argument("--ref", required=True)
    pe.add_argument("--test", required=True)
    pe.add_argument("--peak", type=_peak, default=None,
                    help="'auto' (reference max) or a positive value")
    pe.add_argument("--csv", required=True)
    pe.add_argument("--plot", default=None, help="figure path (default: csv with .png)")
    pe.set_defaults(func=cmd_evaluate)

    pp = sub.add_parser("profile", parents=[common],
                        help="temporal grayscale profile along a line")
    pp.add_argument("--input", required=True)
    pp.add_argument("--line", type=_line, required=True, help="x0,y0,x1,y1 in pixels")
    pp.add_argument("--samples", type=_positive_int, default=64)
    pp.add_argument("--csv", required=True)
    pp.add_argument("--plot", default=None, help="figure path (default: csv with .png)")
    pp.set_defaults(func=cmd_profile)

    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
