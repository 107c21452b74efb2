"""Optical flow: coarse pyramidal block matching plus mask-gated refinement.

The coarse estimator is classical coarse-to-fine block matching (SSD over a
small integer search window per pyramid level, parabolic sub-pixel peak),
chosen so the artifact carries no pretrained weights.  On top of it sits a
refinement recurrence: shallow per-frame features are segmented into clips,
and for each clip a stack of layers predicts averaged flow residuals and
re-aggregates features with phasor-gated attention over the source frames.
Refined features are carried forward clip by clip, so later clips see the
improved representations of earlier ones.

All learnable-shaped weights are built deterministically from a seed.  The
documented default zero-initializes the residual heads, which makes the
refined flows equal the coarse flows exactly; `residual_scale` > 0 activates
them for tests that need a nonzero path.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from itertools import product

import numpy as np
from scipy import ndimage

from .errors import DataError, ShapeError
from .phasor import PhasorConfig, phasor_mask
from .video import resize_bilinear, validate_video, warp


@dataclass(frozen=True)
class FlowConfig:
    """Coarse-search and refinement hyperparameters."""

    levels: int = 3
    search_radius: int = 4
    block_radius: int = 3
    clip_len: int = 4       # N frames per clip
    layers: int = 2         # L refinement layers
    offsets: int = 3        # M residual offsets averaged per update
    channels: int = 16      # C feature width
    hidden: int = 16
    mask_alpha: float = 10.0
    mask_harmonic: int = 1
    seed: int = 0
    residual_scale: float = 0.0


@dataclass(frozen=True)
class RefinerWeights:
    """Deterministically seeded weights for the flow refiner.

    Residual prediction heads (both the per-layer head and the final-offset
    head) have their output layers scaled by `residual_scale`; the default of
    zero leaves every flow update at exactly zero.
    """

    shallow_kernel: np.ndarray   # (3, 3, 1, C)
    shallow_bias: np.ndarray     # (C,)
    res1_kernel: np.ndarray      # (3, 3, 2C+2, hidden)
    res1_bias: np.ndarray
    res2_kernel: np.ndarray      # (3, 3, hidden, 2M)
    res2_bias: np.ndarray
    fin1_kernel: np.ndarray      # final-offset head, same shapes as res*
    fin1_bias: np.ndarray
    fin2_kernel: np.ndarray
    fin2_bias: np.ndarray
    p_q: np.ndarray              # (C, C)
    p_k: np.ndarray
    p_v: np.ndarray
    mlp_w1: np.ndarray           # (C, C)
    mlp_b1: np.ndarray
    mlp_w2: np.ndarray
    mlp_b2: np.ndarray
    channels: int
    offsets: int

    @classmethod
    def create(cls, cfg: FlowConfig) -> "RefinerWeights":
        gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence([cfg.seed, 97])))
        c, hid, m = cfg.channels, cfg.hidden, cfg.offsets

        def uniform(shape, fan_in):
            bound = 1.0 / np.sqrt(fan_in)
            return gen.uniform(-bound, bound, shape).astype(np.float32)

        cin = 2 * c + 2
        return cls(
            shallow_kernel=uniform((3, 3, 1, c), 9),
            shallow_bias=np.zeros(c, dtype=np.float32),
            res1_kernel=uniform((3, 3, cin, hid), 9 * cin),
            res1_bias=np.zeros(hid, dtype=np.float32),
            res2_kernel=(cfg.residual_scale * uniform((3, 3, hid, 2 * m), 9 * hid)).astype(np.float32),
            res2_bias=np.zeros(2 * m, dtype=np.float32),
            fin1_kernel=uniform((3, 3, cin, hid), 9 * cin),
            fin1_bias=np.zeros(hid, dtype=np.float32),
            fin2_kernel=(cfg.residual_scale * uniform((3, 3, hid, 2 * m), 9 * hid)).astype(np.float32),
            fin2_bias=np.zeros(2 * m, dtype=np.float32),
            p_q=uniform((c, c), c),
            p_k=uniform((c, c), c),
            p_v=uniform((c, c), c),
            mlp_w1=uniform((c, c), c),
            mlp_b1=np.zeros(c, dtype=np.float32),
            mlp_w2=uniform((c, c), c),
            mlp_b2=np.zeros(c, dtype=np.float32),
            channels=c,
            offsets=m,
        )

    def with_identity_shallow(self) -> "RefinerWeights":
        """Single-channel identity feature extractor, for exactness tests."""
        kernel = np.zeros((3, 3, 1, 1), dtype=np.float32)
        kernel[1, 1, 0, 0] = 1.0
        return replace(self, shallow_kernel=kernel, shallow_bias=np.zeros(1, dtype=np.float32))


@dataclass(frozen=True)
class ClipFeatures:
    """Features of one clip of consecutive frames."""

    index: int
    start: int
    frames: np.ndarray  # (N, H, W, C)
    layer: int = 0


def _conv3x3(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """3x3 convolution with replicate padding; x is (..., H, W, Cin)."""
    pad = [(0, 0)] * (x.ndim - 3) + [(1, 1), (1, 1), (0, 0)]
    xp = np.pad(x, pad, mode="edge")
    h, w = x.shape[-3], x.shape[-2]
    acc = None
    for dy in range(3):
        for dx in range(3):
            term = xp[..., dy : dy + h, dx : dx + w, :] @ kernel[dy, dx]
            acc = term if acc is None else acc + term
    return acc + bias


def softmax(x: np.ndarray, axis: int) -> np.ndarray:
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def _downsample2(img: np.ndarray) -> np.ndarray:
    h, w = img.shape
    h2, w2 = h - h % 2, w - w % 2
    view = img[:h2, :w2].reshape(h2 // 2, 2, w2 // 2, 2)
    return view.mean(axis=(1, 3))


def _integer_shift(img: np.ndarray, du: int, dv: int) -> np.ndarray:
    """img sampled at (x+du, y+dv) with clamp-to-edge."""
    h, w = img.shape
    rows = np.clip(np.arange(h) + dv, 0, h - 1)
    cols = np.clip(np.arange(w) + du, 0, w - 1)
    return img[rows][:, cols]


def _search_offsets(radius: int) -> list[tuple[int, int]]:
    # Candidates ordered by distance from zero so that argmin's first-hit
    # tie-break biases toward zero motion on flat or ambiguous content.
    offs = list(product(range(-radius, radius + 1), repeat=2))
    offs.sort(key=lambda o: (o[0] * o[0] + o[1] * o[1], abs(o[1]), abs(o[0]), o[1], o[0]))
    return offs


def coarse_flow(
    src: np.ndarray,
    dst: np.ndarray,
    levels: int = 3,
    search_radius: int = 4,
    block_radius: int = 3,
) -> np.ndarray:
    """Coarse-to-fine block-matching flow from src into dst.

    Args:
        src: (H, W) or (H, W, 1) frame whose pixel grid the flow lives on.
        dst: frame of the same shape being matched against.
        levels: pyramid depth; requires min(H, W) / 2**levels >= 8.
        search_radius: +-pixels searched per level.
        block_radius: half-size of the SSD comparison block.

    Returns:
        (H, W, 2) float32 field f with src(x) ~= dst(x + f(x)); sub-pixel
        precision comes from a parabolic fit around the best integer offset.
    """
    a = np.asarray(src, dtype=np.float32)
    b = np.asarray(dst, dtype=np.float32)
    if a.ndim == 3 and a.shape[2] == 1:
        a = a[:, :, 0]
    if b.ndim == 3 and b.shape[2] == 1:
        b = b[:, :, 0]
    if a.shape != b.shape or a.ndim != 2:
        raise ShapeError(f"frames must be equal single-channel shapes, got {src.shape} vs {dst.shape}")
    if levels < 1:
        raise DataError(f"levels must be >= 1, got {levels}")
    if min(a.shape) / 2**levels < 8:
        raise DataError(
            f"pyramid too deep: min dim {min(a.shape)} over 2**{levels} is below 8"
        )

    pyr_a, pyr_b = [a], [b]
    for _ in range(levels - 1):
        pyr_a.append(_downsample2(pyr_a[-1]))
        pyr_b.append(_downsample2(pyr_b[-1]))

    offsets = _search_offsets(search_radius)
    block = 2 * block_radius + 1
    r = search_radius
    flow = np.zeros(pyr_a[-1].shape + (2,), dtype=np.float32)

    for lvl in range(levels - 1, -1, -1):
        la, lb = pyr_a[lvl], pyr_b[lvl]
        h, w = la.shape
        if flow.shape[:2] != (h, w):
            ph, pw = flow.shape[:2]
            up = np.empty((h, w, 2), dtype=np.float32)
            up[..., 0] = resize_bilinear(flow[..., 0], h, w) * (w / pw)
            up[..., 1] = resize_bilinear(flow[..., 1], h, w) * (h / ph)
            flow = up
        warped = warp(lb, flow)

        cost_grid = np.empty((2 * r + 1, 2 * r + 1, h, w), dtype=np.float32)
        ordered = np.empty((len(offsets), h, w), dtype=np.float32)
        for i, (du, dv) in enumerate(offsets):
            diff = la - _integer_shift(warped, du, dv)
            cost = ndimage.uniform_filter(diff * diff, size=block, mode="nearest")
            ordered[i] = cost
            cost_grid[dv + r, du + r] = cost
        best = np.argmin(ordered, axis=0)  # first minimum: zero-biased order
        off_arr = np.asarray(offsets, dtype=np.float32)
        du_best = off_arr[best, 0]
        dv_best = off_arr[best, 1]

        iu = du_best.astype(np.intp) + r
        iv = dv_best.astype(np.intp) + r
        gy, gx = np.mgrid[0:h, 0:w]
        flow = flow.copy()
        flow[..., 0] += du_best + _parabolic(cost_grid, iv, iu, gy, gx, axis=1, size=2 * r + 1)
        flow[..., 1] += dv_best + _parabolic(cost_grid, iv, iu, gy, gx, axis=0, size=2 * r + 1)
    return flow


def _parabolic(cost_grid, iv, iu, gy, gx, axis: int, size: int) -> np.ndarray:
    """Sub-pixel offset from a 3-point parabola along one search axis."""
    idx = iv if axis == 0 else iu
    interior = (idx > 0) & (idx < size - 1)
    idx_m = np.clip(idx - 1, 0, size - 1)
    idx_p = np.clip(idx + 1, 0, size - 1)
    if axis == 0:
        c0 = cost_grid[iv, iu, gy, gx]
        cm = cost_grid[idx_m, iu, gy, gx]
        cp = cost_grid[idx_p, iu, gy, gx]
    else:
        c0 = cost_grid[iv, iu, gy, gx]
        cm = cost_grid[iv, idx_m, gy, gx]
        cp = cost_grid[iv, idx_p, gy, gx]
    denom = cm - 2.0 * c0 + cp
    with np.errstate(divide="ignore", invalid="ignore"):
        delta = 0.5 * (cm - cp) / denom
    delta = np.where((denom > 1e-12) & interior, delta, 0.0)
    return np.clip(delta, -0.5, 0.5).astype(np.float32)


def _shallow_all(video: np.ndarray, weights: RefinerWeights) -> np.ndarray:
    vid = validate_video(video).astype(np.float32)
    if vid.shape[3] != 1:
        raise ShapeError(f"shallow features expect single-channel video, got C={vid.shape[3]}")
    return _conv3x3(vid, weights.shallow_kernel, weights.shallow_bias)


def shallow_features(
    video: np.ndarray, weights: RefinerWeights, clip_len: int = 4
) -> list[ClipFeatures]:
    """One 3x3 convolution to C channels, segmented into clips of N frames.

    The last clip is padded by repeating the final frame.
    """
    feats = _shallow_all(video, weights)
    t_count = feats.shape[0]
    clips = []
    for idx, start in enumerate(range(0, t_count, clip_len)):
        chunk = feats[start : start + clip_len]
        if chunk.shape[0] < clip_len:
            pad = np.repeat(chunk[-1:], clip_len - chunk.shape[0], axis=0)
            chunk = np.concatenate([chunk, pad], axis=0)
        clips.append(ClipFeatures(index=idx, start=start, frames=chunk))
    return clips


def predict_residual(
    aligned: np.ndarray, current: np.ndarray, flows: np.ndarray, weights: RefinerWeights
) -> np.ndarray:
    """Residual offsets from a two-layer conv head over (aligned, current, flow).

    Inputs are (..., H, W, C), (..., H, W, C) and (..., H, W, 2); the head
    emits 2M channels read as M candidate (dx, dy) fields, returned as
    (..., M, H, W, 2).
    """
    aligned = np.asarray(aligned, dtype=np.float32)
    current = np.asarray(current, dtype=np.float32)
    flows = np.asarray(flows, dtype=np.float32)
    if aligned.shape != current.shape or aligned.shape[:-1] != flows.shape[:-1]:
        raise ShapeError(
            f"inconsistent residual-head inputs: {aligned.shape}, {current.shape}, {flows.shape}"
        )
    x = np.concatenate([aligned, current, flows], axis=-1)
    hid = np.maximum(_conv3x3(x, weights.res1_kernel, weights.res1_bias), 0.0)
    out = _conv3x3(hid, weights.res2_kernel, weights.res2_bias)
    return _split_offset_fields(out, weights.offsets)


def _split_offset_fields(out: np.ndarray, offsets: int) -> np.ndarray:
    """Reshape a (..., H, W, 2M) head output into (..., M, H, W, 2)."""
    lead = out.shape[:-3]
    h, w = out.shape[-3], out.shape[-2]
    fields = out.reshape(lead + (h, w, offsets, 2))
    return np.moveaxis(fields, -2, -4)


def _final_offset(
    aligned: np.ndarray, current: np.ndarray, flows: np.ndarray, weights: RefinerWeights
) -> np.ndarray:
    """Final-offset head: same structure as the residual head, own weights."""
    x = np.concatenate([aligned, current, flows], axis=-1)
    hid = np.maximum(_conv3x3(x, weights.fin1_kernel, weights.fin1_bias), 0.0)
    out = _conv3x3(hid, weights.fin2_kernel, weights.fin2_bias)
    return _split_offset_fields(out, weights.offsets)


def _mlp(x: np.ndarray, weights: RefinerWeights) -> np.ndarray:
    hid = np.maximum(x @ weights.mlp_w1 + weights.mlp_b1, 0.0)
    return hid @ weights.mlp_w2 + weights.mlp_b2


def refine_flow_step(
    src_feats: np.ndarray,
    tgt_feats: np.ndarray,
    flows: np.ndarray,
    mask: np.ndarray,
    weights: RefinerWeights,
    collect_diagnostics: bool = False,
):
    """One refinement layer over a clip of aligned frame pairs.

    Args:
        src_feats: (n, H, W, C) features of the source frames.
        tgt_feats: (n, H, W, C) features of the target frames.
        flows: (n, H, W, 2) current flow per pair (target grid into source).
        mask: (H, W) phasor mask gating both the warp flow and the attention.
        weights: refiner weights.
        collect_diagnostics: also return the pre-mask softmax and the
            mask-weighted attention term.

    Returns:
        (refined_flows, refined_target_features[, diagnostics]).  The flow
        update averages the M predicted residuals; the feature update is the
        mask-modulated attention over the n source frames plus an MLP branch
        on the pre-attention target features.
    """
    src = np.asarray(src_feats, dtype=np.float32)
    tgt = np.asarray(tgt_feats, dtype=np.float32)
    flows = np.asarray(flows, dtype=np.float32)
    mask = np.asarray(mask, dtype=np.float32)
    if src.shape != tgt.shape or src.shape[:3] != flows.shape[:3]:
        raise ShapeError(
            f"inconsistent refine inputs: src {src.shape}, tgt {tgt.shape}, flows {flows.shape}"
        )
    if mask.shape != src.shape[1:3]:
        raise ShapeError(f"mask shape {mask.shape} does not match frames {src.shape[1:3]}")
    n = src.shape[0]
    c = weights.channels

    gated = mask[None, :, :, None] * flows
    aligned = np.stack([warp(src[j], gated[j]) for j in range(n)])
    residuals = predict_residual(aligned, tgt, flows, weights)  # (n, M, H, W, 2)
    new_flows = flows + residuals.mean(axis=1)

    # Keys/values are sampled from the source frames at the refined offsets.
    q = tgt @ weights.p_q
    keys = np.stack([warp(src[j] @ weights.p_k, new_flows[j]) for j in range(n)])
    vals = np.stack([warp(src[j] @ weights.p_v, new_flows[j]) for j in range(n)])
    scores = np.einsum("ihwc,jhwc->ijhw", q, keys) / np.sqrt(c)
    att = softmax(scores, axis=1)
    weighted = mask[None, None, :, :] * att
    attended = np.einsum("ijhw,jhwc->ihwc", weighted, vals)
    refined = attended + _mlp(tgt, weights)

    if collect_diagnostics:
        return new_flows, refined, {"softmax": att, "attended": attended}
    return new_flows, refined


def _refine_direction(
    feats: np.ndarray,
    pair_flows: np.ndarray,
    mask: np.ndarray,
    weights: RefinerWeights,
    cfg: FlowConfig,
) -> np.ndarray:
    """Refine adjacent-pair flows; pair i maps frame i+1's grid into frame i.

    Clips of `clip_len` target frames are processed in order, locally running
    `layers` refinement steps and finally the recomputed offset from the
    final-offset head; refined target features are written back so later
    clips consume them (the global recurrence).
    """
    t_count = feats.shape[0]
    feats = [feats[i] for i in range(t_count)]
    flows = [pair_flows[i] for i in range(t_count - 1)]

    for clip_start in range(0, t_count, cfg.clip_len):
        targets = [
            t for t in range(max(clip_start, 1), min(clip_start + cfg.clip_len, t_count))
        ]
        if not targets:
            continue
        src = np.stack([feats[t - 1] for t in targets])
        tgt = np.stack([feats[t] for t in targets])
        cur = np.stack([flows[t - 1] for t in targets])
        tgt_before_final = tgt
        for _ in range(cfg.layers):
            tgt_before_final = tgt
            cur, tgt = refine_flow_step(src, tgt, cur, mask, weights)
        gated = mask[None, :, :, None] * cur
        aligned = np.stack([warp(src[j], gated[j]) for j in range(len(targets))])
        final = _final_offset(aligned, tgt_before_final, cur, weights)
        cur = cur + final.mean(axis=1)
        for j, t in enumerate(targets):
            flows[t - 1] = cur[j]
            feats[t] = tgt[j]
    return np.stack(flows)


def phasorflow(
    video: np.ndarray, cfg: FlowConfig, weights: RefinerWeights
) -> tuple[np.ndarray, np.ndarray]:
    """Bidirectional refined flows for a sequence.

    Returns (forward, backward), each (T-1, H, W, 2):
      forward[i] lives on frame i's grid and samples frame i+1;
      backward[i] lives on frame i+1's grid and samples frame i.
    Coarse block-matching flows seed the recurrence; with zero-initialized
    residual heads the output equals the coarse flows exactly.
    """
    vid = validate_video(video).astype(np.float32)
    t_count = vid.shape[0]
    if t_count < 2:
        raise DataError(f"flow needs at least two frames, got T={t_count}")
    mask = phasor_mask(vid, PhasorConfig(harmonic=cfg.mask_harmonic, alpha=cfg.mask_alpha))
    feats = _shallow_all(vid, weights)
    frames = vid[:, :, :, 0]

    fwd0 = np.stack(
        [
            coarse_flow(frames[i], frames[i + 1], cfg.levels, cfg.search_radius, cfg.block_radius)
            for i in range(t_count - 1)
        ]
    )
    bwd0 = np.stack(
        [
            coarse_flow(frames[i + 1], frames[i], cfg.levels, cfg.search_radius, cfg.block_radius)
            for i in range(t_count - 1)
        ]
    )

    bwd = _refine_direction(feats, bwd0, mask, weights, cfg)
    # The forward direction is the backward direction of the reversed clip.
    fwd_rev = _refine_direction(feats[::-1], fwd0[::-1], mask, weights, cfg)
    fwd = fwd_rev[::-1]
    return np.ascontiguousarray(fwd), np.ascontiguousarray(bwd)
