"""Heat-aware guidance for the reverse sampling trajectory.

The guidance energy is the symmetric L1 warping error between bidirectional
flows.  Its masked subgradient is computed exactly: the warp operator is
linear in the image, so the chain rule reduces to sign maps pushed through
the warp adjoint.  The denoising update is

    z_t = z_{t+1} - sigma_t^2 * eps(z_{t+1}, t) - g_t,

with g_t = eta * sigma_t^2 * grad(M_joint o E)(z_{t+1}).  The sampler is
deterministic: the update contains no injected noise term.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np

from .errors import DataError, ShapeError
from .video import validate_video, warp, warp_adjoint


@dataclass(frozen=True)
class GuidanceConfig:
    """Guidance strength, occlusion threshold, and verification step size."""

    eta: float = 0.02
    tau_occ: float = 1.0
    fd_step: float = 1e-4

    def validate(self) -> None:
        if self.eta < 0:
            raise DataError(f"eta must be >= 0, got {self.eta}")
        if self.tau_occ <= 0:
            raise DataError(f"tau_occ must be positive, got {self.tau_occ}")


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step noise variances, strictly decreasing toward 0 at t = 0."""

    sigma2: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.sigma2, dtype=np.float64)
        if s.ndim != 1 or s.size < 1:
            raise DataError("schedule must be a non-empty 1-D variance array")
        if np.any(s <= 0):
            raise DataError("noise variances must be positive")
        if s.size > 1 and np.any(np.diff(s) <= 0):
            raise DataError("noise variances must increase strictly with t")
        object.__setattr__(self, "sigma2", s)

    @property
    def steps(self) -> int:
        return int(self.sigma2.size)

    @classmethod
    def linear(cls, steps: int = 20, top: float = 1.0, bottom: float = 1e-4) -> "NoiseSchedule":
        """Linear variance ramp from `bottom` at t=0 up to `top` at t=steps-1."""
        if steps < 1:
            raise DataError(f"steps must be >= 1, got {steps}")
        if steps == 1:
            return cls(np.array([top]))
        return cls(np.linspace(bottom, top, steps))


class Denoiser(Protocol):
    """Noise-prediction contract: shape-preserving, deterministic."""

    def __call__(self, z: np.ndarray, t: int) -> np.ndarray: ...


class ZeroDenoiser:
    """Predicts zero noise everywhere; the update reduces to pure guidance."""

    def __call__(self, z: np.ndarray, t: int) -> np.ndarray:
        return np.zeros_like(z)


class OracleDenoiser:
    """Analytic denoiser with access to a clean latent.

    eps(z, t) = (z - z_clean) / sigma_t^2, so a single noise-free update step
    lands exactly on the clean latent.  Used to exercise the sampling
    machinery without trained weights.
    """

    def __init__(self, z_clean: np.ndarray, schedule: NoiseSchedule):
        self.z_clean = np.asarray(z_clean, dtype=np.float32)
        self.schedule = schedule

    def __call__(self, z: np.ndarray, t: int) -> np.ndarray:
        return (z - self.z_clean) / self.schedule.sigma2[t]


def _check_flow_lists(z: np.ndarray, flows_fwd: np.ndarray, flows_bwd: np.ndarray):
    n = z.shape[0]
    fwd = np.asarray(flows_fwd, dtype=np.float32)
    bwd = np.asarray(flows_bwd, dtype=np.float32)
    for name, f in (("forward", fwd), ("backward", bwd)):
        if f.shape != (n - 1,) + z.shape[1:3] + (2,):
            raise ShapeError(
                f"{name} flows must be (N-1, H, W, 2) = {(n - 1,) + z.shape[1:3] + (2,)}, got {f.shape}"
            )
    return fwd, bwd


def warping_energy(
    z: np.ndarray, flows_fwd: np.ndarray, flows_bwd: np.ndarray
) -> tuple[float, np.ndarray]:
    """Symmetric bidirectional warping error of a latent sequence.

    For each adjacent pair: frame i warped forward by backward[i] is compared
    with frame i+1, and frame i+1 warped back by forward[i] is compared with
    frame i.  Returns the scalar L1 sum (accumulated in float64) and the
    stacked per-pixel absolute-difference maps, shape (2*(N-1), H, W, C).
    """
    lat = validate_video(z)
    n = lat.shape[0]
    if n < 2:
        raise ShapeError(f"warping energy needs at least 2 frames, got {n}")
    fwd, bwd = _check_flow_lists(lat, flows_fwd, flows_bwd)
    maps = []
    for k in range(n - 1):
        maps.append(np.abs(warp(lat[k], bwd[k]) - lat[k + 1]))
    for k in range(1, n):
        maps.append(np.abs(warp(lat[k], fwd[k - 1]) - lat[k - 1]))
    stacked = np.stack(maps)
    total = float(stacked.sum(dtype=np.float64))
    return total, stacked


def occlusion_mask(
    flow_fwd: np.ndarray, flow_bwd: np.ndarray, tau_occ: float = 1.0
) -> np.ndarray:
    """Forward-backward consistency mask for one frame pair.

    A pixel is reliable (mask 1) when composing the forward flow with the
    backward flow sampled at the forward target leaves a residual below
    tau_occ pixels; otherwise 0.  Defined on the forward flow's grid.
    """
    fwd = np.asarray(flow_fwd, dtype=np.float32)
    bwd = np.asarray(flow_bwd, dtype=np.float32)
    if fwd.shape != bwd.shape or fwd.ndim != 3 or fwd.shape[2] != 2:
        raise ShapeError(f"flow shapes must match as (H,W,2), got {fwd.shape} vs {bwd.shape}")
    if tau_occ <= 0:
        raise DataError(f"tau_occ must be positive, got {tau_occ}")
    round_trip = fwd + warp(bwd, fwd)
    residual = np.sqrt(round_trip[..., 0] ** 2 + round_trip[..., 1] ** 2)
    return (residual < tau_occ).astype(np.float32)


def joint_mask(m_occ: np.ndarray, m_phasor: np.ndarray) -> np.ndarray:
    """Elementwise product of the occlusion and phasor masks."""
    a = np.asarray(m_occ, dtype=np.float32)
    b = np.asarray(m_phasor, dtype=np.float32)
    if a.shape != b.shape:
        raise ShapeError(f"mask shapes differ: {a.shape} vs {b.shape}")
    return a * b


def masked_warping_gradient(
    z: np.ndarray, flows_fwd: np.ndarray, flows_bwd: np.ndarray, mask: np.ndarray
) -> np.ndarray:
    """Exact subgradient of sum_x mask(x) * E_maps(x) with respect to z.

    Uses sign with sign(0) = 0 at L1 kinks.  Each pair contributes through
    the direct comparison frame and, via the warp adjoint, through the
    warped source frame.
    """
    lat = np.asarray(z)
    fwd, bwd = _check_flow_lists(lat, flows_fwd, flows_bwd)
    m = np.asarray(mask)
    if m.shape != lat.shape[1:3]:
        raise ShapeError(f"mask shape {m.shape} does not match frames {lat.shape[1:3]}")
    m = m[:, :, None]
    grad = np.zeros_like(lat)
    n = lat.shape[0]
    for k in range(n - 1):
        s = m * np.sign(warp(lat[k], bwd[k]) - lat[k + 1])
        grad[k + 1] -= s
        grad[k] += warp_adjoint(s, bwd[k])
    for k in range(1, n):
        s = m * np.sign(warp(lat[k], fwd[k - 1]) - lat[k - 1])
        grad[k - 1] -= s
        grad[k] += warp_adjoint(s, fwd[k - 1])
    return grad


def guidance_term(
    z: np.ndarray,
    flows_fwd: np.ndarray,
    flows_bwd: np.ndarray,
    m_joint: np.ndarray,
    schedule: NoiseSchedule,
    t: int,
    eta: float,
) -> np.ndarray:
    """Heat-aware guidance g_t = eta * sigma_t^2 * grad(M_joint o E)(z)."""
    if not 0 <= t < schedule.steps:
        raise DataError(f"step {t} outside schedule of {schedule.steps} steps")
    if eta == 0.0:
        return np.zeros_like(np.asarray(z))
    grad = masked_warping_gradient(z, flows_fwd, flows_bwd, m_joint)
    return (eta * schedule.sigma2[t]) * grad


def guided_step(
    z_next: np.ndarray,
    t: int,
    denoiser: Denoiser,
    schedule: NoiseSchedule,
    flows_fwd: np.ndarray,
    flows_bwd: np.ndarray,
    m_joint: np.ndarray,
    eta: float,
) -> np.ndarray:
    """One adjusted denoising update from step t+1 down to t."""
    if not 0 <= t < schedule.steps:
        raise DataError(f"step {t} outside schedule of {schedule.steps} steps")
    z_next = np.asarray(z_next)
    sigma2 = schedule.sigma2[t]
    out = z_next - sigma2 * denoiser(z_next, t)
    if eta != 0.0:
        out = out - guidance_term(z_next, flows_fwd, flows_bwd, m_joint, schedule, t, eta)
    return out.astype(z_next.dtype, copy=False)


def sample(
    z_init: np.ndarray,
    denoiser: Denoiser,
    schedule: NoiseSchedule,
    flows_fwd: np.ndarray,
    flows_bwd: np.ndarray,
    m_joint: np.ndarray,
    eta: float,
    keep_trajectory: bool = False,
) -> tuple[np.ndarray, list[np.ndarray]]:
    """Full reverse loop: guided_step from t = steps-1 down to 0.

    Returns the final latent and, when requested, the iterate after every
    step (earliest first corresponds to the highest t).
    """
    z = np.asarray(z_init, dtype=np.float32)
    trajectory: list[np.ndarray] = []
    for t in range(schedule.steps - 1, -1, -1):
        z = guided_step(z, t, denoiser, schedule, flows_fwd, flows_bwd, m_joint, eta)
        if keep_trajectory:
            trajectory.append(z.copy())
    return z, trajectory
