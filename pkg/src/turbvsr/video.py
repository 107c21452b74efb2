"""Video tensors, IRV container I/O, warping, and discrete spatial operators.

A video tensor is a float ndarray of shape (T, H, W, C): frame-major,
row-major, channel-last.  Canonical storage dtype is float32; the spatial
operators preserve the dtype they are given so callers can run them in
float64 when extra precision is needed.

A flow field is an (H, W, 2) array of per-pixel displacements (dx, dy) in
pixels, +dx rightward and +dy downward.  Warping is backward: the output at
x is the input sampled at x + flow(x), bilinearly, with out-of-bounds
coordinates clamped to the nearest edge pixel.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import DataError, FormatError, PayloadError, RangeError, ShapeError

IRV_MAGIC = b"IRV1"
IRV_HEADER_BYTES = 20  # 4-byte magic + four u32 little-endian dims

_SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
_SOBEL_Y = _SOBEL_X.T
_LAPLACIAN = np.array([[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]])


def validate_video(tensor: np.ndarray) -> np.ndarray:
    """Check the (T, H, W, C) contract and finiteness; returns the array."""
    arr = np.asarray(tensor)
    if arr.ndim != 4:
        raise ShapeError(f"video tensor must be 4-D (T,H,W,C), got shape {arr.shape}")
    if min(arr.shape) < 1:
        raise ShapeError(f"video tensor dims must all be >= 1, got {arr.shape}")
    if not np.issubdtype(arr.dtype, np.floating):
        arr = arr.astype(np.float32)
    if not np.all(np.isfinite(arr)):
        raise DataError("video tensor contains non-finite values")
    return arr


def save_irv(tensor: np.ndarray, path: str | Path) -> None:
    """Write a video tensor to the IRV1 container.

    Layout: bytes 0-3 ASCII "IRV1"; bytes 4-19 four u32 little-endian dims
    T, H, W, C; then T*H*W*C float32 little-endian values in frame-major,
    row-major, channel-last order.
    """
    arr = validate_video(tensor)
    t, h, w, c = arr.shape
    header = IRV_MAGIC + struct.pack("<4I", t, h, w, c)
    payload = np.ascontiguousarray(arr, dtype="<f4").tobytes()
    Path(path).write_bytes(header + payload)


def load_irv(path: str | Path) -> np.ndarray:
    """Read an IRV1 container back into a float32 (T, H, W, C) array."""
    data = Path(path).read_bytes()
    if len(data) < IRV_HEADER_BYTES or data[:4] != IRV_MAGIC:
        raise FormatError(f"{path}: not an IRV1 file (bad magic or short header)")
    t, h, w, c = struct.unpack("<4I", data[4:IRV_HEADER_BYTES])
    if min(t, h, w, c) < 1:
        raise FormatError(f"{path}: header dims must be positive, got {(t, h, w, c)}")
    expected = t * h * w * c * 4
    actual = len(data) - IRV_HEADER_BYTES
    if actual != expected:
        raise PayloadError(
            f"{path}: payload holds {actual} bytes, header implies {expected}"
        )
    arr = np.frombuffer(data, dtype="<f4", offset=IRV_HEADER_BYTES)
    arr = arr.reshape(t, h, w, c).astype(np.float32)
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{path}: payload contains non-finite values")
    return arr


def save_pgm(frame: np.ndarray, path: str | Path) -> None:
    """Export a single frame as binary PGM (P5, maxval 255).

    Values are mapped by linear min-max scaling; a constant frame maps to 0.
    """
    img = np.asarray(frame, dtype=np.float64)
    if img.ndim == 3 and img.shape[2] == 1:
        img = img[:, :, 0]
    if img.ndim != 2:
        raise ShapeError(f"PGM export needs a single-channel frame, got {frame.shape}")
    lo, hi = float(img.min()), float(img.max())
    if hi > lo:
        scaled = (img - lo) / (hi - lo) * 255.0
    else:
        scaled = np.zeros_like(img)
    data = np.round(scaled).clip(0, 255).astype(np.uint8)
    h, w = data.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + data.tobytes())


def save_profile_csv(matrix: np.ndarray, path: str | Path) -> None:
    """Write a profile matrix as CSV, one row per sample point."""
    mat = np.asarray(matrix, dtype=np.float64)
    lines = [",".join(f"{v:.9g}" for v in row) for row in np.atleast_2d(mat)]
    Path(path).write_text("\n".join(lines) + "\n")


def _bilinear_parts(sx, sy, h, w):
    """Clamped bilinear neighbours and weights for sample coordinates."""
    sx = np.clip(sx, 0.0, w - 1.0)
    sy = np.clip(sy, 0.0, h - 1.0)
    x0 = np.floor(sx).astype(np.intp)
    y0 = np.floor(sy).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    wx = sx - x0
    wy = sy - y0
    return x0, y0, x1, y1, wx, wy


def _check_flow(image: np.ndarray, flow: np.ndarray) -> np.ndarray:
    flow = np.asarray(flow)
    if flow.ndim != 3 or flow.shape[2] != 2:
        raise ShapeError(f"flow must be (H,W,2), got {flow.shape}")
    if flow.shape[:2] != image.shape[:2]:
        raise ShapeError(
            f"flow dims {flow.shape[:2]} do not match image dims {image.shape[:2]}"
        )
    return flow


def warp(image: np.ndarray, flow: np.ndarray) -> np.ndarray:
    """Backward-warp a frame by a flow field.

    Args:
        image: (H, W) or (H, W, C) frame.
        flow: (H, W, 2) displacement field (dx, dy) in pixels.

    Returns:
        Frame of the same shape, bilinear-sampled at x + flow(x) with
        clamp-to-edge boundary handling.
    """
    img = np.asarray(image)
    flow = _check_flow(img, flow)
    h, w = img.shape[:2]
    gy, gx = np.mgrid[0:h, 0:w]
    x0, y0, x1, y1, wx, wy = _bilinear_parts(gx + flow[..., 0], gy + flow[..., 1], h, w)
    w00 = (1.0 - wy) * (1.0 - wx)
    w01 = (1.0 - wy) * wx
    w10 = wy * (1.0 - wx)
    w11 = wy * wx
    if img.ndim == 3:
        w00, w01, w10, w11 = (a[..., None] for a in (w00, w01, w10, w11))
    out = w00 * img[y0, x0] + w01 * img[y0, x1] + w10 * img[y1, x0] + w11 * img[y1, x1]
    return out.astype(img.dtype, copy=False)


def warp_adjoint(values: np.ndarray, flow: np.ndarray) -> np.ndarray:
    """Exact adjoint of :func:`warp` in its image argument.

    Scatter-adds each output pixel's value back onto the source pixels it was
    bilinearly gathered from, so <warp(a, f), b> == <a, warp_adjoint(b, f)>.
    Needed for exact subgradients of warping losses.
    """
    vals = np.asarray(values)
    flow = _check_flow(vals, flow)
    h, w = vals.shape[:2]
    gy, gx = np.mgrid[0:h, 0:w]
    x0, y0, x1, y1, wx, wy = _bilinear_parts(gx + flow[..., 0], gy + flow[..., 1], h, w)
    w00 = (1.0 - wy) * (1.0 - wx)
    w01 = (1.0 - wy) * wx
    w10 = wy * (1.0 - wx)
    w11 = wy * wx
    if vals.ndim == 3:
        w00, w01, w10, w11 = (a[..., None] for a in (w00, w01, w10, w11))
    acc = np.zeros_like(vals)
    np.add.at(acc, (y0, x0), w00 * vals)
    np.add.at(acc, (y0, x1), w01 * vals)
    np.add.at(acc, (y1, x0), w10 * vals)
    np.add.at(acc, (y1, x1), w11 * vals)
    return acc


def _as_single_channel(frame: np.ndarray) -> tuple[np.ndarray, bool]:
    img = np.asarray(frame)
    if img.ndim == 3:
        if img.shape[2] != 1:
            raise ShapeError(f"operation needs a single-channel frame, got {img.shape}")
        return img[:, :, 0], True
    if img.ndim != 2:
        raise ShapeError(f"expected a 2-D frame, got shape {img.shape}")
    return img, False


def sobel_gradient_magnitude(frame: np.ndarray) -> np.ndarray:
    """|Gx| + |Gy| with 3x3 Sobel kernels and replicate padding."""
    img, had_channel = _as_single_channel(frame)
    gx = ndimage.correlate(img, _SOBEL_X.astype(img.dtype), mode="nearest")
    gy = ndimage.correlate(img, _SOBEL_Y.astype(img.dtype), mode="nearest")
    mag = np.abs(gx) + np.abs(gy)
    return mag[:, :, None] if had_channel else mag


def laplacian(frame: np.ndarray) -> np.ndarray:
    """4-neighbour Laplacian (centre -4, cross +1), replicate borders."""
    img, had_channel = _as_single_channel(frame)
    out = ndimage.correlate(img, _LAPLACIAN.astype(img.dtype), mode="nearest")
    return out[:, :, None] if had_channel else out


@dataclass(frozen=True)
class SamplingLine:
    """Line segment for temporal grayscale profiling, in pixel coordinates."""

    x0: float
    y0: float
    x1: float
    y1: float
    samples: int = 64

    def points(self) -> tuple[np.ndarray, np.ndarray]:
        t = np.linspace(0.0, 1.0, self.samples)
        return self.x0 + t * (self.x1 - self.x0), self.y0 + t * (self.y1 - self.y0)


def sample_line(video: np.ndarray, line: SamplingLine) -> np.ndarray:
    """Bilinearly sample a line in every frame.

    Returns an (S, T) matrix: column t holds S evenly spaced samples along
    the segment in frame t.  Multi-channel input uses channel 0.
    """
    vid = validate_video(video)
    t_count, h, w = vid.shape[:3]
    if line.samples < 2:
        raise DataError(f"sample count must be >= 2, got {line.samples}")
    for x, y in ((line.x0, line.y0), (line.x1, line.y1)):
        if not (0.0 <= x <= w - 1 and 0.0 <= y <= h - 1):
            raise RangeError(
                f"line endpoint ({x}, {y}) outside image bounds {w - 1}x{h - 1}"
            )
    xs, ys = line.points()
    x0, y0, x1, y1, wx, wy = _bilinear_parts(xs, ys, h, w)
    frames = vid[:, :, :, 0]  # (T, H, W)
    out = (
        (1.0 - wy) * (1.0 - wx) * frames[:, y0, x0]
        + (1.0 - wy) * wx * frames[:, y0, x1]
        + wy * (1.0 - wx) * frames[:, y1, x0]
        + wy * wx * frames[:, y1, x1]
    )
    return np.ascontiguousarray(out.T)  # (S, T)


def resize_bilinear(frame: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize with half-pixel centre alignment and edge clamping."""
    img = np.asarray(frame)
    h, w = img.shape[:2]
    ys = (np.arange(out_h) + 0.5) * (h / out_h) - 0.5
    xs = (np.arange(out_w) + 0.5) * (w / out_w) - 0.5
    sx, sy = np.meshgrid(xs, ys)
    x0, y0, x1, y1, wx, wy = _bilinear_parts(sx, sy, h, w)
    w00 = (1.0 - wy) * (1.0 - wx)
    w01 = (1.0 - wy) * wx
    w10 = wy * (1.0 - wx)
    w11 = wy * wx
    if img.ndim == 3:
        w00, w01, w10, w11 = (a[..., None] for a in (w00, w01, w10, w11))
    out = w00 * img[y0, x0] + w01 * img[y0, x1] + w10 * img[y1, x0] + w11 * img[y1, x1]
    return out.astype(img.dtype, copy=False)


def upscale_video(video: np.ndarray, scale: int) -> np.ndarray:
    """Bilinear spatial upsampling of every frame by an integer factor."""
    vid = validate_video(video)
    if scale < 1:
        raise DataError(f"scale must be >= 1, got {scale}")
    if scale == 1:
        return vid
    t, h, w, c = vid.shape
    out = np.empty((t, h * scale, w * scale, c), dtype=vid.dtype)
    for i in range(t):
        out[i] = resize_bilinear(vid[i], h * scale, w * scale)
    return out
