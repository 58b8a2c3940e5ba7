"""Dense 2-D/3-D float tensor primitives: images, masks, saliency maps.

Images are H×W×3 float32 in [0,1], row-major and channel-interleaved.
Masks and saliency maps are H×W float32. All three wrapper types are
immutable after construction and safe to share across threads; every
operation here is a pure function.

Resampling uses the center-aligned bilinear convention (align-corners
false): output pixel i samples the source at ``(i + 0.5) * src/dst - 0.5``
with clamp-to-edge handling. This keeps the per-pixel expectation of an
upsampled Bernoulli grid equal to the grid's on-probability everywhere.
"""

from dataclasses import dataclass
from pathlib import Path
import struct

import numpy as np
from PIL import Image as PILImage

from .errors import (
    DataError,
    ImageIOError,
    InvalidArgumentError,
    InvalidDimensionError,
)

RSAL_MAGIC = b"RSAL"


def _freeze(arr: np.ndarray) -> np.ndarray:
    """Return a C-contiguous float32 copy with the write flag cleared."""
    out = np.ascontiguousarray(arr, dtype=np.float32)
    if out is arr:
        out = out.copy()
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Image:
    """An H×W×3 float32 image with every value in [0,1]."""

    data: np.ndarray

    def __post_init__(self):
        arr = self.data
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise InvalidDimensionError(
                f"image must have shape (H, W, 3), got {arr.shape}"
            )
        if arr.shape[0] == 0 or arr.shape[1] == 0:
            raise InvalidDimensionError("image has a zero-sized dimension")
        if not np.isfinite(arr).all():
            raise DataError("image contains NaN or Inf")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise DataError("image values must lie in [0, 1]")
        object.__setattr__(self, "data", _freeze(arr))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class Mask:
    """An H×W float32 occlusion pattern with values in [0,1].

    Binary at the sampling grid, fractional after bilinear upsampling.
    """

    data: np.ndarray

    def __post_init__(self):
        arr = self.data
        if arr.ndim != 2:
            raise InvalidDimensionError(f"mask must be 2-D, got shape {arr.shape}")
        if arr.shape[0] == 0 or arr.shape[1] == 0:
            raise InvalidDimensionError("mask has a zero-sized dimension")
        if not np.isfinite(arr).all():
            raise DataError("mask contains NaN or Inf")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise DataError("mask values must lie in [0, 1]")
        object.__setattr__(self, "data", _freeze(arr))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class SaliencyMap:
    """An H×W float32 importance map; finite, nonnegative for score ranges in [0,1]."""

    data: np.ndarray

    def __post_init__(self):
        arr = self.data
        if arr.ndim != 2:
            raise InvalidDimensionError(
                f"saliency map must be 2-D, got shape {arr.shape}"
            )
        if arr.shape[0] == 0 or arr.shape[1] == 0:
            raise InvalidDimensionError("saliency map has a zero-sized dimension")
        if not np.isfinite(arr).all():
            raise DataError("saliency map contains NaN or Inf")
        object.__setattr__(self, "data", _freeze(arr))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


def _axis_coords(src: int, dst: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Center-aligned source sampling for one axis.

    Returns (lower index, upper index, upper weight), each of length dst.
    """
    x = (np.arange(dst, dtype=np.float64) + 0.5) * (src / dst) - 0.5
    x = np.clip(x, 0.0, src - 1.0)
    i0 = np.floor(x).astype(np.intp)
    i1 = np.minimum(i0 + 1, src - 1)
    return i0, i1, x - i0


def _axis_operator(src: int, dst: int) -> np.ndarray:
    """The (dst, src) interpolation matrix for one axis."""
    i0, i1, frac = _axis_coords(src, dst)
    op = np.zeros((dst, src), dtype=np.float32)
    rows = np.arange(dst)
    op[rows, i0] += (1.0 - frac).astype(np.float32)
    op[rows, i1] += frac.astype(np.float32)
    return op


def upsample_bilinear_array(
    grids: np.ndarray, target_h: int, target_w: int
) -> np.ndarray:
    """Bilinearly upsample arrays of shape (..., h, w) to (..., target_h, target_w).

    Leading dimensions are batched; the result is float32.
    """
    h, w = grids.shape[-2], grids.shape[-1]
    if h == 0 or w == 0 or target_h == 0 or target_w == 0:
        raise InvalidDimensionError("upsampling with a zero-sized dimension")
    if target_h < h or target_w < w:
        raise InvalidArgumentError(
            f"target {target_h}x{target_w} is smaller than source {h}x{w}"
        )
    src = grids.astype(np.float32, copy=False)
    # Separable interpolation as two matrix products: each output row
    # (column) is a 2-tap convex combination of source rows (columns).
    row_op = _axis_operator(h, target_h)
    col_op = _axis_operator(w, target_w).T
    out = np.matmul(np.matmul(row_op, src), col_op)
    # Interpolation is a convex combination; pin the rounded result to the
    # exact range so range preservation holds bit-for-bit.
    lo = src.min(axis=(-2, -1), keepdims=True)
    hi = src.max(axis=(-2, -1), keepdims=True)
    np.clip(out, lo, hi, out=out)
    return out


def bilinear_upsample(mask: Mask, target_h: int, target_w: int) -> Mask:
    """Upsample a mask to target_h×target_w with center-aligned bilinear sampling.

    Output values stay within [min(source), max(source)]; a constant source
    upsamples to the same constant exactly.
    """
    return Mask(upsample_bilinear_array(mask.data, target_h, target_w))


def _gaussian_kernel(kernel_size: int, sigma: float) -> np.ndarray:
    if kernel_size < 1 or kernel_size % 2 == 0:
        raise InvalidArgumentError(f"kernel_size must be odd and >= 1, got {kernel_size}")
    if sigma <= 0:
        raise InvalidArgumentError(f"sigma must be positive, got {sigma}")
    offsets = np.arange(kernel_size, dtype=np.float64) - kernel_size // 2
    kernel = np.exp(-0.5 * (offsets / sigma) ** 2)
    return kernel / kernel.sum()


def _convolve_axis(arr: np.ndarray, kernel: np.ndarray, axis: int) -> np.ndarray:
    """1-D correlation along ``axis`` with clamp-to-edge padding."""
    radius = len(kernel) // 2
    if radius == 0:
        return arr
    pad = [(0, 0)] * arr.ndim
    pad[axis] = (radius, radius)
    padded = np.pad(arr, pad, mode="edge")
    out = np.zeros_like(arr)
    index = [slice(None)] * arr.ndim
    for tap, weight in enumerate(kernel):
        index[axis] = slice(tap, tap + arr.shape[axis])
        out += weight * padded[tuple(index)]
    return out


def gaussian_blur(image: Image, kernel_size: int, sigma: float) -> Image:
    """Separable Gaussian blur with clamp-to-edge boundaries.

    The 1-D kernel is normalized to sum 1, so a constant image is a fixed
    point and interior means are preserved.
    """
    kernel = _gaussian_kernel(kernel_size, sigma)
    blurred = _convolve_axis(image.data.astype(np.float64), kernel, axis=0)
    blurred = _convolve_axis(blurred, kernel, axis=1)
    return Image(np.clip(blurred, 0.0, 1.0))


def apply_mask(image: Image, mask: Mask) -> Image:
    """Dim an image pixelwise: out[y, x, c] = image[y, x, c] * mask[y, x]."""
    if (image.height, image.width) != (mask.height, mask.width):
        raise InvalidDimensionError(
            f"mask {mask.data.shape} does not match image "
            f"{(image.height, image.width)}"
        )
    return Image(image.data * mask.data[:, :, None])


# Piecewise-linear blue -> green -> red ramp, fixed for portability.
def _ramp_colors(t: np.ndarray) -> np.ndarray:
    r = np.clip(2.0 * t - 1.0, 0.0, 1.0)
    g = 1.0 - np.abs(2.0 * t - 1.0)
    b = np.clip(1.0 - 2.0 * t, 0.0, 1.0)
    return np.stack([r, g, b], axis=-1)


def render_heatmap(saliency: SaliencyMap, base: Image, alpha: float) -> Image:
    """Overlay a min-max normalized saliency map on a base image.

    A constant saliency map normalizes to the mid-ramp color rather than
    erroring. ``alpha`` = 0 returns the base image unchanged; 1 returns the
    pure ramp.
    """
    if (saliency.height, saliency.width) != (base.height, base.width):
        raise InvalidDimensionError(
            f"saliency {saliency.data.shape} does not match image "
            f"{(base.height, base.width)}"
        )
    if not 0.0 <= alpha <= 1.0:
        raise InvalidArgumentError(f"alpha must be in [0, 1], got {alpha}")
    s = saliency.data.astype(np.float64)
    lo, hi = s.min(), s.max()
    if hi > lo:
        t = (s - lo) / (hi - lo)
    else:
        t = np.full_like(s, 0.5)
    blended = (1.0 - alpha) * base.data.astype(np.float64) + alpha * _ramp_colors(t)
    return Image(np.clip(blended, 0.0, 1.0))


def load_image(path: str | Path, height: int | None = None, width: int | None = None) -> Image:
    """Decode a PNG/JPEG file to a float32 [0,1] image.

    Grayscale inputs are replicated to 3 channels. When a target size is
    given the decoded image is bilinearly resized to it (height and width
    must be given together).
    """
    if (height is None) != (width is None):
        raise InvalidArgumentError("height and width must be given together")
    try:
        with PILImage.open(path) as img:
            img = img.convert("RGB")
            if height is not None:
                img = img.resize((width, height), PILImage.Resampling.BILINEAR)
            arr = np.asarray(img, dtype=np.float32) / 255.0
    except (OSError, SyntaxError, ValueError) as exc:
        raise ImageIOError(f"cannot read image {path}: {exc}") from exc
    return Image(arr)


def save_image(image: Image, path: str | Path) -> None:
    """Encode an image as PNG or JPEG; format follows the file extension."""
    quantized = np.rint(image.data * 255.0).astype(np.uint8)
    try:
        PILImage.fromarray(quantized, mode="RGB").save(path)
    except (OSError, ValueError) as exc:
        raise ImageIOError(f"cannot write image {path}: {exc}") from exc


def save_saliency(saliency: SaliencyMap, path: str | Path) -> None:
    """Write the raw saliency format: 16-byte header, then f32le pixels.

    Header layout: magic "RSAL", u32 height, u32 width, u32 reserved=0.
    """
    header = RSAL_MAGIC + struct.pack("<III", saliency.height, saliency.width, 0)
    payload = saliency.data.astype("<f4").tobytes()
    try:
        Path(path).write_bytes(header + payload)
    except OSError as exc:
        raise ImageIOError(f"cannot write saliency {path}: {exc}") from exc


def load_saliency(path: str | Path) -> SaliencyMap:
    """Read a raw saliency dump written by :func:`save_saliency`."""
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise ImageIOError(f"cannot read saliency {path}: {exc}") from exc
    if len(raw) < 16 or raw[:4] != RSAL_MAGIC:
        raise ImageIOError(f"not a saliency dump (bad header): {path}")
    height, width, reserved = struct.unpack("<III", raw[4:16])
    if reserved != 0:
        raise ImageIOError(f"unsupported saliency dump (reserved={reserved}): {path}")
    expected = 16 + height * width * 4
    if len(raw) != expected:
        raise ImageIOError(
            f"truncated saliency dump {path}: expected {expected} bytes, got {len(raw)}"
        )
    data = np.frombuffer(raw[16:], dtype="<f4").reshape(height, width)
    return SaliencyMap(data)
