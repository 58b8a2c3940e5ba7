"""Randomized occlusion-mask generation.

Each mask is produced in three steps: sample a low-resolution i.i.d.
Bernoulli binary grid, bilinearly upsample it, and crop an image-sized
window at a uniformly random integer offset. Upsampling smooths the
occlusion edges; the random crop decorrelates mask boundaries from a
fixed grid.

Randomness comes from the counter-based Philox generator with one
substream per mask ordinal (key = [seed, ordinal]), so a batch is a pure
function of its config: any mask can be regenerated in isolation and the
result is independent of chunking or worker count.
"""

from collections.abc import Iterator
from dataclasses import dataclass, field
from pathlib import Path
import struct

import numpy as np

from .errors import ImageIOError, InvalidConfigError
from .imagegrid import Mask, upsample_bilinear_array

RMSK_MAGIC = b"RMSK"
DEFAULT_CHUNK_SIZE = 256

_U64 = (1 << 64) - 1


@dataclass(frozen=True)
class MaskConfig:
    """Parameters of the mask distribution.

    ``grid_h`` x ``grid_w`` is the Bernoulli grid, ``prob_on`` the
    probability of a 1 cell, ``num_masks`` the batch size N, and
    ``image_h`` x ``image_w`` the final mask size. ``crop=False`` skips the
    random-offset step and upsamples grids straight to the image size,
    which makes the distribution enumerable for exact oracles.
    """

    grid_h: int = 7
    grid_w: int = 7
    prob_on: float = 0.5
    num_masks: int = 4000
    image_h: int = 224
    image_w: int = 224
    seed: int = 0
    crop: bool = True
    chunk_size: int = DEFAULT_CHUNK_SIZE

    def __post_init__(self):
        if not 1 <= self.grid_h <= self.image_h or not 1 <= self.grid_w <= self.image_w:
            raise InvalidConfigError(
                f"grid {self.grid_h}x{self.grid_w} must satisfy "
                f"1 <= grid <= image ({self.image_h}x{self.image_w})"
            )
        if not 0.0 < self.prob_on < 1.0:
            raise InvalidConfigError(f"prob_on must be in (0, 1), got {self.prob_on}")
        if self.num_masks < 1:
            raise InvalidConfigError(f"num_masks must be >= 1, got {self.num_masks}")
        if self.chunk_size < 1:
            raise InvalidConfigError(f"chunk_size must be >= 1, got {self.chunk_size}")
        if self.crop:
            # Worst-case offset cell-1 must leave a full image-sized window
            # inside the upsampled mask, which requires image % grid <= 1.
            for name, image, grid, cell in (
                ("height", self.image_h, self.grid_h, self.cell_h),
                ("width", self.image_w, self.grid_w, self.cell_w),
            ):
                if (cell - 1) + image > (grid + 1) * cell:
                    raise InvalidConfigError(
                        f"image {name} {image} is not compatible with grid "
                        f"{grid} for random cropping; choose a grid that "
                        f"divides the image size"
                    )

    @property
    def cell_h(self) -> int:
        """Upsampled-cell height, floor(image_h / grid_h)."""
        return self.image_h // self.grid_h

    @property
    def cell_w(self) -> int:
        return self.image_w // self.grid_w

    @property
    def upsampled_h(self) -> int:
        return (self.grid_h + 1) * self.cell_h if self.crop else self.image_h

    @property
    def upsampled_w(self) -> int:
        return (self.grid_w + 1) * self.cell_w if self.crop else self.image_w


def _substream(seed: int, ordinal: int) -> np.random.Generator:
    key = np.array([seed & _U64, ordinal & _U64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


@dataclass(frozen=True)
class MaskBatch:
    """A lazy, immutable, ordered sequence of masks defined by a config.

    Masks are regenerated on demand from per-ordinal substreams, so the
    batch costs no memory until iterated and individual masks are random
    access. ``per_pixel_expectation`` is the expectation of every mask
    value under the generation distribution.
    """

    config: MaskConfig
    per_pixel_expectation: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "per_pixel_expectation", self.config.prob_on)

    def __len__(self) -> int:
        return self.config.num_masks

    def __getitem__(self, ordinal: int) -> Mask:
        if not -len(self) <= ordinal < len(self):
            raise IndexError(f"mask ordinal {ordinal} out of range")
        ordinal %= len(self)
        return Mask(self.chunk(ordinal, ordinal + 1)[0])

    def __iter__(self) -> Iterator[Mask]:
        for start, planes in self.iter_chunks():
            for plane in planes:
                yield Mask(plane)

    def _draw(self, ordinal: int) -> tuple[np.ndarray, int, int]:
        """Grid and crop offsets for one ordinal; fixed draw order."""
        cfg = self.config
        rng = _substream(cfg.seed, ordinal)
        uniforms = rng.random((cfg.grid_h, cfg.grid_w))
        grid = (uniforms < cfg.prob_on).astype(np.float32)
        if not cfg.crop:
            return grid, 0, 0
        off_y = int(rng.integers(0, cfg.cell_h))
        off_x = int(rng.integers(0, cfg.cell_w))
        return grid, off_y, off_x

    def chunk(self, start: int, stop: int) -> np.ndarray:
        """Masks for ordinals [start, stop) as a (stop-start, H, W) array."""
        cfg = self.config
        stop = min(stop, cfg.num_masks)
        grids = np.empty((stop - start, cfg.grid_h, cfg.grid_w), dtype=np.float32)
        offs_y = np.empty(stop - start, dtype=np.intp)
        offs_x = np.empty(stop - start, dtype=np.intp)
        for i, ordinal in enumerate(range(start, stop)):
            grids[i], offs_y[i], offs_x[i] = self._draw(ordinal)
        upsampled = upsample_bilinear_array(grids, cfg.upsampled_h, cfg.upsampled_w)
        if not cfg.crop:
            return upsampled
        out = np.empty((stop - start, cfg.image_h, cfg.image_w), dtype=np.float32)
        for i in range(stop - start):
            out[i] = upsampled[
                i,
                offs_y[i] : offs_y[i] + cfg.image_h,
                offs_x[i] : offs_x[i] + cfg.image_w,
            ]
        return out

    def iter_chunks(
        self, chunk_size: int | None = None
    ) -> Iterator[tuple[int, np.ndarray]]:
        """Yield (start ordinal, (B, H, W) array) pairs covering the batch."""
        size = chunk_size or self.config.chunk_size
        for start in range(0, self.config.num_masks, size):
            yield start, self.chunk(start, start + size)

    def materialize(self) -> np.ndarray:
        """All masks stacked as (N, H, W); intended for small batches."""
        return np.concatenate([planes for _, planes in self.iter_chunks()], axis=0)


def generate_masks(config: MaskConfig) -> MaskBatch:
    """Build the mask batch for a config; deterministic given the seed."""
    return MaskBatch(config)


@dataclass(frozen=True)
class MaskStatistics:
    per_pixel_mean: np.ndarray
    global_mean: float
    min_value: float
    max_value: float


def mask_statistics(batch) -> MaskStatistics:
    """Streaming summary of a batch: per-pixel mean map, global mean, range.

    Accepts anything with ``iter_chunks()`` yielding (start, planes), so it
    works on generated and reloaded batches alike.
    """
    total = None
    count = 0
    lo, hi = np.inf, -np.inf
    for _, planes in batch.iter_chunks():
        if total is None:
            total = np.zeros(planes.shape[1:], dtype=np.float64)
        total += planes.sum(axis=0, dtype=np.float64)
        count += planes.shape[0]
        lo = min(lo, float(planes.min()))
        hi = max(hi, float(planes.max()))
    if count == 0:
        raise InvalidConfigError("cannot summarize an empty mask batch")
    per_pixel = total / count
    return MaskStatistics(
        per_pixel_mean=per_pixel.astype(np.float32),
        global_mean=float(per_pixel.mean()),
        min_value=lo,
        max_value=hi,
    )


@dataclass(frozen=True)
class StoredMasks:
    """Masks reloaded from an RMSK cache file."""

    masks: np.ndarray  # (N, H, W) float32
    seed: int

    def __len__(self) -> int:
        return self.masks.shape[0]

    def iter_chunks(
        self, chunk_size: int = DEFAULT_CHUNK_SIZE
    ) -> Iterator[tuple[int, np.ndarray]]:
        for start in range(0, len(self), chunk_size):
            yield start, self.masks[start : start + chunk_size]


def save_mask_batch(batch: MaskBatch, path: str | Path) -> None:
    """Write a batch as "RMSK", u32 count, u32 H, u32 W, u64 seed, f32le planes."""
    cfg = batch.config
    header = RMSK_MAGIC + struct.pack(
        "<IIIQ", cfg.num_masks, cfg.image_h, cfg.image_w, cfg.seed & _U64
    )
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            for _, planes in batch.iter_chunks():
                fh.write(planes.astype("<f4").tobytes())
    except OSError as exc:
        raise ImageIOError(f"cannot write mask cache {path}: {exc}") from exc


def load_mask_batch(path: str | Path) -> StoredMasks:
    """Read an RMSK cache file back into memory."""
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise ImageIOError(f"cannot read mask cache {path}: {exc}") from exc
    if len(raw) < 24 or raw[:4] != RMSK_MAGIC:
        raise ImageIOError(f"not a mask cache (bad header): {path}")
    count, height, width, seed = struct.unpack("<IIIQ", raw[4:24])
    expected = 24 + count * height * width * 4
    if len(raw) != expected:
        raise ImageIOError(
            f"truncated mask cache {path}: expected {expected} bytes, got {len(raw)}"
        )
    planes = np.frombuffer(raw[24:], dtype="<f4").reshape(count, height, width)
    return StoredMasks(masks=planes, seed=seed)
