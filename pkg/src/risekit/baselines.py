"""Reference saliency methods used as comparison rows.

Sliding-window occlusion systematically blanks a fixed-size window at
every grid position, probes the scorer, and attributes the score drop
f(image) - f(occluded) to the covered pixels, averaged by how many
windows covered each pixel. Random saliency is the seeded control
condition for metric validation.
"""

from dataclasses import dataclass

import numpy as np

from .errors import InvalidConfigError, ProbeError, RiseKitError
from .imagegrid import Image, SaliencyMap
from .modelbridge import ScoreFunction, TargetSpec

_PLACEHOLDER_TARGET = TargetSpec.for_class(0)


@dataclass(frozen=True)
class SlidingWindowConfig:
    window: int
    stride: int
    fill_value: float = 0.0

    def __post_init__(self):
        if self.window < 1:
            raise InvalidConfigError(f"window must be >= 1, got {self.window}")
        if not 1 <= self.stride <= self.window:
            raise InvalidConfigError(
                f"stride must be in [1, window], got {self.stride} for window {self.window}"
            )
        if not 0.0 <= self.fill_value <= 1.0:
            raise InvalidConfigError(f"fill_value must be in [0, 1], got {self.fill_value}")


def window_positions(extent: int, window: int, stride: int) -> list[int]:
    """Top/left offsets along one axis; the last position clamps to the border."""
    positions = list(range(0, extent - window + 1, stride))
    if positions[-1] != extent - window:
        positions.append(extent - window)
    return positions


def sliding_window_saliency(
    image: Image,
    scorer: ScoreFunction,
    config: SlidingWindowConfig,
    target: TargetSpec = _PLACEHOLDER_TARGET,
    probe_batch: int = 32,
) -> SaliencyMap:
    """Occlusion saliency: per-pixel average of score drops over covering windows.

    Each probe occludes exactly one window of the original image (no
    cumulative occlusion). With border clamping every pixel is covered by
    at least one window.
    """
    height, width = image.height, image.width
    if config.window > min(height, width):
        raise InvalidConfigError(
            f"window {config.window} exceeds image {height}x{width}"
        )
    ys = window_positions(height, config.window, config.stride)
    xs = window_positions(width, config.window, config.stride)
    positions = [(y, x) for y in ys for x in xs]

    base = float(np.asarray(scorer.score_batch(image.data[None], target))[0])
    drops = np.zeros((height, width), dtype=np.float64)
    coverage = np.zeros((height, width), dtype=np.float64)

    size = probe_batch if scorer.max_batch is None else min(probe_batch, scorer.max_batch)
    for start in range(0, len(positions), size):
        chunk = positions[start : start + size]
        frames = np.repeat(image.data[None], len(chunk), axis=0)
        for i, (y, x) in enumerate(chunk):
            frames[i, y : y + config.window, x : x + config.window, :] = config.fill_value
        try:
            scores = np.asarray(scorer.score_batch(frames, target), dtype=np.float64)
        except RiseKitError:
            raise
        except Exception as exc:
            raise ProbeError(
                f"scorer failed at window {start}: {exc}", index=start
            ) from exc
        if scores.shape != (len(chunk),):
            raise ProbeError(
                f"scorer returned {scores.shape} scores for {len(chunk)} windows",
                index=start,
            )
        for (y, x), score in zip(chunk, scores):
            window_slice = (slice(y, y + config.window), slice(x, x + config.window))
            drops[window_slice] += base - score
            coverage[window_slice] += 1.0
    return SaliencyMap((drops / coverage).astype(np.float32))


def random_saliency(height: int, width: int, seed: int) -> SaliencyMap:
    """Seeded i.i.d. uniform [0,1] saliency; the control for causal metrics."""
    rng = np.random.default_rng(seed)
    return SaliencyMap(rng.random((height, width)).astype(np.float32))
