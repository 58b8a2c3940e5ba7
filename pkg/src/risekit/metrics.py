"""Causal evaluation of saliency maps.

Deletion zeroes pixels in decreasing-saliency order and records the score
after each step; a sharp drop (low area under the curve) means the map
found the pixels the scorer actually relies on. Insertion reveals pixels
in the same order onto a blurred canvas; a fast rise (high AUC) is
better. The pointing game checks whether the saliency argmax falls inside
a ground-truth box.

Pixel order is deterministic: strictly decreasing saliency with ties
broken by row-major index, shared by the curves and the pointing game.
"""

import csv
import json
import math
from collections.abc import Iterable
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    DataError,
    ImageIOError,
    InvalidArgumentError,
    InvalidDimensionError,
    InvalidInputError,
    ProbeError,
    RiseKitError,
)
from .imagegrid import Image, SaliencyMap, gaussian_blur
from .modelbridge import ScoreFunction, TargetSpec

DEFAULT_BLUR_KERNEL = 11
DEFAULT_BLUR_SIGMA = 5.0

_PLACEHOLDER_TARGET = TargetSpec.for_class(0)


def auc(points) -> float:
    """Trapezoidal area under (x, y) points; exact for piecewise-linear curves.

    x must be strictly increasing and span [0, 1].
    """
    pts = list(points)
    if len(pts) < 2:
        raise InvalidInputError(f"AUC needs at least 2 points, got {len(pts)}")
    x = np.asarray([p[0] for p in pts], dtype=np.float64)
    y = np.asarray([p[1] for p in pts], dtype=np.float64)
    if not (np.diff(x) > 0).all():
        raise InvalidInputError("curve fractions must be strictly increasing")
    if x[0] != 0.0 or x[-1] != 1.0:
        raise InvalidInputError("curve fractions must span [0, 1]")
    return float(np.trapezoid(y, x))


@dataclass(frozen=True)
class MetricCurve:
    """Score vs fraction-of-pixels-changed, with its trapezoidal AUC."""

    points: tuple[tuple[float, float], ...]

    @property
    def auc(self) -> float:
        return auc(self.points)

    @property
    def fractions(self) -> np.ndarray:
        return np.asarray([p[0] for p in self.points])

    @property
    def scores(self) -> np.ndarray:
        return np.asarray([p[1] for p in self.points])

    def __post_init__(self):
        object.__setattr__(self, "points", tuple((float(x), float(y)) for x, y in self.points))
        auc(self.points)  # validates monotonicity and span


@dataclass(frozen=True)
class BoundingBox:
    """Half-open pixel box [x_min, x_max) x [y_min, y_max) with a category label."""

    x_min: int
    y_min: int
    x_max: int
    y_max: int
    category: str = ""

    def __post_init__(self):
        if not (0 <= self.x_min < self.x_max and 0 <= self.y_min < self.y_max):
            raise InvalidInputError(
                f"degenerate box ({self.x_min},{self.y_min})..({self.x_max},{self.y_max})"
            )

    def contains(self, y: int, x: int) -> bool:
        return self.y_min <= y < self.y_max and self.x_min <= x < self.x_max


def saliency_rank(saliency: SaliencyMap) -> np.ndarray:
    """Flat pixel indices in strictly decreasing saliency order.

    Equal values keep row-major order, so equal maps always produce
    identical deletion/insertion orders.
    """
    return np.argsort(-saliency.data.reshape(-1), kind="stable")


def default_pixels_per_step(height: int, width: int) -> int:
    """Step size giving ~100 curve points: ceil(H*W / 100)."""
    return math.ceil(height * width / 100)


def _score_steps(scorer: ScoreFunction, frames: np.ndarray, target: TargetSpec) -> np.ndarray:
    """Score every step frame, batched by the scorer's declared limit."""
    size = scorer.max_batch or frames.shape[0]
    scores = np.empty(frames.shape[0], dtype=np.float64)
    for start in range(0, frames.shape[0], size):
        stop = min(start + size, frames.shape[0])
        try:
            chunk = scorer.score_batch(frames[start:stop], target)
        except RiseKitError:
            raise
        except Exception as exc:
            raise ProbeError(f"scorer failed at curve step {start}: {exc}", index=start) from exc
        chunk = np.asarray(chunk, dtype=np.float64)
        if chunk.shape != (stop - start,):
            raise ProbeError(
                f"scorer returned {chunk.shape} scores for {stop - start} steps",
                index=start,
            )
        scores[start:stop] = chunk
    if not np.isfinite(scores).all():
        raise DataError("scorer returned NaN/Inf on a metric curve")
    return scores


def _check_curve_inputs(image: Image, saliency: SaliencyMap, pixels_per_step: int):
    if (saliency.height, saliency.width) != (image.height, image.width):
        raise InvalidDimensionError(
            f"saliency {saliency.data.shape} does not match image "
            f"{(image.height, image.width)}"
        )
    if pixels_per_step < 1:
        raise InvalidArgumentError(f"pixels_per_step must be >= 1, got {pixels_per_step}")


def _step_frames(
    start: np.ndarray, source_flat: np.ndarray, order: np.ndarray, pixels_per_step: int
):
    """Frames after 0..n steps of writing ``source_flat`` values in rank order.

    ``source_flat`` is either a constant fill (scalar or per-channel) or a
    (H*W, 3) array of replacement pixels.
    """
    constant_fill = source_flat.ndim <= 1
    total = order.shape[0]
    steps = math.ceil(total / pixels_per_step)
    frames = np.empty((steps + 1,) + start.shape, dtype=np.float32)
    frames[0] = start
    canvas = start.reshape(-1, 3).copy()
    for i in range(1, steps + 1):
        idx = order[(i - 1) * pixels_per_step : i * pixels_per_step]
        canvas[idx] = source_flat if constant_fill else source_flat[idx]
        frames[i] = canvas.reshape(start.shape)
    return frames, steps


def deletion(
    image: Image,
    saliency: SaliencyMap,
    scorer: ScoreFunction,
    pixels_per_step: int,
    target: TargetSpec = _PLACEHOLDER_TARGET,
    fill_value: float | tuple[float, float, float] = 0.0,
) -> MetricCurve:
    """Deletion curve: zero pixels in decreasing-saliency order; lower AUC is better.

    Every step removes ``pixels_per_step`` pixels (all three channels set to
    ``fill_value``); the recorded fractions are i/n for steps i = 0..n, and
    the final frame has every pixel removed.
    """
    _check_curve_inputs(image, saliency, pixels_per_step)
    fill = np.asarray(fill_value, dtype=np.float32)
    if fill.min() < 0.0 or fill.max() > 1.0:
        raise InvalidArgumentError(f"fill value must lie in [0, 1], got {fill_value}")
    order = saliency_rank(saliency)
    frames, steps = _step_frames(image.data, fill, order, pixels_per_step)
    scores = _score_steps(scorer, frames, target)
    points = [(i / steps, scores[i]) for i in range(steps + 1)]
    return MetricCurve(tuple(points))


def insertion(
    image: Image,
    saliency: SaliencyMap,
    scorer: ScoreFunction,
    pixels_per_step: int,
    blur_kernel: int = DEFAULT_BLUR_KERNEL,
    blur_sigma: float = DEFAULT_BLUR_SIGMA,
    target: TargetSpec = _PLACEHOLDER_TARGET,
) -> MetricCurve:
    """Insertion curve: reveal pixels onto a blurred canvas; higher AUC is better.

    The canvas starts as the Gaussian-blurred image and steps copy original
    pixels back in decreasing-saliency order until the canvas equals the
    original, so the last point scores the unblurred image.
    """
    _check_curve_inputs(image, saliency, pixels_per_step)
    order = saliency_rank(saliency)
    blurred = gaussian_blur(image, blur_kernel, blur_sigma)
    source = image.data.reshape(-1, 3)
    frames, steps = _step_frames(blurred.data, source, order, pixels_per_step)
    scores = _score_steps(scorer, frames, target)
    points = [(i / steps, scores[i]) for i in range(steps + 1)]
    return MetricCurve(tuple(points))


def pointing_game(saliency: SaliencyMap, boxes: list[BoundingBox]) -> bool:
    """Hit iff the saliency argmax (row-major tie-break) lies inside any box."""
    if not boxes:
        raise InvalidInputError("pointing game needs at least one box")
    flat_index = int(np.argmax(saliency.data))
    y, x = divmod(flat_index, saliency.width)
    return any(box.contains(y, x) for box in boxes)


@dataclass(frozen=True)
class CategoryTally:
    hits: int
    misses: int

    @property
    def accuracy(self) -> float:
        return self.hits / (self.hits + self.misses)


@dataclass(frozen=True)
class PointingTally:
    """Per-category hit rates and their unweighted mean."""

    per_category: dict[str, CategoryTally]

    @property
    def mean_accuracy(self) -> float:
        accs = [t.accuracy for t in self.per_category.values()]
        return sum(accs) / len(accs)

    def to_json(self) -> dict:
        return {
            "mean_accuracy": self.mean_accuracy,
            "per_category": {
                name: {"hits": t.hits, "misses": t.misses, "accuracy": t.accuracy}
                for name, t in sorted(self.per_category.items())
            },
        }


def tally_pointing(results: Iterable[tuple[str, bool]]) -> PointingTally:
    """Aggregate (category, hit) outcomes; mean accuracy is unweighted."""
    hits: dict[str, int] = {}
    misses: dict[str, int] = {}
    for category, hit in results:
        hits.setdefault(category, 0)
        misses.setdefault(category, 0)
        if hit:
            hits[category] += 1
        else:
            misses[category] += 1
    if not hits:
        raise InvalidInputError("cannot tally an empty result stream")
    return PointingTally(
        per_category={
            name: CategoryTally(hits=hits[name], misses=misses[name]) for name in hits
        }
    )


def save_curve_csv(curve: MetricCurve, path: str | Path) -> None:
    """Write a curve as CSV with a ``fraction,score`` header."""
    try:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["fraction", "score"])
            writer.writerows(curve.points)
    except OSError as exc:
        raise ImageIOError(f"cannot write curve {path}: {exc}") from exc


def curve_sidecar(
    metric: str,
    curve: MetricCurve,
    pixels_per_step: int,
    blur_kernel: int | None = None,
    blur_sigma: float | None = None,
) -> dict:
    """The JSON sidecar document accompanying a curve CSV."""
    doc = {"metric": metric, "auc": curve.auc, "pixels_per_step": pixels_per_step}
    if blur_kernel is not None:
        doc["blur_kernel"] = blur_kernel
    if blur_sigma is not None:
        doc["blur_sigma"] = blur_sigma
    return doc


def load_boxes_jsonl(path: str | Path) -> dict[str, list[BoundingBox]]:
    """Read bounding boxes from a JSON-lines file keyed by image id.

    Each line is one object: {image_id, category, x_min, y_min, x_max, y_max}.
    """
    boxes: dict[str, list[BoundingBox]] = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise ImageIOError(f"cannot read boxes file {path}: {exc}") from exc
    for number, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            box = BoundingBox(
                x_min=int(obj["x_min"]),
                y_min=int(obj["y_min"]),
                x_max=int(obj["x_max"]),
                y_max=int(obj["y_max"]),
                category=str(obj["category"]),
            )
            image_id = str(obj["image_id"])
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise InvalidInputError(f"{path}:{number}: bad box record: {exc}") from exc
        boxes.setdefault(image_id, []).append(box)
    return boxes
