"""Monte Carlo saliency estimation by randomized masking.

The estimator probes a black-box scorer with masked copies of one image
and averages the masks weighted by the scores they produced, normalized
by the mask expectation:

    S(pixel) ~= (1 / (E[M] * N)) * sum_i f(image * mask_i) * mask_i(pixel)

``exact_saliency`` computes the same quantity without sampling by
enumerating every binary grid (crop disabled), which serves as the
ground-truth oracle for small grids.
"""

import time
import warnings
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from .errors import (
    DataError,
    EnumerationBoundError,
    InvalidConfigError,
    ProbeError,
    RiseKitError,
)
from .imagegrid import Image, SaliencyMap, upsample_bilinear_array
from .masking import MaskConfig, generate_masks
from .modelbridge import ScoreFunction, TargetSpec

DEFAULT_PROBE_BATCH = 32

_PLACEHOLDER_TARGET = TargetSpec.for_class(0)


class ScoreRangeWarning(UserWarning):
    """A scorer returned values outside the conventional [0,1] range."""


class CoverageWarning(UserWarning):
    """Some pixels were never covered by any mask (empirical normalization)."""


@dataclass(frozen=True)
class ExplainRequest:
    """One explanation job: which image, which target, which mask distribution.

    ``normalization`` picks how the weighted mask sum is scaled:
    "analytic" divides by N * prob_on (the mask expectation), "empirical"
    divides pixelwise by the realized mask coverage. ``strict_reduction``
    accumulates mask by mask in a fixed order, making the result bit-exact
    across probe batch sizes at some speed cost.
    """

    image: Image
    target: TargetSpec
    mask_config: MaskConfig
    normalization: str = "analytic"
    probe_batch: int = DEFAULT_PROBE_BATCH
    strict_reduction: bool = False

    def __post_init__(self):
        if (self.image.height, self.image.width) != (
            self.mask_config.image_h,
            self.mask_config.image_w,
        ):
            raise InvalidConfigError(
                f"image {self.image.height}x{self.image.width} does not match "
                f"mask config {self.mask_config.image_h}x{self.mask_config.image_w}"
            )
        if self.normalization not in ("analytic", "empirical"):
            raise InvalidConfigError(
                f"normalization must be 'analytic' or 'empirical', got "
                f"{self.normalization!r}"
            )
        if self.probe_batch < 1:
            raise InvalidConfigError(f"probe_batch must be >= 1, got {self.probe_batch}")


@dataclass(frozen=True)
class ExplainResult:
    saliency: SaliencyMap
    num_probes: int
    score_unmasked: float
    elapsed: float


def _check_scores(raw, expected: int, probe_index: int) -> np.ndarray:
    scores = np.asarray(raw, dtype=np.float64)
    if scores.shape != (expected,):
        raise ProbeError(
            f"scorer returned {scores.shape} scores for a batch of {expected}",
            index=probe_index,
        )
    if not np.isfinite(scores).all():
        raise DataError(f"scorer returned NaN/Inf in probe batch {probe_index}")
    if scores.min() < 0.0 or scores.max() > 1.0:
        warnings.warn(
            f"scores outside [0, 1] (min {scores.min():.4g}, max {scores.max():.4g}); "
            "saliency and AUC scales follow the scorer's range",
            ScoreRangeWarning,
            stacklevel=3,
        )
    return scores


def _score_probe(scorer: ScoreFunction, images: np.ndarray, targets, probe_index: int):
    """One scorer call; failures become probe errors carrying the batch index."""
    try:
        if len(targets) == 1:
            column = scorer.score_batch(images, targets[0])
            matrix = np.asarray(column, dtype=np.float64).reshape(-1, 1)
        else:
            matrix = np.asarray(
                scorer.score_batch_multi(images, targets), dtype=np.float64
            )
    except RiseKitError:
        raise
    except Exception as exc:
        raise ProbeError(
            f"scorer failed on probe batch {probe_index}: {exc}", index=probe_index
        ) from exc
    if matrix.shape != (images.shape[0], len(targets)):
        raise ProbeError(
            f"scorer returned shape {matrix.shape} for batch {images.shape[0]} "
            f"x {len(targets)} targets",
            index=probe_index,
        )
    for t in range(len(targets)):
        _check_scores(matrix[:, t], images.shape[0], probe_index)
    return matrix


def _probe_slice_size(probe_batch: int, scorer: ScoreFunction) -> int:
    if scorer.max_batch is None:
        return probe_batch
    return max(1, min(probe_batch, scorer.max_batch))


def explain_sequence(
    image: Image,
    targets: Sequence[TargetSpec],
    scorer: ScoreFunction,
    mask_config: MaskConfig,
    normalization: str = "analytic",
    probe_batch: int = DEFAULT_PROBE_BATCH,
    strict_reduction: bool = False,
) -> list[ExplainResult]:
    """Estimate one saliency map per target, reusing a single mask batch.

    Every masked image is pushed through the scorer once per call;
    scorers that implement ``score_batch_multi`` natively amortize that
    over all targets. A single-element target list is exactly
    :func:`rise_saliency`.
    """
    if not targets:
        raise InvalidConfigError("explain_sequence needs at least one target")
    request = ExplainRequest(
        image=image,
        target=targets[0],
        mask_config=mask_config,
        normalization=normalization,
        probe_batch=probe_batch,
        strict_reduction=strict_reduction,
    )
    started = time.perf_counter()
    cfg = request.mask_config
    batch = generate_masks(cfg)
    shape = (cfg.image_h, cfg.image_w)
    accums = [np.zeros(shape, dtype=np.float64) for _ in targets]
    coverage = np.zeros(shape, dtype=np.float64)
    base = _score_probe(scorer, image.data[None], list(targets), probe_index=-1)[0]

    slice_size = _probe_slice_size(request.probe_batch, scorer)
    probe_index = 0
    # One masked-image buffer reused across chunks; scorers must not hold
    # references to their input batch past the call.
    masked_buf = np.empty(
        (min(cfg.chunk_size, cfg.num_masks), cfg.image_h, cfg.image_w, 3),
        dtype=np.float32,
    )
    for chunk_start, planes in batch.iter_chunks():
        masked = masked_buf[: planes.shape[0]]
        np.multiply(planes[..., None], image.data[None], out=masked)
        for offset in range(0, planes.shape[0], slice_size):
            sub_masks = planes[offset : offset + slice_size]
            sub_images = masked[offset : offset + slice_size]
            matrix = _score_probe(scorer, sub_images, list(targets), probe_index)
            for t in range(len(targets)):
                if request.strict_reduction:
                    for score, plane in zip(matrix[:, t], sub_masks):
                        accums[t] += score * plane
                else:
                    accums[t] += np.einsum(
                        "b,bhw->hw", matrix[:, t], sub_masks, dtype=np.float64
                    )
            if request.normalization == "empirical":
                coverage += sub_masks.sum(axis=0, dtype=np.float64)
            probe_index += 1

    if request.normalization == "analytic":
        maps = [accum / (cfg.num_masks * cfg.prob_on) for accum in accums]
    else:
        uncovered = coverage == 0.0
        if uncovered.any():
            warnings.warn(
                f"{int(uncovered.sum())} pixels had zero mask coverage; "
                "their saliency is reported as 0",
                CoverageWarning,
                stacklevel=2,
            )
        safe = np.where(uncovered, 1.0, coverage)
        maps = [np.where(uncovered, 0.0, accum / safe) for accum in accums]

    elapsed = time.perf_counter() - started
    return [
        ExplainResult(
            saliency=SaliencyMap(maps[t].astype(np.float32)),
            num_probes=cfg.num_masks,
            score_unmasked=float(base[t]),
            elapsed=elapsed,
        )
        for t in range(len(targets))
    ]


def rise_saliency(request: ExplainRequest, scorer: ScoreFunction) -> ExplainResult:
    """Monte Carlo saliency for a single target; see the module docstring."""
    return explain_sequence(
        request.image,
        [request.target],
        scorer,
        request.mask_config,
        normalization=request.normalization,
        probe_batch=request.probe_batch,
        strict_reduction=request.strict_reduction,
    )[0]


def exact_saliency(
    image: Image,
    grid_h: int,
    grid_w: int,
    prob_on: float,
    scorer: ScoreFunction,
    target: TargetSpec = _PLACEHOLDER_TARGET,
    probe_batch: int = 256,
) -> SaliencyMap:
    """Exact expectation over all binary grids; the oracle for small grids.

    Enumerates the 2^(grid_h*grid_w) grids, weights each by
    prob_on^ones * (1-prob_on)^zeros, and normalizes pixelwise by the mask
    expectation accumulated under the same deterministic (crop-free)
    upsampling. Bounded at 20 grid cells.
    """
    cells = grid_h * grid_w
    if cells > 20:
        raise EnumerationBoundError(
            f"{grid_h}x{grid_w} grid has {cells} cells; enumeration is bounded at 20"
        )
    if not 0.0 < prob_on < 1.0:
        raise InvalidConfigError(f"prob_on must be in (0, 1), got {prob_on}")
    height, width = image.height, image.width
    numerator = np.zeros((height, width), dtype=np.float64)
    expectation = np.zeros((height, width), dtype=np.float64)

    total = 2**cells
    for start in range(0, total, probe_batch):
        stop = min(start + probe_batch, total)
        codes = np.arange(start, stop, dtype=np.int64)
        # Bit k of a code is grid cell k in row-major order.
        bits = (codes[:, None] >> np.arange(cells)) & 1
        ones = bits.sum(axis=1)
        chunk_weights = prob_on**ones * (1.0 - prob_on) ** (cells - ones)
        grids = bits.reshape(-1, grid_h, grid_w).astype(np.float32)
        planes = upsample_bilinear_array(grids, height, width)
        masked = image.data[None] * planes[..., None]
        scores = _check_scores(
            scorer.score_batch(masked, target), stop - start, probe_index=start
        )
        numerator += np.einsum("b,bhw->hw", scores * chunk_weights, planes)
        expectation += np.einsum("b,bhw->hw", chunk_weights, planes)

    exact = np.divide(
        numerator,
        expectation,
        out=np.zeros_like(numerator),
        where=expectation > 0.0,
    )
    return SaliencyMap(exact.astype(np.float32))
