import numpy as np
import pytest

from risekit import (
    ConstantModel,
    DataError,
    EnumerationBoundError,
    ExplainRequest,
    Image,
    InvalidConfigError,
    MaskConfig,
    ProbeError,
    RegionMeanModel,
    ScoreFunction,
    TargetSpec,
    exact_saliency,
    explain_sequence,
    generate_masks,
    rise_saliency,
)
from risekit.saliency import CoverageWarning, ScoreRangeWarning

from oracles import exact_rise_oracle

CLASS0 = TargetSpec.for_class(0)


def tiny_request(image, scorer_seed=0, **overrides):
    config = dict(
        grid_h=2,
        grid_w=2,
        prob_on=0.5,
        num_masks=200,
        image_h=image.height,
        image_w=image.width,
        seed=scorer_seed,
        crop=False,
    )
    request = dict(image=image, target=CLASS0, mask_config=MaskConfig(**config))
    request.update(overrides)
    return ExplainRequest(**request)


def make_image(h, w, seed=0):
    return Image(np.random.default_rng(seed).random((h, w, 3)).astype(np.float32))


class TargetRegionModel(ScoreFunction):
    """Mean intensity of a per-target region; used for sequence tests."""

    max_batch = None
    reentrant = True

    def __init__(self, regions):
        self.regions = {k: RegionMeanModel(*r) for k, r in regions.items()}

    def score_batch(self, images, target):
        return self.regions[target.class_index].score_batch(images, target)


class TestRiseSaliency:
    def test_constant_scorer_empirical_equals_constant(self):
        image = make_image(16, 16)
        request = tiny_request(
            image,
            mask_config=MaskConfig(
                grid_h=4, grid_w=4, num_masks=64, image_h=16, image_w=16, seed=5
            ),
            normalization="empirical",
        )
        result = rise_saliency(request, ConstantModel(0.37))
        assert np.array_equal(result.saliency.data, np.full((16, 16), np.float32(0.37)))

    def test_constant_scorer_analytic_concentrates(self):
        image = make_image(28, 28)
        config = MaskConfig(
            grid_h=7, grid_w=7, prob_on=0.5, num_masks=2000, image_h=28, image_w=28, seed=2
        )
        request = tiny_request(image, mask_config=config)
        result = rise_saliency(request, ConstantModel(0.6))
        rel = np.abs(result.saliency.data / 0.6 - 1.0)
        assert rel.max() < 0.05

    def test_monte_carlo_matches_exact_oracle(self):
        image = make_image(4, 4, seed=3)
        scorer = RegionMeanModel(0, 0, 4, 4)  # mean intensity of the masked image
        config = MaskConfig(
            grid_h=2,
            grid_w=2,
            prob_on=0.5,
            num_masks=10_000,
            image_h=4,
            image_w=4,
            seed=7,
            crop=False,
        )
        estimate = rise_saliency(
            ExplainRequest(image=image, target=CLASS0, mask_config=config), scorer
        )
        exact = exact_saliency(image, 2, 2, 0.5, scorer)
        assert np.abs(estimate.saliency.data - exact.data).max() <= 0.02

    def test_result_metadata(self):
        image = make_image(8, 8)
        request = tiny_request(image)
        result = rise_saliency(request, ConstantModel(0.5))
        assert result.num_probes == request.mask_config.num_masks
        assert result.score_unmasked == 0.5
        assert result.elapsed >= 0.0

    def test_batch_size_independence(self):
        image = make_image(16, 16, seed=4)
        scorer = RegionMeanModel(2, 2, 10, 10)
        maps = []
        for probe_batch in (7, 64):
            request = tiny_request(
                image,
                mask_config=MaskConfig(
                    grid_h=4, grid_w=4, num_masks=150, image_h=16, image_w=16, seed=9
                ),
                probe_batch=probe_batch,
            )
            maps.append(rise_saliency(request, scorer).saliency.data)
        assert np.abs(maps[0] - maps[1]).max() <= 1e-5

    def test_strict_reduction_is_bit_exact_across_batch_sizes(self):
        image = make_image(16, 16, seed=4)
        scorer = RegionMeanModel(2, 2, 10, 10)
        maps = []
        for probe_batch in (7, 64):
            request = tiny_request(
                image,
                mask_config=MaskConfig(
                    grid_h=4, grid_w=4, num_masks=150, image_h=16, image_w=16, seed=9
                ),
                probe_batch=probe_batch,
                strict_reduction=True,
            )
            maps.append(rise_saliency(request, scorer).saliency.data)
        assert np.array_equal(maps[0], maps[1])

    def test_linearity_in_the_scorer(self):
        image = make_image(12, 12, seed=6)
        inner = RegionMeanModel(0, 0, 12, 12)
        a, b = 0.5, 0.25

        class Affine(ScoreFunction):
            max_batch = None
            reentrant = True

            def score_batch(self, images, target):
                return [a * s + b for s in inner.score_batch(images, target)]

        config = MaskConfig(grid_h=3, grid_w=3, num_masks=300, image_h=12, image_w=12, seed=1)
        base = rise_saliency(
            ExplainRequest(image=image, target=CLASS0, mask_config=config), inner
        ).saliency.data
        affine = rise_saliency(
            ExplainRequest(image=image, target=CLASS0, mask_config=config), Affine()
        ).saliency.data
        ones = rise_saliency(
            ExplainRequest(image=image, target=CLASS0, mask_config=config), ConstantModel(1.0)
        ).saliency.data
        np.testing.assert_allclose(affine, a * base + b * ones, atol=1e-6)

    def test_recovers_bright_region(self):
        # Scaled-down argmax-recovery property: a region-mean scorer's top
        # pixels overlap the true region with IoU >= 0.5.
        image = Image(np.full((112, 112, 3), 0.8, np.float32))
        region = (42, 56, 70, 84)  # 28x28
        scorer = RegionMeanModel(*region)
        config = MaskConfig(
            grid_h=7, grid_w=7, prob_on=0.5, num_masks=2000, image_h=112, image_w=112, seed=3
        )
        result = rise_saliency(
            ExplainRequest(image=image, target=CLASS0, mask_config=config), scorer
        )
        area = 28 * 28
        flat = result.saliency.data.reshape(-1)
        top = np.zeros(flat.size, dtype=bool)
        top[np.argsort(-flat, kind="stable")[:area]] = True
        truth = np.zeros((112, 112), dtype=bool)
        truth[region[0] : region[2], region[1] : region[3]] = True
        intersection = (top & truth.reshape(-1)).sum()
        iou = intersection / (2 * area - intersection)
        assert iou >= 0.5

    def test_mc_error_within_three_sigma(self):
        image = make_image(4, 4, seed=8)
        scorer = RegionMeanModel(0, 0, 4, 4)
        config = MaskConfig(
            grid_h=2,
            grid_w=2,
            prob_on=0.5,
            num_masks=4000,
            image_h=4,
            image_w=4,
            seed=12,
            crop=False,
        )
        estimate = rise_saliency(
            ExplainRequest(image=image, target=CLASS0, mask_config=config), scorer
        ).saliency.data
        exact = exact_saliency(image, 2, 2, 0.5, scorer).data

        # Empirical per-pixel standard error of the weighted-mask mean,
        # recomputed here from the same mask distribution.
        masks = generate_masks(config).materialize()
        scores = np.asarray(
            scorer.score_batch(image.data[None] * masks[..., None], CLASS0)
        )
        contributions = scores[:, None, None] * masks / config.prob_on
        stderr = contributions.std(axis=0) / np.sqrt(config.num_masks)
        within = np.abs(estimate - exact) <= 3 * stderr + 1e-9
        assert within.mean() >= 0.99

    def test_error_shrinks_with_more_masks(self):
        image = make_image(4, 4, seed=8)
        scorer = RegionMeanModel(0, 0, 4, 4)
        exact = exact_saliency(image, 2, 2, 0.5, scorer).data
        errors = {}
        for n in (100, 10_000):
            config = MaskConfig(
                grid_h=2,
                grid_w=2,
                num_masks=n,
                image_h=4,
                image_w=4,
                seed=21,
                crop=False,
            )
            estimate = rise_saliency(
                ExplainRequest(image=image, target=CLASS0, mask_config=config), scorer
            ).saliency.data
            errors[n] = np.abs(estimate - exact).max()
        assert errors[10_000] < errors[100]


class TestRiseErrors:
    def test_scorer_failure_becomes_probe_error(self):
        class Exploding(ScoreFunction):
            max_batch = None

            def score_batch(self, images, target):
                raise RuntimeError("boom")

        with pytest.raises(ProbeError) as info:
            rise_saliency(tiny_request(make_image(8, 8)), Exploding())
        assert info.value.index is not None

    def test_nan_scores_are_data_errors(self):
        class NaNModel(ScoreFunction):
            max_batch = None

            def score_batch(self, images, target):
                return [float("nan")] * len(images)

        with pytest.raises(DataError):
            rise_saliency(tiny_request(make_image(8, 8)), NaNModel())

    def test_out_of_range_scores_warn_but_pass(self):
        class Hot(ScoreFunction):
            max_batch = None

            def score_batch(self, images, target):
                return [1.5] * len(images)

        with pytest.warns(ScoreRangeWarning):
            result = rise_saliency(tiny_request(make_image(8, 8)), Hot())
        assert np.isfinite(result.saliency.data).all()

    def test_zero_coverage_pixels_warn_and_zero(self):
        # p tiny and N tiny: with this seed every sampled grid is all-zeros,
        # so no pixel is ever covered.
        config = MaskConfig(
            grid_h=2,
            grid_w=2,
            prob_on=0.001,
            num_masks=2,
            image_h=8,
            image_w=8,
            seed=0,
            crop=False,
        )
        request = ExplainRequest(
            image=make_image(8, 8),
            target=CLASS0,
            mask_config=config,
            normalization="empirical",
        )
        with pytest.warns(CoverageWarning):
            result = rise_saliency(request, ConstantModel(0.9))
        assert np.array_equal(result.saliency.data, np.zeros((8, 8), np.float32))

    def test_request_validation(self):
        image = make_image(8, 8)
        with pytest.raises(InvalidConfigError):
            ExplainRequest(
                image=image,
                target=CLASS0,
                mask_config=MaskConfig(grid_h=2, grid_w=2, num_masks=4, image_h=6, image_w=6),
            )
        with pytest.raises(InvalidConfigError):
            tiny_request(image, normalization="bogus")


class TestExactSaliency:
    def test_single_cell_grid_gives_unmasked_score(self):
        image = make_image(6, 6, seed=1)
        scorer = RegionMeanModel(0, 0, 6, 6)
        expected = scorer.score_batch(image.data[None], CLASS0)[0]
        smap = exact_saliency(image, 1, 1, 0.3, scorer)
        np.testing.assert_allclose(smap.data, expected, atol=1e-6)

    def test_constant_scorer_gives_constant(self):
        smap = exact_saliency(make_image(5, 5), 2, 2, 0.5, ConstantModel(0.7))
        np.testing.assert_allclose(smap.data, 0.7, atol=1e-6)

    def test_matches_independent_enumeration(self):
        image = make_image(4, 4, seed=2)

        def quadrant_mean(arr):
            total = 0.0
            for y in range(2):
                for x in range(2):
                    for c in range(3):
                        total += float(arr[y, x, c])
            return total / 12.0

        oracle = exact_rise_oracle(
            image.data.astype(np.float64), 2, 2, 0.5, quadrant_mean
        )
        ours = exact_saliency(image, 2, 2, 0.5, RegionMeanModel(0, 0, 2, 2))
        np.testing.assert_allclose(ours.data, oracle, atol=1e-5)

    def test_enumeration_bound(self):
        with pytest.raises(EnumerationBoundError):
            exact_saliency(make_image(8, 8), 5, 5, 0.5, ConstantModel(0.5))


class TestExplainSequence:
    def test_single_target_matches_rise(self):
        image = make_image(10, 10, seed=5)
        scorer = RegionMeanModel(0, 0, 10, 10)
        config = MaskConfig(grid_h=2, grid_w=2, num_masks=100, image_h=10, image_w=10, seed=4)
        via_rise = rise_saliency(
            ExplainRequest(image=image, target=CLASS0, mask_config=config), scorer
        )
        via_sequence = explain_sequence(image, [CLASS0], scorer, config)[0]
        assert np.array_equal(via_rise.saliency.data, via_sequence.saliency.data)
        assert via_rise.score_unmasked == via_sequence.score_unmasked

    def test_identical_targets_identical_maps(self):
        image = make_image(10, 10, seed=5)
        scorer = TargetRegionModel({0: (0, 0, 10, 10), 1: (0, 0, 10, 10)})
        config = MaskConfig(grid_h=2, grid_w=2, num_masks=100, image_h=10, image_w=10, seed=4)
        results = explain_sequence(
            image, [TargetSpec.for_class(0), TargetSpec.for_class(1)], scorer, config
        )
        assert np.array_equal(results[0].saliency.data, results[1].saliency.data)

    def test_two_region_targets_peak_in_their_regions(self):
        image = Image(np.full((4, 4, 3), 0.8, np.float32))
        scorer = TargetRegionModel({0: (0, 0, 4, 2), 1: (0, 2, 4, 4)})
        config = MaskConfig(
            grid_h=2,
            grid_w=2,
            num_masks=4000,
            image_h=4,
            image_w=4,
            seed=6,
            crop=False,
        )
        left, right = explain_sequence(
            image, [TargetSpec.for_class(0), TargetSpec.for_class(1)], scorer, config
        )
        left_peak = np.unravel_index(np.argmax(left.saliency.data), (4, 4))
        right_peak = np.unravel_index(np.argmax(right.saliency.data), (4, 4))
        assert left_peak[1] < 2
        assert right_peak[1] >= 2
        # and both agree with the enumeration oracle
        for result, class_index in ((left, 0), (right, 1)):
            exact = exact_saliency(
                image, 2, 2, 0.5, scorer, target=TargetSpec.for_class(class_index)
            )
            assert np.abs(result.saliency.data - exact.data).max() <= 0.03

    def test_needs_targets(self):
        with pytest.raises(InvalidConfigError):
            explain_sequence(
                make_image(8, 8),
                [],
                ConstantModel(0.5),
                MaskConfig(grid_h=2, grid_w=2, num_masks=4, image_h=8, image_w=8),
            )
