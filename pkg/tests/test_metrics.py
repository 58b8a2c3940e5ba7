import json
import math

import numpy as np
import pytest

from risekit import (
    BoundingBox,
    ConstantModel,
    Image,
    InvalidArgumentError,
    InvalidDimensionError,
    InvalidInputError,
    MetricCurve,
    ProbeError,
    RegionMeanModel,
    SaliencyMap,
    ScoreFunction,
    TargetSpec,
    auc,
    deletion,
    gaussian_blur,
    insertion,
    load_boxes_jsonl,
    pointing_game,
    tally_pointing,
)
from risekit.metrics import (
    curve_sidecar,
    default_pixels_per_step,
    saliency_rank,
    save_curve_csv,
)

from oracles import deletion_simulation, insertion_simulation, trapezoid_oracle

CLASS0 = TargetSpec.for_class(0)


def intensity_image(seed=0, h=6, w=6):
    rng = np.random.default_rng(seed)
    return Image(rng.random((h, w, 3)).astype(np.float32))


def mean_intensity(arr) -> float:
    return float(np.asarray(arr, dtype=np.float64).mean())


class MeanIntensityModel(ScoreFunction):
    max_batch = None
    reentrant = True

    def score_batch(self, images, target):
        from risekit.modelbridge import as_batch_array

        return as_batch_array(images).mean(axis=(1, 2, 3), dtype=np.float64).tolist()


class TestAuc:
    def test_unit_square(self):
        assert auc([(0, 1), (1, 1)]) == 1.0

    def test_triangle(self):
        assert auc([(0, 1), (1, 0)]) == 0.5

    def test_symmetric_tent(self):
        assert auc([(0, 0), (0.5, 1), (1, 0)]) == 0.5

    def test_matches_independent_trapezoid(self):
        rng = np.random.default_rng(3)
        xs = np.concatenate([[0.0], np.sort(rng.random(8)), [1.0]])
        points = [(float(x), float(y)) for x, y in zip(xs, rng.random(10))]
        assert auc(points) == pytest.approx(trapezoid_oracle(points), abs=1e-12)

    def test_bounded_by_extremes(self):
        points = [(0.0, 0.2), (0.4, 0.9), (1.0, 0.1)]
        value = auc(points)
        assert 0.1 <= value <= 0.9

    def test_rejects_bad_input(self):
        with pytest.raises(InvalidInputError):
            auc([(0, 1)])
        with pytest.raises(InvalidInputError):
            auc([(0, 1), (0, 2), (1, 0)])  # not strictly increasing
        with pytest.raises(InvalidInputError):
            auc([(0.1, 1), (1, 0)])  # does not span [0, 1]


class TestSaliencyOrder:
    def test_row_major_tie_break(self):
        smap = SaliencyMap(np.array([[0.5, 0.9], [0.9, 0.1]], np.float32))
        assert saliency_rank(smap).tolist() == [1, 2, 0, 3]

    def test_equal_maps_equal_orders(self):
        data = np.random.default_rng(0).random((5, 5)).astype(np.float32)
        a = saliency_rank(SaliencyMap(data))
        b = saliency_rank(SaliencyMap(data.copy()))
        assert np.array_equal(a, b)

    def test_default_step_size(self):
        assert default_pixels_per_step(224, 224) == math.ceil(224 * 224 / 100)
        assert default_pixels_per_step(3, 3) == 1


class TestDeletion:
    def test_constant_scorer_flat_curve(self):
        image = intensity_image()
        smap = SaliencyMap(image.data.mean(axis=2))
        curve = deletion(image, smap, ConstantModel(0.8), pixels_per_step=5)
        assert curve.auc == pytest.approx(0.8, abs=1e-7)
        assert all(score == 0.8 for _, score in curve.points)

    def test_matches_step_simulation(self):
        image = intensity_image(seed=1, h=3, w=3)
        smap = SaliencyMap(image.data.mean(axis=2))
        curve = deletion(image, smap, MeanIntensityModel(), pixels_per_step=1)
        expected = deletion_simulation(
            image.data.astype(np.float64), smap.data, 1, mean_intensity
        )
        assert len(curve.points) == len(expected) == 10
        for (xf, yf), (xe, ye) in zip(curve.points, expected):
            assert xf == pytest.approx(xe, abs=1e-12)
            assert yf == pytest.approx(ye, abs=1e-6)
        assert curve.auc == pytest.approx(trapezoid_oracle(expected), abs=1e-6)

    def test_final_frame_fully_deleted(self):
        image = intensity_image(seed=2)
        smap = SaliencyMap(np.arange(36, dtype=np.float32).reshape(6, 6))
        curve = deletion(image, smap, MeanIntensityModel(), pixels_per_step=7)
        assert curve.points[-1] == (1.0, 0.0)

    def test_score_constant_until_region_touched(self):
        # Scorer reads only the top-left 2x2 region; saliency ranks that
        # region last, so the score cannot move until its first pixel goes.
        image = Image(np.full((4, 4, 3), 0.6, np.float32))
        scorer = RegionMeanModel(0, 0, 2, 2)
        ranks = np.arange(16, dtype=np.float32).reshape(4, 4)
        region = np.zeros((4, 4), dtype=bool)
        region[:2, :2] = True
        ranks[region] = -1.0  # deleted last
        curve = deletion(image, SaliencyMap(ranks), scorer, pixels_per_step=1)
        scores = [score for _, score in curve.points]
        assert scores[:13] == [pytest.approx(0.6)] * 13
        assert scores[-1] == 0.0

    def test_custom_fill_value(self):
        image = Image(np.full((3, 3, 3), 0.5, np.float32))
        smap = SaliencyMap(np.ones((3, 3), np.float32))
        curve = deletion(
            image, smap, MeanIntensityModel(), pixels_per_step=9, fill_value=0.5
        )
        assert [score for _, score in curve.points] == [pytest.approx(0.5)] * 2

    def test_input_validation(self):
        image = intensity_image()
        smap = SaliencyMap(np.ones((6, 6), np.float32))
        with pytest.raises(InvalidArgumentError):
            deletion(image, smap, ConstantModel(0.5), pixels_per_step=0)
        with pytest.raises(InvalidDimensionError):
            deletion(image, SaliencyMap(np.ones((2, 2), np.float32)), ConstantModel(0.5), 1)

    def test_probe_error_carries_step(self):
        class FailsLate(ScoreFunction):
            max_batch = 4

            def __init__(self):
                self.calls = 0

            def score_batch(self, images, target):
                self.calls += 1
                if self.calls > 1:
                    raise RuntimeError("flaky")
                return [0.5] * len(images)

        image = intensity_image()
        smap = SaliencyMap(image.data.mean(axis=2))
        with pytest.raises(ProbeError) as info:
            deletion(image, smap, FailsLate(), pixels_per_step=4)
        assert info.value.index == 4


class TestInsertion:
    def test_constant_scorer_flat_curve(self):
        image = intensity_image()
        smap = SaliencyMap(image.data.mean(axis=2))
        curve = insertion(image, smap, ConstantModel(0.3), pixels_per_step=6)
        assert curve.auc == pytest.approx(0.3, abs=1e-7)

    def test_uniform_saliency_matches_simulation(self):
        image = intensity_image(seed=4, h=5, w=5)
        smap = SaliencyMap(np.zeros((5, 5), np.float32))
        curve = insertion(
            image, smap, MeanIntensityModel(), pixels_per_step=2, blur_kernel=5, blur_sigma=2.0
        )
        blurred = gaussian_blur(image, 5, 2.0)
        expected = insertion_simulation(
            image.data.astype(np.float64),
            blurred.data.astype(np.float64),
            smap.data,
            2,
            mean_intensity,
        )
        for (xf, yf), (xe, ye) in zip(curve.points, expected):
            assert xf == pytest.approx(xe, abs=1e-12)
            assert yf == pytest.approx(ye, abs=1e-6)
        # roughly linear ramp from blurred mean to original mean
        assert curve.points[0][1] == pytest.approx(mean_intensity(blurred.data), abs=1e-6)
        assert curve.points[-1][1] == pytest.approx(mean_intensity(image.data), abs=1e-6)

    def test_ends_at_unblurred_score(self):
        image = intensity_image(seed=5)
        smap = SaliencyMap(image.data.mean(axis=2))
        curve = insertion(image, smap, MeanIntensityModel(), pixels_per_step=10)
        assert curve.points[-1][1] == pytest.approx(mean_intensity(image.data), abs=1e-6)


class TestPointingGame:
    def test_peak_inside_box_hits(self):
        data = np.zeros((32, 32), np.float32)
        data[10, 10] = 1.0
        assert pointing_game(SaliencyMap(data), [BoundingBox(5, 5, 20, 20, "cat")])

    def test_peak_outside_box_misses(self):
        data = np.zeros((32, 32), np.float32)
        data[0, 0] = 1.0
        assert not pointing_game(SaliencyMap(data), [BoundingBox(5, 5, 20, 20, "cat")])

    def test_tie_break_uses_lowest_row_major_pixel(self):
        uniform = SaliencyMap(np.full((16, 16), 0.5, np.float32))
        assert pointing_game(uniform, [BoundingBox(0, 0, 1, 1, "cat")])
        assert not pointing_game(uniform, [BoundingBox(1, 1, 3, 3, "cat")])

    def test_any_box_can_hit(self):
        data = np.zeros((16, 16), np.float32)
        data[8, 12] = 1.0
        boxes = [BoundingBox(0, 0, 2, 2, "cat"), BoundingBox(10, 6, 14, 10, "cat")]
        assert pointing_game(SaliencyMap(data), boxes)

    def test_empty_boxes_rejected(self):
        with pytest.raises(InvalidInputError):
            pointing_game(SaliencyMap(np.ones((4, 4), np.float32)), [])

    def test_box_validation(self):
        with pytest.raises(InvalidInputError):
            BoundingBox(5, 5, 5, 10, "cat")
        with pytest.raises(InvalidInputError):
            BoundingBox(-1, 0, 4, 4, "cat")


class TestTally:
    def test_single_category(self):
        tally = tally_pointing([("cat", True), ("cat", True), ("cat", True), ("cat", False)])
        assert tally.mean_accuracy == 0.75
        assert tally.per_category["cat"].hits == 3

    def test_mean_is_unweighted_across_categories(self):
        results = [("cat", True)] * 9 + [("dog", False)]
        tally = tally_pointing(results)
        assert tally.mean_accuracy == 0.5

    def test_empty_stream_rejected(self):
        with pytest.raises(InvalidInputError):
            tally_pointing([])

    def test_json_document(self):
        doc = tally_pointing([("cat", True), ("dog", False)]).to_json()
        assert doc["per_category"]["cat"] == {"hits": 1, "misses": 0, "accuracy": 1.0}
        assert doc["mean_accuracy"] == 0.5


class TestCurveFiles:
    def test_csv_format(self, tmp_path):
        curve = MetricCurve(((0.0, 1.0), (0.5, 0.4), (1.0, 0.0)))
        path = tmp_path / "curve.csv"
        save_curve_csv(curve, path)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "fraction,score"
        assert len(lines) == 4
        assert lines[1].startswith("0.0,")

    def test_sidecar_fields(self):
        curve = MetricCurve(((0.0, 1.0), (1.0, 0.0)))
        doc = curve_sidecar("insertion", curve, 97, blur_kernel=11, blur_sigma=5.0)
        assert doc == {
            "metric": "insertion",
            "auc": 0.5,
            "pixels_per_step": 97,
            "blur_kernel": 11,
            "blur_sigma": 5.0,
        }

    def test_curve_invariants_enforced(self):
        with pytest.raises(InvalidInputError):
            MetricCurve(((0.0, 1.0), (0.0, 0.5), (1.0, 0.0)))


class TestBoxesFile:
    def test_jsonl_ingest(self, tmp_path):
        path = tmp_path / "boxes.jsonl"
        records = [
            {"image_id": "a", "category": "cat", "x_min": 0, "y_min": 0, "x_max": 4, "y_max": 4},
            {"image_id": "a", "category": "dog", "x_min": 2, "y_min": 2, "x_max": 6, "y_max": 6},
            {"image_id": "b", "category": "cat", "x_min": 1, "y_min": 1, "x_max": 3, "y_max": 3},
        ]
        path.write_text("\n".join(json.dumps(r) for r in records) + "\n")
        boxes = load_boxes_jsonl(path)
        assert sorted(boxes) == ["a", "b"]
        assert len(boxes["a"]) == 2
        assert boxes["b"][0].category == "cat"

    def test_malformed_line_reports_position(self, tmp_path):
        path = tmp_path / "boxes.jsonl"
        path.write_text('{"image_id": "a"}\n')
        with pytest.raises(InvalidInputError, match="boxes.jsonl:1"):
            load_boxes_jsonl(path)
