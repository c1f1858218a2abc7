"""Error metrics, missing detections, mask conversion, evaluation and ensembling."""

import numpy as np
import pytest

from conftest import synthetic_observations
from odmd_app.benchmark import (BinaryMask, BoxLSMethod, EndpointMethod, EnsembleMethod, NetworkMethod,
                                absolute_error, build_benchmark_set, build_method, ensemble_batch,
                                ensemble_predict, evaluate, fill_missing_array, fill_missing_detections,
                                mask_to_box, percent_error, summarize)
from odmd_app.errors import DomainError, InputError
from odmd_app.geometry import BoundingBox, CameraPosition, Object3D


class TestMetrics:
    def test_percent_error(self):
        assert percent_error(2.0, 1.5) == pytest.approx(25.0)
        assert percent_error(1.0, 1.0) == 0.0
        np.testing.assert_allclose(percent_error([1.0, 4.0], [1.1, 3.0]), [10.0, 25.0])

    @pytest.mark.parametrize("z", [0.0, -1.0])
    def test_percent_error_needs_positive_depth(self, z):
        with pytest.raises(DomainError):
            percent_error(z, 1.0)

    def test_absolute_error(self):
        assert absolute_error(2.0, 2.5) == pytest.approx(0.5)

    def test_summary_uses_population_std(self):
        stats = summarize(np.array([1.0, 3.0]))
        assert stats == {"mean": 2.0, "median": 2.0, "min": 1.0, "max": 3.0, "std": 1.0}
        assert all(np.isnan(v) for v in summarize(np.array([])).values())


class TestMissingDetections:
    def test_nearest_detection_earlier_wins_ties(self):
        boxes = np.array([[1, 1, 1, 1], [np.nan] * 4, [3, 3, 3, 3], [np.nan] * 4, [np.nan] * 4], dtype=float)
        filled, missing = fill_missing_array(boxes)
        assert missing == [1, 3, 4]
        np.testing.assert_array_equal(filled[1], [1, 1, 1, 1])
        np.testing.assert_array_equal(filled[3], [3, 3, 3, 3])
        np.testing.assert_array_equal(filled[4], [3, 3, 3, 3])

    def test_leading_gap(self):
        boxes = np.array([[np.nan] * 4, [np.nan] * 4, [5, 6, 7, 8]], dtype=float)
        filled, _ = fill_missing_array(boxes)
        np.testing.assert_array_equal(filled, np.tile([5, 6, 7, 8], (3, 1)))

    def test_no_detections(self):
        with pytest.raises(InputError):
            fill_missing_array(np.full((3, 4), np.nan))

    def test_observation_set_variant(self):
        positions = [CameraPosition(0, 0, 0), CameraPosition(0, 0, 0.1), CameraPosition(0, 0, 0.2)]
        obs = fill_missing_detections([None, BoundingBox(300, 200, 40, 30), None], positions)
        assert [o.box.as_tuple() for o in obs] == [(300, 200, 40, 30)] * 3
        with pytest.raises(InputError):
            fill_missing_detections([None], positions)


class TestMaskToBox:
    def test_single_fragment_inclusive_extent(self):
        image = np.zeros((10, 12), dtype=bool)
        image[2:5, 3:9] = True
        box = mask_to_box(BinaryMask.from_array(image))
        assert box.as_tuple() == (5.5, 3.0, 6.0, 3.0)

    def test_large_fragment_beats_small_one_nearer_the_center(self):
        image = np.zeros((40, 40), dtype=bool)
        image[24:26, 19:21] = True       # 4 px just below the center
        image[0:10, 0:10] = True         # 100 px in a corner
        box = mask_to_box(BinaryMask.from_array(image))
        assert box.as_tuple() == (4.5, 4.5, 10.0, 10.0)

    def test_diagonal_pixels_are_connected(self):
        mask = BinaryMask(5, 5, frozenset({(1, 1), (2, 2), (3, 3)}))
        assert mask_to_box(mask).as_tuple() == (2.0, 2.0, 3.0, 3.0)

    def test_anchor_selects_fragment(self):
        image = np.zeros((20, 20), dtype=bool)
        image[0:3, 0:3] = True
        image[16:19, 16:19] = True
        assert mask_to_box(BinaryMask.from_array(image), anchor=(17.0, 17.0)).x == 17.0
        assert mask_to_box(BinaryMask.from_array(image), anchor=(1.0, 1.0)).x == 1.0

    def test_empty_and_out_of_range(self):
        with pytest.raises(InputError):
            mask_to_box(BinaryMask(4, 4, frozenset()))
        with pytest.raises(InputError):
            BinaryMask(4, 4, frozenset({(4, 0)}))


class TestEvaluate:
    def test_box_ls_exact_on_clean_set(self, clean_set):
        report = evaluate(BoxLSMethod(), clean_set, threads=1)
        assert report.method == "box-ls"
        assert report.sets[0].failures == 0
        assert report.sets[0].percent["mean"] < 1e-6
        assert list(report.records.columns) == ["set", "index", "label_z", "prediction", "ok", "abs_error",
                                                "pct_error"]

    def test_aggregate_is_unweighted_mean_of_set_means(self, clean_cfg, perturbed_cfg):
        small = build_benchmark_set(clean_cfg, "a", "test", seed=1, size=50, threads=1)
        large = build_benchmark_set(perturbed_cfg, "b", "test", seed=2, size=500, threads=1)
        report = evaluate(BoxLSMethod(), [small, large], threads=1)
        means = [s.percent["mean"] for s in report.sets]
        assert report.all_sets_aggregate == pytest.approx(np.mean(means), rel=1e-15)
        assert len(report.records) == 550
        assert report.summary_frame()["count"].tolist() == [50, 500]

    def test_failures_are_excluded(self, small_set, monkeypatch):
        method = BoxLSMethod()
        real = method.predict

        def failing_first(boxes, positions, K):
            z, ok = real(boxes, positions, K)
            ok = ok.copy()
            ok[0] = False
            z = z.copy()
            z[0] = np.nan
            return z, ok

        monkeypatch.setattr(method, "predict", failing_first)
        report = evaluate(method, small_set, threads=1)
        assert report.sets[0].failures == 1
        assert not report.records["ok"].iloc[0]
        assert np.isnan(report.records["pct_error"].iloc[0])
        assert report.sets[0].percent["mean"] == pytest.approx(report.records["pct_error"].iloc[1:].mean())

    def test_thread_count_does_not_change_results(self, perturbed_cfg):
        bset = build_benchmark_set(perturbed_cfg, "p", "test", seed=9, size=2500, threads=1)
        one = evaluate(BoxLSMethod(), bset, threads=1)
        many = evaluate(BoxLSMethod(), bset, threads=3)
        np.testing.assert_array_equal(one.records["prediction"], many.records["prediction"])

    def test_network_n_mismatch(self, tiny_params, clean_set):
        with pytest.raises(InputError):
            evaluate(NetworkMethod(tiny_params), clean_set, threads=1)

    def test_requires_sets(self):
        with pytest.raises(InputError):
            evaluate(BoxLSMethod(), [])


class TestBuildMethod:
    def test_names(self, tiny_params):
        assert build_method("box-ls").name == "box-ls"
        assert build_method("parallax-2obs").name == "parallax-2obs"
        assert isinstance(build_method("dbox", tiny_params), NetworkMethod)
        method = build_method("box-ls", ensemble_trials=5, seed=3)
        assert isinstance(method, EnsembleMethod) and method.name == "box-ls+ensemble5"

    def test_errors(self):
        with pytest.raises(InputError):
            build_method("dbox")
        with pytest.raises(InputError):
            build_method("sfm")
        with pytest.raises(InputError):
            EnsembleMethod(BoxLSMethod(), 0)


class TestEnsemble:
    def test_single_trial_equals_base(self, clean_set):
        ex = clean_set.examples
        depth, ok = ensemble_batch(BoxLSMethod(), ex.boxes, ex.positions, ex.intrinsics, trials=1)
        base, _ = BoxLSMethod().predict(ex.boxes, ex.positions, ex.intrinsics)
        np.testing.assert_array_equal(depth, base)
        assert np.all(ok)

    def test_exact_on_clean_data(self, clean_set):
        report = evaluate(EnsembleMethod(BoxLSMethod(), 7, seed=4), clean_set, threads=1)
        assert report.sets[0].percent["mean"] < 1e-6

    def test_deterministic_and_chunk_independent(self, perturbed_cfg):
        bset = build_benchmark_set(perturbed_cfg, "p", "test", seed=3, size=1500, threads=1)
        method = EnsembleMethod(BoxLSMethod(), 5, seed=8)
        a = evaluate(method, bset, threads=1).records["prediction"].to_numpy()
        b = evaluate(method, bset, threads=2).records["prediction"].to_numpy()
        np.testing.assert_array_equal(a, b)
        ex = bset.examples
        # stream index addresses the example, not its position inside a chunk
        single = ensemble_predict(BoxLSMethod(), ex[1200].obs, ex.intrinsics, 5, seed=8, stream_index=1200)
        assert single == a[1200]

    def test_subsets_keep_final_observation(self, K):
        obj = Object3D(0.05, -0.03, 0.9, 0.12, 0.08)
        positions = np.linspace(0.0, 0.3, 6)[:, None] * np.array([0.2, 0.1, 1.0])
        obs = synthetic_observations(K, obj, positions - positions[-1])
        # any subset containing the final view and one other reproduces the exact depth
        assert ensemble_predict(BoxLSMethod(), obs, K, 9, seed=1) == pytest.approx(obj.Z - 0.3, rel=1e-10)

    def test_fixed_length_model_fills_dropped_observations(self, tiny_params, small_set):
        ex = small_set.examples
        method = EnsembleMethod(NetworkMethod(tiny_params), 4, seed=2)
        depth, ok = method.predict(ex.boxes, ex.positions, ex.intrinsics)
        assert depth.shape == (len(ex),)
        assert np.all(np.isfinite(depth[ok]))

    def test_every_trial_failing(self, K):
        obs = synthetic_observations(K, Object3D(0.0, 0.0, 0.9, 0.1, 0.1), [[0, 0, 0], [0.1, 0, 0]])
        with pytest.raises(DomainError):
            ensemble_predict(EndpointMethod("expansion"), obs, K, 3)
