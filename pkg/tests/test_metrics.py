import math

import numpy as np
import pytest

from deeprace import metrics
from deeprace.linalg import ShapeError
from deeprace.metrics import (
    MetricUndefinedError,
    box_stats,
    build_report,
    detection_index,
    error_at_5pct,
    error_diff,
    log_mse,
)


class TestErrorDiff:
    def test_identical(self):
        assert np.array_equal(error_diff([1.0, 2.0], [1.0, 2.0]), [0.0, 0.0])

    def test_unit_convention(self):
        # 0.009 ohm residual is 0.9% of the 0.05-ohm detection scale
        out = error_diff([0.05], [0.041])
        assert out[0] == pytest.approx(0.009, abs=1e-15)

    def test_antisymmetry(self):
        a = np.array([0.1, 0.3])
        b = np.array([0.2, 0.1])
        assert np.array_equal(error_diff(a, b), -error_diff(b, a))

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            error_diff([1.0], [1.0, 2.0])


class TestErrorAt5pct:
    def test_exact_detection(self):
        actual = {"d1": np.array([0.01, 0.05, 0.06])}
        pred = {"d1": np.array([0.0, 0.05, 0.0])}
        assert error_at_5pct(pred, actual) == 0.0

    def test_single_device_twenty_percent(self):
        actual = {"d1": np.array([0.04, 0.05])}
        pred = {"d1": np.array([0.0, 0.06])}
        assert error_at_5pct(pred, actual) == pytest.approx(20.0, abs=1e-12)

    def test_three_devices_hand_value(self):
        actual = {
            "a": np.array([0.05]),
            "b": np.array([0.05]),
            "c": np.array([0.05]),
        }
        pred = {
            "a": np.array([0.05]),
            "b": np.array([0.04]),
            "c": np.array([0.06]),
        }
        assert error_at_5pct(pred, actual) == pytest.approx(40.0 / 3.0, abs=1e-12)

    def test_never_crossing_names_device(self):
        with pytest.raises(MetricUndefinedError, match="lowrider"):
            error_at_5pct({"lowrider": np.zeros(3)}, {"lowrider": np.zeros(3)})

    def test_ignores_values_after_detection(self):
        actual = {"d": np.array([0.04, 0.05, 0.09])}
        p1 = {"d": np.array([0.0, 0.05, 0.0])}
        p2 = {"d": np.array([0.0, 0.05, 123.0])}
        assert error_at_5pct(p1, actual) == error_at_5pct(p2, actual)

    def test_detection_index_first_crossing(self):
        assert detection_index(np.array([0.01, 0.05, 0.04, 0.06])) == 1


class TestBoxStats:
    def test_hand_quartiles(self):
        box = box_stats([1.0, 2.0, 3.0, 4.0, 5.0])
        assert box.median == 3.0
        assert box.q1 == 2.0
        assert box.q3 == 4.0

    def test_all_equal(self):
        box = box_stats([2.0] * 6)
        assert box.q1 == box.median == box.q3 == 2.0
        assert box.outliers == ()

    def test_symmetric_data(self):
        box = box_stats([-2.0, -1.0, 0.0, 1.0, 2.0])
        assert box.median == 0.0
        assert box.q1 == -box.q3

    def test_outlier_partition(self):
        values = np.array([0.0, 1.0, 1.1, 1.2, 1.3, 10.0])
        box = box_stats(values)
        inside = values[(values >= box.whisker_lo) & (values <= box.whisker_hi)]
        assert len(inside) + len(box.outliers) == len(values)
        assert 10.0 in box.outliers

    def test_too_few_samples(self):
        with pytest.raises(ShapeError):
            box_stats([1.0, 2.0, 3.0])


class TestLogMse:
    def test_unit(self):
        assert log_mse(1.0) == 0.0

    def test_inverse_pair(self):
        assert log_mse(math.exp(-13.0)) == pytest.approx(-13.0, abs=1e-12)

    def test_round_trip(self):
        for x in (1e-8, 3.7e-4, 2.5):
            assert math.exp(log_mse(x)) == pytest.approx(x, rel=1e-12)

    def test_zero_sentinel(self):
        assert log_mse(0.0) == float("-inf")

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            log_mse(-1.0)


class TestReport:
    def test_mse_consistency_with_residuals(self):
        rng = np.random.default_rng(0)
        actual = rng.uniform(0.0, 0.1, 50)
        predicted = actual + rng.normal(0, 0.01, 50)
        report = build_report(actual, predicted)
        assert report.mse == pytest.approx(np.mean(report.error_diff**2), abs=1e-15)
        assert report.log_mse == pytest.approx(math.log(report.mse), abs=1e-12)

    def test_error_at_5pct_absent_when_never_crossed(self):
        actual = np.full(10, 0.01)
        report = build_report(actual, actual + 0.001)
        assert report.error_at_5pct is None

    def test_keyvalue_contains_log_base(self):
        actual = np.linspace(0.0, 0.1, 20)
        text = metrics.report_keyvalue(build_report(actual, actual + 1e-3))
        assert "log_base=e" in text
        assert "mse=" in text

    def test_residuals_csv(self, tmp_path):
        actual = np.linspace(0.0, 0.1, 10)
        report = build_report(actual, actual)
        path = tmp_path / "resid.csv"
        metrics.save_residuals_csv(report, path)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "index,error_diff_ohms"
        assert len(lines) == 11
