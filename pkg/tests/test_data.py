import numpy as np
import pytest

from deeprace import data
from deeprace.data import (
    DegenerateRangeError,
    DeviceTrace,
    Normalizer,
    SynthParams,
    TraceError,
    fit_normalizer,
    load_csv,
    save_csv,
    synth_degradation,
)


class TestCsvRoundTrip:
    def test_round_trip(self, tmp_path):
        trace = synth_degradation(SynthParams(length=50, seed=3), "rt")
        path = tmp_path / "rt.csv"
        save_csv(trace, path)
        loaded = load_csv(path)
        assert loaded.device_id == "rt"
        assert np.array_equal(loaded.indices, trace.indices)
        # 12 significant digits in the file: relative error below 5e-12
        assert np.allclose(loaded.delta_r, trace.delta_r, rtol=5e-12, atol=0)

    def test_save_is_idempotent(self, tmp_path):
        trace = synth_degradation(SynthParams(length=30, seed=1), "x")
        p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
        save_csv(trace, p1)
        save_csv(load_csv(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_malformed_row_reports_line(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("index,delta_r_ohms\n0,0.1\n1,0.2\n3,abc\n")
        with pytest.raises(TraceError, match="line 4"):
            load_csv(path)

    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.csv"
        path.write_text("")
        with pytest.raises(TraceError, match="empty"):
            load_csv(path)

    def test_header_only(self, tmp_path):
        path = tmp_path / "hdr.csv"
        path.write_text("index,delta_r_ohms\n")
        with pytest.raises(TraceError, match="no data"):
            load_csv(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(OSError):
            load_csv(tmp_path / "nope.csv")

    def test_non_monotonic_index(self, tmp_path):
        path = tmp_path / "mono.csv"
        path.write_text("index,delta_r_ohms\n0,0.1\n2,0.2\n1,0.3\n")
        with pytest.raises(TraceError, match="increasing"):
            load_csv(path)


class TestSynth:
    def test_origin_with_no_noise(self):
        trace = synth_degradation(SynthParams(noise_sigma=0.0, seed=0))
        assert trace.delta_r[0] == 0.0

    def test_closed_form_value(self):
        p = SynthParams(
            linear_rate=1e-5, exp_scale=1e-4, exp_rate=0.01, noise_sigma=0.0,
            length=200, seed=0,
        )
        trace = synth_degradation(p)
        expected = 1e-3 + 1e-4 * (np.e - 1.0)
        assert trace.delta_r[100] == pytest.approx(expected, rel=1e-12)

    def test_deterministic(self):
        a = synth_degradation(SynthParams(seed=9))
        b = synth_degradation(SynthParams(seed=9))
        assert np.array_equal(a.delta_r, b.delta_r)

    def test_noiseless_convex_nondecreasing(self):
        trace = synth_degradation(SynthParams(noise_sigma=0.0, seed=0))
        d1 = np.diff(trace.delta_r)
        assert (d1 >= 0).all()
        assert (np.diff(d1) >= -1e-15).all()

    def test_presets_cross_detection_threshold(self):
        for name, trace in data.preset_traces().items():
            assert (trace.delta_r >= 0.05).any(), name

    def test_negative_param_rejected(self):
        with pytest.raises(ValueError):
            SynthParams(linear_rate=-1e-5)


class TestNormalizer:
    def test_midpoint(self):
        nz = Normalizer(0.0, 0.05)
        assert nz.normalize(0.025) == 0.0

    def test_round_trip_identity(self):
        nz = Normalizer(0.01, 0.09)
        values = np.random.default_rng(0).uniform(0.0, 0.1, 100)
        back = nz.denormalize(nz.normalize(values))
        assert np.allclose(back, values, atol=1e-12)

    def test_no_clamp_above_range(self):
        nz = Normalizer(0.0, 0.05)
        assert nz.normalize(0.06) > 1.0

    def test_monotone(self):
        nz = Normalizer(0.0, 0.05)
        values = np.sort(np.random.default_rng(1).uniform(0, 0.1, 50))
        out = nz.normalize(values)
        assert (np.diff(out) >= 0).all()

    def test_fit_over_union(self):
        t1 = DeviceTrace("a", np.arange(3), np.array([0.01, 0.02, 0.03]))
        t2 = DeviceTrace("b", np.arange(3), np.array([0.005, 0.02, 0.025]))
        nz = fit_normalizer([t1, t2])
        assert nz.r_min == 0.005
        assert nz.r_max == 0.03

    def test_degenerate_range(self):
        t = DeviceTrace("a", np.arange(3), np.full(3, 0.01))
        with pytest.raises(DegenerateRangeError):
            fit_normalizer([t])


class TestDeviceTrace:
    def test_rejects_unsorted_indices(self):
        with pytest.raises(TraceError):
            DeviceTrace("a", np.array([0, 2, 1]), np.zeros(3))

    def test_rejects_length_mismatch(self):
        with pytest.raises(TraceError):
            DeviceTrace("a", np.arange(3), np.zeros(4))

    def test_catalogue_lists_all_presets(self):
        text = data.preset_catalogue_text()
        for name in data.PRESETS:
            assert f"[{name}]" in text
