import numpy as np
import pytest

from effecg import signal as S


@pytest.fixture(scope="module")
def fir500():
    return S.design_bandpass(3.0, 45.0, 500.0, 201)


class TestFirDesign:
    def test_passband_gain_at_10hz(self, fir500):
        h = abs(S.frequency_response(fir500, 10.0)[0])
        assert 0.89 <= h <= 1.12

    def test_coefficients_symmetric(self, fir500):
        c = fir500.coefficients
        assert np.max(np.abs(c - c[::-1])) < 1e-12

    def test_dc_gain_below_threshold(self, fir500):
        assert abs(S.frequency_response(fir500, 0.0)[0]) < 0.01
        assert abs(fir500.coefficients.sum()) < 0.01

    def test_stopband_attenuation(self, fir500):
        for freq in (0.0, 60.0, 500.0 / 2.2):
            h = abs(S.frequency_response(fir500, freq)[0])
            assert h < 10 ** (-20 / 20), f"{freq} Hz not attenuated 20 dB"

    def test_even_taps_rejected(self):
        with pytest.raises(ValueError, match="odd"):
            S.design_bandpass(3, 45, 500, 200)

    def test_bad_edges_rejected(self):
        with pytest.raises(ValueError, match="band edges"):
            S.design_bandpass(45, 3, 500, 201)
        with pytest.raises(ValueError, match="band edges"):
            S.design_bandpass(3, 300, 500, 201)


class TestApplyFilter:
    def test_zero_in_zero_out(self, fir500):
        assert not S.apply_filter(np.zeros(1000), fir500).any()

    def test_impulse_gives_coefficients(self, fir500):
        x = np.zeros(600)
        x[300] = 1.0
        out = S.apply_filter(x, fir500)
        np.testing.assert_allclose(out[300 - 100 : 300 + 101], fir500.coefficients,
                                   atol=1e-12)

    def test_mains_hum_rejected(self, fir500):
        t = np.arange(5000) / 500.0
        x = np.sin(2 * np.pi * 60.0 * t)
        out = S.apply_filter(x, fir500)
        assert np.sqrt((out ** 2).mean()) <= 0.1 * np.sqrt((x ** 2).mean())

    def test_linearity(self, fir500, rng):
        x, y = rng.normal(size=800), rng.normal(size=800)
        lhs = S.apply_filter(2.5 * x - 1.25 * y, fir500)
        rhs = 2.5 * S.apply_filter(x, fir500) - 1.25 * S.apply_filter(y, fir500)
        np.testing.assert_allclose(lhs, rhs, atol=1e-9)

    def test_output_length_preserved(self, fir500):
        assert len(S.apply_filter(np.ones(50), fir500)) == 50


class TestStandardize:
    def test_hand_zscore(self):
        np.testing.assert_allclose(S.standardize([1.0, 2.0, 3.0]),
                                   [-1.2247, 0.0, 1.2247], atol=1e-3)

    def test_constant_maps_to_zeros(self):
        assert S.standardize([5.0, 5.0, 5.0]).tolist() == [0.0, 0.0, 0.0]

    def test_idempotent(self, rng):
        x = rng.normal(3.0, 7.0, size=500)
        once = S.standardize(x)
        np.testing.assert_allclose(S.standardize(once), once, atol=1e-9)

    def test_moments(self, rng):
        z = S.standardize(rng.normal(10.0, 0.3, size=1000))
        assert abs(z.mean()) < 1e-9
        assert abs(z.var() - 1.0) < 1e-6


def _detect(record: S.EcgRecord, fir=None):
    fir = fir or S.design_bandpass(sample_rate=record.sample_rate)
    filtered = S.standardize(S.apply_filter(record.samples[0], fir))
    return filtered, S.detect_r_peaks(filtered, record.sample_rate)


class TestRPeaks:
    def test_ten_beats_at_60bpm(self):
        rec, truth = S.synth_ecg(beats=10, bpm=60, fs=500, noise_std=0.0, seed=0)
        _, peaks = _detect(rec)
        assert len(peaks) == 10
        assert np.max(np.abs(peaks - truth["r"])) <= 2

    def test_flat_zero_no_peaks(self):
        assert len(S.detect_r_peaks(np.zeros(5000), 500.0)) == 0

    def test_refractory_merges_close_pulses(self):
        x = np.zeros(2500)
        for center in (1000, 1050):  # 100 ms apart
            for i in range(-12, 13):
                x[center + i] += 1.0 - abs(i) / 12.0
        fir = S.design_bandpass(sample_rate=500)
        filtered = S.standardize(S.apply_filter(x, fir))
        assert len(S.detect_r_peaks(filtered, 500.0)) == 1

    def test_short_signal_warns_empty(self):
        with pytest.warns(UserWarning, match="shorter"):
            out = S.detect_r_peaks(np.ones(100), 500.0)
        assert len(out) == 0

    @pytest.mark.parametrize("bpm", [50.0, 75.0, 120.0])
    def test_noise_free_sensitivity_and_ppv(self, bpm):
        rec, truth = S.synth_ecg(beats=15, bpm=bpm, fs=500, noise_std=0.0, seed=3)
        _, peaks = _detect(rec)
        tol = int(0.04 * 500)
        matched = sum(1 for t in truth["r"] if np.any(np.abs(peaks - t) <= tol))
        assert matched == len(truth["r"])          # sensitivity 1.0
        claimed = sum(1 for p in peaks if np.any(np.abs(truth["r"] - p) <= tol))
        assert claimed == len(peaks)               # positive predictivity 1.0


class TestPWaves:
    def test_p_within_10ms_of_truth(self):
        rec, truth = S.synth_ecg(beats=12, bpm=75, fs=500, noise_std=0.0, seed=1)
        filtered, peaks = _detect(rec)
        p_found = S.detect_p_waves(filtered, peaks, 500.0)
        tol = int(0.01 * 500)
        assert all(p is not None for p in p_found)
        for p, t in zip(p_found, truth["p"]):
            assert abs(p - t) <= tol

    def test_early_beat_window_out_of_range(self):
        x = np.zeros(1000)
        x[25] = 1.0
        out = S.detect_p_waves(x, np.array([25]), 500.0)
        assert out == [None]

    def test_flat_window_absent(self):
        rec, truth = S.synth_ecg(beats=8, bpm=60, fs=500, noise_std=0.0,
                                 p_amplitude=0.0, seed=2)
        filtered, peaks = _detect(rec)
        out = S.detect_p_waves(filtered, peaks, 500.0)
        assert all(p is None for p in out)


class TestClipPad:
    def test_pad(self):
        f = S.clip_pad([3, 9], 4)
        assert f.values.tolist() == [3, 9, -1, -1]
        assert f.mask.tolist() == [1.0, 1.0, 0.0, 0.0]

    def test_truncate(self):
        f = S.clip_pad([1, 2, 3, 4, 5], 3)
        assert f.values.tolist() == [1, 2, 3]
        assert f.mask.tolist() == [1.0, 1.0, 1.0]

    def test_empty(self):
        f = S.clip_pad([], 2)
        assert f.values.tolist() == [-1, -1]
        assert f.mask.tolist() == [0.0, 0.0]

    def test_bad_target_rejected(self):
        with pytest.raises(ValueError, match="target_len"):
            S.clip_pad([1], 0)


class TestSynth:
    def test_deterministic_per_seed(self):
        a, _ = S.synth_ecg(beats=5, bpm=80, fs=360, noise_std=0.1, seed=42)
        b, _ = S.synth_ecg(beats=5, bpm=80, fs=360, noise_std=0.1, seed=42)
        assert np.array_equal(a.samples, b.samples)

    def test_r_spacing_exact(self):
        _, truth = S.synth_ecg(beats=10, bpm=60, fs=500, noise_std=0.0)
        assert len(truth["r"]) == 10
        assert set(np.diff(truth["r"]).tolist()) == {500}

    def test_amplitude_linearity(self):
        a, _ = S.synth_ecg(beats=4, bpm=70, fs=250, noise_std=0.0, amplitude=1.0)
        b, _ = S.synth_ecg(beats=4, bpm=70, fs=250, noise_std=0.0, amplitude=2.0)
        np.testing.assert_array_equal(b.samples, 2.0 * a.samples)

    def test_bpm_bounds(self):
        with pytest.raises(ValueError, match="bpm"):
            S.synth_ecg(beats=5, bpm=300)

    def test_fixed_length_variant(self):
        rec, truth = S.synth_ecg_fixed(4.0, 75.0, 250.0, seed=1)
        assert rec.samples.shape == (1, 1000)
        assert truth["r"].max() < 1000

    def test_multi_lead_gains(self):
        rec, _ = S.synth_ecg(beats=4, bpm=70, fs=250, noise_std=0.0, leads=3)
        assert rec.samples.shape[0] == 3
        np.testing.assert_allclose(rec.samples[1], rec.samples[0] / 1.3, atol=1e-12)


def test_extract_fiducials_pipeline():
    rec, truth = S.synth_ecg(beats=10, bpm=75, fs=500, noise_std=0.0, seed=5)
    r_peaks, p_peaks = S.extract_fiducials(rec)
    assert len(r_peaks) == 10
    assert len(p_peaks) >= 9
