import dataclasses
import math

import numpy as np
import pytest

from hark import dsp
from hark.core import AudioClip
from hark.errors import ValidationError


def sine(freq, duration_s=1.0, rate=24000, amplitude=0.5):
    t = np.arange(int(round(duration_s * rate))) / rate
    return AudioClip(amplitude * np.sin(2 * np.pi * freq * t), rate)


def dominant_freq_hz(clip):
    w = np.hanning(clip.samples.size)
    spec = np.abs(np.fft.rfft(clip.samples * w))
    return np.argmax(spec) * clip.sample_rate_hz / clip.samples.size


def tail_rms(x):
    return float(np.sqrt(np.mean(x[x.size // 2 :] ** 2)))


def measured_gain_db(clip_in, clip_out):
    return 20.0 * math.log10(tail_rms(clip_out.samples) / tail_rms(clip_in.samples))


ALL_OFF = dsp.AugmentConfig(
    time_stretch_p=0, time_shift_p=0, pitch_p=0, gain_p=0,
    hpf_p=0, lpf_p=0, eq_p=0, noise_p=0, seed=11,
)
ALL_ON = dataclasses.replace(
    ALL_OFF, time_stretch_p=1, time_shift_p=1, pitch_p=1, gain_p=1,
    hpf_p=1, lpf_p=1, eq_p=1, noise_p=1,
)


class TestTimeStretch:
    def test_rate_one_is_identity(self):
        clip = sine(440.0)
        out = dsp.time_stretch(clip, 1.0)
        assert out.samples.size == clip.samples.size
        assert np.abs(out.samples - clip.samples).max() < 1e-6

    def test_length_definition(self):
        clip = AudioClip(np.random.default_rng(0).uniform(-0.5, 0.5, 240000), 24000)
        out = dsp.time_stretch(clip, 1.01)
        assert abs(out.samples.size - 237624) <= 1

    def test_fft_peak_scales(self):
        clip = sine(1000.0, duration_s=2.0)
        out = dsp.time_stretch(clip, 1.01)
        assert abs(dominant_freq_hz(out) - 1010.0) <= 2.0

    def test_guard(self):
        with pytest.raises(ValidationError):
            dsp.time_stretch(sine(440.0), 1.5)


class TestTimeShift:
    def test_zero_shift_identity(self):
        clip = sine(440.0)
        out = dsp.time_shift(clip, 0.0)
        assert np.array_equal(out.samples, clip.samples)

    def test_positive_shift_prepends_zeros(self):
        clip = sine(440.0)
        out = dsp.time_shift(clip, 0.5)
        assert out.samples.size == clip.samples.size
        assert np.array_equal(out.samples[:12000], np.zeros(12000))
        assert np.array_equal(out.samples[12000:], clip.samples[:12000])

    def test_shift_then_unshift(self):
        # Hand-composition: +0.1 s drops the last 2400 samples behind prepended
        # zeros; -0.1 s then restores positions and appends zeros where the
        # dropped tail was. Content stays in place, tail is zeroed.
        clip = sine(440.0)
        out = dsp.time_shift(dsp.time_shift(clip, 0.1), -0.1)
        expected = clip.samples.copy()
        expected[-2400:] = 0.0
        assert np.abs(out.samples - expected).max() < 1e-12

    def test_shift_beyond_duration(self):
        with pytest.raises(ValidationError):
            dsp.time_shift(sine(440.0, duration_s=0.2), 0.5)


class TestPitchShift:
    def test_zero_cents_identity(self):
        clip = sine(440.0)
        out = dsp.pitch_shift(clip, 0.0)
        assert out.samples.size == clip.samples.size
        corr = np.corrcoef(out.samples, clip.samples)[0, 1]
        assert corr >= 0.999

    def test_ratio_definition(self):
        assert abs(2.0 ** (10 / 1200) - 1.0057929) < 1e-6

    def test_fft_peak(self):
        clip = sine(440.0, duration_s=4.0)
        out = dsp.pitch_shift(clip, 10.0)
        assert abs(out.samples.size - clip.samples.size) / clip.samples.size < 0.001
        assert abs(dominant_freq_hz(out) - 442.55) <= 1.0

    def test_negative_cents(self):
        clip = sine(440.0, duration_s=4.0)
        out = dsp.pitch_shift(clip, -10.0)
        assert abs(dominant_freq_hz(out) - 437.47) <= 1.0


class TestGain:
    def test_zero_db_identity(self):
        clip = sine(440.0)
        assert np.array_equal(dsp.gain(clip, 0.0).samples, clip.samples)

    def test_plus_two_db_factor(self):
        clip = sine(440.0)
        out = dsp.gain(clip, 2.0)
        np.testing.assert_allclose(out.samples, clip.samples * 1.2589254, rtol=1e-6)

    def test_minus_two_db_rms(self):
        clip = sine(440.0)
        out = dsp.gain(clip, -2.0)
        ratio = np.sqrt(np.mean(out.samples**2) / np.mean(clip.samples**2))
        assert abs(ratio - 0.794328) < 1e-6


class TestButterworth:
    def test_highpass_passband_attenuation(self):
        clip = sine(1000.0)
        out = dsp.butterworth_filter(clip, "highpass", 100.0)
        assert abs(measured_gain_db(clip, out)) <= 0.2

    def test_highpass_stopband_attenuation(self):
        clip = sine(25.0, duration_s=2.0)
        out = dsp.butterworth_filter(clip, "highpass", 100.0)
        assert measured_gain_db(clip, out) <= -20.0

    def test_cutoff_gain_is_minus_3db(self):
        clip = sine(100.0, duration_s=2.0)
        out = dsp.butterworth_filter(clip, "highpass", 100.0)
        assert abs(measured_gain_db(clip, out) - (-3.01)) <= 0.3

    def test_lowpass_preserves_dc(self):
        clip = AudioClip(np.full(48000, 0.25), 48000)
        out = dsp.butterworth_filter(clip, "lowpass", 16000.0)
        assert abs(tail_rms(out.samples) - 0.25) < 1e-3

    def test_analytic_magnitude_at_probes(self):
        fc = 100.0
        for mode in ("highpass", "lowpass"):
            for f in (fc / 4, fc, 4 * fc):
                clip = sine(f, duration_s=4.0)
                out = dsp.butterworth_filter(clip, mode, fc)
                ratio = (f / fc) ** 2
                if mode == "highpass":
                    analytic = ratio / math.sqrt(1 + ratio**2)
                else:
                    analytic = 1.0 / math.sqrt(1 + ratio**2)
                measured = measured_gain_db(clip, out)
                assert abs(measured - 20 * math.log10(analytic)) <= 0.5, (mode, f)

    def test_cutoff_at_nyquist_rejected(self):
        with pytest.raises(ValidationError):
            dsp.butterworth_filter(sine(440.0), "lowpass", 12000.0)


class TestParametricEq:
    def test_all_zero_gains_identity(self):
        clip = sine(440.0)
        out = dsp.parametric_eq(clip, [0.0] * 7)
        assert np.abs(out.samples - clip.samples).max() < 1e-6

    def test_band4_boosts_1khz_tone(self):
        clip = sine(1000.0, duration_s=2.0)
        gains = [0.0, 0.0, 0.0, 3.0, 0.0, 0.0, 0.0]
        out = dsp.parametric_eq(clip, gains)
        assert abs(measured_gain_db(clip, out) - 3.0) <= 0.5

    def test_center_gains_match_request(self):
        # Use a 48 kHz clip so all 7 centers sit below Nyquist.
        for band, center in enumerate(dsp.EQ_CENTERS_HZ):
            clip = sine(center, duration_s=2.0, rate=48000)
            gains = [0.0] * 7
            gains[band] = 2.5
            out = dsp.parametric_eq(clip, gains)
            assert abs(measured_gain_db(clip, out) - 2.5) <= 0.5, center

    def test_inverse_cascade(self):
        rng = np.random.default_rng(3)
        clip = AudioClip(rng.uniform(-0.5, 0.5, 48000), 24000)
        gains = list(rng.uniform(-3, 3, 7))
        out = dsp.parametric_eq(dsp.parametric_eq(clip, gains), [-g for g in gains])
        rms_ratio_db = 20 * math.log10(
            np.sqrt(np.mean(out.samples**2) / np.mean(clip.samples**2))
        )
        assert abs(rms_ratio_db) < 0.1


class TestNoise:
    def test_noise_rms_at_40db(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal(240000)
        x /= np.sqrt(np.mean(x**2))  # unit RMS
        clip = AudioClip(np.clip(x, -6, 6) / 6.0, 24000)  # keep finite range
        clip = AudioClip(clip.samples / np.sqrt(np.mean(clip.samples**2)), 24000)
        out = dsp.add_noise_snr(clip, 40.0, seed=42)
        noise = out.samples - clip.samples
        assert abs(np.sqrt(np.mean(noise**2)) - 0.01) < 5e-4

    def test_infinite_snr_identity(self):
        clip = sine(440.0)
        out = dsp.add_noise_snr(clip, math.inf, seed=1)
        assert np.array_equal(out.samples, clip.samples)

    def test_silent_input_skipped(self):
        clip = AudioClip(np.zeros(1000), 24000)
        out = dsp.add_noise_snr(clip, 30.0, seed=1)
        assert np.array_equal(out.samples, np.zeros(1000))

    def test_measured_snr_within_half_db(self):
        clip = sine(440.0, duration_s=10.0)
        out = dsp.add_noise_snr(clip, 30.0, seed=9)
        noise = out.samples - clip.samples
        snr = 10 * math.log10(np.mean(clip.samples**2) / np.mean(noise**2))
        assert 29.5 <= snr <= 30.5


class TestPipeline:
    def test_all_probabilities_zero_is_bit_identity(self):
        clip = sine(440.0)
        out = dsp.apply_pipeline(clip, ALL_OFF, clip_key=123)
        assert np.array_equal(out.samples, clip.samples)

    def test_determinism(self):
        clip = sine(440.0)
        a = dsp.apply_pipeline(clip, ALL_ON, clip_key=5)
        b = dsp.apply_pipeline(clip, ALL_ON, clip_key=5)
        assert np.array_equal(a.samples, b.samples)

    def test_different_keys_differ(self):
        clip = sine(440.0)
        a = dsp.apply_pipeline(clip, ALL_ON, clip_key=5)
        b = dsp.apply_pipeline(clip, ALL_ON, clip_key=6)
        assert not np.array_equal(a.samples, b.samples)

    def test_all_on_equals_manual_composition(self):
        clip = sine(330.0, duration_s=2.0)
        draws = dsp.draw_parameters(ALL_ON, clip_key=77)
        assert all(d.applied for d in draws)
        by_op = {d.op: d.params for d in draws}

        x = dsp.time_stretch(clip, by_op["time_stretch"]["rate"])
        x = dsp.time_shift(x, by_op["time_shift"]["shift_s"])
        x = dsp.pitch_shift(x, by_op["pitch_shift"]["cents"])
        x = dsp.gain(x, by_op["gain"]["gain_db"])
        x = dsp.butterworth_filter(x, "highpass", by_op["highpass"]["cutoff_hz"])
        if by_op["lowpass"]["cutoff_hz"] < 0.5 * x.sample_rate_hz:
            x = dsp.butterworth_filter(x, "lowpass", by_op["lowpass"]["cutoff_hz"])
        x = dsp.parametric_eq(x, by_op["eq"]["gains_db"])
        x = dsp.add_noise_snr(x, by_op["noise"]["snr_db"], by_op["noise"]["noise_seed"])
        manual = np.clip(x.samples, -1.0, 1.0)

        out = dsp.apply_pipeline(clip, ALL_ON, clip_key=77)
        assert np.array_equal(out.samples, manual)

    def test_output_peak_limited(self):
        clip = AudioClip(np.random.default_rng(1).uniform(-0.99, 0.99, 24000), 24000)
        cfg = dataclasses.replace(ALL_ON, gain_db=(6.0, 6.0))
        out = dsp.apply_pipeline(clip, cfg, clip_key=1)
        assert np.abs(out.samples).max() <= 1.0 + 1e-6

    def test_draw_uniformity_small(self):
        n = 20000
        sums = {op: 0.0 for op in ("time_stretch", "gain", "noise")}
        for i in range(n):
            draws = dsp.draw_parameters(dsp.AugmentConfig(seed=2), i)
            by_op = {d.op: d.params for d in draws}
            sums["time_stretch"] += by_op["time_stretch"]["rate"]
            sums["gain"] += by_op["gain"]["gain_db"]
            sums["noise"] += by_op["noise"]["snr_db"]
        for op, (lo, hi) in (
            ("time_stretch", (0.99, 1.01)),
            ("gain", (-2.0, 2.0)),
            ("noise", (30.0, 50.0)),
        ):
            mid = (lo + hi) / 2
            se = (hi - lo) / math.sqrt(12) / math.sqrt(n)
            assert abs(sums[op] / n - mid) <= 3 * se, op

    def test_gate_rate_matches_probability(self):
        n = 4000
        fired = 0
        cfg = dsp.AugmentConfig(seed=5)
        for i in range(n):
            draws = dsp.draw_parameters(cfg, i)
            fired += draws[3].applied  # gain, p=0.9
        assert abs(fired / n - 0.9) < 3 * math.sqrt(0.9 * 0.1 / n)

    def test_disable(self):
        cfg = ALL_ON.disable(["noise", "eq"])
        assert cfg.noise_p == 0.0 and cfg.eq_p == 0.0
        draws = dsp.draw_parameters(cfg, 1)
        assert not draws[7].applied and not draws[6].applied


class TestLengthPreservation:
    def test_all_ops_except_resamplers_preserve_length(self):
        clip = sine(440.0)
        n = clip.samples.size
        assert dsp.time_shift(clip, 0.2).samples.size == n
        assert dsp.gain(clip, 1.5).samples.size == n
        assert dsp.butterworth_filter(clip, "highpass", 100.0).samples.size == n
        assert dsp.butterworth_filter(clip, "lowpass", 8000.0).samples.size == n
        assert dsp.parametric_eq(clip, [1.0] * 7).samples.size == n
        assert dsp.add_noise_snr(clip, 35.0, seed=0).samples.size == n
        assert dsp.pitch_shift(clip, 7.0).samples.size == n  # restored exactly

    def test_resampler_length_tolerances(self):
        clip = sine(440.0)
        n = clip.samples.size
        for rate in (0.99, 1.004, 1.01):
            out = dsp.time_stretch(clip, rate)
            assert abs(out.samples.size - round(n / rate)) <= 1
