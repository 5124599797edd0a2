import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.signal import welch

from oracles import fft_peak_hz, measured_snr_db
from ttseval.audio_io import Waveform
from ttseval.augment import (
    AlignmentTrack,
    AugmentSpec,
    add_pink_noise,
    add_white_noise,
    apply_pipeline,
    derive_seed,
    exponential_rir,
    insert_micro_gaps,
    pink_noise,
    pitch_shift,
    read_alignments,
    read_recipe,
    recipe_hash,
    rir_convolve,
    shape_freq_response,
    swap_consonants,
    time_stretch,
)
from ttseval.errors import AlignmentError, AugmentError, StageOrderError
from ttseval.synth import speech_like, tone


def level_db(x):
    return 10 * np.log10(np.mean(np.asarray(x) ** 2))


class TestWhiteNoise:
    def test_high_snr_near_identity(self):
        w = speech_like(1.0, seed=1)
        out = add_white_noise(w, 60.0, seed=3)
        rel = np.sqrt(np.mean((out.samples - w.samples) ** 2)) / np.sqrt(np.mean(w.samples ** 2))
        assert rel < 0.002

    def test_zero_db_noise_rms_equals_signal_rms(self):
        w = tone(300.0, 1.0, amp=0.1)
        noise = add_white_noise(w, 0.0, seed=9).samples - w.samples
        assert np.sqrt(np.mean(noise ** 2)) == pytest.approx(np.sqrt(np.mean(w.samples ** 2)), rel=0.01)

    def test_snr_calibration_20_trials(self):
        devs = []
        for trial in range(20):
            r = np.random.default_rng(trial)
            w = speech_like(1.0, seed=trial)
            snr = float(r.uniform(5, 30))
            devs.append(abs(measured_snr_db(w.samples, add_white_noise(w, snr, seed=trial).samples) - snr))
        assert max(devs) <= 0.1

    def test_zero_power_rejected(self):
        with pytest.raises(AugmentError):
            add_white_noise(Waveform(np.zeros(100)), 10.0)

    def test_non_finite_snr_rejected(self):
        with pytest.raises(AugmentError):
            add_white_noise(tone(200, 0.1), float("inf"))

    def test_output_clipped(self):
        out = add_white_noise(tone(200, 0.2, amp=0.99), -10.0, seed=0)
        assert np.max(np.abs(out.samples)) <= 1.0


class TestPinkNoise:
    def test_periodogram_slope(self):
        x = pink_noise(16000 * 20, np.random.default_rng(0))
        f, p = welch(x, fs=16000, nperseg=4096)
        band = (f >= 100) & (f <= 6000)
        slope = np.polyfit(np.log10(f[band]), 10 * np.log10(p[band]), 1)[0]
        assert -11.5 <= slope <= -8.5

    def test_no_dc(self):
        x = pink_noise(8000, np.random.default_rng(2))
        assert abs(x.mean()) < 1e-12

    def test_snr_calibration_20_trials(self):
        for trial in range(20):
            w = speech_like(1.0, seed=100 + trial)
            snr = 5.0 + trial
            got = measured_snr_db(w.samples, add_pink_noise(w, snr, seed=trial).samples)
            assert abs(got - snr) <= 0.1

    def test_seed_determinism(self):
        w = speech_like(0.5, seed=4)
        np.testing.assert_array_equal(add_pink_noise(w, 10, 5).samples, add_pink_noise(w, 10, 5).samples)
        assert not np.array_equal(add_pink_noise(w, 10, 5).samples, add_pink_noise(w, 10, 6).samples)


class TestMicroGaps:
    def test_energy_accounting_constant_signal(self):
        # oracle: each gap removes gap samples plus sum(1 - r^2) over both fades
        w = Waveform(np.full(16000, 0.5))
        out = insert_micro_gaps(w, 1, 20.0, seed=1)
        fade = 16
        ramp = 1.0 - np.arange(1, fade + 1) / (fade + 1)
        lost = 320 + 2 * np.sum(1 - ramp ** 2)
        drop = 1 - np.sum(out.samples ** 2) / np.sum(w.samples ** 2)
        assert drop == pytest.approx(lost / 16000, abs=1e-12)

    def test_energy_drop_on_tone(self):
        w = tone(440.0, 1.0, amp=0.5)
        out = insert_micro_gaps(w, 1, 20.0, seed=7)
        drop = 1 - np.sum(out.samples ** 2) / np.sum(w.samples ** 2)
        assert drop == pytest.approx(0.02, abs=0.004)

    def test_interiors_zero_and_length(self):
        w = tone(440.0, 1.0, amp=0.5)
        out = insert_micro_gaps(w, 3, 20.0, seed=2)
        assert len(out) == len(w)
        zeros = out.samples == 0.0
        runs = np.diff(np.concatenate([[0], zeros.astype(int), [0]]))
        lengths = np.flatnonzero(runs == -1) - np.flatnonzero(runs == 1)
        assert np.sum(lengths >= 320) == 3

    def test_gaps_must_fit(self):
        with pytest.raises(AugmentError):
            insert_micro_gaps(tone(440, 0.05), 5, 20.0)

    @pytest.mark.parametrize("kw", [dict(n_gaps=0, gap_ms=10), dict(n_gaps=1, gap_ms=0.5), dict(n_gaps=1, gap_ms=101)])
    def test_preconditions(self, kw):
        with pytest.raises(AugmentError):
            insert_micro_gaps(tone(440, 1.0), **kw)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 8), st.floats(1, 100), st.integers(0, 10_000))
    def test_gaps_never_overlap(self, n, ms, seed):
        w = Waveform(np.full(16000, 0.25))
        out = insert_micro_gaps(w, n, ms, seed)
        gap = int(round(ms * 16))
        assert np.sum(out.samples == 0.0) == n * gap


class TestFreqResponse:
    def test_zero_gain_identity(self):
        w = speech_like(1.0, seed=5)
        out = shape_freq_response(w, [(500, 0.0), (2000, 0.0)])
        err = np.sqrt(np.mean((out.samples - w.samples) ** 2)) / np.sqrt(np.mean(w.samples ** 2))
        assert err < 1e-6

    def test_cut_at_band_center(self):
        w = tone(1000.0, 1.0, amp=0.5)
        out = shape_freq_response(w, [(1000.0, -24.0)])
        core = slice(2000, -2000)
        assert level_db(out.samples[core]) - level_db(w.samples[core]) == pytest.approx(-24.0, abs=1.0)

    def test_far_band_untouched(self):
        w = tone(4000.0, 1.0, amp=0.5)
        out = shape_freq_response(w, [(100.0, 6.0)])
        core = slice(2000, -2000)
        assert abs(level_db(out.samples[core]) - level_db(w.samples[core])) <= 0.5

    def test_preconditions(self):
        w = tone(1000, 0.2)
        with pytest.raises(AugmentError):
            shape_freq_response(w, [])
        with pytest.raises(AugmentError):
            shape_freq_response(w, [(1000, 30.0)])
        with pytest.raises(AugmentError):
            shape_freq_response(w, [(100.0 * i, 0.0) for i in range(1, 18)])


class TestTimeStretch:
    def test_unit_rate(self):
        w = speech_like(1.0, seed=1)
        assert abs(len(time_stretch(w, 1.0)) - len(w)) <= 160

    def test_half_rate_doubles_duration(self):
        w = speech_like(2.0, seed=1)
        assert time_stretch(w, 0.5).duration_s == pytest.approx(4.0, rel=0.02)

    @pytest.mark.parametrize("rate", [0.5, 0.8, 1.25, 2.0])
    def test_pitch_preserved(self, rate):
        out = time_stretch(tone(440.0, 1.0, amp=0.5), rate)
        assert abs(fft_peak_hz(out.samples, 16000) - 440.0) <= 3.0
        assert abs(len(out) - round(16000 / rate)) <= 512

    def test_segments_only(self):
        w = speech_like(1.0, seed=2)
        track = AlignmentTrack("c", [("aa", 0.2, 0.4)])
        out = time_stretch(w, 0.5, track)
        assert abs(len(out) - (16000 + 3200)) <= 1
        np.testing.assert_array_equal(out.samples[:3200], w.samples[:3200])
        np.testing.assert_array_equal(out.samples[-9600:], w.samples[-9600:])

    def test_invalid_alignment(self):
        with pytest.raises(AlignmentError):
            time_stretch(speech_like(1.0), 0.8, AlignmentTrack("c", [("aa", 0.5, 1.5)]))

    def test_rate_range(self):
        with pytest.raises(AugmentError):
            time_stretch(tone(440, 0.5), 3.0)


class TestRir:
    def test_unit_impulse_identity(self):
        w = speech_like(0.5, seed=3)
        out = rir_convolve(w, Waveform(np.array([1.0])))
        assert np.max(np.abs(out.samples - w.samples)) <= 1e-6

    def test_delayed_impulse_shifts(self):
        w = speech_like(0.5, seed=3)
        k = 37
        rir = np.zeros(100)
        rir[k] = 1.0
        out = rir_convolve(w, Waveform(rir))
        np.testing.assert_allclose(out.samples[k:], w.samples[:-k], atol=1e-12)
        assert np.all(np.abs(out.samples[:k]) < 1e-12)

    def test_decay_tail(self):
        dry = speech_like(1.0, seed=3).samples.copy()
        dry[-1600:] = 0.0
        w = Waveform(dry)
        wet = rir_convolve(w, exponential_rir(0.5, 0.5, 16000, seed=1))
        rms = lambda v: np.sqrt(np.mean(v ** 2))
        assert rms(wet.samples[-1600:]) > rms(w.samples[-1600:])

    def test_peak_normalized(self):
        w = speech_like(0.5, seed=3)
        wet = rir_convolve(w, exponential_rir(0.3, 0.3, 16000))
        assert np.max(np.abs(wet.samples)) == pytest.approx(np.max(np.abs(w.samples)))

    def test_empty_and_long(self):
        w = speech_like(0.5)
        with pytest.raises(AugmentError):
            rir_convolve(w, Waveform(np.zeros(10)))
        with pytest.raises(AugmentError):
            rir_convolve(w, Waveform(np.ones(20000) * 0.1))


class TestPitchShift:
    def test_zero_is_identity(self):
        w = tone(440.0, 1.0)
        out = pitch_shift(w, 0.0)
        assert len(out) == len(w)
        assert abs(fft_peak_hz(out.samples, 16000) - 440.0) <= 2.0

    def test_octave_up(self):
        out = pitch_shift(tone(220.0, 1.0, amp=0.5), 12.0)
        assert abs(fft_peak_hz(out.samples, 16000) - 440.0) <= 5.0

    def test_octave_down(self):
        out = pitch_shift(tone(440.0, 1.0, amp=0.5), -12.0)
        assert abs(fft_peak_hz(out.samples, 16000) - 220.0) <= 5.0

    @pytest.mark.parametrize("semis", [-7, -3, 2, 5, 9])
    def test_duration_preserved(self, semis):
        w = tone(300.0, 1.0, amp=0.5)
        out = pitch_shift(w, semis)
        assert abs(len(out) - len(w)) <= 0.02 * len(w)

    def test_range(self):
        with pytest.raises(AugmentError):
            pitch_shift(tone(440, 0.5), 13)


class TestConsonantSwap:
    def test_swaps_voicing_pair_spans(self):
        w = Waveform(np.concatenate([np.full(1600, 0.1), np.full(1600, -0.2), np.full(1600, 0.3)]))
        track = AlignmentTrack("c", [("b", 0.0, 0.1), ("aa", 0.1, 0.2), ("p", 0.2, 0.3)])
        out = swap_consonants(w, track, seed=0)
        np.testing.assert_allclose(out.samples[:1600], 0.3)
        np.testing.assert_allclose(out.samples[1600:3200], -0.2)
        np.testing.assert_allclose(out.samples[3200:], 0.1)

    def test_no_counterpart_is_identity(self):
        w = speech_like(0.5)
        out = swap_consonants(w, AlignmentTrack("c", [("b", 0.0, 0.1), ("aa", 0.1, 0.2)]))
        np.testing.assert_array_equal(out.samples, w.samples)

    def test_pipeline_requires_alignment(self):
        with pytest.raises(AugmentError):
            apply_pipeline(speech_like(0.5), [AugmentSpec("consonant_swap")])


class TestPipeline:
    def test_empty_identity(self):
        w = speech_like(0.5)
        np.testing.assert_array_equal(apply_pipeline(w, []).samples, w.samples)

    def test_deterministic(self):
        w = speech_like(0.5, seed=8)
        specs = [AugmentSpec("white_noise", {"snr_db": 20}, 3), AugmentSpec("rir_convolve", {"rt60_s": 0.3}, 4)]
        np.testing.assert_array_equal(apply_pipeline(w, specs).samples, apply_pipeline(w, specs).samples)

    def test_stage_order_enforced(self):
        specs = [AugmentSpec("time_stretch", {"rate": 0.9}), AugmentSpec("white_noise", {"snr_db": 10})]
        with pytest.raises(StageOrderError):
            apply_pipeline(speech_like(0.5), specs)

    def test_unknown_op(self):
        with pytest.raises(AugmentError):
            AugmentSpec("bitcrush")

    @pytest.mark.parametrize("spec", [
        AugmentSpec("white_noise", {"snr_db": 15}, 1),
        AugmentSpec("pink_noise", {"snr_db": 15}, 1),
        AugmentSpec("micro_gap", {"n_gaps": 2, "gap_ms": 10}, 1),
        AugmentSpec("freq_response", {"bands": [[800, -6], [3000, 4]]}),
        AugmentSpec("rir_convolve", {"rt60_s": 0.2, "length_s": 0.2}, 1),
        AugmentSpec("pitch_shift", {"semitones": 3}),
    ])
    def test_length_and_rate_preserved(self, spec):
        w = speech_like(0.8, seed=11)
        out = apply_pipeline(w, [spec])
        assert out.sample_rate_hz == w.sample_rate_hz
        assert len(out) == len(w)


class TestFiles:
    def test_recipe_round_trip(self, tmp_path):
        specs = [AugmentSpec("white_noise", {"snr_db": 10}, 2), AugmentSpec("pitch_shift", {"semitones": -2})]
        p = tmp_path / "r.jsonl"
        p.write_text(json.dumps({"clip_id": "a", "specs": [s.to_dict() for s in specs]}) + "\n\n")
        [(clip, back)] = read_recipe(p)
        assert clip == "a" and recipe_hash(back) == recipe_hash(specs)

    def test_bad_recipe_line(self, tmp_path):
        p = tmp_path / "r.jsonl"
        p.write_text('{"clip_id": "a", "specs": [{"op": "nope"}]}\n')
        with pytest.raises(AugmentError, match=":1:"):
            read_recipe(p)

    def test_recipe_hash_sensitive(self):
        assert recipe_hash([AugmentSpec("white_noise", {"snr_db": 10})]) != \
            recipe_hash([AugmentSpec("white_noise", {"snr_db": 11})])

    def test_alignments(self, tmp_path):
        p = tmp_path / "al.tsv"
        p.write_text("c1\tp\t0.2\t0.3\nc1\tb\t0.0\t0.1\nc2\taa\t0\t0.5\n")
        tracks = read_alignments(p)
        assert [s[0] for s in tracks["c1"].segments] == ["b", "p"]

    def test_overlapping_alignment_rejected(self, tmp_path):
        p = tmp_path / "al.tsv"
        p.write_text("c1\tp\t0.0\t0.3\nc1\tb\t0.2\t0.4\n")
        with pytest.raises(AlignmentError):
            read_alignments(p)


def test_derive_seed_stable_and_clip_specific():
    assert derive_seed(1, "a") == derive_seed(1, "a")
    assert derive_seed(1, "a") != derive_seed(1, "b")
    assert derive_seed(1, "a") != derive_seed(2, "a")
