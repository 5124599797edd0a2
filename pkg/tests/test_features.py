import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ttseval.audio_io import Waveform
from ttseval.errors import EmbeddingFileError, SignalTooShortError
from ttseval.features import (
    LOG_FLOOR,
    FeatureMatrix,
    LogMelEmbedder,
    UtteranceEmbedding,
    embed_utterance,
    log_mel,
    mel_filterbank,
    read_embeddings,
    stft_power,
    text_embed,
    write_embeddings,
)
from ttseval.synth import tone


class TestStft:
    def test_frame_count_drops_partial_tail(self):
        w = Waveform(np.zeros(16000))
        assert stft_power(w).frames.shape == ((16000 - 400) // 160 + 1, 257)

    def test_tone_peak_bin(self):
        spec = stft_power(tone(1000.0, 0.5))
        expected = round(1000 * 512 / 16000)
        assert np.all(np.argmax(spec.frames, axis=1) == expected)

    def test_zero_signal(self):
        assert not np.any(stft_power(Waveform(np.zeros(2000))).frames)

    def test_parseval(self, rng):
        x = rng.uniform(-0.5, 0.5, 4000)
        spec = stft_power(Waveform(x), win=400, hop=160, nfft=512)
        window = np.hanning(401)[:-1]
        for t in range(spec.frames.shape[0]):
            frame = x[t * 160:t * 160 + 400] * window
            energy = np.sum(frame ** 2)
            p = spec.frames[t]
            # one-sided spectrum: interior bins count twice
            two_sided = p[0] + p[-1] + 2 * p[1:-1].sum()
            assert two_sided / 512 == pytest.approx(energy, rel=1e-6)

    def test_too_short(self):
        with pytest.raises(SignalTooShortError):
            stft_power(Waveform(np.zeros(100)))


class TestLogMel:
    def test_filterbank_rows_sum_to_one(self):
        fb = mel_filterbank(16000, 512, 40, 20.0, 7600.0)
        np.testing.assert_allclose(fb.sum(axis=1), 1.0, atol=1e-6)

    def test_zero_signal_hits_floor(self):
        f = log_mel(stft_power(Waveform(np.zeros(3200))))
        np.testing.assert_allclose(f.frames, np.log(LOG_FLOOR))

    def test_white_noise_flat_profile(self):
        # statistical oracle: 20 independent 10 s noise draws
        for seed in range(20):
            x = np.random.default_rng(seed).uniform(-0.5, 0.5, 160000)
            mel = np.exp(log_mel(stft_power(Waveform(x))).frames)
            band_means = mel.mean(axis=0)
            assert band_means.max() / band_means.min() < 3.0

    def test_monotone_in_gain(self, rng):
        x = rng.uniform(-0.3, 0.3, 4000)
        lo = log_mel(stft_power(Waveform(x))).frames
        hi = log_mel(stft_power(Waveform(2.5 * x))).frames
        assert np.all(hi >= lo)

    def test_rejects_bad_bands(self):
        spec = stft_power(Waveform(np.zeros(800)))
        with pytest.raises(ValueError):
            log_mel(spec, n_mels=3)
        with pytest.raises(ValueError):
            log_mel(spec, fmin=100, fmax=9000)


class TestEmbedUtterance:
    def test_constant_rows(self):
        v = np.array([1.0, -2.0, 3.0])
        e = embed_utterance(FeatureMatrix(np.tile(v, (7, 1)), 0.01))
        np.testing.assert_array_equal(e.vector, v)

    def test_single_valid_frame(self, rng):
        f = FeatureMatrix(rng.normal(size=(5, 4)), 0.01, valid_frames=1)
        np.testing.assert_array_equal(embed_utterance(f).vector, f.frames[0])

    def test_padding_never_contributes(self, rng):
        real = rng.normal(size=(9, 6))
        padded = np.vstack([real, rng.normal(size=(4, 6)) * 1e6])
        a = embed_utterance(FeatureMatrix(real, 0.01))
        b = embed_utterance(FeatureMatrix(padded, 0.01, valid_frames=9))
        assert np.max(np.abs(a.vector - b.vector)) <= 1e-12

    def test_projection(self, rng):
        f = FeatureMatrix(rng.normal(size=(5, 4)), 0.01)
        P = rng.normal(size=(4, 2))
        np.testing.assert_allclose(embed_utterance(f, P).vector, f.frames.mean(axis=0) @ P)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(min_value=0, max_value=2**32 - 1))
    def test_permutation_invariant(self, seed):
        r = np.random.default_rng(seed)
        frames = r.normal(size=(12, 5))
        a = embed_utterance(FeatureMatrix(frames, 0.01)).vector
        b = embed_utterance(FeatureMatrix(frames[r.permutation(12)], 0.01)).vector
        np.testing.assert_allclose(a, b, atol=1e-12)


class TestTextEmbed:
    def test_empty_is_zero(self):
        assert not np.any(text_embed("", 16).vector)

    def test_deterministic(self):
        np.testing.assert_array_equal(text_embed("Hello there world", 32, 7).vector,
                                      text_embed("Hello there world", 32, 7).vector)

    def test_bigram_sensitivity(self):
        a, b = text_embed("a b", 64).vector, text_embed("b a", 64).vector
        assert a @ b / (np.linalg.norm(a) * np.linalg.norm(b)) < 1.0

    def test_unit_norm_and_case(self):
        v = text_embed("The Cat sat", 32).vector
        assert np.linalg.norm(v) == pytest.approx(1.0)
        np.testing.assert_array_equal(v, text_embed("the cat SAT", 32).vector)

    def test_min_dim(self):
        with pytest.raises(ValueError):
            text_embed("x", 4)


class TestEmbeddingFile:
    def test_round_trip(self, tmp_path, rng):
        embs = [UtteranceEmbedding(rng.normal(size=5), f"c{i}") for i in range(4)]
        write_embeddings(tmp_path / "e.tsv", embs)
        back = read_embeddings(tmp_path / "e.tsv")
        for e in embs:
            np.testing.assert_array_equal(back[e.clip_id].vector, e.vector)

    def test_dimension_mismatch_rejected(self, tmp_path):
        (tmp_path / "bad.tsv").write_text("a\t1,2,3\nb\t1,2\n")
        with pytest.raises(EmbeddingFileError, match="dimension"):
            read_embeddings(tmp_path / "bad.tsv")

    def test_malformed_rejected(self, tmp_path):
        (tmp_path / "bad.tsv").write_text("a 1,2,3\n")
        with pytest.raises(EmbeddingFileError):
            read_embeddings(tmp_path / "bad.tsv")


def test_logmel_embedder_dimension():
    e = LogMelEmbedder()(tone(500, 0.5))
    assert e.dim == 40 and np.all(np.isfinite(e.vector))
