"""
A tour of the degradation ops
=============================

Stage-1 ops touch the raw signal, stage-2 ops edit timing and timbre.
Each line checks the op does what it says with a simple measurement.
"""

import numpy as np

from ttseval.augment import (AugmentSpec, add_pink_noise, apply_pipeline, exponential_rir,
                             pitch_shift, rir_convolve, time_stretch)
from ttseval.synth import speech_like, tone

w = speech_like(1.5, seed=3)

noisy = add_pink_noise(w, snr_db=10.0, seed=1)
noise = noisy.samples - w.samples
print("pink noise SNR:", round(10 * np.log10(np.mean(w.samples**2) / np.mean(noise**2)), 3), "dB")


def peak_hz(x, sr=16000):
    spec = np.abs(np.fft.rfft(x * np.hanning(len(x))))
    return np.fft.rfftfreq(len(x), 1 / sr)[np.argmax(spec)]


a = tone(220.0, 1.0)
print("pitch +12 st: 220 Hz ->", round(peak_hz(pitch_shift(a, 12).samples), 1), "Hz")

slow = time_stretch(tone(440.0, 1.0), 0.5)
print("stretch x0.5: duration", slow.duration_s, "s, peak", round(peak_hz(slow.samples), 1), "Hz")

wet = rir_convolve(w, exponential_rir(0.4, 0.5, 16000, seed=0))
print("reverb keeps length:", wet.samples.size == w.samples.size)

# a full two-stage recipe; reordering the stages raises StageOrderError
specs = [AugmentSpec("white_noise", {"snr_db": 20}, 7),
         AugmentSpec("micro_gap", {"n_gaps": 2, "gap_ms": 15}, 8),
         AugmentSpec("pitch_shift", {"semitones": -2}, 9)]
out = apply_pipeline(w, specs)
print("pipeline output:", out.samples.size, "samples @", out.sample_rate_hz, "Hz")
