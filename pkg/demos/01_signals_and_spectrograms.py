"""
From a drilling recording to network inputs
===========================================

Simulate one session, cut it into 100 ms windows, and look at what the
mel front end makes of breach and non-breach windows.
"""

import numpy as np

from psent import dsp, labeling, simulate

# one synthetic drilling session with two sensors
scenario = simulate.DrillScenario(tilt_deg=(4.0, -2.0))
session = simulate.simulate_session("demo", scenario, ("contact_mic", "accel_bone"), seed=1)
rec = session.recording
print("channels:", [c.kind.value for c in rec.channels])
print("duration: %.0f ms, breach at %.0f ms" % (rec.channels[0].duration_ms, session.truth.breach_time_ms))

# 100 ms windows every 25 ms
spec = dsp.WindowSpec()
windows = dsp.slice_windows(rec.channels[0], spec)
print("windows:", len(windows), "samples per window:", windows[0][1].shape[0])

# per-window labels straight from the simulator
labels = session.truth.window_labels
print("breach windows:", int(labels.sum()), "of", len(labels))

# mel spectrograms, 128 bands up to 2 kHz with a hop of 32 samples
params = dsp.MelParams()
stack = dsp.mel_db(np.stack([w for _, w in windows]), params)
print("spectrogram stack:", stack.shape)  # (n_windows, 128, 126)

# the burst lifts the upper mel bands; compare mean level above 1.2 kHz
fb = dsp.mel_filterbank(params)
peak_hz = np.argmax(fb, axis=1) * params.sample_rate_hz / params.n_fft
upper = stack[:, peak_hz >= 1200, :].mean(axis=(1, 2))
print("upper-band level, breach     : %.1f dB" % upper[labels == 1].mean())
print("upper-band level, non-breach : %.1f dB" % upper[labels == 0].mean())

# training-time augmentation: 4 gains and 4 pitch shifts per breach window
raw = labeling.session_windows(rec, ["contact_mic"], lambda s: labels[:len(s)], session="demo")
augmented = labeling.augment_breach_class(raw)
print("breach windows before/after augmentation:",
      sum(w.label for w in raw), "->", sum(w.label for w in augmented))

# the +2 semitone shift moves a 1 kHz tone to about 1122 Hz
t = np.arange(4000) / dsp.CANONICAL_RATE_HZ
shifted = labeling.pitch_shift(np.cos(2 * np.pi * 1000 * t), 2, dsp.CANONICAL_RATE_HZ)
freqs = np.fft.rfftfreq(1 << 16, 1 / dsp.CANONICAL_RATE_HZ)
print("shifted peak: %.0f Hz" % freqs[np.argmax(np.abs(np.fft.rfft(shifted * np.hanning(4000), 1 << 16)))])
