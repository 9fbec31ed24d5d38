"""Sliding windows and log-mel spectrograms.

Defaults give a 128 x 126 spectrogram for a 100 ms window sampled at
40 kHz: 128 mel bands up to 2 kHz, hop of 32 samples, 2048-point FFT with a
periodic Hann window and centred reflect padding.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.signal import get_window

from .signalio import CANONICAL_RATE_HZ, SensorChannel

DB_FLOOR = -80.0
AMIN = 1e-10

SPECTRA_MAGIC = b"MSPC"
SPECTRA_VERSION = 1
_SPECTRA_HEADER = struct.Struct("<4sHIII")


class DSPError(ValueError):
    pass


@dataclass(frozen=True)
class WindowSpec:
    length_ms: float = 100.0
    step_ms: float = 25.0

    def __post_init__(self):
        if not 0 < self.step_ms <= self.length_ms:
            raise DSPError("window step must satisfy 0 < step <= length")

    def n_samples(self, rate_hz: float) -> int:
        return int(round(self.length_ms * rate_hz / 1000.0))

    def step_samples(self, rate_hz: float) -> int:
        return int(round(self.step_ms * rate_hz / 1000.0))


@dataclass(frozen=True)
class MelParams:
    n_mels: int = 128
    hop_samples: int = 32
    f_max_hz: float = 2000.0
    f_min_hz: float = 0.0
    n_fft: int = 2048
    sample_rate_hz: float = CANONICAL_RATE_HZ

    def __post_init__(self):
        if self.n_mels <= 0 or self.hop_samples <= 0:
            raise DSPError("n_mels and hop_samples must be positive")
        if not 0 <= self.f_min_hz < self.f_max_hz:
            raise DSPError("need 0 <= f_min < f_max")
        if self.f_max_hz > self.sample_rate_hz / 2:
            raise DSPError(f"f_max {self.f_max_hz} Hz is above Nyquist ({self.sample_rate_hz / 2} Hz)")
        if self.n_fft < self.hop_samples:
            raise DSPError("n_fft must be at least hop_samples")

    def n_frames(self, n_samples: int) -> int:
        return 1 + n_samples // self.hop_samples


@dataclass(frozen=True, eq=False)
class MelSpectrogram:
    values: np.ndarray  # n_mels x n_frames, dB
    params: MelParams

    @property
    def shape(self):
        return self.values.shape


def slice_windows(channel: SensorChannel, spec: WindowSpec = WindowSpec()):
    """Cut a channel into overlapping windows.

    Returns a list of ``(start_ms, samples)`` pairs; the sample arrays are
    read-only views into the channel.
    """
    rate = channel.sample_rate_hz
    win = spec.n_samples(rate)
    step = spec.step_samples(rate)
    n = len(channel.samples)
    if n < win:
        raise DSPError(
            f"recording of {channel.duration_ms:.1f} ms is shorter than one {spec.length_ms} ms window"
        )
    count = (n - win) // step + 1
    start0 = channel.start_epoch_ms
    return [
        (start0 + 1000.0 * k * step / rate, channel.samples[k * step:k * step + win])
        for k in range(count)
    ]


def hz_to_mel(freq):
    """Slaney mel scale: linear below 1 kHz, logarithmic above."""
    freq = np.asarray(freq, dtype=np.float64)
    f_sp = 200.0 / 3
    min_log_hz = 1000.0
    min_log_mel = min_log_hz / f_sp
    logstep = np.log(6.4) / 27.0
    lin = freq / f_sp
    log = min_log_mel + np.log(np.maximum(freq, min_log_hz) / min_log_hz) / logstep
    return np.where(freq >= min_log_hz, log, lin)


def mel_to_hz(mel):
    mel = np.asarray(mel, dtype=np.float64)
    f_sp = 200.0 / 3
    min_log_hz = 1000.0
    min_log_mel = min_log_hz / f_sp
    logstep = np.log(6.4) / 27.0
    lin = f_sp * mel
    log = min_log_hz * np.exp(logstep * (np.maximum(mel, min_log_mel) - min_log_mel))
    return np.where(mel >= min_log_mel, log, lin)


def mel_band_edges(params: MelParams) -> np.ndarray:
    """The n_mels + 2 band edge frequencies in Hz (centres are edges[1:-1])."""
    mels = np.linspace(hz_to_mel(params.f_min_hz), hz_to_mel(params.f_max_hz), params.n_mels + 2)
    return mel_to_hz(mels)


@lru_cache(maxsize=16)
def _filterbank(params: MelParams) -> np.ndarray:
    fft_freqs = np.linspace(0.0, params.sample_rate_hz / 2, params.n_fft // 2 + 1)
    edges = mel_band_edges(params)
    widths = np.diff(edges)
    ramps = edges[:, None] - fft_freqs[None, :]
    lower = -ramps[:-2] / widths[:-1, None]
    upper = ramps[2:] / widths[1:, None]
    weights = np.maximum(0.0, np.minimum(lower, upper))
    # area normalisation: each triangle integrates to roughly the same value
    weights *= (2.0 / (edges[2:] - edges[:-2]))[:, None]
    weights.setflags(write=False)
    return weights


def mel_filterbank(params: MelParams = MelParams()) -> np.ndarray:
    """Triangular mel filters, shape ``(n_mels, n_fft // 2 + 1)``."""
    return _filterbank(params).copy()


@lru_cache(maxsize=4)
def _hann(n_fft: int) -> np.ndarray:
    return get_window("hann", n_fft, fftbins=True)


def power_spectrogram(window, params: MelParams = MelParams()) -> np.ndarray:
    """|STFT|^2 of centred, reflect-padded frames.

    ``window`` may carry leading batch axes; the result has shape
    ``(..., n_fft // 2 + 1, n_frames)``.
    """
    x = np.asarray(window, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise DSPError("non-finite samples in window")
    pad = params.n_fft // 2
    widths = [(0, 0)] * (x.ndim - 1) + [(pad, pad)]
    x = np.pad(x, widths, mode="reflect")
    frames = np.lib.stride_tricks.sliding_window_view(x, params.n_fft, axis=-1)
    frames = frames[..., ::params.hop_samples, :]
    spec = np.fft.rfft(frames * _hann(params.n_fft), axis=-1)
    power = spec.real**2 + spec.imag**2
    return np.swapaxes(power, -1, -2)


def power_to_db(power, ref: float = 1.0) -> np.ndarray:
    """10 log10(power / ref) without referencing or flooring beyond AMIN."""
    return 10.0 * np.log10(np.maximum(power, AMIN)) - 10.0 * np.log10(max(ref, AMIN))


def _max_referenced_db(mel_power: np.ndarray) -> np.ndarray:
    peak = mel_power.max(axis=(-2, -1), keepdims=True)
    db = 10.0 * np.log10(np.maximum(mel_power, AMIN)) - 10.0 * np.log10(np.maximum(peak, AMIN))
    db = np.maximum(db, DB_FLOOR)
    # silent windows sit entirely on the floor
    return np.where(peak <= AMIN, DB_FLOOR, db)


def mel_db(windows, params: MelParams = MelParams()) -> np.ndarray:
    """Batched log-mel spectrograms, shape ``(..., n_mels, n_frames)``."""
    power = power_spectrogram(windows, params)
    mel_power = np.matmul(_filterbank(params), power)
    return _max_referenced_db(mel_power)


def mel_spectrogram(window, params: MelParams = MelParams(), expected_samples: int | None = None):
    """Log-mel spectrogram of one window, referenced to the window maximum."""
    window = np.asarray(window, dtype=np.float64)
    if window.ndim != 1:
        raise DSPError("mel_spectrogram expects one window; use mel_db for batches")
    if expected_samples is None:
        expected_samples = WindowSpec().n_samples(params.sample_rate_hz)
    if len(window) != expected_samples:
        raise DSPError(f"window has {len(window)} samples, expected {expected_samples}")
    return MelSpectrogram(mel_db(window, params), params)


def write_spectra(path, tensors, append: bool = False) -> list[int]:
    """Write ``C x n_mels x n_frames`` tensors as consecutive MSPC records.

    Returns the byte offset of each record so manifests can point at them.
    """
    offsets = []
    with open(path, "ab" if append else "wb") as fh:
        for tensor in tensors:
            t = np.asarray(tensor, dtype="<f4")
            if t.ndim == 2:
                t = t[None]
            if t.ndim != 3:
                raise DSPError("spectrogram tensors must be 2-D or 3-D")
            c, m, f = t.shape
            offsets.append(fh.tell())
            fh.write(_SPECTRA_HEADER.pack(SPECTRA_MAGIC, SPECTRA_VERSION, m, f, c))
            fh.write(np.ascontiguousarray(t).tobytes())
    return offsets


def read_spectra(path, offset: int = 0) -> np.ndarray:
    """Read one MSPC record starting at ``offset``."""
    with open(Path(path), "rb") as fh:
        fh.seek(offset)
        header = fh.read(_SPECTRA_HEADER.size)
        if len(header) < _SPECTRA_HEADER.size:
            raise DSPError(f"{path}@{offset}: truncated header")
        magic, version, m, f, c = _SPECTRA_HEADER.unpack(header)
        if magic != SPECTRA_MAGIC:
            raise DSPError(f"{path}@{offset}: bad magic {magic!r}")
        if version != SPECTRA_VERSION:
            raise DSPError(f"{path}@{offset}: unsupported version {version}")
        count = c * m * f
        data = np.frombuffer(fh.read(4 * count), dtype="<f4")
        if data.size != count:
            raise DSPError(f"{path}@{offset}: truncated payload")
    return data.reshape(c, m, f).astype(np.float32)
