"""Multi-channel vibroacoustic recordings: loading, saving, resampling.

A recording on disk is a set of WAV files plus a JSON-lines sidecar. Each
sidecar line describes one channel::

    {"file": "mic1.wav", "kind": "contact_mic", "subject": "S1",
     "level": "L4", "side": "left", "start_epoch_ms": 0.0}

Several lines may point at the same multi-channel WAV; they are then mapped
to that file's channels in the order they appear.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy import signal
from scipy.io import wavfile

CANONICAL_RATE_HZ = 40_000.0
SIDECAR_NAME = "channels.jsonl"


class SignalIOError(ValueError):
    pass


class SensorKind(str, enum.Enum):
    CONTACT_MIC = "contact_mic"
    FREEFIELD_MIC = "freefield_mic"
    ACCEL_BONE = "accel_bone"
    ACCEL_PIN = "accel_pin"
    ACCEL_DRILL_X = "accel_drill_x"
    ACCEL_DRILL_Y = "accel_drill_y"
    ACCEL_DRILL_Z = "accel_drill_z"

    @classmethod
    def parse(cls, name: str) -> "SensorKind":
        try:
            return cls(name)
        except ValueError:
            raise SignalIOError(f"unknown sensor kind {name!r}") from None

    @property
    def is_drill_axis(self) -> bool:
        return self.value.startswith("accel_drill_")


# Sensor labels used in result tables.
SENSOR_LABELS = {
    SensorKind.CONTACT_MIC: "Mic1",
    SensorKind.FREEFIELD_MIC: "Mic2",
    SensorKind.ACCEL_BONE: "PCB1",
    SensorKind.ACCEL_PIN: "PCB2",
    SensorKind.ACCEL_DRILL_X: "PCB3x",
    SensorKind.ACCEL_DRILL_Y: "PCB3y",
    SensorKind.ACCEL_DRILL_Z: "PCB3z",
}


@dataclass(frozen=True, eq=False)
class SensorChannel:
    kind: SensorKind
    samples: np.ndarray
    sample_rate_hz: float
    start_epoch_ms: float = 0.0

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise SignalIOError("channel samples must be one-dimensional")
        if not np.all(np.isfinite(samples)):
            raise SignalIOError(f"{self.kind.value}: non-finite samples")
        if not self.sample_rate_hz > 0:
            raise SignalIOError("sample rate must be positive")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "kind", SensorKind(self.kind))

    @property
    def duration_ms(self) -> float:
        return 1000.0 * len(self.samples) / self.sample_rate_hz


@dataclass(frozen=True, eq=False)
class SyncRecording:
    channels: tuple[SensorChannel, ...]
    session_meta: dict = field(default_factory=dict)

    def __post_init__(self):
        channels = tuple(self.channels)
        if not channels:
            raise SignalIOError("a recording needs at least one channel")
        object.__setattr__(self, "channels", channels)
        check_synchronized(channels)

    @property
    def duration_ms(self) -> float:
        return min(ch.duration_ms for ch in self.channels)

    @property
    def kinds(self) -> list[SensorKind]:
        return [ch.kind for ch in self.channels]

    def channel(self, kind: SensorKind | str, index: int = 0) -> SensorChannel:
        """Return the ``index``-th channel of the given kind."""
        kind = SensorKind(kind)
        matches = [ch for ch in self.channels if ch.kind == kind]
        if index >= len(matches):
            raise KeyError(f"recording has no channel {kind.value}[{index}]")
        return matches[index]


def check_synchronized(channels) -> None:
    starts = {ch.start_epoch_ms for ch in channels}
    if len(starts) != 1:
        raise SignalIOError(f"channels start at different epochs: {sorted(starts)}")
    durations = [ch.duration_ms for ch in channels]
    period_ms = max(1000.0 / ch.sample_rate_hz for ch in channels)
    if max(durations) - min(durations) > period_ms + 1e-9:
        raise SignalIOError(
            f"channel durations differ by more than one sample: {min(durations)}..{max(durations)} ms"
        )


def normalize(samples: np.ndarray) -> np.ndarray:
    """Scale so the largest absolute sample is 1 (all-zero input is returned unchanged)."""
    samples = np.asarray(samples, dtype=np.float64)
    peak = np.max(np.abs(samples)) if samples.size else 0.0
    return samples / (peak if peak > 0 else 1.0)


@lru_cache(maxsize=8)
def _polyphase_filter(up: int, down: int) -> np.ndarray:
    """Kaiser low-pass whose polyphase branches each have unit DC gain."""
    max_rate = max(up, down)
    h = signal.firwin(20 * max_rate + 1, 1.0 / max_rate, window=("kaiser", 5.0))
    for r in range(up):
        h[r::up] /= h[r::up].sum()
    # resample_poly multiplies by ``up`` again
    return h / up


def resample(channel: SensorChannel, target_hz: float) -> SensorChannel:
    """Band-limited polyphase resampling to ``target_hz``."""
    if not target_hz > 0:
        raise SignalIOError("target rate must be positive")
    if not np.all(np.isfinite(channel.samples)):
        raise SignalIOError("non-finite samples")
    if target_hz == channel.sample_rate_hz:
        return channel
    ratio = Fraction(target_hz / channel.sample_rate_hz).limit_denominator(10_000)
    up, down = ratio.numerator, ratio.denominator
    out = signal.resample_poly(channel.samples, up, down, window=_polyphase_filter(up, down), padtype="line")
    # trim so the duration matches the input to within one output sample
    n_out = int(round(len(channel.samples) * target_hz / channel.sample_rate_hz))
    out = out[:n_out]
    return SensorChannel(channel.kind, out, float(target_hz), channel.start_epoch_ms)


def _read_wav(path: Path) -> tuple[float, np.ndarray]:
    try:
        rate, data = wavfile.read(path)
    except FileNotFoundError:
        raise SignalIOError(f"missing WAV file: {path}") from None
    except ValueError as exc:
        raise SignalIOError(f"corrupt WAV file {path}: {exc}") from None
    if data.dtype == np.int16:
        data = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        data = data.astype(np.float64) / 2147483648.0
    elif data.dtype == np.uint8:
        data = (data.astype(np.float64) - 128.0) / 128.0
    else:
        data = data.astype(np.float64)
    if data.ndim == 1:
        data = data[:, None]
    return float(rate), data


def load_recording(path, resample_to: float | None = None) -> SyncRecording:
    """Load a recording from its sidecar file (or the directory holding it).

    With ``resample_to`` every channel is brought to that rate; otherwise all
    channels must already share one rate.
    """
    path = Path(path)
    sidecar = path / SIDECAR_NAME if path.is_dir() else path
    if not sidecar.exists():
        raise SignalIOError(f"missing sidecar metadata: {sidecar}")
    entries = []
    for lineno, line in enumerate(sidecar.read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            entries.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise SignalIOError(f"{sidecar}:{lineno}: {exc}") from None
    if not entries:
        raise SignalIOError(f"{sidecar} declares no channels")

    wav_cache: dict[str, tuple[float, np.ndarray]] = {}
    used: dict[str, int] = {}
    channels = []
    for entry in entries:
        kind = SensorKind.parse(entry["kind"])
        fname = entry["file"]
        if fname not in wav_cache:
            wav_cache[fname] = _read_wav(sidecar.parent / fname)
        rate, data = wav_cache[fname]
        col = used.get(fname, 0)
        if col >= data.shape[1]:
            raise SignalIOError(f"{fname} has {data.shape[1]} channel(s); sidecar declares more")
        used[fname] = col + 1
        channels.append(
            SensorChannel(kind, normalize(data[:, col]), rate, float(entry.get("start_epoch_ms", 0.0)))
        )

    rates = {ch.sample_rate_hz for ch in channels}
    if resample_to is not None:
        channels = [resample(ch, resample_to) for ch in channels]
    elif len(rates) > 1:
        raise SignalIOError(f"sample-rate mismatch {sorted(rates)} and no resample target given")

    first = entries[0]
    meta = {key: first.get(key) for key in ("subject", "level", "side")}
    return SyncRecording(tuple(channels), meta)


def save_recording(recording: SyncRecording, directory, bit_depth: int = 16) -> Path:
    """Write one WAV per channel plus the sidecar; returns the sidecar path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = []
    for i, ch in enumerate(recording.channels):
        fname = f"ch{i:02d}_{ch.kind.value}.wav"
        samples = np.clip(ch.samples, -1.0, 1.0)
        if bit_depth == 16:
            data = np.round(samples * 32767.0).astype("<i2")
        elif bit_depth == 32:
            data = samples.astype("<f4")
        else:
            raise SignalIOError("bit depth must be 16 or 32")
        wavfile.write(directory / fname, int(round(ch.sample_rate_hz)), data)
        entry = {"file": fname, "kind": ch.kind.value, "start_epoch_ms": ch.start_epoch_ms}
        entry.update({k: recording.session_meta.get(k) for k in ("subject", "level", "side")})
        lines.append(json.dumps(entry))
    sidecar = directory / SIDECAR_NAME
    sidecar.write_text("\n".join(lines) + "\n")
    return sidecar
