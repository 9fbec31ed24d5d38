"""Window labels, breach-class augmentation, sensor fusion and dataset splits."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import signal

from . import dsp, geometry
from .signalio import SensorKind, SyncRecording

GAINS_DB = (-5.0, -3.0, 3.0, 5.0)
SEMITONES = (-2, -1, 1, 2)
DEFAULT_BREACH_MS = 200.0
DEFAULT_OVERLAP = 0.5


class LabelingError(ValueError):
    pass


class Label(enum.IntEnum):
    NON_BREACH = 0
    BREACH = 1

    @property
    def text(self) -> str:
        return "breach" if self else "non_breach"

    @classmethod
    def parse(cls, text: str) -> "Label":
        return {"breach": cls.BREACH, "non_breach": cls.NON_BREACH}[text]


@dataclass(frozen=True)
class BreachInterval:
    start_ms: float
    end_ms: float

    def __post_init__(self):
        if not 100.0 - 1e-9 <= self.end_ms - self.start_ms <= 300.0 + 1e-9:
            raise LabelingError(
                f"breach interval must last 100-300 ms, got {self.end_ms - self.start_ms:.1f} ms"
            )

    @classmethod
    def anchored(cls, breach_time_ms: float, duration_ms: float = DEFAULT_BREACH_MS) -> "BreachInterval":
        return cls(breach_time_ms, breach_time_ms + duration_ms)


def _starts(windows) -> np.ndarray:
    starts = [w[0] if isinstance(w, tuple) else w for w in windows]
    return np.asarray(starts, dtype=np.float64)


def label_windows(windows, interval: BreachInterval, overlap_frac: float = DEFAULT_OVERLAP,
                  window_ms: float = 100.0) -> np.ndarray:
    """Breach (1) when a window overlaps the interval by at least
    ``overlap_frac`` of its length, else non-breach (0).

    ``windows`` holds start times or ``(start_ms, ...)`` tuples.
    """
    if not 0 < overlap_frac <= 1:
        raise LabelingError("overlap_frac must lie in (0, 1]")
    starts = _starts(windows)
    overlap = np.minimum(starts + window_ms, interval.end_ms) - np.maximum(starts, interval.start_ms)
    # small slack so float start times on the 25 ms grid do not flip exact ties
    return (overlap >= overlap_frac * window_ms - 1e-9).astype(int)


# ---------------------------------------------------------------- augmentation

def gain_augment(samples, gain_db: float) -> np.ndarray:
    """Scale by 10^(gain_db / 20); no clipping."""
    if not np.isfinite(gain_db):
        raise LabelingError("gain must be finite")
    return np.asarray(samples, dtype=np.float64) * 10.0 ** (gain_db / 20.0)


def _stft(x, n_fft, hop):
    xp = np.pad(x, n_fft // 2, mode="reflect")
    frames = np.lib.stride_tricks.sliding_window_view(xp, n_fft)[::hop]
    return np.fft.rfft(frames * signal.get_window("hann", n_fft), axis=-1).T


def _istft(spec, n_fft, hop, length):
    win = signal.get_window("hann", n_fft)
    frames = np.fft.irfft(spec.T, n=n_fft, axis=-1) * win
    n = n_fft + hop * (len(frames) - 1)
    out = np.zeros(n)
    norm = np.zeros(n)
    for t, frame in enumerate(frames):
        out[t * hop:t * hop + n_fft] += frame
        norm[t * hop:t * hop + n_fft] += win**2
    out = np.where(norm > 1e-10, out / np.maximum(norm, 1e-10), 0.0)
    out = out[n_fft // 2:]
    if len(out) < length:
        out = np.pad(out, (0, length - len(out)))
    return out[:length]


def phase_vocoder(spec, rate: float, hop: int, n_fft: int):
    """Resample STFT frames in time by ``rate`` keeping phase advance coherent."""
    n_bins, n_frames = spec.shape
    steps = np.arange(0, n_frames, rate)
    advance = 2 * np.pi * hop * np.arange(n_bins) / n_fft
    padded = np.pad(spec, ((0, 0), (0, 2)))
    phase = np.angle(spec[:, 0])
    out = np.zeros((n_bins, len(steps)), dtype=complex)
    for t, step in enumerate(steps):
        i = int(step)
        a, b = padded[:, i], padded[:, i + 1]
        frac = step - i
        out[:, t] = ((1 - frac) * np.abs(a) + frac * np.abs(b)) * np.exp(1j * phase)
        dphase = np.angle(b) - np.angle(a) - advance
        dphase -= 2 * np.pi * np.round(dphase / (2 * np.pi))
        phase = phase + advance + dphase
    return out


def time_stretch(samples, rate: float, n_fft: int = 1024, hop: int | None = None) -> np.ndarray:
    """Phase-vocoder time stretch; ``rate > 1`` shortens the signal."""
    x = np.asarray(samples, dtype=np.float64)
    hop = hop or n_fft // 4
    if len(x) <= n_fft // 2:
        raise LabelingError(f"window of {len(x)} samples is too short for a {n_fft}-point analysis frame")
    spec = phase_vocoder(_stft(x, n_fft, hop), rate, hop, n_fft)
    return _istft(spec, n_fft, hop, int(round(len(x) / rate)))


def pitch_shift(samples, semitones: int, rate_hz: float, n_fft: int = 1024) -> np.ndarray:
    """Shift pitch by whole semitones keeping the length unchanged."""
    if int(semitones) != semitones:
        raise LabelingError("semitones must be an integer")
    x = np.asarray(samples, dtype=np.float64)
    if semitones == 0:
        return x.copy()
    rate = 2.0 ** (-semitones / 12.0)
    stretched = time_stretch(x, rate, n_fft)
    return signal.resample(stretched, len(x))


# ---------------------------------------------------------------- windows & datasets

@dataclass
class RawWindow:
    """Time-domain samples of one window, ``C x n`` in sensor order."""
    samples: np.ndarray
    label: int
    meta: dict = field(default_factory=dict)


@dataclass
class LabeledWindow:
    spectra: np.ndarray  # C x n_mels x n_frames
    label: int
    meta: dict = field(default_factory=dict)

    @property
    def key(self):
        return (self.meta.get("session"), self.meta.get("start_ms"), self.meta.get("variant", 0))


def augmented_variants(window: RawWindow, rate_hz: float):
    """The eight gain / pitch variants of one window."""
    out = []
    variant = 1
    for g in GAINS_DB:
        out.append(RawWindow(np.stack([gain_augment(ch, g) for ch in window.samples]), window.label,
                             {**window.meta, "augmented": True, "variant": variant, "aug": f"gain{g:+g}dB"}))
        variant += 1
    for s in SEMITONES:
        out.append(RawWindow(np.stack([pitch_shift(ch, s, rate_hz) for ch in window.samples]), window.label,
                             {**window.meta, "augmented": True, "variant": variant, "aug": f"pitch{s:+d}st"}))
        variant += 1
    return out


def augment_breach_class(windows, rate_hz: float = dsp.CANONICAL_RATE_HZ):
    """Originals plus eight variants of every breach window; non-breach untouched."""
    out = []
    for w in windows:
        out.append(w)
        if w.label == Label.BREACH:
            out.extend(augmented_variants(w, rate_hz))
    return out


def fuse(spectra) -> np.ndarray:
    """Stack per-sensor spectrograms along a leading channel axis."""
    arrays = [s.values if isinstance(s, dsp.MelSpectrogram) else np.asarray(s) for s in spectra]
    if not arrays:
        raise LabelingError("nothing to fuse")
    shape = arrays[0].shape
    if any(a.shape != shape for a in arrays):
        raise LabelingError(f"spectrogram shapes differ: {[a.shape for a in arrays]}")
    return np.stack(arrays)


def parse_sensor(token) -> tuple[SensorKind, int]:
    """``"contact_mic"`` or ``"contact_mic:1"`` (second channel of that kind)."""
    if isinstance(token, SensorKind):
        return token, 0
    name, _, idx = str(token).partition(":")
    return SensorKind.parse(name), int(idx or 0)


def session_windows(recording: SyncRecording, sensors, labels_for=None,
                    spec: dsp.WindowSpec = dsp.WindowSpec(), session: str = ""):
    """Slice the selected sensors into aligned multi-channel raw windows.

    ``labels_for`` maps the list of window starts to labels (for instance
    ``lambda starts: label_windows(starts, interval)``); without it every
    window is labelled non-breach.
    """
    chosen = [recording.channel(*parse_sensor(s)) for s in sensors]
    sliced = [dsp.slice_windows(ch, spec) for ch in chosen]
    count = min(len(s) for s in sliced)
    starts = [sliced[0][k][0] for k in range(count)]
    labels = np.zeros(count, dtype=int) if labels_for is None else np.asarray(labels_for(starts))
    names = [str(s if not isinstance(s, SensorKind) else s.value) for s in sensors]
    out = []
    for k in range(count):
        meta = {"session": session, "start_ms": round(float(starts[k]), 6), "sensors": names,
                "augmented": False, "variant": 0, **recording.session_meta}
        out.append(RawWindow(np.stack([s[k][1] for s in sliced]), int(labels[k]), meta))
    return out


def featurize(windows, params: dsp.MelParams = dsp.MelParams(), chunk: int = 32):
    """Raw windows to labelled spectrogram stacks."""
    out = []
    for i in range(0, len(windows), chunk):
        batch = windows[i:i + chunk]
        spectra = dsp.mel_db(np.stack([w.samples for w in batch]), params).astype(np.float32)
        out.extend(LabeledWindow(s, w.label, dict(w.meta)) for s, w in zip(spectra, batch))
    return out


def as_arrays(windows):
    """Stack labelled windows into ``(X, y)`` network inputs."""
    if not windows:
        return np.zeros((0, 1, 1, 1), np.float32), np.zeros(0, int)
    return (np.stack([w.spectra for w in windows]).astype(np.float32),
            np.array([w.label for w in windows], dtype=int))


@dataclass
class DatasetSplit:
    train: list
    val: list
    test: list

    def counts(self) -> dict:
        out = {}
        for name in ("train", "val", "test"):
            labels = [w.label for w in getattr(self, name)]
            out[name] = {"breach": int(sum(labels)), "non_breach": int(len(labels) - sum(labels))}
        return out

    def check_disjoint(self) -> None:
        seen = {}
        for name in ("train", "val", "test"):
            for w in getattr(self, name):
                key = (w.meta.get("session"), w.meta.get("start_ms"))
                other = seen.setdefault(key, name)
                if other != name:
                    raise LabelingError(f"window {key} appears in both {other} and {name}")
        for name in ("val", "test"):
            if any(w.meta.get("augmented") for w in getattr(self, name)):
                raise LabelingError(f"augmented windows found in {name} split")


def split_windows(windows, train_sessions, val_sessions, test_sessions, augment: bool = True,
                  rate_hz: float = dsp.CANONICAL_RATE_HZ) -> DatasetSplit:
    """Assign raw windows to splits by session; augment the training breach class."""
    def pick(sessions):
        sessions = set(sessions)
        return [w for w in windows if w.meta.get("session") in sessions]
    train = pick(train_sessions)
    if augment:
        train = augment_breach_class(train, rate_hz)
    split = DatasetSplit(train, pick(val_sessions), pick(test_sessions))
    split.check_disjoint()
    return split


# ---------------------------------------------------------------- automatic labels

@dataclass
class AutoLabel:
    entry_index: int
    exit_index: int
    breach: geometry.BreachEstimate
    entry_ct: np.ndarray
    exit_ct: np.ndarray

    def interval(self, duration_ms: float = DEFAULT_BREACH_MS) -> BreachInterval:
        return BreachInterval.anchored(self.breach.time_ms, duration_ms)

    def path(self, t_ct_cam: geometry.RigidTransform) -> geometry.DrillPath:
        return geometry.DrillPath(self.entry_ct, self.exit_ct, t_ct_cam.apply(self.entry_ct),
                                  t_ct_cam.apply(self.exit_ct), self.breach.point, self.breach.time_ms)


def autolabel(traj: geometry.TrackedTrajectory, mesh: geometry.TriMesh,
              t_ct_cam: geometry.RigidTransform, pin_point, pin_dir, mode: str = "vertex") -> AutoLabel:
    """Breach time from tracking: pin/mesh crossings, entry/exit samples, nearest-vertex sample."""
    ep_ct, sp_ct = geometry.pin_mesh_intersection(mesh, pin_point, pin_dir)
    i_ep, i_sp = geometry.find_entry_exit(traj, ep_ct, sp_ct, t_ct_cam)
    if i_sp <= i_ep:
        raise LabelingError(f"exit sample {i_sp} does not follow entry sample {i_ep}")
    breach = geometry.find_breach(traj, mesh, t_ct_cam, i_ep, i_sp, mode)
    return AutoLabel(i_ep, i_sp, breach, ep_ct, sp_ct)


# ---------------------------------------------------------------- manifests

def manifest_record(window, path: str | None = None, offset: int | None = None) -> dict:
    rec = {"session": window.meta.get("session"), "start_ms": window.meta.get("start_ms"),
           "label": Label(window.label).text, "sensors": window.meta.get("sensors"),
           "augmented": bool(window.meta.get("augmented", False))}
    if path is not None:
        rec.update(path=path, offset=offset, variant=window.meta.get("variant", 0))
    return rec


def write_manifest(records, path) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_manifest(path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]


def load_labeled(records, root) -> list[LabeledWindow]:
    """Materialise manifest records that point at MSPC tensor files."""
    root = Path(root)
    out = []
    for rec in records:
        spectra = dsp.read_spectra(root / rec["path"], rec["offset"])
        meta = {k: rec[k] for k in ("session", "start_ms", "sensors", "augmented")}
        meta["variant"] = rec.get("variant", 0)
        out.append(LabeledWindow(spectra, int(Label.parse(rec["label"])), meta))
    return out
