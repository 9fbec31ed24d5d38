import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.io import wavfile

from conftest import fft_peak_hz, tone
from psent.signalio import (CANONICAL_RATE_HZ, SIDECAR_NAME, SensorChannel, SensorKind, SignalIOError,
                            SyncRecording, load_recording, normalize, resample, save_recording)


def write_sidecar(directory, entries):
    (directory / SIDECAR_NAME).write_text("\n".join(json.dumps(e) for e in entries) + "\n")


class TestSensorKind:
    def test_exhaustive(self):
        assert {k.value for k in SensorKind} == {
            "contact_mic", "freefield_mic", "accel_bone", "accel_pin",
            "accel_drill_x", "accel_drill_y", "accel_drill_z"}

    def test_drill_axes(self):
        assert [k for k in SensorKind if k.is_drill_axis] == [
            SensorKind.ACCEL_DRILL_X, SensorKind.ACCEL_DRILL_Y, SensorKind.ACCEL_DRILL_Z]

    def test_unknown(self):
        with pytest.raises(SignalIOError, match="unknown sensor kind"):
            SensorKind.parse("hydrophone")


class TestChannelAndRecording:
    def test_rejects_non_finite(self):
        with pytest.raises(SignalIOError):
            SensorChannel(SensorKind.CONTACT_MIC, np.array([0.0, np.nan]), 40000.0)

    def test_rejects_bad_rate(self):
        with pytest.raises(SignalIOError):
            SensorChannel(SensorKind.CONTACT_MIC, np.zeros(4), 0.0)

    def test_start_epoch_mismatch(self):
        a = SensorChannel(SensorKind.CONTACT_MIC, np.zeros(400), 40000.0, 0.0)
        b = SensorChannel(SensorKind.ACCEL_BONE, np.zeros(400), 40000.0, 5.0)
        with pytest.raises(SignalIOError, match="epochs"):
            SyncRecording((a, b))

    def test_duration_within_one_sample(self):
        a = SensorChannel(SensorKind.CONTACT_MIC, np.zeros(400), 40000.0)
        b = SensorChannel(SensorKind.ACCEL_BONE, np.zeros(401), 40000.0)
        SyncRecording((a, b))
        c = SensorChannel(SensorKind.ACCEL_PIN, np.zeros(403), 40000.0)
        with pytest.raises(SignalIOError, match="durations"):
            SyncRecording((a, c))

    def test_channel_lookup_by_index(self):
        chans = tuple(SensorChannel(SensorKind.CONTACT_MIC, np.full(10, v), 1000.0) for v in (0.1, 0.2))
        rec = SyncRecording(chans)
        assert rec.channel("contact_mic", 1).samples[0] == 0.2
        with pytest.raises(KeyError):
            rec.channel("contact_mic", 2)


class TestNormalize:
    def test_zero_channel_unchanged(self):
        assert np.array_equal(normalize(np.zeros(5)), np.zeros(5))

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=1, max_size=64))
    def test_pure_scaling(self, values):
        x = np.array(values)
        y = normalize(x)
        assert np.max(np.abs(y)) <= 1.0 + 1e-12
        if np.any(x != 0):
            assert np.argmax(np.abs(y)) == np.argmax(np.abs(x))


class TestResample:
    def test_tone_48k_to_40k(self):
        ch = SensorChannel(SensorKind.CONTACT_MIC, tone(1000.0, 48000.0, 48000), 48000.0)
        out = resample(ch, 40000.0)
        assert len(out.samples) == 40000
        assert abs(fft_peak_hz(out.samples, 40000.0) - 1000.0) / 1000.0 < 0.005

    def test_identity_bitwise(self, rng):
        x = rng.uniform(-1, 1, 1000)
        ch = SensorChannel(SensorKind.CONTACT_MIC, x, 40000.0)
        assert np.array_equal(resample(ch, 40000.0).samples, x)

    def test_dc_preserved(self):
        ch = SensorChannel(SensorKind.ACCEL_BONE, np.full(4800, 0.5), 48000.0)
        out = resample(ch, 40000.0)
        assert np.max(np.abs(out.samples - 0.5)) < 1e-6

    @pytest.mark.parametrize("src,dst", [(48000.0, 40000.0), (44100.0, 40000.0), (20000.0, 40000.0)])
    def test_duration_preserved(self, src, dst):
        ch = SensorChannel(SensorKind.ACCEL_PIN, np.zeros(int(src * 0.37)), src)
        out = resample(ch, dst)
        assert abs(out.duration_ms - ch.duration_ms) <= 1000.0 / dst + 1e-9

    def test_bad_target(self):
        ch = SensorChannel(SensorKind.ACCEL_PIN, np.zeros(10), 1000.0)
        with pytest.raises(SignalIOError):
            resample(ch, 0.0)


class TestLoadSave:
    def test_seven_channel_wav(self, tmp_path, rng):
        data = rng.uniform(-0.5, 0.5, (200000, 7)).astype(np.float32)
        wavfile.write(tmp_path / "all.wav", 40000, data)
        kinds = [k.value for k in SensorKind]
        write_sidecar(tmp_path, [{"file": "all.wav", "kind": k, "subject": "S1", "level": "L3",
                                  "side": "left", "start_epoch_ms": 0} for k in kinds])
        rec = load_recording(tmp_path)
        assert len(rec.channels) == 7
        assert all(len(ch.samples) == 200000 for ch in rec.channels)
        assert [k.value for k in rec.kinds] == kinds
        assert rec.session_meta == {"subject": "S1", "level": "L3", "side": "left"}
        assert all(np.max(np.abs(ch.samples)) == pytest.approx(1.0) for ch in rec.channels)

    def test_silence(self, tmp_path):
        wavfile.write(tmp_path / "s.wav", 40000, np.zeros(4000, dtype=np.int16))
        write_sidecar(tmp_path, [{"file": "s.wav", "kind": "contact_mic"}])
        rec = load_recording(tmp_path / SIDECAR_NAME)
        assert np.array_equal(rec.channels[0].samples, np.zeros(4000))

    def test_mixed_rates_need_resample(self, tmp_path):
        wavfile.write(tmp_path / "a.wav", 40000, tone(1000.0, 40000.0, 40000).astype(np.float32))
        wavfile.write(tmp_path / "b.wav", 48000, tone(1000.0, 48000.0, 48000).astype(np.float32))
        write_sidecar(tmp_path, [{"file": "a.wav", "kind": "contact_mic"},
                                 {"file": "b.wav", "kind": "accel_bone"}])
        with pytest.raises(SignalIOError, match="mismatch"):
            load_recording(tmp_path)
        rec = load_recording(tmp_path, resample_to=CANONICAL_RATE_HZ)
        a, b = (ch.samples for ch in rec.channels)
        assert abs(len(a) - len(b)) <= 1
        assert abs(fft_peak_hz(b, 40000.0) - 1000.0) / 1000.0 < 0.005

    def test_unknown_kind(self, tmp_path):
        wavfile.write(tmp_path / "a.wav", 40000, np.zeros(10, dtype=np.int16))
        write_sidecar(tmp_path, [{"file": "a.wav", "kind": "sonar"}])
        with pytest.raises(SignalIOError, match="unknown sensor kind"):
            load_recording(tmp_path)

    def test_missing_and_corrupt(self, tmp_path):
        with pytest.raises(SignalIOError, match="sidecar"):
            load_recording(tmp_path)
        write_sidecar(tmp_path, [{"file": "gone.wav", "kind": "contact_mic"}])
        with pytest.raises(SignalIOError, match="missing WAV"):
            load_recording(tmp_path)
        (tmp_path / "gone.wav").write_bytes(b"RIFF0000junk")
        with pytest.raises(SignalIOError, match="corrupt"):
            load_recording(tmp_path)

    @pytest.mark.parametrize("bits,tol", [(16, 1.5 / 32768), (32, 1e-7)])
    def test_round_trip(self, tmp_path, rng, bits, tol):
        chans = []
        for kind in (SensorKind.CONTACT_MIC, SensorKind.ACCEL_DRILL_Z):
            chans.append(SensorChannel(kind, normalize(rng.uniform(-1, 1, 8000)), 40000.0, 12.5))
        rec = SyncRecording(tuple(chans), {"subject": "S2", "level": "L4", "side": "right"})
        save_recording(rec, tmp_path, bit_depth=bits)
        back = load_recording(tmp_path)
        assert back.session_meta == rec.session_meta
        for a, b in zip(rec.channels, back.channels):
            assert a.kind == b.kind and b.start_epoch_ms == 12.5
            assert np.max(np.abs(a.samples - b.samples)) <= tol
