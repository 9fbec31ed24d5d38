"""Synthetic drilling sessions with analytic breach ground truth.

A session is a straight, constant-feed drill path through a box-shaped
vertebra proxy. The drill idles briefly above the entry point, cuts the
cortical entry shell and the cancellous core, and breaks through the far
wall at an analytically known time. Sensor channels share one source signal
shaped per sensor by a gain, a pass band and an SNR.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import signal
from scipy.spatial.transform import Rotation

from . import geometry, labeling
from .dsp import WindowSpec, slice_windows
from .evaluation import save_hu_volume
from .geometry import RigidTransform, TrackedTrajectory, TriMesh
from .signalio import CANONICAL_RATE_HZ, SensorChannel, SensorKind, SyncRecording, save_recording


class SimulationError(ValueError):
    pass


@dataclass(frozen=True)
class SensorProfile:
    gain: float = 1.0
    band_hz: tuple = (20.0, 5000.0)
    snr_db: float = 20.0


DEFAULT_PROFILES = {
    SensorKind.CONTACT_MIC: SensorProfile(1.0, (20.0, 6000.0), 24.0),
    SensorKind.FREEFIELD_MIC: SensorProfile(0.4, (300.0, 8000.0), 3.0),
    SensorKind.ACCEL_BONE: SensorProfile(0.8, (20.0, 3000.0), 18.0),
    SensorKind.ACCEL_PIN: SensorProfile(0.5, (20.0, 2500.0), 10.0),
    SensorKind.ACCEL_DRILL_X: SensorProfile(0.7, (20.0, 4000.0), 8.0),
    SensorKind.ACCEL_DRILL_Y: SensorProfile(0.7, (20.0, 4000.0), 6.0),
    SensorKind.ACCEL_DRILL_Z: SensorProfile(0.7, (20.0, 4000.0), 9.0),
}

PHASES = ("cortical_entry", "cancellous", "breach_transition", "post_breach")


@dataclass(frozen=True)
class DrillScenario:
    feed_rate_mm_s: float = 10.0
    drill_rpm: float = 3500.0
    body_depth_mm: float = 20.0  # entry face to breached wall
    body_width_mm: float = 24.0
    wall_thickness_mm: float = 2.0
    entry_offset_mm: tuple = (0.0, 0.0)
    tilt_deg: tuple = (0.0, 0.0)
    exit_grid_mm: float = 0.25
    approach_ms: float = 300.0
    post_ms: float = 700.0
    breach_duration_ms: float = 200.0
    tracking_rate_hz: float = 50.0
    jitter_mm: float = 0.0
    sample_rate_hz: float = CANONICAL_RATE_HZ
    noise_floor_db: float | None = -60.0
    burst_gain_db: float = 0.0
    profiles: dict = field(default_factory=lambda: dict(DEFAULT_PROFILES))
    t_ct_cam: RigidTransform = field(default_factory=RigidTransform.identity)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.drill_rpm <= 0:
            raise SimulationError("drill rpm must be positive")
        if self.wall_thickness_mm <= 0:
            raise SimulationError("wall thickness must be positive")
        if self.wall_thickness_mm >= self.body_depth_mm:
            raise SimulationError("wall thickness must be smaller than the body depth")
        if not 100.0 <= self.breach_duration_ms <= 300.0:
            raise SimulationError("breach duration must lie in [100, 300] ms")

    @property
    def path_direction_ct(self) -> np.ndarray:
        ax, ay = np.radians(self.tilt_deg)
        d = np.array([np.tan(ax), np.tan(ay), 1.0])
        return d / np.linalg.norm(d)

    @property
    def entry_point_ct(self) -> np.ndarray:
        return np.array([self.entry_offset_mm[0], self.entry_offset_mm[1], 0.0])

    @property
    def path_length_mm(self) -> float:
        """Distance along the path from the entry face to the breached wall."""
        return self.body_depth_mm / self.path_direction_ct[2]

    @property
    def breach_time_ms(self) -> float:
        return self.approach_ms + 1000.0 * self.path_length_mm / self.feed_rate_mm_s

    @property
    def duration_ms(self) -> float:
        return self.breach_time_ms + self.post_ms

    def phase_plan(self):
        """``(phase, depth_from, depth_to)`` along the path, contiguous in depth."""
        w = self.wall_thickness_mm
        length = self.path_length_mm
        burst_depth = self.feed_rate_mm_s * self.breach_duration_ms / 1000.0
        end = self.feed_rate_mm_s * (self.duration_ms - self.approach_ms) / 1000.0
        return [("cortical_entry", 0.0, w), ("cancellous", w, length),
                ("breach_transition", length, length + burst_depth),
                ("post_breach", length + burst_depth, max(end, length + burst_depth))]


@dataclass
class GroundTruth:
    breach_time_ms: float
    breach_duration_ms: float
    entry_ct: np.ndarray
    exit_ct: np.ndarray
    entry_cam: np.ndarray
    exit_cam: np.ndarray
    window_starts_ms: np.ndarray | None = None
    window_labels: np.ndarray | None = None

    def to_json(self) -> str:
        d = {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in asdict(self).items()}
        return json.dumps(d)

    @classmethod
    def from_json(cls, text: str) -> "GroundTruth":
        d = json.loads(text)
        return cls(**{k: (np.array(v) if isinstance(v, list) else v) for k, v in d.items()})


@dataclass
class Session:
    name: str
    scenario: DrillScenario
    recording: SyncRecording
    trajectory: TrackedTrajectory
    mesh: TriMesh
    truth: GroundTruth
    pin_point_ct: np.ndarray
    pin_dir_ct: np.ndarray
    mean_hu: float | None = None


# ---------------------------------------------------------------- geometry

def _grid_face(z, half, spacing):
    n = max(1, int(round(2 * half / spacing)))
    ticks = np.linspace(-half, half, n + 1)
    xx, yy = np.meshgrid(ticks, ticks, indexing="ij")
    verts = np.column_stack([xx.ravel(), yy.ravel(), np.full(xx.size, z)])
    idx = np.arange((n + 1) ** 2).reshape(n + 1, n + 1)
    a, b = idx[:-1, :-1].ravel(), idx[1:, :-1].ravel()
    c, d = idx[1:, 1:].ravel(), idx[:-1, 1:].ravel()
    faces = np.concatenate([np.column_stack([a, b, c]), np.column_stack([a, c, d])])
    return verts, faces


def proxy_vertebra(depth_mm: float, width_mm: float, exit_grid_mm: float = 0.25) -> TriMesh:
    """Box proxy: coarse entry and side faces, finely tessellated far wall at z = depth."""
    h = width_mm / 2
    verts, faces = _grid_face(depth_mm, h, exit_grid_mm)
    # the four bottom corners of the grid face, in grid ordering
    n = int(round(2 * h / exit_grid_mm))
    top = {(-1, -1): 0, (1, -1): n * (n + 1), (1, 1): (n + 1) ** 2 - 1, (-1, 1): n}
    base = len(verts)
    bottom = np.array([[-h, -h, 0.0], [h, -h, 0.0], [h, h, 0.0], [-h, h, 0.0]])
    verts = np.vstack([verts, bottom])
    b = {(-1, -1): base, (1, -1): base + 1, (1, 1): base + 2, (-1, 1): base + 3}
    extra = [[b[-1, -1], b[1, 1], b[1, -1]], [b[-1, -1], b[-1, 1], b[1, 1]]]  # entry face
    ring = [(-1, -1), (1, -1), (1, 1), (-1, 1)]
    for i in range(4):
        p, q = ring[i], ring[(i + 1) % 4]
        extra.append([b[p], b[q], top[q]])
        extra.append([b[p], top[q], top[p]])
    return TriMesh(verts, np.vstack([faces, np.array(extra)]))


def random_pose(rng, max_angle_deg: float = 180.0, translation_scale: float = 200.0) -> RigidTransform:
    axis = rng.standard_normal(3)
    axis /= np.linalg.norm(axis)
    angle = np.radians(rng.uniform(0, max_angle_deg))
    rot = Rotation.from_rotvec(axis * angle).as_matrix()
    return RigidTransform(rot, rng.uniform(-1, 1, 3) * translation_scale + np.array([0, 0, 800.0]))


def gen_trajectory(scenario: DrillScenario, seed: int = 0):
    """Constant-feed tip trajectory in camera space and its ground truth."""
    if scenario.feed_rate_mm_s <= 0:
        raise SimulationError("zero feed: the drill never reaches the far wall")
    mesh = proxy_vertebra(scenario.body_depth_mm, scenario.body_width_mm, scenario.exit_grid_mm)
    start, direction = scenario.entry_point_ct, scenario.path_direction_ct
    try:
        entry_ct, exit_ct = geometry.pin_mesh_intersection(mesh, start, direction)
    except geometry.GeometryError as exc:
        raise SimulationError(f"drill path misses the vertebra proxy: {exc}") from None
    if abs(exit_ct[2] - scenario.body_depth_mm) > 1e-6:
        raise SimulationError("drill path leaves through a side wall; reduce tilt or offset")

    rng = np.random.default_rng(seed)
    dt = 1000.0 / scenario.tracking_rate_hz
    t = np.arange(0.0, scenario.duration_ms + 1e-9, dt)
    depth = scenario.feed_rate_mm_s * (t - scenario.approach_ms) / 1000.0
    pos_ct = start + depth[:, None] * direction
    tf = scenario.t_ct_cam
    pos_cam = tf.apply(pos_ct)
    if scenario.jitter_mm > 0:
        pos_cam = pos_cam + rng.normal(0.0, scenario.jitter_mm, pos_cam.shape)
    truth = GroundTruth(scenario.breach_time_ms, scenario.breach_duration_ms,
                        entry_ct, exit_ct, tf.apply(entry_ct), tf.apply(exit_ct))
    return TrackedTrajectory(t, pos_cam), truth, mesh


# ---------------------------------------------------------------- signals

def _bandpass(x, lo, hi, rate, order=2):
    hi = min(hi, 0.45 * rate)
    sos = signal.butter(order, [lo, hi], btype="band", fs=rate, output="sos")
    return signal.sosfilt(sos, x)


def _envelope(t_ms, start, stop, fade_ms=3.0):
    rise = np.clip((t_ms - start) / fade_ms, 0, 1)
    fall = np.clip((stop - t_ms) / fade_ms, 0, 1)
    return np.minimum(rise, fall)


def source_signal(scenario: DrillScenario, rng) -> np.ndarray:
    """Sensor-independent drilling sound over the whole session."""
    rate = scenario.sample_rate_hz
    n = int(round(scenario.duration_ms * rate / 1000.0))
    t_ms = np.arange(n) * 1000.0 / rate
    t_entry = scenario.approach_ms
    t_wall = t_entry + 1000.0 * scenario.wall_thickness_mm / scenario.feed_rate_mm_s
    t_cross = scenario.breach_time_ms
    t_burst_end = t_cross + scenario.breach_duration_ms

    f0 = scenario.drill_rpm / 60.0
    harmonics = sum(np.sin(2 * np.pi * k * f0 * t_ms / 1000.0 + rng.uniform(0, 2 * np.pi)) / k
                    for k in range(1, 9))
    harm_amp = np.select([t_ms < t_entry, t_ms < t_cross], [0.15, 0.25], 0.45)

    cancellous = _bandpass(rng.standard_normal(n), 80.0, 700.0, rate)
    cortical = _bandpass(rng.standard_normal(n), 300.0, 1200.0, rate)
    burst = _bandpass(rng.standard_normal(n), 150.0, 8000.0, rate)
    cancellous /= cancellous.std()
    cortical /= cortical.std()
    burst /= burst.std()

    drilling = (t_ms >= t_entry) & (t_ms < t_cross)
    in_cortex = (t_ms >= t_entry) & (t_ms < t_wall)
    burst_amp = 10 ** (scenario.burst_gain_db / 20.0)
    x = harm_amp * harmonics
    x = x + 0.20 * drilling * cancellous
    x = x + 0.25 * in_cortex * cortical
    x = x + burst_amp * _envelope(t_ms, t_cross, t_burst_end) * burst
    post = t_ms >= t_burst_end
    x = x + 0.03 * post * cancellous
    return x


def gen_signals(scenario: DrillScenario, trajectory: TrackedTrajectory, kinds,
                seed: int = 0) -> SyncRecording:
    """Multi-sensor recording aligned with the trajectory clock (t = 0 at start)."""
    dt = 1000.0 / scenario.tracking_rate_hz
    if trajectory.timestamps_ms[0] > 0 or trajectory.timestamps_ms[-1] < scenario.duration_ms - dt:
        raise SimulationError("trajectory does not cover the phase plan")
    kinds = [SensorKind.parse(k) for k in kinds]
    missing = [k.value for k in kinds if k not in scenario.profiles]
    if missing:
        raise SimulationError(f"no sensor profile for {missing}")
    rng = np.random.default_rng(seed)
    src = source_signal(scenario, rng)
    rate = scenario.sample_rate_hz
    shaped = []
    for i, kind in enumerate(kinds):
        prof = scenario.profiles[kind]
        x = prof.gain * _bandpass(src, *prof.band_hz, rate)
        noise_rng = np.random.default_rng([seed, i])
        if np.isfinite(prof.snr_db):
            x = x + noise_rng.normal(0.0, x.std() * 10 ** (-prof.snr_db / 20.0), len(x))
        shaped.append(x)
    peak = max(np.max(np.abs(x)) for x in shaped) or 1.0
    channels = []
    for i, (kind, x) in enumerate(zip(kinds, shaped)):
        x = 0.9 * x / peak
        if scenario.noise_floor_db is not None:
            floor_rng = np.random.default_rng([seed, 1000 + i])
            x = x + floor_rng.normal(0.0, 10 ** (scenario.noise_floor_db / 20.0), len(x))
        channels.append(SensorChannel(kind, np.clip(x, -1.0, 1.0), rate, 0.0))
    return SyncRecording(tuple(channels), dict(scenario.meta))


def truth_labels(scenario: DrillScenario, recording: SyncRecording, spec: WindowSpec = WindowSpec(),
                 overlap_frac: float = labeling.DEFAULT_OVERLAP):
    starts = np.array([s for s, _ in slice_windows(recording.channels[0], spec)])
    interval = labeling.BreachInterval(scenario.breach_time_ms,
                                       scenario.breach_time_ms + scenario.breach_duration_ms)
    return starts, labeling.label_windows(starts, interval, overlap_frac, spec.length_ms)


# ---------------------------------------------------------------- scenario sets

LEVELS = ("T10", "T11", "T12", "L1", "L2", "L3", "L4", "L5")


def random_scenario(rng, subject: dict | None = None, **overrides) -> DrillScenario:
    subject = subject or {}
    width = 24.0
    depth = rng.uniform(15.0, 25.0)
    tilt = tuple(rng.uniform(-8.0, 8.0, 2))
    offset = tuple(rng.uniform(-width / 5, width / 5, 2))
    snr_shift = subject.get("snr_shift_db", 0.0)
    profiles = {k: replace(p, snr_db=p.snr_db + snr_shift) for k, p in DEFAULT_PROFILES.items()}
    meta = {"subject": subject.get("name", "S0"), "level": str(rng.choice(LEVELS)),
            "side": str(rng.choice(["left", "right"]))}
    params = dict(body_depth_mm=depth, body_width_mm=width, tilt_deg=tilt, entry_offset_mm=offset,
                  wall_thickness_mm=subject.get("wall_mm", 2.0),
                  burst_gain_db=subject.get("burst_gain_db", 0.0),
                  profiles=profiles, t_ct_cam=random_pose(rng), meta=meta)
    params.update(overrides)
    return DrillScenario(**params)


def default_subjects(rng, n_subjects: int = 4):
    return [{"name": f"S{i + 1}", "wall_mm": float(rng.uniform(1.5, 3.0)),
             "snr_shift_db": float(rng.uniform(-3.0, 3.0)),
             "burst_gain_db": float(rng.uniform(-3.0, 0.0)),
             "mean_hu": float(rng.uniform(90.0, 230.0))} for i in range(n_subjects)]


def simulate_session(name: str, scenario: DrillScenario, kinds=tuple(SensorKind), seed: int = 0,
                     mean_hu: float | None = None) -> Session:
    traj, truth, mesh = gen_trajectory(scenario, seed)
    recording = gen_signals(scenario, traj, kinds, seed)
    truth.window_starts_ms, truth.window_labels = truth_labels(scenario, recording)
    return Session(name, scenario, recording, traj, mesh, truth,
                   scenario.entry_point_ct, scenario.path_direction_ct, mean_hu)


def default_corpus(n_sessions: int = 20, seed: int = 0, kinds=tuple(SensorKind), n_subjects: int = 4,
                   **overrides) -> list[Session]:
    """Sessions spread round-robin over synthetic subjects."""
    rng = np.random.default_rng(seed)
    subjects = default_subjects(rng, n_subjects)
    sessions = []
    for i in range(n_sessions):
        subj = subjects[i % n_subjects]
        scen = random_scenario(rng, subj, **overrides)
        sessions.append(simulate_session(f"{subj['name']}_{i:03d}", scen, kinds, seed * 100_003 + i,
                                         subj["mean_hu"]))
    return sessions


def hu_volume(mean_hu: float, seed: int = 0, shape=(12, 64, 64), spacing=(1.0, 0.5, 0.5)):
    """Small synthetic CT block of roughly ``mean_hu`` for density estimation."""
    rng = np.random.default_rng(seed)
    return mean_hu + rng.normal(0.0, 25.0, shape), spacing


def write_session(session: Session, directory) -> Path:
    """Write recording, trajectory, mesh, transform, pin and ground truth files."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_recording(session.recording, directory)
    geometry.save_trajectory(session.trajectory, directory / "trajectory.csv")
    geometry.save_ply(session.mesh, directory / "mesh.ply")
    geometry.save_transform(session.scenario.t_ct_cam, directory / "t_ct_cam.json")
    (directory / "pin.json").write_text(json.dumps(
        {"point": session.pin_point_ct.tolist(), "direction": session.pin_dir_ct.tolist()}) + "\n")
    (directory / "ground_truth.json").write_text(session.truth.to_json() + "\n")
    if session.mean_hu is not None:
        vol, spacing = hu_volume(session.mean_hu, seed=zlib.crc32(session.name.encode()))
        save_hu_volume(directory / "hu.npz", vol, spacing)
    return directory
