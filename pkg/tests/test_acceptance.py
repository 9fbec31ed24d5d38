"""Acceptance criteria for the package, one test per criterion.

Each test records a one-line verdict that is repeated in the terminal summary
under "acceptance criteria". Thresholds are the stated ones; nothing is
loosened here when a criterion fails.
"""

import math
import time

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from conftest import (
    check_layer, f_sf_quad, fft_peak_hz, network_gradcheck, numeric_grad, max_rel_error,
    record_criterion, t_two_sided_quad, tone,
)
from psent import cli, dsp, evaluation, geometry, labeling, nn, simulate
from psent.evaluation import CVPlan
from psent.geometry import RigidTransform
from psent.nn import layers as L

RATE = 40000.0

# printed individual-sensor rows: mean, std, ci_low, ci_high (percent, n = 5 runs)
PUBLISHED_SINGLE_SENSOR = {
    "Mic1": (85.8, 3.19, 83.0, 88.6),
    "Mic2": (63.8, 5.36, 59.1, 68.5),
    "PCB1": (81.0, 3.54, 77.9, 84.1),
    "PCB2": (79.8, 8.65, 72.2, 87.4),
    "PCB3x": (75.2, 6.18, 69.8, 80.6),
    "PCB3y": (73.4, 7.96, 66.4, 80.4),
    "PCB3z": (77.2, 7.05, 71.0, 83.3),
}


def test_01_ci_reproduction():
    t0 = time.perf_counter()
    misses = []
    for name, (mean, std, lo, hi) in PUBLISHED_SINGLE_SENSOR.items():
        got_lo, got_hi = evaluation.ci_from_stats(mean, std, 5)
        for which, got, printed in (("low", got_lo, lo), ("high", got_hi, hi)):
            if abs(got - printed) > 0.05:
                misses.append(f"{name} {which} {got:.3f} vs {printed}")
    elapsed = time.perf_counter() - t0
    ok = not misses and elapsed < 1.0
    record_criterion(1, "CI formula reproduces printed intervals", ok,
                     "; ".join(misses) or f"14/14 bounds within 0.05 in {elapsed:.3f}s")
    assert not misses, misses
    assert elapsed < 1.0


def test_02_p_values():
    t0 = time.perf_counter()
    cases = [
        ("PCB2 row", (98.0, 2.74, 5, 79.8, 8.65, 5), 0.002),
        ("all-sensor row", (98.0, 2.74, 5, 92.0, 2.74, 5), 0.009),
        ("density PCB1 row", (84.8, 5.31, 5, 75.0, 0.0, 5), 0.003),
    ]
    got = {name: evaluation.t_test_from_stats(*args)[1] for name, args, _ in cases}
    elapsed = time.perf_counter() - t0
    ok = all(abs(got[n] - p) <= 1e-3 for n, _, p in cases) and elapsed < 1.0
    record_criterion(2, "pooled t-test p-values", ok, ", ".join(f"{n} p={got[n]:.4f}" for n in got))
    for name, _, expected in cases:
        assert got[name] == pytest.approx(expected, abs=1e-3), name
    assert elapsed < 1.0


def test_03_spectrogram_shape():
    t0 = time.perf_counter()
    spec = dsp.WindowSpec()
    x = np.random.default_rng(0).standard_normal(spec.n_samples(RATE))
    out = dsp.mel_db(x, dsp.MelParams(n_mels=128, hop_samples=32, f_max_hz=2000.0))
    elapsed = time.perf_counter() - t0
    ok = out.shape == (128, 126) and elapsed < 1.0
    record_criterion(3, "100 ms window gives a 128x126 mel spectrogram", ok, f"shape {out.shape}")
    assert out.shape == (128, 126)
    assert elapsed < 1.0


def _layer_errors(seed):
    rng = np.random.default_rng(seed)
    err = {}
    x = rng.standard_normal((2, 3, 7, 6))
    w = rng.standard_normal((4, 3, 3, 3))
    err["conv"] = check_layer(lambda x, w: L.conv2d_forward(x, w, 2, 1), L.conv2d_backward, [x, w], rng)

    def bn(x, g, b):
        out, cache, _ = L.batchnorm_forward(x, g, b, np.zeros(3), np.ones(3), True)
        return out, cache
    err["norm"] = check_layer(bn, L.batchnorm_backward,
                              [rng.standard_normal((3, 3, 4, 4)), rng.uniform(0.5, 1.5, 3), rng.standard_normal(3)], rng)
    err["dense"] = check_layer(L.dense_forward, L.dense_backward,
                               [rng.standard_normal((4, 6)), rng.standard_normal((6, 2)), rng.standard_normal(2)], rng)
    err["se"] = check_layer(L.se_forward, L.se_backward,
                            [rng.standard_normal((2, 4, 3, 3)), rng.standard_normal((4, 2)), rng.standard_normal(2),
                             rng.standard_normal((2, 4)), rng.standard_normal(4)], rng)
    z = rng.standard_normal((6, 2)) * 2
    y = rng.integers(0, 2, 6)
    params = nn.FocalLossParams(2.0, (0.3, 0.7))
    num = numeric_grad(lambda: nn.focal_loss(z, y, params)[0], z)
    err["focal"] = max_rel_error(nn.focal_loss(z, y, params)[1], num)
    net = network_gradcheck(seed, samples_per_tensor=6)
    err["residual"] = max(v for k, v in net.items() if k.startswith("layer"))
    err["network"] = max(net.values())
    return err


def test_04_gradients():
    t0 = time.perf_counter()
    worst = {}
    for seed in range(10):
        for kind, e in _layer_errors(seed).items():
            worst[kind] = max(worst.get(kind, 0.0), e)
    elapsed = time.perf_counter() - t0
    ok = max(worst.values()) < 1e-4 and elapsed < 120
    record_criterion(4, "finite-difference gradients, 10 seeds", ok,
                     ", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + f"; {elapsed:.1f}s")
    assert max(worst.values()) < 1e-4, worst
    assert elapsed < 120


def test_05_autolabel_oracle():
    t0 = time.perf_counter()
    off_by, mismatched = [], []
    for seed in range(100):
        sc = simulate.random_scenario(np.random.default_rng(seed))
        traj, truth, mesh = simulate.gen_trajectory(sc, seed)
        al = labeling.autolabel(traj, mesh, sc.t_ct_cam, sc.entry_point_ct, sc.path_direction_ct)
        dt = 1000.0 / sc.tracking_rate_hz
        off_by.append(abs(al.breach.time_ms - truth.breach_time_ms) / dt)
        # exhaustive sample x vertex scan, earliest sample wins ties
        mapped = geometry.map_to_axis(traj, al.entry_index, al.exit_index)
        verts = mesh.vertices @ sc.t_ct_cam.rotation.T + sc.t_ct_cam.translation
        d2 = ((mapped[:, None, :] - verts[None, :, :]) ** 2).sum(axis=2).min(axis=1)
        brute = al.entry_index + int(np.flatnonzero(d2 == d2.min())[0])
        if brute != al.breach.index:
            mismatched.append(seed)
    elapsed = time.perf_counter() - t0
    worst = max(off_by)
    ok = worst <= 1.0 and not mismatched and elapsed < 60
    record_criterion(5, "autolabel breach time vs analytic crossing, 100 sessions", ok,
                     f"worst {worst:.2f} samples, argmin mismatches {len(mismatched)}, {elapsed:.1f}s")
    assert worst <= 1.0
    assert not mismatched
    assert elapsed < 60


def _icp_case(seed, sigma=0.1):
    rng = np.random.default_rng(seed)
    cloud = rng.uniform(-1, 1, (1000, 3)) * np.array([20.0, 12.5, 6.0])
    axis = rng.standard_normal(3)
    axis /= np.linalg.norm(axis)
    rot = Rotation.from_rotvec(axis * np.radians(rng.uniform(0, 30))).as_matrix()
    t = rng.standard_normal(3)
    t *= rng.uniform(0, 20) / np.linalg.norm(t)
    true = RigidTransform(rot, t)
    target = true.apply(cloud)
    clean = geometry.icp_register(cloud, target, max_iters=200)
    angle = geometry.rotation_angle_deg(clean, true)
    shift = float(np.linalg.norm(clean.translation - true.translation))
    noisy = cloud + rng.normal(0.0, sigma, cloud.shape)
    est = geometry.icp_register(noisy, target, max_iters=200)
    moved = est.apply(noisy)
    residual = float(np.mean(((moved[:, None, :] - target[None, :, :]) ** 2).sum(axis=2).min(axis=1)))
    return angle, shift, residual


def test_06_icp_recovery():
    t0 = time.perf_counter()
    sigma = 0.1
    cases = [_icp_case(seed, sigma) for seed in range(20)]
    elapsed = time.perf_counter() - t0
    angle = max(c[0] for c in cases)
    shift = max(c[1] for c in cases)
    ratios = np.array([c[2] for c in cases]) / (3 * sigma**2)
    over = int(np.sum(ratios > 1.0))
    ok = angle < 0.1 and shift < 0.01 and over == 0 and elapsed < 60
    record_criterion(6, "ICP recovery, 20 seeds", ok,
                     f"max angle {angle:.2e} deg, max shift {shift:.2e} mm, "
                     f"noisy MSE/3sigma^2 mean {ratios.mean():.4f} max {ratios.max():.4f}, {over}/20 over bound")
    assert angle < 0.1 and shift < 0.01
    assert over == 0, f"residual MSE above 3 sigma^2 for {over} of 20 seeds"
    assert elapsed < 60


def test_07_augmentation():
    t0 = time.perf_counter()
    x = tone(1000.0, RATE, 4000)
    rms = lambda v: float(np.sqrt(np.mean(v**2)))  # noqa: E731
    gain = rms(labeling.gain_augment(x, 5.0)) / rms(x)
    peak = fft_peak_hz(labeling.pitch_shift(x, 2, RATE), RATE)
    rng = np.random.default_rng(0)
    windows = [labeling.RawWindow(rng.standard_normal((1, 4000)) * 0.1, 1, {"session": "S1", "start_ms": float(i)})
               for i in range(16)]
    windows += [labeling.RawWindow(rng.standard_normal((1, 4000)) * 0.1, 0, {"session": "S1", "start_ms": 1e4 + i})
                for i in range(314)]
    augmented = labeling.augment_breach_class(windows, RATE)
    n_breach = sum(w.label for w in augmented)
    n_other = sum(1 - w.label for w in augmented)
    elapsed = time.perf_counter() - t0
    ok = (abs(gain - 1.77828) <= 1e-6 and abs(peak - 1122.5) / 1122.5 <= 0.02
          and n_breach == 144 and n_other == 314 and elapsed < 30)
    record_criterion(7, "augmentation contracts", ok,
                     f"gain x{gain:.6f}, +2 st peak {peak:.1f} Hz, breach 16 -> {n_breach}")
    assert gain == pytest.approx(1.77828, abs=1e-6)
    assert abs(peak - 1122.5) / 1122.5 <= 0.02
    assert (n_breach, n_other) == (144, 314)
    assert elapsed < 30


def _corpus_windows(sessions, sensors):
    windows = []
    for s in sessions:
        sc = s.scenario
        al = labeling.autolabel(s.trajectory, s.mesh, sc.t_ct_cam, s.pin_point_ct, s.pin_dir_ct)
        interval = al.interval()
        windows += labeling.session_windows(s.recording, sensors,
                                            lambda starts: labeling.label_windows(starts, interval),
                                            session=s.name)
    return windows


def _channels(windows, idx):
    return [labeling.LabeledWindow(w.spectra[idx], w.label, w.meta) for w in windows]


def test_08_end_to_end():
    t0 = time.perf_counter()
    sensors = ("contact_mic", "accel_bone")
    corpus = simulate.default_corpus(20, seed=0, kinds=sensors)
    split = evaluation.split_cv([s.name for s in corpus], CVPlan())
    train_s, val_s = split.folds[0]
    raw = labeling.split_windows(_corpus_windows(corpus, sensors), train_s, val_s, split.test)
    data = {part: labeling.featurize(getattr(raw, part)) for part in ("train", "val", "test")}
    config = nn.TrainConfig(epochs=4, batch_size=32, lr=1e-3, seed=0)
    recalls = {}
    for name, idx in (("contact_mic", [0]), ("accel_bone", [1]), ("contact_mic+accel_bone", [0, 1])):
        xs = {p: labeling.as_arrays(_channels(w, idx)) for p, w in data.items()}
        model = nn.SEResNet(nn.ArchConfig.width_scaled(len(idx)), seed=0)
        result = nn.train(model, *xs["train"], *xs["val"], config)
        r = evaluation.evaluate(result.model, *xs["test"])["overall"]
        recalls[name] = (r.breach_recall, r.non_breach_recall)
    elapsed = time.perf_counter() - t0
    single = recalls["contact_mic"]
    fused = recalls["contact_mic+accel_bone"]
    best_single = max(recalls["contact_mic"][0], recalls["accel_bone"][0])
    ok = min(single) >= 0.95 and fused[0] >= best_single and elapsed < 900
    record_criterion(8, "end-to-end learning on the 20-session corpus", ok,
                     ", ".join(f"{k} {b:.3f}/{nb:.3f}" for k, (b, nb) in recalls.items()) + f"; {elapsed:.0f}s")
    assert single[0] >= 0.95 and single[1] >= 0.95, recalls
    assert fused[0] >= best_single, recalls
    assert elapsed < 900


def test_09_latency():
    t0 = time.perf_counter()
    model = nn.SEResNet(nn.ArchConfig.full(1), seed=0)
    report = cli.bench_latency(model, dsp.MelParams(), n_iters=40)
    p95 = report["total"]["p95_ms"]
    elapsed = time.perf_counter() - t0
    ok = p95 < 140.0 and elapsed < 60
    record_criterion(9, "full SE-ResNet-18 featurize+infer latency", ok,
                     f"p95 {p95:.1f} ms (featurize {report['featurize']['p95_ms']:.1f}, "
                     f"inference {report['inference']['p95_ms']:.1f})")
    assert p95 < 140.0
    assert elapsed < 60


def test_10_statistics_consistency():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst_ft = worst_pf = worst_pt = 0.0
    for _ in range(100):
        n_a, n_b = rng.integers(2, 12, 2)
        a = rng.normal(rng.uniform(-2, 2), rng.uniform(0.2, 3), n_a)
        b = rng.normal(rng.uniform(-2, 2), rng.uniform(0.2, 3), n_b)
        f, pf = evaluation.one_way_anova([a, b])
        t, pt = evaluation.pairwise_t_test(a, b)
        df = n_a + n_b - 2
        worst_ft = max(worst_ft, abs(f - t * t))
        worst_pf = max(worst_pf, abs(pf - f_sf_quad(f, 1, df)))
        worst_pt = max(worst_pt, abs(pt - t_two_sided_quad(t, df)))
    elapsed = time.perf_counter() - t0
    ok = worst_ft <= 1e-9 and worst_pf <= 1e-6 and worst_pt <= 1e-6 and elapsed < 60
    record_criterion(10, "ANOVA F = t^2 and quadrature p-values, 100 fixtures", ok,
                     f"|F - t^2| {worst_ft:.1e}, F p {worst_pf:.1e}, t p {worst_pt:.1e}")
    assert worst_ft <= 1e-9
    assert worst_pf <= 1e-6 and worst_pt <= 1e-6
    assert elapsed < 60
