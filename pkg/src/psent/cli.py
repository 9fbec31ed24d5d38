"""Command-line pipeline: simulate, label, featurize, train, evaluate, infer, bench-latency.

Settings resolve in order of increasing precedence: built-in defaults, an
INI-style ``--config`` file, ``PSENT_<KEY>`` environment variables and
command-line flags. Every command writes under ``--out`` and records itself
in ``OUT/manifest.json``; failures exit nonzero after writing
``OUT/error.json``.
"""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import os
import sys
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__, dsp, evaluation, geometry, labeling, nn, simulate
from .signalio import load_recording

log = logging.getLogger("psent")

ENV_PREFIX = "PSENT_"
MANIFEST = "manifest.json"
ERROR_RECORD = "error.json"


class CLIError(RuntimeError):
    pass


@dataclass
class RunConfig:
    sensors: str = "contact_mic"  # sets separated by ",", fused sensors joined by "+"
    reference: str = ""
    window_ms: float = 100.0
    step_ms: float = 25.0
    n_mels: int = 128
    hop: int = 32
    f_max_hz: float = 2000.0
    augment: bool = True
    model: str = "width_scaled"
    checkpoint: str = ""
    reinit: str = ""
    epochs: int = 8
    lr: float = 1e-3
    batch_size: int = 32
    gamma: float = 2.0
    test_fraction: float = 0.10
    n_folds: int = 5
    n_runs: int = 5
    n_sessions: int = 20
    n_subjects: int = 4
    breach_ms: float = 200.0
    label_mode: str = "vertex"
    bmd_threshold_hu: float = 160.0
    sessions: str = ""
    bench_iters: int = 30
    bench_channels: int = 1
    seed: int = 0
    jobs: int = 1
    out: str = "psent_out"

    def __post_init__(self):
        if self.model not in ("width_scaled", "full"):
            raise CLIError(f"model must be width_scaled or full, got {self.model!r}")
        if not self.sensor_sets():
            raise CLIError("sensor set is empty")
        if self.jobs < 1:
            raise CLIError("--jobs must be at least 1")

    # derived settings
    def sensor_sets(self) -> list[tuple[str, ...]]:
        return [tuple(s for s in group.split("+") if s) for group in self.sensors.split(",") if group.strip()]

    @property
    def window(self) -> dsp.WindowSpec:
        return dsp.WindowSpec(self.window_ms, self.step_ms)

    @property
    def mel(self) -> dsp.MelParams:
        return dsp.MelParams(n_mels=self.n_mels, hop_samples=self.hop, f_max_hz=self.f_max_hz)

    @property
    def cv(self) -> evaluation.CVPlan:
        return evaluation.CVPlan(self.test_fraction, self.n_folds, self.n_runs, self.seed)

    @property
    def out_dir(self) -> Path:
        return Path(self.out)

    @property
    def sessions_dir(self) -> Path:
        return Path(self.sessions) if self.sessions else self.out_dir / "sessions"

    def arch(self, in_channels: int) -> nn.ArchConfig:
        if self.model == "full":
            return nn.ArchConfig.full(in_channels)
        return nn.ArchConfig.width_scaled(in_channels)

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def _coerce(name: str, raw):
    kind = {f.name: f.type for f in fields(RunConfig)}[name]
    if not isinstance(raw, str):
        return raw
    if kind == "bool":
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise CLIError(f"{name}: expected a boolean, got {raw!r}")
    try:
        return {"int": int, "float": float}.get(kind, str)(raw)
    except ValueError:
        raise CLIError(f"{name}: cannot parse {raw!r} as {kind}") from None


def resolve_config(config_path=None, env=None, overrides=None) -> RunConfig:
    """Merge defaults, config file, ``PSENT_*`` environment and explicit overrides."""
    names = {f.name for f in fields(RunConfig)}
    values = {}
    if config_path:
        path = Path(config_path)
        if not path.exists():
            raise CLIError(f"config file not found: {path}")
        parser = configparser.ConfigParser()
        parser.read(path)
        for section in parser.sections():
            for key, raw in parser.items(section):
                if key not in names:
                    raise CLIError(f"unknown config key {key!r} in section [{section}]")
                values[key] = raw
    env = os.environ if env is None else env
    for key in names:
        if ENV_PREFIX + key.upper() in env:
            values[key] = env[ENV_PREFIX + key.upper()]
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return RunConfig(**{k: _coerce(k, v) for k, v in values.items()})


# ---------------------------------------------------------------- manifest

def _update_manifest(out: Path, command: str, cfg: RunConfig, outputs) -> dict:
    missing = [p for p in outputs if not (out / p).exists()]
    if missing:
        raise CLIError(f"outputs not written: {missing[:5]}")
    path = out / MANIFEST
    manifest = json.loads(path.read_text()) if path.exists() else {"version": __version__, "commands": {}}
    manifest["commands"][command] = {"status": "ok", "config": cfg.as_dict(), "outputs": sorted(map(str, outputs))}
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    err = out / ERROR_RECORD
    if err.exists():
        err.unlink()
    return manifest


def _set_name(sensor_set) -> str:
    return "+".join(sensor_set)


def _session_names(root: Path) -> list[str]:
    if not root.is_dir():
        raise CLIError(f"sessions directory not found: {root}")
    return sorted(p.name for p in root.iterdir() if p.is_dir())


def _map(fn, items, jobs):
    if jobs <= 1 or len(items) <= 1:
        return [fn(i) for i in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------- simulate

def _simulate_one(args):
    session, root = args
    simulate.write_session(session, root / session.name)
    return session.name


def cmd_simulate(cfg: RunConfig) -> list[str]:
    out = cfg.out_dir
    root = out / "sessions"
    try:
        root.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CLIError(f"cannot write to {root}: {exc}") from None
    sessions = (simulate.default_corpus(cfg.n_sessions, cfg.seed, n_subjects=cfg.n_subjects)
                if cfg.n_sessions else [])
    names = _map(_simulate_one, [(s, root) for s in sessions], cfg.jobs)
    outputs = [Path("sessions") / n / f for n in names
               for f in ("channels.jsonl", "trajectory.csv", "mesh.ply", "t_ct_cam.json", "ground_truth.json")]
    (root / "index.json").write_text(json.dumps(
        {s.name: {**s.scenario.meta, "mean_hu": s.mean_hu} for s in sessions}, indent=2, sort_keys=True) + "\n")
    _update_manifest(out, "simulate", cfg, outputs + [Path("sessions") / "index.json"])
    return names


# ---------------------------------------------------------------- label

def _require(directory: Path, name: str) -> Path:
    path = directory / name
    if not path.exists():
        raise CLIError(f"session {directory.name}: missing {name}")
    return path


def label_session(session_dir: Path, cfg: RunConfig) -> dict:
    traj = geometry.load_trajectory(_require(session_dir, "trajectory.csv"))
    mesh = geometry.load_ply(_require(session_dir, "mesh.ply"))
    t_ct_cam = geometry.load_transform(_require(session_dir, "t_ct_cam.json"))
    pin = json.loads(_require(session_dir, "pin.json").read_text())
    recording = load_recording(_require(session_dir, "channels.jsonl"), resample_to=simulate.CANONICAL_RATE_HZ)
    al = labeling.autolabel(traj, mesh, t_ct_cam, pin["point"], pin["direction"], cfg.label_mode)
    interval = al.interval(cfg.breach_ms)
    starts = [s for s, _ in dsp.slice_windows(recording.channels[0], cfg.window)]
    labels = labeling.label_windows(starts, interval, window_ms=cfg.window_ms)
    return {"breach_time_ms": al.breach.time_ms, "breach_index": al.breach.index,
            "entry_index": al.entry_index, "exit_index": al.exit_index,
            "interval_ms": [interval.start_ms, interval.end_ms],
            "windows": [{"start_ms": round(float(s), 6), "label": labeling.Label(int(l)).text}
                        for s, l in zip(starts, labels)],
            "t_ms": traj.timestamps_ms,
            "curves": geometry.distance_curves(traj, mesh, t_ct_cam, t_ct_cam.apply(al.entry_ct))}


def _label_one(args):
    name, cfg = args
    src = cfg.sessions_dir / name
    dst = cfg.out_dir / "labels" / name
    dst.mkdir(parents=True, exist_ok=True)
    res = label_session(src, cfg)
    with open(dst / "labels.jsonl", "w") as fh:
        for w in res["windows"]:
            fh.write(json.dumps(w, sort_keys=True) + "\n")
    d_entry, d_mesh = res["curves"]
    with open(dst / "distance.csv", "w") as fh:
        fh.write("t_ms,dist_to_entry_mm,dist_to_mesh_mm\n")
        for row in zip(res["t_ms"], d_entry, d_mesh):
            fh.write(",".join(f"{v:.6f}" for v in row) + "\n")
    summary = {k: res[k] for k in ("breach_time_ms", "breach_index", "entry_index", "exit_index", "interval_ms")}
    (dst / "breach.json").write_text(json.dumps(summary, sort_keys=True) + "\n")
    return name


def cmd_label(cfg: RunConfig) -> list[str]:
    names = _session_names(cfg.sessions_dir)
    done = _map(_label_one, [(n, cfg) for n in names], cfg.jobs)
    outputs = [Path("labels") / n / f for n in done for f in ("labels.jsonl", "distance.csv", "breach.json")]
    _update_manifest(cfg.out_dir, "label", cfg, outputs)
    return done


# ---------------------------------------------------------------- featurize

def _read_labels(out: Path, name: str):
    path = out / "labels" / name / "labels.jsonl"
    if not path.exists():
        raise CLIError(f"session {name}: no labels; run `psent label` first")
    recs = labeling.read_manifest(path)
    return {r["start_ms"]: int(labeling.Label.parse(r["label"])) for r in recs}


def _session_mean_hu(session_dir: Path):
    path = session_dir / "hu.npz"
    if not path.exists():
        return None
    vol, spacing = evaluation.load_hu_volume(path)
    a, b = evaluation.ellipse_semi_axes()
    center = ((vol.shape[1] - 1) * spacing[1] / 2, (vol.shape[2] - 1) * spacing[2] / 2)
    return evaluation.bmd_mean_hu(vol, spacing, center, (a, b), (0, vol.shape[0]))


def _featurize_one(args):
    name, sensor_set, cfg = args
    table = _read_labels(cfg.out_dir, name)
    recording = load_recording(cfg.sessions_dir / name / "channels.jsonl", resample_to=simulate.CANONICAL_RATE_HZ)

    def labels_for(starts):
        try:
            return [table[round(float(s), 6)] for s in starts]
        except KeyError as exc:
            raise CLIError(f"session {name}: no label for window at {exc.args[0]} ms") from None

    raw = labeling.session_windows(recording, sensor_set, labels_for, cfg.window, session=name)
    if cfg.augment:
        raw = labeling.augment_breach_class(raw, recording.channels[0].sample_rate_hz)
    windows = labeling.featurize(raw, cfg.mel)
    rel = Path("features") / _set_name(sensor_set) / f"{name}.mspc"
    offsets = dsp.write_spectra(cfg.out_dir / rel, [w.spectra for w in windows])
    hu = _session_mean_hu(cfg.sessions_dir / name)
    records = []
    for w, off in zip(windows, offsets):
        rec = labeling.manifest_record(w, rel.name, off)
        if hu is not None:
            rec["stratum"] = evaluation.BmdStratum.classify(hu, cfg.bmd_threshold_hu).value
        records.append(rec)
    return records


def cmd_featurize(cfg: RunConfig) -> list[str]:
    names = _session_names(cfg.sessions_dir)
    outputs = []
    for sensor_set in cfg.sensor_sets():
        set_dir = cfg.out_dir / "features" / _set_name(sensor_set)
        set_dir.mkdir(parents=True, exist_ok=True)
        per_session = _map(_featurize_one, [(n, sensor_set, cfg) for n in names], cfg.jobs)
        labeling.write_manifest([r for recs in per_session for r in recs], set_dir / "windows.jsonl")
        outputs.append(set_dir.relative_to(cfg.out_dir) / "windows.jsonl")
        outputs.extend(set_dir.relative_to(cfg.out_dir) / f"{n}.mspc" for n in names)
    _update_manifest(cfg.out_dir, "featurize", cfg, outputs)
    return [_set_name(s) for s in cfg.sensor_sets()]


# ---------------------------------------------------------------- train / evaluate

def load_dataset(cfg: RunConfig, sensor_set):
    set_dir = cfg.out_dir / "features" / _set_name(sensor_set)
    path = set_dir / "windows.jsonl"
    if not path.exists():
        raise CLIError(f"no featurized dataset for {_set_name(sensor_set)}; run `psent featurize` first")
    records = labeling.read_manifest(path)
    windows = labeling.load_labeled(records, set_dir)
    for w, rec in zip(windows, records):
        w.meta["stratum"] = rec.get("stratum")
    return windows


def _pick(windows, sessions, augmented):
    sessions = set(sessions)
    return [w for w in windows if w.meta["session"] in sessions and (augmented or not w.meta["augmented"])]


def _train_fold(args):
    cfg, sensor_set, fold, train_s, val_s = args
    windows = load_dataset(cfg, sensor_set)
    xt, yt = labeling.as_arrays(_pick(windows, train_s, cfg.augment))
    xv, yv = labeling.as_arrays(_pick(windows, val_s, False))
    if len(xt) == 0 or len(xv) == 0:
        raise CLIError(f"fold {fold}: empty train or validation split")
    seed = cfg.seed * 1000 + fold
    if cfg.checkpoint:
        reinit = tuple(s for s in cfg.reinit.split(",") if s)
        model = nn.init_from_checkpoint(cfg.checkpoint, cfg.arch(xt.shape[1]), reinit, seed)
    else:
        model = nn.SEResNet(cfg.arch(xt.shape[1]), seed=seed)
    tc = nn.TrainConfig(epochs=cfg.epochs, batch_size=cfg.batch_size, lr=cfg.lr, gamma=cfg.gamma, seed=seed)
    result = nn.train(model, xt, yt, xv, yv, tc)
    run_dir = cfg.out_dir / "runs" / _set_name(sensor_set)
    run_dir.mkdir(parents=True, exist_ok=True)
    nn.save_checkpoint(result.model, run_dir / f"fold{fold}.ckpt",
                       {"fold": fold, "best_epoch": result.best_epoch, "sensors": list(sensor_set)})
    (run_dir / f"fold{fold}_history.json").write_text(json.dumps(result.history, indent=1) + "\n")
    return fold


def _folds(cfg: RunConfig, sessions):
    split = evaluation.split_cv(sessions, cfg.cv)
    return split, [(k, tr, va) for k, (tr, va) in enumerate(split.folds)][:cfg.n_runs]


def cmd_train(cfg: RunConfig) -> list[str]:
    sessions = _session_names(cfg.sessions_dir)
    if cfg.checkpoint and not Path(cfg.checkpoint).exists():
        raise CLIError(f"checkpoint not found: {cfg.checkpoint}")
    _, folds = _folds(cfg, sessions)
    outputs = []
    for sensor_set in cfg.sensor_sets():
        load_dataset(cfg, sensor_set)  # fail fast before spawning workers
        _map(_train_fold, [(cfg, sensor_set, k, tr, va) for k, tr, va in folds], cfg.jobs)
        base = Path("runs") / _set_name(sensor_set)
        outputs += [base / f"fold{k}.ckpt" for k, _, _ in folds]
    _update_manifest(cfg.out_dir, "train", cfg, outputs)
    return [str(p) for p in outputs]


def evaluate_set(cfg: RunConfig, sensor_set, test_sessions, fold_ids):
    windows = _pick(load_dataset(cfg, sensor_set), test_sessions, False)
    x, y = labeling.as_arrays(windows)
    strata = [w.meta.get("stratum") for w in windows]
    runs = {"overall": []}
    for k in fold_ids:
        path = cfg.out_dir / "runs" / _set_name(sensor_set) / f"fold{k}.ckpt"
        if not path.exists():
            raise CLIError(f"missing checkpoint {path}; run `psent train` first")
        model = nn.load_checkpoint(path)
        res = evaluation.evaluate(model, x, y, strata if all(strata) else None, run_index=k)
        for name, r in res.items():
            runs.setdefault(name, []).append(r)
    return runs


def cmd_evaluate(cfg: RunConfig) -> list:
    sessions = _session_names(cfg.sessions_dir)
    split, folds = _folds(cfg, sessions)
    fold_ids = [k for k, _, _ in folds]
    sets = cfg.sensor_sets()
    ref_set = tuple(cfg.reference.split("+")) if cfg.reference else None
    if ref_set and ref_set not in sets:
        sets = sets + [ref_set]
    all_runs = {s: evaluate_set(cfg, s, split.test, fold_ids) for s in sets}
    eval_dir = cfg.out_dir / "eval"
    eval_dir.mkdir(parents=True, exist_ok=True)
    runs_path = eval_dir / "runs.jsonl"
    runs_path.write_text("")
    rows = []
    for s in sets:
        ref = all_runs[ref_set]["overall"] if ref_set else None
        rows.append(evaluation.summarize(_set_name(s), all_runs[s]["overall"], ref))
        for stratum, runs in all_runs[s].items():
            evaluation.write_runs_jsonl(runs, runs_path, sensors=_set_name(s), subset=stratum)
    evaluation.write_summary_csv(rows, eval_dir / "summary.csv")
    _update_manifest(cfg.out_dir, "evaluate", cfg, [Path("eval") / "summary.csv", Path("eval") / "runs.jsonl"])
    return rows


# ---------------------------------------------------------------- infer / bench

def cmd_infer(cfg: RunConfig) -> list[str]:
    if not cfg.checkpoint:
        raise CLIError("infer needs --checkpoint")
    model = nn.load_checkpoint(cfg.checkpoint)
    sensor_set = cfg.sensor_sets()[0]
    if len(sensor_set) != model.config.in_channels:
        raise CLIError(f"checkpoint expects {model.config.in_channels} channels, got sensors {sensor_set}")
    infer_dir = cfg.out_dir / "infer"
    infer_dir.mkdir(parents=True, exist_ok=True)
    outputs = []
    for name in _session_names(cfg.sessions_dir):
        recording = load_recording(cfg.sessions_dir / name / "channels.jsonl", resample_to=simulate.CANONICAL_RATE_HZ)
        windows = labeling.featurize(labeling.session_windows(recording, sensor_set, spec=cfg.window, session=name),
                                     cfg.mel)
        x, _ = labeling.as_arrays(windows)
        proba = np.concatenate([model.predict_proba(x[i:i + 64]) for i in range(0, len(x), 64)]) if len(x) else []
        with open(infer_dir / f"{name}.jsonl", "w") as fh:
            for w, p in zip(windows, proba):
                fh.write(json.dumps({"start_ms": w.meta["start_ms"], "p_breach": float(p[1]),
                                     "label": labeling.Label(int(p[1] > 0.5)).text}) + "\n")
        outputs.append(Path("infer") / f"{name}.jsonl")
    _update_manifest(cfg.out_dir, "infer", cfg, outputs)
    return [str(p) for p in outputs]


def bench_latency(model: nn.SEResNet, params: dsp.MelParams, n_iters: int = 30, seed: int = 0,
                  window: dsp.WindowSpec = dsp.WindowSpec()) -> dict:
    """Per-window featurize and inference wall times in milliseconds."""
    rng = np.random.default_rng(seed)
    n = window.n_samples(params.sample_rate_hz)
    channels = model.config.in_channels
    model.predict_proba(dsp.mel_db(rng.standard_normal((channels, n)), params)[None].astype(np.float32))
    feat, infer = [], []
    for _ in range(n_iters):
        samples = rng.standard_normal((channels, n))
        t0 = time.perf_counter()
        spec = dsp.mel_db(samples, params)[None].astype(np.float32)
        t1 = time.perf_counter()
        model.predict_proba(spec)
        t2 = time.perf_counter()
        feat.append(1e3 * (t1 - t0))
        infer.append(1e3 * (t2 - t1))
    feat, infer = np.array(feat), np.array(infer)
    total = feat + infer

    def stats(a):
        return {"p50_ms": float(np.percentile(a, 50)), "p95_ms": float(np.percentile(a, 95))}
    return {"featurize": stats(feat), "inference": stats(infer), "total": stats(total),
            "n_iters": n_iters, "channels": channels}


def cmd_bench_latency(cfg: RunConfig) -> dict:
    if cfg.checkpoint:
        model = nn.load_checkpoint(cfg.checkpoint)
    else:
        model = nn.SEResNet(cfg.arch(cfg.bench_channels), seed=cfg.seed)
    report = {"model": cfg.model if not cfg.checkpoint else cfg.checkpoint,
              **bench_latency(model, cfg.mel, cfg.bench_iters, cfg.seed, cfg.window)}
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    (cfg.out_dir / "latency.json").write_text(json.dumps(report, indent=2) + "\n")
    _update_manifest(cfg.out_dir, "bench-latency", cfg, [Path("latency.json")])
    return report


COMMANDS = {
    "simulate": cmd_simulate,
    "label": cmd_label,
    "featurize": cmd_featurize,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "infer": cmd_infer,
    "bench-latency": cmd_bench_latency,
}


# ---------------------------------------------------------------- argument parsing

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI-style settings file")
    common.add_argument("--out", help="output directory (default psent_out)")
    common.add_argument("--seed", type=int)
    common.add_argument("--jobs", type=int, help="worker processes")
    common.add_argument("--sessions", help="session directory tree (default OUT/sessions)")
    common.add_argument("--sensors", help="sensor sets, e.g. contact_mic,accel_bone,contact_mic+accel_bone")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="psent", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="write synthetic sessions")
    p.add_argument("--n-sessions", dest="n_sessions", type=int)
    p.add_argument("--n-subjects", dest="n_subjects", type=int)

    p = sub.add_parser("label", parents=[common], help="automatic breach labels from tracking")
    p.add_argument("--breach-ms", dest="breach_ms", type=float)
    p.add_argument("--label-mode", dest="label_mode", choices=["vertex", "surface"])

    p = sub.add_parser("featurize", parents=[common], help="mel spectrogram datasets per sensor set")
    p.add_argument("--no-augment", dest="augment", action="store_const", const=False)

    for name, help_ in (("train", "per-fold training"), ("evaluate", "test-set recall tables")):
        p = sub.add_parser(name, parents=[common], help=help_)
        p.add_argument("--model", choices=["width_scaled", "full"])
        p.add_argument("--epochs", type=int)
        p.add_argument("--lr", type=float)
        p.add_argument("--batch-size", dest="batch_size", type=int)
        p.add_argument("--n-runs", dest="n_runs", type=int)
        p.add_argument("--checkpoint", help="initialise from this checkpoint")
        p.add_argument("--reinit", help="comma-separated parameter prefixes to re-initialise")
        p.add_argument("--reference", help="sensor set used as the p-value reference")
        p.add_argument("--no-augment", dest="augment", action="store_const", const=False)

    p = sub.add_parser("infer", parents=[common], help="per-window breach probabilities")
    p.add_argument("--checkpoint", required=True)

    p = sub.add_parser("bench-latency", parents=[common], help="single-window latency report")
    p.add_argument("--model", choices=["width_scaled", "full"])
    p.add_argument("--checkpoint")
    p.add_argument("--iters", dest="bench_iters", type=int)
    p.add_argument("--channels", dest="bench_channels", type=int)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    overrides = {k: v for k, v in vars(args).items() if k not in ("command", "config", "verbose")}
    out = Path(overrides.get("out") or os.environ.get(ENV_PREFIX + "OUT") or RunConfig.out)
    try:
        cfg = resolve_config(args.config, overrides=overrides)
        out = cfg.out_dir
        result = COMMANDS[args.command](cfg)
    except Exception as exc:  # every failure becomes an error record
        record = {"status": "error", "command": args.command, "type": type(exc).__name__, "message": str(exc)}
        log.debug("%s", traceback.format_exc())
        try:
            out.mkdir(parents=True, exist_ok=True)
            (out / ERROR_RECORD).write_text(json.dumps(record, indent=2) + "\n")
        except OSError:
            pass
        print(json.dumps(record), file=sys.stderr)
        return 1
    if args.command == "bench-latency":
        print(json.dumps(result, indent=2))
    elif args.command == "evaluate":
        for row in result:
            print(json.dumps(row.formatted(), ensure_ascii=False))
    else:
        print(json.dumps({"status": "ok", "command": args.command, "count": len(result)}))
    return 0


if __name__ == "__main__":
    sys.exit(main())
