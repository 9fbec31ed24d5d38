"""
Training sensor configurations and comparing them
=================================================

Train the width-scaled SE-ResNet on a small synthetic corpus for one sensor
and for a fused pair, then report recall the way the result tables do:
mean ± std with a 95% interval over cross-validation runs, plus a pooled
t-test against a reference configuration.

Takes a few minutes on one CPU core.
"""

import numpy as np

from psent import cli, dsp, evaluation, labeling, nn, simulate
from psent.evaluation import CVPlan

N_SESSIONS, N_RUNS, EPOCHS = 10, 3, 2
sensors = ("contact_mic", "accel_bone")

corpus = simulate.default_corpus(N_SESSIONS, seed=3, kinds=sensors)
split = evaluation.split_cv([s.name for s in corpus], CVPlan(n_folds=3, n_runs=N_RUNS, seed=3))
print("test sessions:", split.test)

# labels come from the tracking pipeline, not from the simulator
windows = []
for s in corpus:
    sc = s.scenario
    auto = labeling.autolabel(s.trajectory, s.mesh, sc.t_ct_cam, s.pin_point_ct, s.pin_dir_ct)
    interval = auto.interval()
    windows += labeling.session_windows(s.recording, sensors,
                                        lambda st: labeling.label_windows(st, interval), session=s.name)
test = labeling.featurize([w for w in windows if w.meta["session"] in split.test])


def pick(ws, idx):
    return labeling.as_arrays([labeling.LabeledWindow(w.spectra[idx], w.label, w.meta) for w in ws])


runs = {"contact_mic": [], "contact_mic+accel_bone": []}
channel_sets = {"contact_mic": [0], "contact_mic+accel_bone": [0, 1]}
for k, (train_s, val_s) in enumerate(split.folds[:N_RUNS]):
    parts = labeling.split_windows(windows, train_s, val_s, split.test)
    train, val = labeling.featurize(parts.train), labeling.featurize(parts.val)
    print("fold %d:" % k, parts.counts()["train"])
    for name, idx in channel_sets.items():
        model = nn.SEResNet(nn.ArchConfig.width_scaled(len(idx)), seed=k)
        result = nn.train(model, *pick(train, idx), *pick(val, idx),
                          nn.TrainConfig(epochs=EPOCHS, lr=1e-3, seed=k))
        res = evaluation.evaluate(result.model, *pick(test, idx), run_index=k)["overall"]
        runs[name].append(res)
        print("  %-24s breach %.3f  non-breach %.3f" % (name, res.breach_recall, res.non_breach_recall))

# a results table in the usual format, p-values against the fused pair
reference = runs["contact_mic+accel_bone"]
for name, rs in runs.items():
    row = evaluation.summarize(name, rs, reference).formatted()
    print("%-24s %-26s %-12s %s" % (row["sensors"], row["breach_recall"], row["non_breach_recall"], row["p_value"]))

# the same statistics reproduce published rows from their summary numbers
low, high = evaluation.ci_from_stats(85.8, 3.19, 5)
print("85.8±3.19 over 5 runs -> 95%% CI (%.1f-%.1f)" % (low, high))
print("98.0±2.74 vs 79.8±8.65 -> p = %.3f" % evaluation.t_test_from_stats(98.0, 2.74, 5, 79.8, 8.65, 5)[1])

# single-window latency of the trained fused model
report = cli.bench_latency(result.model, dsp.MelParams(), n_iters=20)
print("latency p95: featurize %.1f ms, inference %.1f ms" % (
    report["featurize"]["p95_ms"], report["inference"]["p95_ms"]))
