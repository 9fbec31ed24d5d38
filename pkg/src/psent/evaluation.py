"""Cross-validation splits, recall metrics and the significance tests used to
compare sensor configurations."""

from __future__ import annotations

import csv
import enum
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import special

Z_95 = 1.96


class EvaluationError(ValueError):
    pass


# ---------------------------------------------------------------- splits

@dataclass(frozen=True)
class CVPlan:
    test_fraction: float = 0.10
    n_folds: int = 5
    n_runs: int = 5
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.test_fraction < 1:
            raise EvaluationError("test_fraction must lie in (0, 1)")
        if self.n_folds < 2 or self.n_runs < 1:
            raise EvaluationError("need n_folds >= 2 and n_runs >= 1")


@dataclass
class CVSplit:
    test: list
    folds: list  # (train sessions, validation sessions) per fold

    def all_sessions(self):
        return list(self.test) + [s for _, val in self.folds for s in val]


def split_cv(sessions, plan: CVPlan = CVPlan()) -> CVSplit:
    """Session-level nested split: a held-out test set plus k train/val folds."""
    sessions = list(sessions)
    if len(set(sessions)) != len(sessions):
        raise EvaluationError("session identifiers must be unique")
    if len(sessions) < plan.n_folds + 1:
        raise EvaluationError(f"need at least {plan.n_folds + 1} sessions, got {len(sessions)}")
    rng = np.random.default_rng(plan.seed)
    order = [sessions[i] for i in rng.permutation(len(sessions))]
    n_test = min(max(1, int(round(plan.test_fraction * len(sessions)))), len(sessions) - plan.n_folds)
    test, rest = order[:n_test], order[n_test:]
    chunks = [list(c) for c in np.array_split(np.array(rest, dtype=object), plan.n_folds)]
    folds = []
    for k, val in enumerate(chunks):
        train = [s for j, c in enumerate(chunks) if j != k for s in c]
        folds.append((train, val))
    return CVSplit(test, folds)


# ---------------------------------------------------------------- summary stats

def mean_std_ci(values, z: float = Z_95):
    """Mean, sample std (n - 1) and the normal-approximation 95% interval."""
    x = np.asarray(values, dtype=np.float64)
    if x.size < 2:
        raise EvaluationError("need at least two values")
    mean = float(x.mean())
    std = float(x.std(ddof=1))
    half = z * std / math.sqrt(x.size)
    return mean, std, mean - half, mean + half


def ci_from_stats(mean: float, std: float, n: int, z: float = Z_95):
    half = z * std / math.sqrt(n)
    return mean - half, mean + half


def f_sf(f: float, d1: float, d2: float) -> float:
    """Upper tail of the F distribution via the regularised incomplete beta."""
    if f <= 0:
        return 1.0
    x = d1 * f / (d1 * f + d2)
    if x < 0.5:
        # complementary form keeps precision when the tail is close to 1
        return float(1.0 - special.betainc(d1 / 2.0, d2 / 2.0, x))
    return float(special.betainc(d2 / 2.0, d1 / 2.0, d2 / (d2 + d1 * f)))


def t_two_sided_p(t: float, df: float) -> float:
    """Two-sided p-value of Student's t; equals ``f_sf(t**2, 1, df)``."""
    return f_sf(t * t, 1.0, df) if t != 0 else 1.0


def one_way_anova(groups):
    """One-way ANOVA F statistic and p-value."""
    groups = [np.asarray(g, dtype=np.float64) for g in groups]
    if len(groups) < 2 or any(g.size < 2 for g in groups):
        raise EvaluationError("need at least two groups of at least two values")
    n = sum(g.size for g in groups)
    k = len(groups)
    grand = np.concatenate(groups).mean()
    ss_between = sum(g.size * (g.mean() - grand) ** 2 for g in groups)
    ss_within = sum(((g - g.mean()) ** 2).sum() for g in groups)
    if ss_within == 0:
        raise EvaluationError("zero within-group variance; p-value undefined")
    d1, d2 = k - 1, n - k
    f = (ss_between / d1) / (ss_within / d2)
    return float(f), f_sf(f, d1, d2)


def t_test_from_stats(mean_a, std_a, n_a, mean_b, std_b, n_b, equal_var: bool = True):
    """Two-sided two-sample t-test from summary statistics."""
    va, vb = std_a**2, std_b**2
    if equal_var:
        df = n_a + n_b - 2
        pooled = ((n_a - 1) * va + (n_b - 1) * vb) / df
        if pooled == 0:
            raise EvaluationError("zero pooled variance")
        se = math.sqrt(pooled * (1.0 / n_a + 1.0 / n_b))
    else:
        se2 = va / n_a + vb / n_b
        if se2 == 0:
            raise EvaluationError("zero variance in both samples")
        se = math.sqrt(se2)
        df = se2**2 / ((va / n_a) ** 2 / (n_a - 1) + (vb / n_b) ** 2 / (n_b - 1))
    t = (mean_a - mean_b) / se
    return float(t), t_two_sided_p(t, df)


def pairwise_t_test(a, b, equal_var: bool = True):
    """Two-sided Student t-test (pooled variance); Welch with ``equal_var=False``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size < 2 or b.size < 2:
        raise EvaluationError("each sample needs at least two values")
    return t_test_from_stats(a.mean(), a.std(ddof=1), a.size,
                             b.mean(), b.std(ddof=1), b.size, equal_var)


# ---------------------------------------------------------------- recall

def confusion(y_true, y_pred) -> np.ndarray:
    """2 x 2 counts indexed [true class, predicted class] (1 = breach)."""
    y_true = np.asarray(y_true, dtype=int)
    y_pred = np.asarray(y_pred, dtype=int)
    m = np.zeros((2, 2), dtype=int)
    np.add.at(m, (y_true, y_pred), 1)
    return m


def class_recalls(y_true, y_pred):
    """(breach recall, non-breach recall); NaN where a class has no samples."""
    m = confusion(y_true, y_pred)
    pos, neg = m[1].sum(), m[0].sum()
    breach = m[1, 1] / pos if pos else float("nan")
    non_breach = m[0, 0] / neg if neg else float("nan")
    return float(breach), float(non_breach)


@dataclass
class RunResult:
    breach_recall: float
    non_breach_recall: float
    confusion: list
    run_index: int = 0
    stratum: str | None = None

    @property
    def breach_recall_defined(self) -> bool:
        return not math.isnan(self.breach_recall)

    @classmethod
    def from_counts(cls, tp, fn, tn, fp, run_index=0, stratum=None) -> "RunResult":
        m = [[tn, fp], [fn, tp]]
        pos, neg = tp + fn, tn + fp
        return cls(tp / pos if pos else float("nan"), tn / neg if neg else float("nan"),
                   m, run_index, stratum)

    @classmethod
    def from_predictions(cls, y_true, y_pred, run_index=0, stratum=None) -> "RunResult":
        m = confusion(y_true, y_pred)
        b, nb = class_recalls(y_true, y_pred)
        return cls(b, nb, m.tolist(), run_index, stratum)


# ---------------------------------------------------------------- bone density

class BmdStratum(str, enum.Enum):
    NORMAL = "normal"
    ABNORMAL = "abnormal"

    @classmethod
    def classify(cls, mean_hu: float, threshold_hu: float = 160.0) -> "BmdStratum":
        return cls.NORMAL if mean_hu >= threshold_hu else cls.ABNORMAL


def ellipse_semi_axes(area_mm2: float = 450.0, aspect: float = 1.5):
    """Semi-axes (a, b) with a / b = aspect and pi a b = area."""
    b = math.sqrt(area_mm2 / (math.pi * aspect))
    return aspect * b, b


def ellipse_mask(shape_yx, spacing_yx, center_yx, semi_axes_xy):
    ny, nx = shape_yx
    dy, dx = spacing_yx
    a, b = semi_axes_xy
    yy = (np.arange(ny) * dy - center_yx[0])[:, None]
    xx = (np.arange(nx) * dx - center_yx[1])[None, :]
    return (xx / a) ** 2 + (yy / b) ** 2 <= 1.0


def bmd_mean_hu(volume, spacing_zyx, center_yx, semi_axes_xy, slice_range) -> float:
    """Mean HU inside an axial ellipse, averaged per slice then over slices.

    ``volume`` is indexed ``[z, y, x]`` with voxel centres at ``index * spacing``;
    ``slice_range`` is a half-open ``(first, stop)`` pair of axial indices.
    """
    vol = np.asarray(volume, dtype=np.float64)
    z0, z1 = slice_range
    if not 0 <= z0 < z1 <= vol.shape[0]:
        raise EvaluationError("empty or out-of-bounds slice range")
    _, dy, dx = spacing_zyx
    a, b = semi_axes_xy
    cy, cx = center_yx
    if cx - a < 0 or cy - b < 0 or cx + a > (vol.shape[2] - 1) * dx or cy + b > (vol.shape[1] - 1) * dy:
        raise EvaluationError("ellipse does not fit inside the slice")
    mask = ellipse_mask(vol.shape[1:], (dy, dx), center_yx, semi_axes_xy)
    if not mask.any():
        raise EvaluationError("ellipse covers no voxel centres")
    per_slice = vol[z0:z1][:, mask].mean(axis=1)
    return float(per_slice.mean())


def save_hu_volume(path, volume, spacing_zyx) -> None:
    np.savez(path, hu=np.asarray(volume, dtype=np.float32), spacing=np.asarray(spacing_zyx, dtype=np.float64))


def load_hu_volume(path):
    with np.load(path) as data:
        return data["hu"].astype(np.float64), tuple(data["spacing"].tolist())


# ---------------------------------------------------------------- model evaluation

def evaluate(model, x, y, strata=None, run_index: int = 0):
    """Recall of a trained classifier, overall and optionally per BMD stratum.

    ``model`` is anything with ``predict(x)`` returning class indices;
    ``strata`` gives a stratum label per sample. Returns
    ``{"overall": RunResult, <stratum>: RunResult, ...}``; a stratum with no
    breach samples has ``breach_recall`` NaN.
    """
    y = np.asarray(y, dtype=int)
    if len(y) == 0:
        raise EvaluationError("empty test set")
    pred = np.asarray(model.predict(x), dtype=int)
    results = {"overall": RunResult.from_predictions(y, pred, run_index)}
    if strata is not None:
        strata = np.asarray([getattr(s, "value", s) for s in strata])
        for name in sorted(set(strata.tolist())):
            sel = strata == name
            results[name] = RunResult.from_predictions(y[sel], pred[sel], run_index, name)
    return results


@dataclass
class SummaryRow:
    sensors: str
    breach: tuple  # mean, std, ci_low, ci_high (percent)
    non_breach: tuple  # mean, std (percent)
    p_value: float | None = None
    runs: list = field(default_factory=list)

    def formatted(self) -> dict:
        m, s, lo, hi = self.breach
        return {
            "sensors": self.sensors,
            "breach_recall": f"{m:.1f}±{s:.2f} ({lo:.1f}-{min(hi, 100.0):.1f})",
            "non_breach_recall": f"{self.non_breach[0]:.1f}±{self.non_breach[1]:.2f}",
            "p_value": "" if self.p_value is None else
                       ("<.001" if self.p_value < 0.001 else f"{self.p_value:.3f}".lstrip("0")),
        }


def summarize(sensors: str, runs, reference_runs=None) -> SummaryRow:
    """Aggregate per-run results into one table row (percent units)."""
    breach = [100 * r.breach_recall for r in runs]
    non_breach = [100 * r.non_breach_recall for r in runs]
    if len(runs) >= 2:
        b = mean_std_ci(breach)
        nb = mean_std_ci(non_breach)[:2]
    else:
        b = (breach[0], 0.0, breach[0], breach[0])
        nb = (non_breach[0], 0.0)
    p = None
    if reference_runs is not None and reference_runs is not runs:
        ref = [100 * r.breach_recall for r in reference_runs]
        try:
            p = pairwise_t_test(ref, breach)[1]
        except EvaluationError:
            p = float("nan")
    return SummaryRow(sensors, b, nb, p, list(runs))


def write_summary_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, ["sensors", "breach_recall", "non_breach_recall", "p_value"])
        writer.writeheader()
        for row in rows:
            writer.writerow(row.formatted())


def write_runs_jsonl(runs, path, **extra) -> None:
    with open(path, "a") as fh:
        for r in runs:
            rec = asdict(r)
            rec.update(extra)
            fh.write(json.dumps(rec, default=float) + "\n")


def load_summary_csv(path):
    with open(Path(path), newline="") as fh:
        return list(csv.DictReader(fh))
