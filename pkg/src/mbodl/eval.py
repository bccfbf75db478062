"""Evaluation: weighted metrics, confusion matrices, daily accuracy, signal
correlation, two-sample KS and equal-weight ensembles."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.special import kolmogorov

N_CLASSES = 3


class EvalError(ValueError):
    pass


def _pair(pred, true) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=np.int64).ravel()
    true = np.asarray(true, dtype=np.int64).ravel()
    if len(pred) != len(true):
        raise EvalError(f"length mismatch: {len(pred)} predictions, {len(true)} labels")
    if len(pred) == 0:
        raise EvalError("no samples")
    if pred.min() < 0 or true.min() < 0 or max(pred.max(), true.max()) >= N_CLASSES:
        raise EvalError(f"classes must lie in 0..{N_CLASSES - 1}")
    return pred, true


def confusion_counts(pred, true) -> np.ndarray:
    """counts[i, j] = number of samples with true class i predicted as j."""
    pred, true = _pair(pred, true)
    return np.bincount(true * N_CLASSES + pred, minlength=N_CLASSES ** 2).reshape(N_CLASSES, N_CLASSES)


def metrics(pred, true) -> dict[str, float]:
    """Accuracy and support-weighted precision, recall and F1, in percent.

    A class that is never predicted contributes precision 0.
    """
    counts = confusion_counts(pred, true).astype(np.float64)
    n = counts.sum()
    tp = np.diag(counts)
    support = counts.sum(axis=1)
    predicted = counts.sum(axis=0)
    precision = np.divide(tp, predicted, out=np.zeros(N_CLASSES), where=predicted > 0)
    recall = np.divide(tp, support, out=np.zeros(N_CLASSES), where=support > 0)
    denom = precision + recall
    f1 = np.divide(2 * precision * recall, denom, out=np.zeros(N_CLASSES), where=denom > 0)
    w = support / n
    return {
        "accuracy": 100.0 * tp.sum() / n,
        "precision": 100.0 * float(w @ precision),
        "recall": 100.0 * float(w @ recall),
        "f1": 100.0 * float(w @ f1),
    }


@dataclass
class Confusion:
    matrix: np.ndarray  # row-normalised; rows without support are zero
    counts: np.ndarray
    empty_rows: list[int] = field(default_factory=list)


def confusion(pred, true) -> Confusion:
    counts = confusion_counts(pred, true)
    support = counts.sum(axis=1, keepdims=True)
    matrix = np.divide(counts, support, out=np.zeros((N_CLASSES, N_CLASSES)), where=support > 0)
    empty = [int(i) for i in np.flatnonzero(support[:, 0] == 0)]
    return Confusion(matrix, counts, empty)


# -- daily accuracy ----------------------------------------------------------------

def quartiles(values: Sequence[float]) -> dict[str, float]:
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise EvalError("no values to summarise")
    q = np.quantile(v, [0.0, 0.25, 0.5, 0.75, 1.0])
    return dict(zip(("min", "q1", "median", "q3", "max"), (float(x) for x in q)))


@dataclass
class DailyAccuracy:
    days: list[dict]
    summary: dict[str, float]


def daily_accuracy(pred, true, dates, instruments: Optional[Sequence[str]] = None,
                   expected_days: Optional[Sequence] = None) -> DailyAccuracy:
    """Accuracy (percent) per (instrument, day) plus a five-number summary."""
    pred, true = _pair(pred, true)
    dates = np.asarray(dates, dtype="datetime64[D]")
    if len(dates) != len(pred):
        raise EvalError("dates are not aligned with predictions")
    inst = np.asarray(instruments if instruments is not None else [""] * len(pred), dtype=object)
    keys = sorted(set(zip(inst.tolist(), dates.tolist())))
    correct = pred == true
    rows = []
    for name, day in keys:
        mask = (inst == name) & (dates == np.datetime64(day, "D"))
        rows.append({"instrument": name, "date": str(day), "n": int(mask.sum()),
                     "accuracy": 100.0 * float(correct[mask].mean())})
    if expected_days is not None:
        seen = {np.datetime64(d, "D") for d in dates}
        for d in expected_days:
            if np.datetime64(d, "D") not in seen:
                warnings.warn(f"day {np.datetime64(d, 'D')} has no samples; skipped", stacklevel=2)
    return DailyAccuracy(rows, quartiles([r["accuracy"] for r in rows]))


# -- signals -------------------------------------------------------------------------

@dataclass
class SignalSet:
    """Probability triplets of one model aligned on tick index."""

    name: str
    probs: np.ndarray
    tick_index: np.ndarray
    dates: Optional[np.ndarray] = None

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64)
        self.tick_index = np.asarray(self.tick_index, dtype=np.int64)
        if self.probs.ndim != 2 or self.probs.shape[1] != N_CLASSES:
            raise EvalError(f"{self.name}: probabilities must be (n, {N_CLASSES})")
        if len(self.tick_index) != len(self.probs):
            raise EvalError(f"{self.name}: tick index not aligned with probabilities")
        if np.any(self.probs < 0) or np.any(np.abs(self.probs.sum(axis=1) - 1.0) > 1e-9):
            raise EvalError(f"{self.name}: rows are not probability vectors")

    @property
    def signal(self) -> np.ndarray:
        """Directional conviction p(up) - p(down)."""
        return self.probs[:, 2] - self.probs[:, 0]

    @property
    def classes(self) -> np.ndarray:
        return self.probs.argmax(axis=1)


def _check_aligned(sets: Sequence[SignalSet]) -> None:
    if not sets:
        raise EvalError("no signal sets given")
    ref = sets[0].tick_index
    for s in sets[1:]:
        if not np.array_equal(s.tick_index, ref):
            raise EvalError(f"{s.name} is not aligned with {sets[0].name}")


@dataclass
class Correlation:
    names: list[str]
    matrix: np.ndarray
    undefined: list[tuple[str, str]] = field(default_factory=list)


def pearson_matrix(sets: Sequence[SignalSet]) -> Correlation:
    """Pearson r between the scalar signals; NaN where a signal has no variance."""
    _check_aligned(sets)
    x = np.stack([s.signal for s in sets])
    k = len(sets)
    centred = x - x.mean(axis=1, keepdims=True)
    norms = np.sqrt((centred * centred).sum(axis=1))
    m = np.full((k, k), np.nan)
    undefined = []
    for i in range(k):
        for j in range(i, k):
            if norms[i] == 0 or norms[j] == 0:
                if i != j:
                    undefined.append((sets[i].name, sets[j].name))
                continue
            r = 1.0 if i == j else float(np.clip(centred[i] @ centred[j] / (norms[i] * norms[j]), -1, 1))
            m[i, j] = m[j, i] = r
    return Correlation([s.name for s in sets], m, undefined)


@dataclass
class KSResult:
    statistic: float
    p_value: float


def ks_statistic(a, b) -> KSResult:
    """Two-sample Kolmogorov-Smirnov D with its asymptotic p-value."""
    a = np.sort(np.asarray(a, dtype=np.float64).ravel())
    b = np.sort(np.asarray(b, dtype=np.float64).ravel())
    if a.size == 0 or b.size == 0:
        raise EvalError("both samples must be non-empty")
    grid = np.concatenate([a, b])
    fa = np.searchsorted(a, grid, side="right") / a.size
    fb = np.searchsorted(b, grid, side="right") / b.size
    d = float(np.max(np.abs(fa - fb)))
    n_eff = a.size * b.size / (a.size + b.size)
    return KSResult(d, float(kolmogorov(d * math.sqrt(n_eff))))


# -- ensembles -------------------------------------------------------------------------

def ensemble(sets: Sequence[SignalSet], name: str = "ensemble") -> SignalSet:
    """Equal-weight mean of the members' probability rows.

    The mean is accumulated as offsets from the first member, so identical
    members reproduce that member bit for bit.
    """
    _check_aligned(sets)
    base = sets[0].probs
    offset = np.zeros_like(base)
    for s in sets[1:]:
        offset += s.probs - base
    probs = base + offset / len(sets)
    return SignalSet(name, probs, sets[0].tick_index.copy(),
                     None if sets[0].dates is None else sets[0].dates.copy())


MBO_MEMBERS = ("MBO-LSTM", "MBO-Attention")


def named_ensembles(sets: dict[str, SignalSet]) -> dict[str, SignalSet]:
    """Ensemble-MBO, Ensemble-LOB and their mean Ensemble-MBO-LOB, where available."""
    out = {}
    mbo = [sets[n] for n in MBO_MEMBERS if n in sets]
    lob = [s for n, s in sorted(sets.items()) if n.startswith("LOB-")]
    if mbo:
        out["Ensemble-MBO"] = ensemble(mbo, "Ensemble-MBO")
    if lob:
        out["Ensemble-LOB"] = ensemble(lob, "Ensemble-LOB")
    if mbo and lob:
        out["Ensemble-MBO-LOB"] = ensemble([out["Ensemble-MBO"], out["Ensemble-LOB"]],
                                           "Ensemble-MBO-LOB")
    return out


# -- report ------------------------------------------------------------------------------

def _clean(x):
    if isinstance(x, float) and not math.isfinite(x):
        return None
    return x


def evaluate(sets: Sequence[SignalSet], true, dates=None) -> dict:
    """Plot-ready summary of every model against the true classes."""
    _check_aligned(sets)
    report: dict = {"models": {}}
    for s in sets:
        conf = confusion(s.classes, true)
        entry = {"metrics": metrics(s.classes, true), "confusion": conf.matrix.tolist(),
                 "confusion_counts": conf.counts.tolist(), "empty_rows": conf.empty_rows}
        if dates is not None:
            daily = daily_accuracy(s.classes, true, dates)
            entry["daily"] = daily.days
            entry["daily_summary"] = daily.summary
        report["models"][s.name] = entry
    corr = pearson_matrix(sets)
    report["correlation"] = {"names": corr.names,
                             "matrix": [[_clean(float(v)) for v in row] for row in corr.matrix],
                             "undefined": [list(p) for p in corr.undefined]}
    if dates is not None and len(sets) > 1:
        ks = {}
        for i, a in enumerate(sets):
            for b in sets[i + 1:]:
                da = [d["accuracy"] for d in report["models"][a.name]["daily"]]
                db = [d["accuracy"] for d in report["models"][b.name]["daily"]]
                r = ks_statistic(da, db)
                ks[f"{a.name} vs {b.name}"] = {"D": r.statistic, "p_value": r.p_value}
        report["ks"] = ks
    return report
