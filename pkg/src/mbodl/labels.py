"""Smooth mid-price labels and threshold calibration.

For horizon ``k`` the label value at tick ``t`` compares the mean of the next
``k`` mid-prices with the mean of the last ``k`` (including ``t``)::

    l_t = (m_plus - m_minus) / m_minus

and is classified as up when ``l_t > alpha``, down when ``l_t < -alpha`` and
stationary otherwise.
"""

from __future__ import annotations

import csv
import math
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np

DOWN, STATIONARY, UP = 0, 1, 2
CLASS_NAMES = ("down", "stationary", "up")
HORIZONS = (20, 50, 100)

# Threshold table reported for the LSE instruments, units of 1e-4.
REPORTED_ALPHA_1E4 = {
    20: {"LLOY": 0.25, "BARC": 0.35, "TSCO": 0.10, "BT": 0.40, "VOD": 0.22},
    50: {"LLOY": 0.50, "BARC": 0.65, "TSCO": 0.70, "BT": 0.70, "VOD": 0.45},
    100: {"LLOY": 0.75, "BARC": 0.95, "TSCO": 1.20, "BT": 1.00, "VOD": 0.70},
}


class LabelError(ValueError):
    pass


@dataclass(frozen=True)
class LabelConfig:
    k: int
    alpha: float
    instrument: str = ""

    def __post_init__(self):
        if self.k < 1:
            raise LabelError("horizon k must be >= 1")
        if not self.alpha >= 0:
            raise LabelError("alpha must be >= 0")


def smooth_label(mids: Sequence[float], t: int, k: int) -> Optional[float]:
    """Label value at ``t``, or None when either averaging window is incomplete."""
    if k < 1:
        raise LabelError("horizon k must be >= 1")
    if t < k - 1 or t + k >= len(mids):
        return None
    m_minus = math.fsum(mids[t - k + 1:t + 1]) / k
    m_plus = math.fsum(mids[t + 1:t + k + 1]) / k
    if m_minus <= 0:
        raise LabelError(f"non-positive mid-price average at tick {t}")
    return (m_plus - m_minus) / m_minus


class SmoothLabeller:
    """Streaming labeller: push mids in tick order, receive (t, l_t) when complete.

    Output lags input by ``k`` ticks, since the forward window of tick ``t``
    closes only at ``t + k``.
    """

    def __init__(self, k: int):
        if k < 1:
            raise LabelError("horizon k must be >= 1")
        self.k = k
        self._buf: deque[float] = deque(maxlen=2 * k)
        self._t = -1

    def push(self, mid: float) -> Optional[tuple[int, float]]:
        self._buf.append(mid)
        self._t += 1
        if len(self._buf) < 2 * self.k:
            return None
        buf = list(self._buf)
        m_minus = math.fsum(buf[:self.k]) / self.k
        m_plus = math.fsum(buf[self.k:]) / self.k
        return self._t - self.k, (m_plus - m_minus) / m_minus

    def reset(self) -> None:
        self._buf.clear()
        self._t = -1


def label_values(mids: Iterable[float], k: int) -> Iterator[tuple[int, float]]:
    """(t, l_t) for every labelable tick of one uninterrupted mid series."""
    labeller = SmoothLabeller(k)
    for mid in mids:
        out = labeller.push(mid)
        if out is not None:
            yield out


def classify(l: float, alpha: float) -> int:
    if alpha < 0:
        raise LabelError("alpha must be >= 0")
    if l > alpha:
        return UP
    if l < -alpha:
        return DOWN
    return STATIONARY


def classify_array(l: np.ndarray, alpha: float) -> np.ndarray:
    l = np.asarray(l, dtype=np.float64)
    out = np.full(l.shape, STATIONARY, dtype=np.int64)
    out[l > alpha] = UP
    out[l < -alpha] = DOWN
    return out


def _proportions(sorted_l: np.ndarray, alpha: float) -> tuple[float, float, float]:
    n = len(sorted_l)
    down = np.searchsorted(sorted_l, -alpha, side="left")
    up = n - np.searchsorted(sorted_l, alpha, side="right")
    return down / n, (n - down - up) / n, up / n


def calibrate_alpha(l_values: Sequence[float], grid: int = 2001, min_samples: int = 1000) -> float:
    """Threshold giving the most even three-way split of the training labels.

    Candidates are the empirical quantiles of ``|l|``; the winner minimises the
    largest deviation of any class proportion from one third.
    """
    l = np.sort(np.asarray(l_values, dtype=np.float64))
    if len(l) < min_samples:
        raise LabelError(f"need at least {min_samples} label values, got {len(l)}")
    if not np.all(np.isfinite(l)):
        raise LabelError("label values must be finite")
    if np.all(l == 0):
        raise LabelError("degenerate label distribution: every value is zero")
    candidates = np.unique(np.quantile(np.abs(l), np.linspace(0.0, 1.0, grid)))
    best_alpha, best_dev = 0.0, np.inf
    for alpha in candidates:
        dev = max(abs(p - 1 / 3) for p in _proportions(l, alpha))
        if dev < best_dev:
            best_alpha, best_dev = float(alpha), dev
    return best_alpha


def class_balance(classes_by_split: dict[str, Sequence[int]]) -> dict[str, tuple[float, float, float]]:
    """Share of down / stationary / up within each split."""
    out = {}
    for split, classes in classes_by_split.items():
        c = np.asarray(classes, dtype=np.int64)
        if c.size == 0:
            raise LabelError(f"split {split!r} is empty")
        counts = np.bincount(c, minlength=3)
        out[split] = tuple(float(x) for x in counts / c.size)
    return out


# -- per-day labelling of a tick stream ---------------------------------------

@dataclass
class LabelSet:
    tick_index: np.ndarray
    l_value: np.ndarray
    classes: np.ndarray
    dates: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return len(self.tick_index)


def label_stream(mids: np.ndarray, tick_index: np.ndarray, dates: np.ndarray, k: int) -> tuple:
    """Label values per trading day; returns (tick_index, l, dates) arrays."""
    ticks, values, days = [], [], []
    n = len(mids)
    start = 0
    while start < n:
        end = start
        while end < n and dates[end] == dates[start]:
            end += 1
        for t, l in label_values(mids[start:end], k):
            ticks.append(tick_index[start + t])
            values.append(l)
            days.append(dates[start])
        start = end
    return (np.asarray(ticks, dtype=np.int64), np.asarray(values, dtype=np.float64),
            np.asarray(days, dtype="datetime64[D]"))


def write_mids(path: str | Path, tick_index, dates, mids) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["tick_index", "date", "mid"])
        for t, d, m in zip(tick_index, dates, mids):
            w.writerow([int(t), str(np.datetime64(d, "D")), repr(float(m))])


def read_mids(path: str | Path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    ticks, days, mids = [], [], []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["tick_index", "date", "mid"]:
            raise LabelError(f"{path}: expected header tick_index,date,mid")
        for row in reader:
            ticks.append(int(row["tick_index"]))
            days.append(row["date"])
            mids.append(float(row["mid"]))
    return (np.asarray(ticks, dtype=np.int64), np.asarray(days, dtype="datetime64[D]"),
            np.asarray(mids, dtype=np.float64))


def write_labels(path: str | Path, labels: LabelSet) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["tick_index", "l_value", "class"])
        for t, l, c in zip(labels.tick_index, labels.l_value, labels.classes):
            w.writerow([int(t), repr(float(l)), int(c)])


def read_labels(path: str | Path) -> LabelSet:
    ticks, values, classes = [], [], []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["tick_index", "l_value", "class"]:
            raise LabelError(f"{path}: expected header tick_index,l_value,class")
        for row in reader:
            ticks.append(int(row["tick_index"]))
            values.append(float(row["l_value"]))
            classes.append(int(row["class"]))
    return LabelSet(np.asarray(ticks, dtype=np.int64), np.asarray(values, dtype=np.float64),
                    np.asarray(classes, dtype=np.int64))
