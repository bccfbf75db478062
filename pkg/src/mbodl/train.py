"""Minibatch training with early stopping, grid search and batch prediction.

Windows are never materialised for a whole split: a ``WindowSet`` keeps the
per-tick feature rows plus the row index that closes each window, and
batches are gathered on demand.
"""

from __future__ import annotations

import hashlib
import itertools
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Iterator, Optional, Sequence

import numpy as np

from . import nn
from .features import date_split, gather_windows, window_ends
from .nn import Checkpoint, ModelSpec

LR_GRID = (1e-4, 5e-4, 1e-3)
BATCH_GRID = (64, 128, 256)
PATIENCE = 10
MAX_EPOCHS = 200


class TrainError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    spec: ModelSpec
    lr: float = 1e-4
    batch_size: int = 128
    patience: int = PATIENCE
    max_epochs: int = MAX_EPOCHS
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0 or self.batch_size < 1:
            raise ValueError("lr must be positive and batch_size >= 1")
        if self.patience < 1 or self.max_epochs < 1:
            raise ValueError("patience and max_epochs must be >= 1")

    @property
    def in_search_space(self) -> bool:
        return self.spec.in_search_space and self.lr in LR_GRID and self.batch_size in BATCH_GRID

    def to_dict(self) -> dict:
        return {"spec": self.spec.to_dict(), "lr": self.lr, "batch_size": self.batch_size,
                "patience": self.patience, "max_epochs": self.max_epochs, "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        return cls(spec=ModelSpec.from_dict(d.pop("spec")), **d)


# -- data ----------------------------------------------------------------------

@dataclass
class WindowSet:
    """Labelled windows over a shared row array.

    ``ends[i]`` is the row closing window ``i``; ``y``, ``dates`` and
    ``tick_index`` describe that window's last tick.
    """

    rows: np.ndarray
    ends: np.ndarray
    y: np.ndarray
    dates: np.ndarray
    tick_index: np.ndarray
    lookback: int

    def __len__(self) -> int:
        return len(self.ends)

    @property
    def n_features(self) -> int:
        return self.rows.shape[1]

    def windows(self, idx=None) -> np.ndarray:
        ends = self.ends if idx is None else self.ends[idx]
        return gather_windows(self.rows, ends, self.lookback)

    def subset(self, mask) -> "WindowSet":
        return replace(self, ends=self.ends[mask], y=self.y[mask],
                       dates=self.dates[mask], tick_index=self.tick_index[mask])


def make_windowset(rows: np.ndarray, tick_index: np.ndarray, dates: np.ndarray,
                   label_ticks: np.ndarray, label_classes: np.ndarray,
                   lookback: int) -> WindowSet:
    """Pair every full single-day window with the label of its last tick."""
    rows = np.asarray(rows, dtype=np.float64)
    ends = window_ends(dates, lookback)
    _, at_end, at_label = np.intersect1d(np.asarray(tick_index)[ends], label_ticks,
                                         assume_unique=True, return_indices=True)
    ends = ends[at_end]
    y = np.asarray(label_classes, dtype=np.int64)[at_label]
    return WindowSet(rows, ends, y, np.asarray(dates)[ends], np.asarray(tick_index)[ends], lookback)


def split_windowset(ws: WindowSet, parts: Sequence[int] = (6, 3, 3)) -> dict[str, WindowSet]:
    """Chronological split by trading day; see ``date_split``."""
    days = date_split(ws.dates, parts)
    return {name: ws.subset(np.isin(ws.dates, d)) for name, d in days.items()}


def audit_split(splits: dict[str, WindowSet]) -> None:
    """Raise unless train < val < test by date with no shared day."""
    order = [s for s in ("train", "val", "test") if s in splits and len(splits[s])]
    for a, b in zip(order, order[1:]):
        if splits[a].dates.max() >= splits[b].dates.min():
            raise TrainError(f"split {a!r} reaches into {b!r} dates")


# -- early stopping --------------------------------------------------------------

class EarlyStopping:
    """Stop once ``patience`` epochs pass without a strictly lower value."""

    def __init__(self, patience: int = PATIENCE):
        self.patience = patience
        self.best = math.inf
        self.best_epoch = 0
        self.epoch = 0

    def update(self, value: float) -> bool:
        """Record one epoch; True when this epoch is the new best."""
        self.epoch += 1
        if value < self.best:
            self.best, self.best_epoch = value, self.epoch
            return True
        return False

    @property
    def should_stop(self) -> bool:
        return self.epoch - self.best_epoch >= self.patience


def params_digest(params: dict) -> str:
    h = hashlib.sha256()
    for name in sorted(params):
        h.update(name.encode())
        h.update(np.ascontiguousarray(params[name], dtype="<f8").tobytes())
    return h.hexdigest()


# -- fitting ---------------------------------------------------------------------

def _batches(n: int, batch_size: int, rng: np.random.Generator) -> Iterator[np.ndarray]:
    order = rng.permutation(n)
    for lo in range(0, n, batch_size):
        yield order[lo:lo + batch_size]


def evaluate_loss(spec: ModelSpec, params: dict, data: WindowSet, chunk: int = 2048) -> float:
    total = 0.0
    for lo in range(0, len(data), chunk):
        idx = np.arange(lo, min(lo + chunk, len(data)))
        value, _ = nn.cross_entropy(nn.forward(spec, params, data.windows(idx)), data.y[idx])
        total += value * len(idx)
    return total / len(data)


def fit(cfg: TrainConfig, train: WindowSet, val: WindowSet,
        val_loss: Optional[Callable[[int, dict], float]] = None,
        log: Optional[Callable[[dict], None]] = None) -> tuple[Checkpoint, list[dict]]:
    """Adam on mean cross-entropy; returns the best-validation checkpoint and history.

    ``val_loss(epoch, params)`` replaces the validation pass when given.
    """
    spec = cfg.spec
    if len(train) == 0 or len(val) == 0:
        raise TrainError("train and validation sets must be non-empty")
    if train.n_features != spec.n_features or train.lookback != spec.lookback:
        raise TrainError(f"data windows are {train.lookback}x{train.n_features}, "
                         f"model expects {spec.lookback}x{spec.n_features}")
    rng = np.random.default_rng(cfg.seed)
    params = nn.init_params(spec, cfg.seed)
    state = nn.AdamState.for_params(params, lr=cfg.lr)
    stopper = EarlyStopping(cfg.patience)
    best_params = {k: v.copy() for k, v in params.items()}
    history: list[dict] = []
    for epoch in range(1, cfg.max_epochs + 1):
        total = 0.0
        for b, idx in enumerate(_batches(len(train), cfg.batch_size, rng)):
            try:
                value, grads = nn.loss_and_gradients(spec, params, train.windows(idx), train.y[idx])
            except nn.NonFiniteError as exc:
                raise TrainError(f"epoch {epoch} batch {b}: {exc}") from exc
            if not math.isfinite(value):
                raise TrainError(f"epoch {epoch} batch {b}: non-finite loss {value}")
            nn.adam_step(params, grads, state)
            total += value * len(idx)
        v = val_loss(epoch, params) if val_loss is not None else evaluate_loss(spec, params, val)
        if not math.isfinite(v):
            raise TrainError(f"epoch {epoch}: non-finite validation loss {v}")
        improved = stopper.update(v)
        if improved:
            best_params = {k: p.copy() for k, p in params.items()}
        row = {"epoch": epoch, "train_loss": total / len(train), "val_loss": float(v),
               "digest": params_digest(params)}
        history.append(row)
        if log is not None:
            log(row)
        if stopper.should_stop:
            break
    meta = {"train": cfg.to_dict(), "best_epoch": stopper.best_epoch,
            "best_val_loss": stopper.best, "epochs_run": len(history)}
    return Checkpoint(spec, best_params, history, meta), history


# -- grid search -----------------------------------------------------------------

def search_space(arch: str, layers=(1, 2, 3), units=(32, 64, 128), lrs=LR_GRID,
                 batches=BATCH_GRID, base: Optional[TrainConfig] = None) -> list[TrainConfig]:
    """Enumerate the grid; ``lm`` has no layer or unit axis."""
    base = base or TrainConfig(ModelSpec(arch))
    shapes = [(1, 64)] if arch == "lm" else list(itertools.product(layers, units))
    return [replace(base, spec=replace(base.spec, arch=arch, layers=L, units=U), lr=lr, batch_size=bs)
            for (L, U), lr, bs in itertools.product(shapes, lrs, batches)]


@dataclass
class GridResult:
    best: TrainConfig
    checkpoint: Checkpoint
    leaderboard: list[dict] = field(default_factory=list)


def grid_search(space: Sequence[TrainConfig], train: WindowSet, val: WindowSet) -> GridResult:
    """Fit every configuration and keep the lowest validation loss."""
    if not space:
        raise TrainError("search space is empty")
    for cfg in space:
        if not cfg.in_search_space:
            raise TrainError(f"configuration outside the search grid: {cfg.to_dict()}")
    board = []
    best = None
    for i, cfg in enumerate(space):
        ckpt, history = fit(cfg, train, val)
        score = ckpt.meta["best_val_loss"]
        board.append({"rank": 0, "config": cfg.to_dict(), "val_loss": score,
                      "epochs": len(history)})
        if best is None or score < best[0]:
            best = (score, i, ckpt)
    board.sort(key=lambda r: r["val_loss"])
    for r, row in enumerate(board, 1):
        row["rank"] = r
    return GridResult(space[best[1]], best[2], board)


# -- prediction ------------------------------------------------------------------

def predict(ckpt: Checkpoint, windows, chunk: int = 4096) -> tuple[np.ndarray, np.ndarray]:
    """Class probabilities and argmax classes for a WindowSet or (B, T, F) array."""
    spec = ckpt.spec
    if isinstance(windows, WindowSet):
        if windows.n_features != spec.n_features or windows.lookback != spec.lookback:
            raise TrainError(f"windows are {windows.lookback}x{windows.n_features}, "
                             f"checkpoint expects {spec.lookback}x{spec.n_features}")
        n = len(windows)
        get = windows.windows
    else:
        arr = np.asarray(windows, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[1:] != (spec.lookback, spec.n_features):
            raise TrainError(f"windows of shape {arr.shape[1:]} do not match checkpoint "
                             f"({spec.lookback}, {spec.n_features})")
        n = len(arr)
        get = arr.__getitem__
    probs = np.empty((n, spec.n_classes))
    for lo in range(0, n, chunk):
        idx = np.arange(lo, min(lo + chunk, n))
        probs[idx] = nn.predict_proba(spec, ckpt.params, get(idx))
    return probs, probs.argmax(axis=1)
