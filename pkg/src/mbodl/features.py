"""MBO preprocessing, normalisation, tick filtering and lookback windows.

Each retained message becomes a six-vector::

    side, action, (price - mid) / (tick * 100), size / mid_size,
    change_price / tick, change_size / mid_size

where ``mid`` and ``mid_size`` come from the book as it stood when the message
arrived.  Arithmetic up to the final float conversion is exact decimal, so the
features are invariant to rescaling prices together with the tick size.

The LOB path produces 40 raw columns per tick (ask price, ask size, bid
price, bid size for each of ten levels) that are z-scored with statistics
from the training split.
"""

from __future__ import annotations

import datetime as _dt
import json
import struct
from dataclasses import dataclass, field
from decimal import Decimal
from pathlib import Path
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np

from .book import LimitOrderBook
from .feed_io import Action, MboMessage, OrderType, Side, SNAPSHOT_DEPTH

N_MBO_FEATURES = 6
N_LOB_FEATURES = 4 * SNAPSHOT_DEPTH
DEFAULT_LOOKBACK = 50
MBO_COLUMNS = ("side", "action", "norm_price", "norm_size", "norm_change_price", "norm_change_size")
ACTION_CODE = {Action.CANCEL: -1, Action.UPDATE: 0, Action.ADD: 1}
WINDOWS_SCHEMA_VERSION = 1


def lob_columns(depth: int = SNAPSHOT_DEPTH) -> list[str]:
    cols = []
    for i in range(1, depth + 1):
        cols += [f"ask_px_{i}", f"ask_sz_{i}", f"bid_px_{i}", f"bid_sz_{i}"]
    return cols


class FeatureError(ValueError):
    pass


@dataclass(frozen=True)
class OrderState:
    side: Side
    price: Decimal
    size: Decimal


@dataclass(frozen=True)
class ProcessedMessage:
    side: int
    action: int
    price: Decimal
    size: Decimal
    change_price: Decimal
    change_size: Decimal


def preprocess_message(msg: MboMessage, order_state: dict[int, OrderState]) -> ProcessedMessage:
    """Fill missing fields from the order's history and derive change features.

    ``order_state`` maps live order ids to their latest (side, price, size) and
    is updated in place.  The first entry for an id has change_price 0 and
    change_size equal to its size.
    """
    oid = msg.order_id
    prev = order_state.get(oid)
    if msg.action is Action.ADD:
        side, price, size = msg.side, msg.price, msg.size
        d_price, d_size = Decimal(0), size
        order_state[oid] = OrderState(side, price, size)
    else:
        if prev is None:
            kind = "cancel" if msg.action is Action.CANCEL else "update"
            raise FeatureError(f"{kind} for unknown order id {oid}")
        if msg.action is Action.CANCEL:
            side, price, size = prev.side, prev.price, Decimal(0)
            del order_state[oid]
        else:
            side, price, size = msg.side, msg.price, msg.size
            order_state[oid] = OrderState(side, price, size)
        d_price, d_size = price - prev.price, size - prev.size
    return ProcessedMessage(int(side), ACTION_CODE[msg.action], price, size, d_price, d_size)


def normalize(p: ProcessedMessage, mid_price: Decimal, mid_size: Decimal,
              tick_size: Decimal) -> tuple[float, ...]:
    """Map a processed message onto the dimensionless feature vector."""
    if mid_size is None or mid_price is None or mid_size <= 0:
        raise FeatureError("mid-price / mid-size unavailable")
    if tick_size <= 0:
        raise FeatureError("tick size must be positive")
    return (
        float(p.side),
        float(p.action),
        float((p.price - mid_price) / (tick_size * 100)),
        float(p.size / mid_size),
        float(p.change_price / tick_size),
        float(p.change_size / mid_size),
    )


def lob_row(book: LimitOrderBook, depth: int = SNAPSHOT_DEPTH) -> list[float]:
    """Raw depth columns; absent levels extend the ladder by one tick with size 0."""
    tick = float(book.tick_size)
    sides = []
    for book_side, step in ((book.asks, tick), (book.bids, -tick)):
        levels = book_side.top(depth)
        px = [float(book.to_price(lvl.price)) for lvl in levels]
        sz = [float(lvl.total) for lvl in levels]
        while len(px) < depth:
            px.append(px[-1] + step)
            sz.append(0.0)
        sides.append((px, sz))
    (apx, asz), (bpx, bsz) = sides
    row = []
    for i in range(depth):
        row += [apx[i], asz[i], bpx[i], bsz[i]]
    return row


def _date_of(ts: int) -> np.datetime64:
    return np.datetime64(ts // 86_400_000_000_000, "D")


@dataclass
class FeatureStream:
    """Retained ticks of one instrument, in tick order.

    ``mbo`` holds normalised MBO features, ``lob`` raw depth columns and
    ``mids`` the post-message mid-price used for labelling.
    """

    instrument: str
    tick_size: Decimal
    mbo: np.ndarray
    lob: np.ndarray
    mids: np.ndarray
    tick_index: np.ndarray
    dates: np.ndarray
    timestamps: np.ndarray
    message_index: np.ndarray
    n_messages: int = 0
    n_filtered: int = 0
    n_skipped: int = 0

    def __len__(self) -> int:
        return len(self.tick_index)


class Featurizer:
    """Streams messages through a book and emits retained feature ticks.

    Every message updates the book.  A message contributes a tick only if it
    is a limit order whose (filled) price lies within the best ``levels``
    levels of its side before it is applied, and both the pre- and
    post-message books are two-sided.
    """

    def __init__(self, tick_size: Decimal | str, levels: int = SNAPSHOT_DEPTH,
                 depth: int = SNAPSHOT_DEPTH):
        self.book = LimitOrderBook(tick_size)
        self.tick_size = self.book.tick_size
        self.levels = levels
        self.depth = depth
        self.order_state: dict[int, OrderState] = {}
        self.n_messages = 0
        self.n_filtered = 0
        self.n_skipped = 0

    def _mid(self) -> tuple[Optional[Decimal], Optional[Decimal]]:
        bid, ask = self.book.best_bid(), self.book.best_ask()
        if bid is None or ask is None:
            return None, None
        return (bid.price + ask.price) * self.tick_size / 2, (bid.total + ask.total) / 2

    def retained(self, msg: MboMessage) -> bool:
        """Ten-level filter, evaluated against the book before ``msg``."""
        if msg.order_type is OrderType.MARKET:
            return False
        if msg.action is Action.CANCEL:
            st = self.order_state.get(msg.order_id)
            if st is None:
                return False
            side, price = st.side, st.price
        else:
            side, price = msg.side, msg.price
        return self.book.level_rank(side, self.book.to_ticks(price)) < self.levels

    def process(self, msg: MboMessage):
        """Apply ``msg``; return (features, mid, lob_row) or None if dropped."""
        self.n_messages += 1
        keep = self.retained(msg)
        mid_price, mid_size = self._mid()
        processed = None
        if msg.order_type is OrderType.LIMIT:
            processed = preprocess_message(msg, self.order_state)
        event = self.book.apply_message(msg)
        index = self.book.index
        if msg.order_type is OrderType.LIMIT and msg.order_id not in index:
            self.order_state.pop(msg.order_id, None)
        for fill in event.fills:
            if fill.maker_id not in index:
                self.order_state.pop(fill.maker_id, None)
        if not keep:
            self.n_filtered += 1
            return None
        post_mid, post_size = self._mid()
        if mid_price is None or post_mid is None or mid_size <= 0:
            self.n_skipped += 1
            return None
        feats = normalize(processed, mid_price, mid_size, self.tick_size)
        return feats, float(post_mid), lob_row(self.book, self.depth)


def featurize_feed(messages: Iterable[MboMessage], tick_size: Decimal | str,
                   instrument: str = "SYNTH", levels: int = SNAPSHOT_DEPTH) -> FeatureStream:
    """Run the whole preprocessing pipeline over a feed."""
    fz = Featurizer(tick_size, levels)
    mbo, lob, mids, stamps, positions = [], [], [], [], []
    for pos, msg in enumerate(messages):
        out = fz.process(msg)
        if out is None:
            continue
        feats, mid, row = out
        positions.append(pos)
        mbo.append(feats)
        lob.append(row)
        mids.append(mid)
        stamps.append(msg.timestamp)
    stamps_arr = np.asarray(stamps, dtype=np.int64)
    n = len(mbo)
    return FeatureStream(
        instrument=instrument,
        tick_size=fz.tick_size,
        mbo=np.asarray(mbo, dtype=np.float64).reshape(n, N_MBO_FEATURES),
        lob=np.asarray(lob, dtype=np.float64).reshape(n, 4 * SNAPSHOT_DEPTH),
        mids=np.asarray(mids, dtype=np.float64),
        tick_index=np.arange(n, dtype=np.int64),
        dates=(stamps_arr // 86_400_000_000_000).astype("datetime64[D]"),
        timestamps=stamps_arr,
        message_index=np.asarray(positions, dtype=np.int64),
        n_messages=fz.n_messages,
        n_filtered=fz.n_filtered,
        n_skipped=fz.n_skipped,
    )


# -- windows -----------------------------------------------------------------

@dataclass(frozen=True)
class FeatureWindow:
    values: np.ndarray  # (T, F), oldest row first
    tick_index: int
    instrument: str
    date: np.datetime64


def segment_starts(dates: np.ndarray) -> np.ndarray:
    """Row position where each row's trading day begins."""
    n = len(dates)
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    new_day = np.ones(n, dtype=bool)
    new_day[1:] = dates[1:] != dates[:-1]
    starts = np.flatnonzero(new_day)
    return starts[np.cumsum(new_day) - 1]


def window_ends(dates: np.ndarray, lookback: int = DEFAULT_LOOKBACK) -> np.ndarray:
    """Rows that close a full window lying inside one trading day."""
    if lookback < 1:
        raise ValueError("lookback must be >= 1")
    pos = np.arange(len(dates)) - segment_starts(dates)
    return np.flatnonzero(pos >= lookback - 1)


def build_windows(rows: np.ndarray, tick_index: np.ndarray, dates: np.ndarray,
                  lookback: int = DEFAULT_LOOKBACK, instrument: str = "") -> Iterator[FeatureWindow]:
    """Yield one window per eligible tick, stride 1, never spanning two days."""
    for end in window_ends(dates, lookback):
        yield FeatureWindow(rows[end - lookback + 1:end + 1], int(tick_index[end]),
                            instrument, dates[end])


def gather_windows(rows: np.ndarray, ends: np.ndarray, lookback: int) -> np.ndarray:
    """Materialise windows ending at ``ends`` as a (B, T, F) array."""
    offsets = np.arange(-lookback + 1, 1)
    return rows[np.asarray(ends)[:, None] + offsets]


# -- LOB normalisation -------------------------------------------------------

@dataclass
class ZScore:
    mean: np.ndarray
    std: np.ndarray
    columns: Sequence[str] = field(default_factory=lob_columns)

    @classmethod
    def fit(cls, rows: np.ndarray, columns: Optional[Sequence[str]] = None) -> "ZScore":
        if len(rows) == 0:
            raise FeatureError("no rows to compute normalisation statistics")
        columns = list(columns) if columns is not None else lob_columns()
        mean = rows.mean(axis=0)
        std = rows.std(axis=0)
        for j in np.flatnonzero(std == 0):
            raise FeatureError(f"column {columns[j]} has zero standard deviation")
        return cls(mean, std, columns)

    def transform(self, rows: np.ndarray) -> np.ndarray:
        return (rows - self.mean) / self.std

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist(), "columns": list(self.columns)}

    @classmethod
    def from_dict(cls, d: dict) -> "ZScore":
        return cls(np.asarray(d["mean"], dtype=np.float64), np.asarray(d["std"], dtype=np.float64),
                   d["columns"])


def lob_featurize(lob_rows: np.ndarray, tick_index: np.ndarray, dates: np.ndarray,
                  stats: ZScore, lookback: int = DEFAULT_LOOKBACK,
                  instrument: str = "") -> Iterator[FeatureWindow]:
    """Z-score raw depth rows with training statistics and window them."""
    return build_windows(stats.transform(lob_rows), tick_index, dates, lookback, instrument)


# -- on-disk window streams ---------------------------------------------------

@dataclass
class WindowFile:
    """Per-tick feature rows plus the metadata needed to form windows."""

    rows: np.ndarray
    tick_index: np.ndarray
    dates: np.ndarray
    lookback: int
    mode: str
    instrument: str = ""
    meta: dict = field(default_factory=dict)

    @property
    def n_features(self) -> int:
        return self.rows.shape[1]

    def ends(self) -> np.ndarray:
        return window_ends(self.dates, self.lookback)


_ROW_PREFIX = struct.Struct("<I")


def write_windows(path: str | Path, wf: WindowFile) -> Path:
    """Write rows as length-prefixed little-endian float64 records plus a JSON sidecar."""
    path = Path(path)
    rows = np.ascontiguousarray(wf.rows, dtype="<f8")
    prefix = _ROW_PREFIX.pack(rows.shape[1])
    with open(path, "wb") as fh:
        for r in rows:
            fh.write(prefix)
            fh.write(r.tobytes())
    sidecar = {
        "schema_version": WINDOWS_SCHEMA_VERSION,
        "mode": wf.mode,
        "instrument": wf.instrument,
        "lookback": wf.lookback,
        "n_rows": int(rows.shape[0]),
        "n_features": int(rows.shape[1]),
        "tick_index": [int(t) for t in wf.tick_index],
        "dates": [str(d) for d in wf.dates.astype("datetime64[D]")],
        "meta": wf.meta,
    }
    with open(sidecar_path(path), "w") as fh:
        json.dump(sidecar, fh, sort_keys=True)
    return path


def sidecar_path(path: str | Path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def read_windows(path: str | Path) -> WindowFile:
    path = Path(path)
    with open(sidecar_path(path)) as fh:
        side = json.load(fh)
    if side.get("schema_version") != WINDOWS_SCHEMA_VERSION:
        raise FeatureError(f"{path}: unsupported windows schema {side.get('schema_version')}")
    n, f = side["n_rows"], side["n_features"]
    record = np.dtype([("len", "<u4"), ("row", "<f8", (f,))])
    raw = np.fromfile(path, dtype=record)
    if path.stat().st_size != n * record.itemsize or (n and not np.all(raw["len"] == f)):
        raise FeatureError(f"{path}: row stream does not match sidecar ({len(raw)} vs {n} rows)")
    return WindowFile(
        rows=raw["row"].astype(np.float64).reshape(n, f),
        tick_index=np.asarray(side["tick_index"], dtype=np.int64),
        dates=np.asarray(side["dates"], dtype="datetime64[D]"),
        lookback=side["lookback"],
        mode=side["mode"],
        instrument=side.get("instrument", ""),
        meta=side.get("meta", {}),
    )


def date_split(dates: np.ndarray, parts: Sequence[int] = (6, 3, 3)) -> dict[str, np.ndarray]:
    """Chronological split of the distinct trading days by relative lengths.

    Returns the set of days in each of ``train``, ``val`` and ``test``.
    """
    days = np.unique(np.asarray(dates, dtype="datetime64[D]"))
    if len(parts) != 3 or any(p < 0 for p in parts) or sum(parts) == 0:
        raise ValueError("split needs three non-negative parts")
    total = sum(parts)
    n = len(days)
    n_train = int(round(n * parts[0] / total))
    n_val = int(round(n * (parts[0] + parts[1]) / total)) - n_train
    return {
        "train": days[:n_train],
        "val": days[n_train:n_train + n_val],
        "test": days[n_train + n_val:],
    }


def iso_days(days: Iterable) -> list[str]:
    return [str(np.datetime64(d, "D")) for d in days]


def parse_day(text: str) -> np.datetime64:
    _dt.date.fromisoformat(text)
    return np.datetime64(text, "D")
