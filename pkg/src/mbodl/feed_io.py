"""Market-by-order feed and depth snapshot file formats.

The MBO feed is a header-prefixed CSV with one message per row::

    timestamp,id,type,side,action,price,size
    2018-01-02 09:21:18.585446702,462805645163298476,1,1,1,68.54,8334.0

Optional fields are written as empty cells.  Prices and sizes are decoded as
:class:`decimal.Decimal` so that no binary floating point drift enters the
book; the book converts prices to integer ticks.
"""

from __future__ import annotations

import csv
import datetime as _dt
import enum
from dataclasses import dataclass
from decimal import Decimal, InvalidOperation
from pathlib import Path
from typing import Iterable, Iterator, Optional, Sequence

MBO_HEADER = ("timestamp", "id", "type", "side", "action", "price", "size")
SNAPSHOT_DEPTH = 10

_EPOCH_ORDINAL = _dt.date(1970, 1, 1).toordinal()
_NS_PER_SECOND = 1_000_000_000
_NS_PER_DAY = 86_400 * _NS_PER_SECOND
_MAX_ORDER_ID = 2**64 - 1


class FeedError(ValueError):
    """A feed record or file violates the schema."""

    def __init__(self, reason: str, row: Optional[int] = None):
        self.reason = reason
        self.row = row
        where = f"row {row}: " if row is not None else ""
        super().__init__(where + reason)


class OrderType(enum.IntEnum):
    LIMIT = 1
    MARKET = 2


class Side(enum.IntEnum):
    BUY = 1
    SELL = 2


class Action(enum.IntEnum):
    UPDATE = 0
    ADD = 1
    CANCEL = 2


@dataclass(frozen=True)
class MboMessage:
    """One order instruction.

    ``timestamp`` is integer nanoseconds since the Unix epoch (naive exchange
    local time, no timezone conversion is applied).
    """

    timestamp: int
    order_id: int
    order_type: OrderType
    side: Optional[Side]
    action: Action
    price: Optional[Decimal]
    size: Optional[Decimal]

    @property
    def date(self) -> _dt.date:
        return _dt.date.fromordinal(_EPOCH_ORDINAL + self.timestamp // _NS_PER_DAY)


def parse_timestamp(text: str) -> int:
    """Decode ``YYYY-MM-DD HH:MM:SS.fffffffff`` into epoch nanoseconds."""
    if len(text) != 29 or text[4] != "-" or text[7] != "-" or text[10] != " " \
            or text[13] != ":" or text[16] != ":" or text[19] != ".":
        raise ValueError(f"malformed timestamp {text!r}")
    fields = (text[0:4], text[5:7], text[8:10], text[11:13], text[14:16], text[17:19], text[20:])
    if not all(f.isdigit() and f.isascii() for f in fields):
        raise ValueError(f"malformed timestamp {text!r}")
    y, mo, d, h, mi, s, frac = (int(f) for f in fields)
    try:
        day = _dt.date(y, mo, d).toordinal() - _EPOCH_ORDINAL
        _dt.time(h, mi, s)
    except ValueError as exc:
        raise ValueError(f"malformed timestamp {text!r}: {exc}") from None
    return day * _NS_PER_DAY + (h * 3600 + mi * 60 + s) * _NS_PER_SECOND + frac


def format_timestamp(ns: int) -> str:
    days, rem = divmod(ns, _NS_PER_DAY)
    secs, frac = divmod(rem, _NS_PER_SECOND)
    day = _dt.date.fromordinal(_EPOCH_ORDINAL + days)
    h, rem_s = divmod(secs, 3600)
    m, s = divmod(rem_s, 60)
    return f"{day.isoformat()} {h:02d}:{m:02d}:{s:02d}.{frac:09d}"


def _decimal(text: str, name: str) -> Decimal:
    try:
        value = Decimal(text)
    except InvalidOperation:
        raise ValueError(f"non-numeric {name} {text!r}") from None
    if not value.is_finite():
        raise ValueError(f"non-finite {name} {text!r}")
    return value


def _enum(cls, text: str, name: str):
    try:
        return cls(int(text))
    except ValueError:
        raise ValueError(f"unknown {name} code {text!r}") from None


def message_from_fields(cells: Sequence[str], row: Optional[int] = None) -> MboMessage:
    """Build a message from the seven CSV cells, validating the schema."""
    if len(cells) != len(MBO_HEADER):
        raise FeedError(f"expected {len(MBO_HEADER)} fields, got {len(cells)}", row)
    ts_text, id_text, type_text, side_text, action_text, price_text, size_text = (
        c.strip() for c in cells
    )
    try:
        timestamp = parse_timestamp(ts_text)
        if not id_text.isdigit():
            raise ValueError(f"non-numeric order id {id_text!r}")
        order_id = int(id_text)
        if order_id > _MAX_ORDER_ID:
            raise ValueError(f"order id {id_text} exceeds 64 bits")
        order_type = _enum(OrderType, type_text, "type")
        action = _enum(Action, action_text, "action")
        side = _enum(Side, side_text, "side") if side_text else None
        price = _decimal(price_text, "price") if price_text else None
        size = _decimal(size_text, "size") if size_text else None
    except ValueError as exc:
        raise FeedError(str(exc), row) from None

    if action is Action.CANCEL:
        if side is not None or price is not None or size is not None:
            raise FeedError("cancel must leave side, price and size empty", row)
    else:
        missing = [n for n, v in (("side", side), ("price", price), ("size", size)) if v is None]
        if missing:
            raise FeedError(f"{action.name.lower()} is missing {', '.join(missing)}", row)
        if price <= 0:
            raise FeedError(f"price must be positive, got {price}", row)
        if action is Action.ADD and size <= 0:
            raise FeedError(f"add size must be positive, got {size}", row)
        if size < 0:
            raise FeedError(f"size must be non-negative, got {size}", row)
    return MboMessage(timestamp, order_id, order_type, side, action, price, size)


def parse_mbo_line(line: str, row: Optional[int] = None) -> MboMessage:
    """Parse one CSV data line (no header) into an :class:`MboMessage`."""
    return message_from_fields(line.rstrip("\r\n").split(","), row)


def _fmt_decimal(value: Optional[Decimal]) -> str:
    return "" if value is None else format(value, "f")


def message_to_fields(msg: MboMessage) -> list[str]:
    return [
        format_timestamp(msg.timestamp),
        str(msg.order_id),
        str(int(msg.order_type)),
        "" if msg.side is None else str(int(msg.side)),
        str(int(msg.action)),
        _fmt_decimal(msg.price),
        _fmt_decimal(msg.size),
    ]


def serialize_mbo(msg: MboMessage) -> str:
    """Inverse of :func:`parse_mbo_line` (no trailing newline)."""
    return ",".join(message_to_fields(msg))


def read_feed(path: str | Path) -> Iterator[MboMessage]:
    """Stream messages from a feed CSV in file order.

    Row numbers in errors are 1-based file line numbers (the header is line 1).
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != MBO_HEADER:
            raise FeedError(f"header must be {','.join(MBO_HEADER)}", 1)
        last_ts = None
        for row, cells in enumerate(reader, start=2):
            msg = message_from_fields(cells, row)
            if last_ts is not None and msg.timestamp < last_ts:
                raise FeedError(
                    f"timestamp {format_timestamp(msg.timestamp)} precedes "
                    f"{format_timestamp(last_ts)}", row)
            last_ts = msg.timestamp
            yield msg


def write_feed(path: str | Path, messages: Iterable[MboMessage]) -> int:
    n = 0
    with open(path, "w", newline="") as fh:
        fh.write(",".join(MBO_HEADER) + "\n")
        for msg in messages:
            fh.write(serialize_mbo(msg) + "\n")
            n += 1
    return n


# -- depth snapshots ---------------------------------------------------------

Level = tuple[Decimal, Decimal]


@dataclass(frozen=True)
class LobSnapshot:
    """Top-of-book depth: levels are (price, aggregate size), best first."""

    timestamp: int
    asks: tuple[Level, ...]
    bids: tuple[Level, ...]

    def validate(self) -> list[str]:
        problems = []
        for name, levels, better in (("ask", self.asks, lambda a, b: a < b),
                                     ("bid", self.bids, lambda a, b: a > b)):
            for i in range(1, len(levels)):
                if not better(levels[i - 1][0], levels[i][0]):
                    problems.append(f"{name} level {i + 1} out of order")
        if self.asks and self.bids and self.bids[0][0] >= self.asks[0][0]:
            problems.append("crossed book: best bid >= best ask")
        return problems


def snapshot_header(depth: int = SNAPSHOT_DEPTH) -> list[str]:
    cols = ["timestamp"]
    for side in ("ask", "bid"):
        for i in range(1, depth + 1):
            cols += [f"{side}_px_{i}", f"{side}_sz_{i}"]
    return cols


def snapshot_to_fields(snap: LobSnapshot, depth: int = SNAPSHOT_DEPTH) -> list[str]:
    cells = [format_timestamp(snap.timestamp)]
    for levels in (snap.asks, snap.bids):
        for i in range(depth):
            if i < len(levels):
                cells += [_fmt_decimal(levels[i][0]), _fmt_decimal(levels[i][1])]
            else:
                cells += ["", ""]
    return cells


def snapshot_from_fields(cells: Sequence[str], depth: int = SNAPSHOT_DEPTH,
                         row: Optional[int] = None) -> LobSnapshot:
    if len(cells) != 1 + 4 * depth:
        raise FeedError(f"expected {1 + 4 * depth} fields, got {len(cells)}", row)
    try:
        ts = parse_timestamp(cells[0].strip())
        sides = []
        for s in range(2):
            levels = []
            base = 1 + s * 2 * depth
            for i in range(depth):
                px, sz = cells[base + 2 * i].strip(), cells[base + 2 * i + 1].strip()
                if not px and not sz:
                    continue
                if not px or not sz:
                    raise ValueError(f"level {i + 1} has only one of price/size")
                levels.append((_decimal(px, "price"), _decimal(sz, "size")))
            sides.append(tuple(levels))
    except ValueError as exc:
        raise FeedError(str(exc), row) from None
    return LobSnapshot(ts, sides[0], sides[1])


def write_snapshots(path: str | Path, snapshots: Iterable[LobSnapshot],
                    depth: int = SNAPSHOT_DEPTH) -> int:
    n = 0
    with open(path, "w", newline="") as fh:
        fh.write(",".join(snapshot_header(depth)) + "\n")
        for snap in snapshots:
            fh.write(",".join(snapshot_to_fields(snap, depth)) + "\n")
            n += 1
    return n


def read_snapshots(path: str | Path, depth: int = SNAPSHOT_DEPTH) -> Iterator[LobSnapshot]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != snapshot_header(depth):
            raise FeedError("snapshot header does not match schema", 1)
        for row, cells in enumerate(reader, start=2):
            yield snapshot_from_fields(cells, depth, row)
