"""Full-depth limit order book rebuilt from a market-by-order stream.

Each price level holds a FIFO queue of individual orders, so queue positions
are known exactly.  Prices are integer ticks internally.

Priority rules for updates: a price change or a size increase sends the
order to the back of its (possibly new) level; a pure size decrease keeps
its place.  A limit order priced through the opposite touch executes at
once against resting orders in price-then-time priority and any remainder
rests.  Market orders never rest.
"""

from __future__ import annotations

import enum
from bisect import bisect_left, insort
from dataclasses import dataclass, field, replace
from decimal import Decimal
from typing import NamedTuple, Optional

from .feed_io import Action, LobSnapshot, MboMessage, OrderType, Side, SNAPSHOT_DEPTH


class BookError(ValueError):
    """A message cannot be applied to the current book."""


class EventKind(enum.Enum):
    ADDED = "added"
    UPDATED = "updated"
    CANCELLED = "cancelled"
    EXECUTED = "executed"


@dataclass(slots=True)
class RestingOrder:
    order_id: int
    side: Side
    price: int
    remaining_size: Decimal
    arrival_sequence: int


class Fill(NamedTuple):
    maker_id: int
    taker_id: int
    price: int
    quantity: Decimal


class BookEvent(NamedTuple):
    kind: EventKind
    order_ids: tuple[int, ...]
    fills: tuple[Fill, ...] = ()


@dataclass(slots=True)
class PriceLevel:
    price: int
    total: Decimal = Decimal(0)
    # insertion-ordered dict doubles as the FIFO queue
    orders: dict = field(default_factory=dict)


@dataclass(frozen=True)
class BestState:
    bid_price: Optional[Decimal]
    bid_size: Optional[Decimal]
    ask_price: Optional[Decimal]
    ask_size: Optional[Decimal]

    @property
    def available(self) -> bool:
        return self.bid_price is not None and self.ask_price is not None

    @property
    def mid_price(self) -> Optional[Decimal]:
        if not self.available:
            return None
        return (self.bid_price + self.ask_price) / 2

    @property
    def mid_size(self) -> Optional[Decimal]:
        if not self.available:
            return None
        return (self.bid_size + self.ask_size) / 2


class _BookSide:
    """Levels of one side.  ``keys`` is ascending best-first: -price for bids."""

    __slots__ = ("side", "sign", "levels", "keys")

    def __init__(self, side: Side):
        self.side = side
        self.sign = -1 if side is Side.BUY else 1
        self.levels: dict[int, PriceLevel] = {}
        self.keys: list[int] = []

    def best(self) -> Optional[PriceLevel]:
        if not self.keys:
            return None
        return self.levels[self.keys[0] * self.sign]

    def level_for(self, price: int) -> PriceLevel:
        level = self.levels.get(price)
        if level is None:
            level = self.levels[price] = PriceLevel(price)
            insort(self.keys, price * self.sign)
        return level

    def drop(self, price: int) -> None:
        del self.levels[price]
        key = price * self.sign
        i = bisect_left(self.keys, key)
        del self.keys[i]

    def rank(self, price: int) -> int:
        """Number of levels strictly better than ``price``."""
        return bisect_left(self.keys, price * self.sign)

    def top(self, depth: int) -> list[PriceLevel]:
        return [self.levels[k * self.sign] for k in self.keys[:depth]]


class LimitOrderBook:
    """Single-instrument book.  ``tick_size`` converts feed prices to ticks."""

    def __init__(self, tick_size: Decimal | str | int = Decimal("0.01")):
        self.tick_size = Decimal(tick_size)
        if self.tick_size <= 0:
            raise ValueError("tick_size must be positive")
        self.bids = _BookSide(Side.BUY)
        self.asks = _BookSide(Side.SELL)
        self.index: dict[int, RestingOrder] = {}
        self.event_count = 0
        self.last_timestamp: Optional[int] = None
        self._seq = 0
        self._ticks: dict[Decimal, int] = {}

    # -- conversions ---------------------------------------------------------

    def to_ticks(self, price: Decimal) -> int:
        ticks = self._ticks.get(price)
        if ticks is None:
            q = price / self.tick_size
            if q != q.to_integral_value():
                raise BookError(f"price {price} is not a multiple of tick size {self.tick_size}")
            ticks = self._ticks[price] = int(q)
        return ticks

    def to_price(self, ticks: int) -> Decimal:
        return ticks * self.tick_size

    def _side(self, side: Side) -> _BookSide:
        return self.bids if side is Side.BUY else self.asks

    def _other(self, side: Side) -> _BookSide:
        return self.asks if side is Side.BUY else self.bids

    # -- message application -------------------------------------------------

    def apply_message(self, msg: MboMessage) -> BookEvent:
        if msg.action is Action.ADD:
            event = self._add(msg)
        elif msg.action is Action.CANCEL:
            event = self._cancel(msg.order_id)
        else:
            event = self._update(msg)
        self.event_count += 1
        self.last_timestamp = msg.timestamp
        return event

    def _add(self, msg: MboMessage) -> BookEvent:
        oid = msg.order_id
        if oid in self.index:
            raise BookError(f"duplicate add for live order id {oid}")
        if msg.order_type is OrderType.MARKET:
            fills, _ = self._match(msg.side, None, msg.size, oid)
            return BookEvent(EventKind.EXECUTED, (oid,) + tuple(f.maker_id for f in fills), fills)
        price = self.to_ticks(msg.price)
        fills, left = self._match(msg.side, price, msg.size, oid)
        if left > 0:
            self._rest(oid, msg.side, price, left)
        if fills:
            return BookEvent(EventKind.EXECUTED, (oid,) + tuple(f.maker_id for f in fills), fills)
        return BookEvent(EventKind.ADDED, (oid,))

    def _cancel(self, oid: int) -> BookEvent:
        order = self.index.get(oid)
        if order is None:
            raise BookError(f"cancel for unknown order id {oid}")
        self._remove(order)
        return BookEvent(EventKind.CANCELLED, (oid,))

    def _update(self, msg: MboMessage) -> BookEvent:
        oid = msg.order_id
        order = self.index.get(oid)
        if order is None:
            raise BookError(f"update for unknown order id {oid}")
        if msg.side is not order.side:
            raise BookError(f"update changes side of order id {oid}")
        price = self.to_ticks(msg.price)
        size = msg.size
        if size == 0:
            self._remove(order)
            return BookEvent(EventKind.UPDATED, (oid,))
        if price == order.price and size <= order.remaining_size:
            level = self._side(order.side).levels[price]
            level.total -= order.remaining_size - size
            order.remaining_size = size
            return BookEvent(EventKind.UPDATED, (oid,))
        self._remove(order)
        fills, left = self._match(order.side, price, size, oid)
        if left > 0:
            self._rest(oid, order.side, price, left)
        if fills:
            return BookEvent(EventKind.EXECUTED, (oid,) + tuple(f.maker_id for f in fills), fills)
        return BookEvent(EventKind.UPDATED, (oid,))

    def _rest(self, oid: int, side: Side, price: int, size: Decimal) -> None:
        self._seq += 1
        order = RestingOrder(oid, side, price, size, self._seq)
        level = self._side(side).level_for(price)
        level.orders[oid] = order
        level.total += size
        self.index[oid] = order

    def _remove(self, order: RestingOrder) -> None:
        book_side = self._side(order.side)
        level = book_side.levels[order.price]
        del level.orders[order.order_id]
        level.total -= order.remaining_size
        del self.index[order.order_id]
        if not level.orders:
            book_side.drop(order.price)

    def _match(self, side: Side, limit: Optional[int], qty: Decimal,
               taker: int) -> tuple[tuple[Fill, ...], Decimal]:
        """Consume opposite liquidity; returns fills and unfilled quantity."""
        opp = self._other(side)
        fills = []
        while qty > 0 and opp.keys:
            price = opp.keys[0] * opp.sign
            if limit is not None and (price > limit if side is Side.BUY else price < limit):
                break
            level = opp.levels[price]
            orders = level.orders
            while qty > 0 and orders:
                oid = next(iter(orders))
                maker = orders[oid]
                take = min(qty, maker.remaining_size)
                fills.append(Fill(oid, taker, price, take))
                maker.remaining_size -= take
                level.total -= take
                qty -= take
                if maker.remaining_size == 0:
                    del orders[oid]
                    del self.index[oid]
            if not orders:
                opp.drop(price)
        return tuple(fills), qty

    # -- queries -------------------------------------------------------------

    def best_bid(self) -> Optional[PriceLevel]:
        return self.bids.best()

    def best_ask(self) -> Optional[PriceLevel]:
        return self.asks.best()

    def level_rank(self, side: Side, price: int) -> int:
        """0-based level index ``price`` occupies (or would occupy) on ``side``."""
        return self._side(side).rank(price)

    def order(self, oid: int) -> Optional[RestingOrder]:
        return self.index.get(oid)

    def queue_position(self, oid: int) -> int:
        order = self.index[oid]
        level = self._side(order.side).levels[order.price]
        for pos, other in enumerate(level.orders):
            if other == oid:
                return pos
        raise AssertionError("index out of sync")  # pragma: no cover

    def state(self) -> tuple:
        """Canonical, comparable view: levels, totals and queue contents."""
        return tuple(
            tuple((lvl.price, lvl.total,
                   tuple((o.order_id, o.remaining_size, o.arrival_sequence)
                         for o in lvl.orders.values()))
                  for lvl in s.top(len(s.keys)))
            for s in (self.bids, self.asks)
        )


def best_state(book: LimitOrderBook) -> BestState:
    bid, ask = book.best_bid(), book.best_ask()
    return BestState(
        None if bid is None else book.to_price(bid.price),
        None if bid is None else bid.total,
        None if ask is None else book.to_price(ask.price),
        None if ask is None else ask.total,
    )


def snapshot(book: LimitOrderBook, depth: int = SNAPSHOT_DEPTH) -> LobSnapshot:
    if depth < 1:
        raise ValueError("depth must be positive")
    to_price = book.to_price
    return LobSnapshot(
        book.last_timestamp or 0,
        tuple((to_price(lvl.price), lvl.total) for lvl in book.asks.top(depth)),
        tuple((to_price(lvl.price), lvl.total) for lvl in book.bids.top(depth)),
    )


def validate_book(book: LimitOrderBook) -> list[str]:
    """List every broken book invariant; empty when the book is consistent."""
    problems: list[str] = []
    seen: set[int] = set()
    for s in (book.bids, book.asks):
        name = s.side.name.lower()
        if sorted(s.keys) != s.keys or len(set(s.keys)) != len(s.keys):
            problems.append(f"{name}: level keys not strictly sorted")
        if {k * s.sign for k in s.keys} != set(s.levels):
            problems.append(f"{name}: level keys out of sync with levels")
        for price, level in s.levels.items():
            where = f"{name} level {book.to_price(price)}"
            if level.price != price:
                problems.append(f"{where}: stored price {level.price} differs")
            if not level.orders:
                problems.append(f"{where}: empty level")
            total = sum((o.remaining_size for o in level.orders.values()), Decimal(0))
            if total != level.total:
                problems.append(f"{where}: total {level.total} != sum of orders {total}")
            last_seq = None
            for oid, o in level.orders.items():
                if oid != o.order_id:
                    problems.append(f"{where}: queue key {oid} holds order {o.order_id}")
                if o.remaining_size <= 0:
                    problems.append(f"order {oid}: non-positive remaining size")
                if o.side is not s.side or o.price != price:
                    problems.append(f"order {oid}: located at wrong side/price")
                if last_seq is not None and o.arrival_sequence <= last_seq:
                    problems.append(f"order {oid}: FIFO arrival sequence out of order")
                last_seq = o.arrival_sequence
                if book.index.get(oid) is not o:
                    problems.append(f"order {oid}: missing from id index")
                if oid in seen:
                    problems.append(f"order {oid}: appears in more than one queue")
                seen.add(oid)
    for oid in book.index.keys() - seen:
        problems.append(f"order {oid}: indexed but not queued")
    bid, ask = book.best_bid(), book.best_ask()
    if bid is not None and ask is not None and bid.price >= ask.price:
        problems.append(f"crossed book: best bid {book.to_price(bid.price)} "
                        f">= best ask {book.to_price(ask.price)}")
    return problems


def replay(messages, tick_size: Decimal | str = Decimal("0.01"), unknown_ids: str = "error"):
    """Apply a stream to a fresh book, yielding ``(book, msg, event)`` per message.

    With ``unknown_ids="lenient"`` a cancel for an unseen ID is ignored (event
    None) and an update for one is taken as the add of an order that predates
    the stream, which is how a feed cut mid-session starts.
    """
    if unknown_ids not in ("error", "lenient"):
        raise ValueError("unknown_ids must be 'error' or 'lenient'")
    book = LimitOrderBook(tick_size)
    for msg in messages:
        if unknown_ids == "lenient" and msg.action is not Action.ADD and msg.order_id not in book.index:
            if msg.action is Action.CANCEL:
                book.event_count += 1
                book.last_timestamp = msg.timestamp
                yield book, msg, None
                continue
            msg = replace(msg, action=Action.ADD)
        yield book, msg, book.apply_message(msg)
