"""Seeded zero-intelligence MBO feed generator with an optional planted signal.

Background flow draws independent add / update / cancel / market events; add
prices sit a geometric number of ticks behind the opposite touch.  With
``signal_strength > 0`` the feed also contains momentum episodes: a burst of
same-side adds joining the touch, followed by ``signal_burst_length`` messages
in which each message, with probability ``signal_strength``, pushes the price
in the burst direction (lifting or hitting the opposite touch with a
marketable limit order, cancelling opposite touch liquidity, or improving the
own-side quote).  Every message is checked against a shadow book, so the feed
only contains legal instructions.
"""

from __future__ import annotations

import datetime as _dt
import math
import random
from dataclasses import asdict, dataclass, field
from decimal import Decimal
from typing import Optional

from .book import LimitOrderBook
from .feed_io import Action, MboMessage, OrderType, Side

SESSION_OPEN_NS = (8 * 3600 + 30 * 60) * 1_000_000_000
SESSION_LENGTH_NS = (7 * 3600 + 30 * 60) * 1_000_000_000
_NS_PER_DAY = 86_400 * 1_000_000_000
_EPOCH = _dt.date(1970, 1, 1)


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    n_messages: int = 10_000
    tick_size: str = "0.01"
    initial_mid: str = "70.00"
    p_add: float = 0.40
    p_update: float = 0.10
    p_cancel: float = 0.40
    p_market: float = 0.10
    level_decay: float = 0.25
    lot_size: int = 100
    size_log_mean: float = 2.3
    size_log_sigma: float = 0.8
    min_levels: int = 5
    signal_strength: float = 0.0
    signal_burst_length: int = 40
    burst_size: int = 5
    burst_rate: float = 0.02
    n_days: int = 1
    start_date: str = "2018-01-02"
    first_order_id: int = 462805645163000000

    def validate(self) -> None:
        probs = (self.p_add, self.p_update, self.p_cancel, self.p_market)
        if any(p < 0 for p in probs) or not math.isclose(sum(probs), 1.0, abs_tol=1e-9):
            raise ValueError("event probabilities must be non-negative and sum to 1")
        if not 0.0 <= self.signal_strength <= 1.0:
            raise ValueError("signal_strength must lie in [0, 1]")
        if not 0.0 < self.level_decay <= 1.0:
            raise ValueError("level_decay must lie in (0, 1]")
        if self.n_messages < 0 or self.n_days < 1:
            raise ValueError("n_messages must be >= 0 and n_days >= 1")
        if Decimal(self.tick_size) <= 0:
            raise ValueError("tick_size must be positive")
        if self.signal_burst_length < 1 or self.burst_size < 1:
            raise ValueError("signal_burst_length and burst_size must be >= 1")
        if not 0.0 <= self.first_order_id < 2**64 - self.n_messages:
            raise ValueError("order id range exceeds 64 bits")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Episode:
    """A planted momentum episode, indexed by message position in the feed."""

    direction: int
    burst_start: int
    burst_end: int  # index of the last burst message
    drift_end: int  # exclusive


@dataclass
class SynthFeed:
    messages: list[MboMessage]
    episodes: list[Episode] = field(default_factory=list)


class _Generator:
    def __init__(self, cfg: SynthConfig):
        cfg.validate()
        self.cfg = cfg
        self.rng = random.Random(cfg.seed)
        self.book = LimitOrderBook(cfg.tick_size)
        self.tick = Decimal(cfg.tick_size)
        self.anchor = self.book.to_ticks(Decimal(cfg.initial_mid))
        self.next_id = cfg.first_order_id
        self.live: list[int] = []
        self.live_pos: dict[int, int] = {}
        self.messages: list[MboMessage] = []
        self.episodes: list[Episode] = []
        self.ts = 0

    # -- helpers -------------------------------------------------------------

    def _size(self) -> Decimal:
        lots = max(1, round(self.rng.lognormvariate(self.cfg.size_log_mean, self.cfg.size_log_sigma)))
        return Decimal(lots * self.cfg.lot_size)

    def _depth(self) -> int:
        # geometric on {0, 1, ...}
        u = self.rng.random()
        if self.cfg.level_decay >= 1.0:
            return 0
        return int(math.log(1.0 - u) / math.log(1.0 - self.cfg.level_decay))

    def _track(self, oid: int) -> None:
        self.live_pos[oid] = len(self.live)
        self.live.append(oid)

    def _untrack(self, oid: int) -> None:
        i = self.live_pos.pop(oid)
        last = self.live.pop()
        if last != oid:
            self.live[i] = last
            self.live_pos[last] = i

    def _random_live(self) -> Optional[int]:
        while self.live:
            oid = self.live[self.rng.randrange(len(self.live))]
            if oid in self.book.index:
                return oid
            self._untrack(oid)
        return None

    def _emit(self, order_id: int, order_type: OrderType, side: Optional[Side],
              action: Action, price_ticks: Optional[int], size: Optional[Decimal]) -> None:
        price = None if price_ticks is None else self.book.to_price(price_ticks)
        msg = MboMessage(self.ts, order_id, order_type, side, action, price, size)
        event = self.book.apply_message(msg)
        self.messages.append(msg)
        if action is Action.ADD and order_id in self.book.index:
            self._track(order_id)
        elif action is Action.CANCEL or order_id not in self.book.index:
            if order_id in self.live_pos:
                self._untrack(order_id)
        for fill in event.fills:
            if fill.maker_id not in self.book.index and fill.maker_id in self.live_pos:
                self._untrack(fill.maker_id)

    def _fresh_id(self) -> int:
        oid = self.next_id
        self.next_id += 1
        return oid

    def _touch(self, side: Side) -> Optional[int]:
        lvl = self.book.best_bid() if side is Side.BUY else self.book.best_ask()
        return None if lvl is None else lvl.price

    def _mid_ticks(self) -> float:
        bid, ask = self._touch(Side.BUY), self._touch(Side.SELL)
        if bid is not None and ask is not None:
            return (bid + ask) / 2
        if bid is not None:
            return bid + 0.5
        if ask is not None:
            return ask - 0.5
        return float(self.anchor)

    # -- background events ---------------------------------------------------

    def _limit_add(self, side: Side, behind_own: bool = False) -> None:
        d = self._depth()
        sign = 1 if side is Side.BUY else -1
        opp = self._touch(Side.SELL if side is Side.BUY else Side.BUY)
        own = self._touch(side)
        if behind_own and own is not None:
            price = own - sign * (1 + d)
        elif opp is not None:
            price = opp - sign * (1 + d)
        elif own is not None:
            price = own - sign * d
        else:
            price = math.floor(self._mid_ticks()) if side is Side.BUY else math.ceil(self._mid_ticks())
            price -= sign * (1 + d)
        price = max(price, 1)
        self._emit(self._fresh_id(), OrderType.LIMIT, side, Action.ADD, price, self._size())

    def _background(self) -> None:
        cfg = self.cfg
        for side in (Side.BUY, Side.SELL):
            book_side = self.book.bids if side is Side.BUY else self.book.asks
            if len(book_side.keys) < cfg.min_levels:
                self._limit_add(side, behind_own=bool(book_side.keys))
                return
        u = self.rng.random()
        side = Side.BUY if self.rng.random() < 0.5 else Side.SELL
        if u < cfg.p_add:
            self._limit_add(side)
            return
        u -= cfg.p_add
        if u < cfg.p_update:
            oid = self._random_live()
            if oid is not None:
                self._random_update(oid)
                return
            self._limit_add(side)
            return
        u -= cfg.p_update
        if u < cfg.p_cancel:
            oid = self._random_live()
            if oid is not None:
                self._emit(oid, OrderType.LIMIT, None, Action.CANCEL, None, None)
                return
            self._limit_add(side)
            return
        opp = self.book.best_ask() if side is Side.BUY else self.book.best_bid()
        if opp is None:
            self._limit_add(side)
            return
        size = min(self._size(), opp.total)
        # market orders carry the touch price for the record; the book ignores it
        self._emit(self._fresh_id(), OrderType.MARKET, side, Action.ADD, opp.price, size)

    def _random_update(self, oid: int) -> None:
        order = self.book.index[oid]
        r = self.rng.random()
        sign = 1 if order.side is Side.BUY else -1
        price, size = order.price, order.remaining_size
        if r < 0.5 and size > self.cfg.lot_size:
            lots = int(size) // self.cfg.lot_size
            size = Decimal(self.rng.randrange(1, lots) * self.cfg.lot_size)
        elif r < 0.75:
            size = size + self.cfg.lot_size * self.rng.randrange(1, 5)
        else:
            price = max(1, price - sign * self.rng.randrange(1, 3))
        self._emit(oid, OrderType.LIMIT, order.side, Action.UPDATE, price, size)

    # -- planted signal ------------------------------------------------------

    def _join_touch(self, side: Side) -> None:
        own = self._touch(side)
        if own is None:
            self._limit_add(side)
            return
        self._emit(self._fresh_id(), OrderType.LIMIT, side, Action.ADD, own, self._size())

    def _push(self, direction: int) -> None:
        side = Side.BUY if direction > 0 else Side.SELL
        opp_side = Side.SELL if direction > 0 else Side.BUY
        opp_level = self.book.best_ask() if direction > 0 else self.book.best_bid()
        opp_levels = len((self.book.asks if direction > 0 else self.book.bids).keys)
        r = self.rng.random()
        if opp_level is None or opp_levels <= self.cfg.min_levels:
            r = 1.0
        if r < 0.5:
            self._emit(self._fresh_id(), OrderType.LIMIT, side, Action.ADD,
                       opp_level.price, opp_level.total)
        elif r < 0.75:
            oid = next(iter(reversed(opp_level.orders)))
            self._emit(oid, OrderType.LIMIT, None, Action.CANCEL, None, None)
        else:
            own = self._touch(side)
            opp = self._touch(opp_side)
            if own is not None and opp is not None and abs(opp - own) > 1:
                price = own + direction
            elif own is not None:
                price = own
            else:
                self._limit_add(side)
                return
            self._emit(self._fresh_id(), OrderType.LIMIT, side, Action.ADD, price, self._size())

    # -- driver --------------------------------------------------------------

    def run(self) -> SynthFeed:
        cfg = self.cfg
        n = cfg.n_messages
        start = _dt.date.fromisoformat(cfg.start_date)
        per_day = [n // cfg.n_days + (1 if d < n % cfg.n_days else 0) for d in range(cfg.n_days)]
        day = start
        for count in per_day:
            while day.weekday() >= 5:
                day += _dt.timedelta(days=1)
            day_ns = (day - _EPOCH).days * _NS_PER_DAY + SESSION_OPEN_NS
            mean_gap = SESSION_LENGTH_NS / max(count, 1) * 0.9
            self.ts = day_ns
            end = len(self.messages) + count
            episode: Optional[Episode] = None
            while len(self.messages) < end:
                self.ts += 1 + int(self.rng.expovariate(1.0 / mean_gap))
                i = len(self.messages)
                if episode is not None and i >= episode.drift_end:
                    episode = None
                if episode is None and cfg.signal_strength > 0 and self.rng.random() < cfg.burst_rate \
                        and end - i > cfg.burst_size + cfg.signal_burst_length:
                    direction = 1 if self.rng.random() < 0.5 else -1
                    burst_end = i + cfg.burst_size - 1
                    episode = Episode(direction, i, burst_end, burst_end + 1 + cfg.signal_burst_length)
                    self.episodes.append(episode)
                if episode is not None and i <= episode.burst_end:
                    self._join_touch(Side.BUY if episode.direction > 0 else Side.SELL)
                elif episode is not None and self.rng.random() < cfg.signal_strength:
                    self._push(episode.direction)
                else:
                    self._background()
            day += _dt.timedelta(days=1)
        return SynthFeed(self.messages, self.episodes)


def generate(cfg: SynthConfig) -> SynthFeed:
    """Generate the feed together with the planted episode log."""
    return _Generator(cfg).run()


def generate_feed(cfg: SynthConfig) -> list[MboMessage]:
    return generate(cfg).messages
