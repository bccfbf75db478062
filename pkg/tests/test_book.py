from decimal import Decimal

import pytest
from hypothesis import given, strategies as st

from mbodl.book import (BookError, EventKind, LimitOrderBook, best_state, replay, snapshot,
                        validate_book)
from mbodl.feed_io import Action, MboMessage, OrderType, Side, parse_mbo_line

from oracles import book_view, encode_feed, reference_state

BUY, SELL = Side.BUY, Side.SELL
_ts = iter(range(10**12, 10**13))


def add(oid, side, price, size, market=False):
    otype = OrderType.MARKET if market else OrderType.LIMIT
    return MboMessage(next(_ts), oid, otype, side, Action.ADD, Decimal(price), Decimal(size))


def upd(oid, side, price, size):
    return MboMessage(next(_ts), oid, OrderType.LIMIT, side, Action.UPDATE, Decimal(price), Decimal(size))


def cxl(oid):
    return MboMessage(next(_ts), oid, OrderType.LIMIT, None, Action.CANCEL, None, None)


def run(*msgs):
    book = LimitOrderBook("0.01")
    for m in msgs:
        book.apply_message(m)
        assert validate_book(book) == []
    return book


def queue(book, side, price):
    level = (book.bids if side is BUY else book.asks).levels[book.to_ticks(Decimal(price))]
    return [(oid, o.remaining_size) for oid, o in level.orders.items()]


def test_fifo_within_level():
    book = run(add(1, SELL, "10.01", 5), add(2, SELL, "10.01", 5), add(3, BUY, "10.01", 7))
    assert queue(book, SELL, "10.01") == [(2, 3)]
    assert book.best_bid() is None


def test_size_decrease_keeps_priority():
    book = run(add(1, BUY, "10.00", 5), add(2, BUY, "10.00", 5), upd(1, BUY, "10.00", 2))
    assert queue(book, BUY, "10.00") == [(1, 2), (2, 5)]
    assert book.best_bid().total == 7


def test_size_increase_loses_priority():
    book = run(add(1, BUY, "10.00", 5), add(2, BUY, "10.00", 5), upd(1, BUY, "10.00", 8))
    assert queue(book, BUY, "10.00") == [(2, 5), (1, 8)]


def test_price_change_loses_priority():
    book = run(add(1, BUY, "10.00", 5), add(2, BUY, "9.99", 5), upd(1, BUY, "9.99", 5))
    assert queue(book, BUY, "9.99") == [(2, 5), (1, 5)]
    assert 1000 not in book.bids.levels


def test_update_to_zero_removes():
    book = run(add(1, BUY, "10.00", 5), upd(1, BUY, "10.00", 0))
    assert book.index == {} and book.best_bid() is None


def test_crossing_add_matches_then_rests():
    book = run(add(1, SELL, "10.01", 3), add(2, SELL, "10.02", 3), add(3, BUY, "10.02", 10))
    assert book.best_ask() is None
    assert queue(book, BUY, "10.02") == [(3, 4)]


def test_crossing_update_matches():
    book = run(add(1, SELL, "10.02", 3), add(2, BUY, "10.00", 5))
    event = book.apply_message(upd(2, BUY, "10.02", 5))
    assert event.kind is EventKind.EXECUTED
    assert [(f.maker_id, f.quantity) for f in event.fills] == [(1, 3)]
    assert queue(book, BUY, "10.02") == [(2, 2)]
    assert validate_book(book) == []


def test_market_remainder_discarded():
    book = run(add(1, SELL, "10.01", 3))
    event = book.apply_message(add(9, BUY, "10.50", 10, market=True))
    assert event.kind is EventKind.EXECUTED
    assert book.best_ask() is None and book.best_bid() is None and 9 not in book.index


def test_market_walks_levels_at_maker_price():
    book = run(add(1, SELL, "10.01", 3), add(2, SELL, "10.03", 3))
    event = book.apply_message(add(9, BUY, "10.00", 4, market=True))
    assert [(f.price, f.quantity) for f in event.fills] == [(1001, 3), (1003, 1)]


def test_errors():
    book = run(add(1, BUY, "10.00", 5))
    with pytest.raises(BookError, match="duplicate"):
        book.apply_message(add(1, BUY, "10.00", 5))
    with pytest.raises(BookError, match="unknown"):
        book.apply_message(cxl(2))
    with pytest.raises(BookError, match="unknown"):
        book.apply_message(upd(2, BUY, "10.00", 5))
    with pytest.raises(BookError, match="side"):
        book.apply_message(upd(1, SELL, "10.00", 5))
    with pytest.raises(BookError, match="tick"):
        book.apply_message(add(3, BUY, "10.005", 5))


def test_best_state_and_snapshot():
    book = run(add(1, BUY, "10.00", 4), add(2, BUY, "9.98", 1), add(3, SELL, "10.04", 6))
    best = best_state(book)
    assert best.mid_price == Decimal("10.02") and best.mid_size == Decimal(5)
    snap = snapshot(book, 1)
    assert snap.bids == ((Decimal("10.00"), Decimal(4)),)
    assert snap.asks == ((Decimal("10.04"), Decimal(6)),)
    assert best_state(LimitOrderBook()).mid_price is None


def test_validate_detects_corruption():
    book = run(add(1, BUY, "10.00", 4), add(2, SELL, "10.04", 6))
    book.bids.levels[1000].total = Decimal(99)
    assert any("total" in p for p in validate_book(book))


EXCERPT = [
    "2018-01-02 09:21:15.717500766,462805645163273214,1,,2,,",
    "2018-01-02 09:21:18.585446702,462805645163298476,1,1,1,68.54,8334.0",
    "2018-01-02 09:21:20.680552032,462805645163297649,1,1,0,68.56,3227.0",
    "2018-01-02 09:21:20.944574722,462805645163297649,1,,2,,",
    "2018-01-02 09:21:20.945483443,462805645163298567,1,2,1,68.59,5100.0",
]


def test_lenient_replay_of_excerpt():
    msgs = [parse_mbo_line(line) for line in EXCERPT]
    with pytest.raises(BookError):
        list(replay(msgs))
    events = [(event, snapshot(book)) for book, _, event in replay(msgs, unknown_ids="lenient")]
    assert len(events) == 5
    assert events[0][0] is None
    final = events[-1][1]
    assert final.bids == ((Decimal("68.54"), Decimal(8334)),)
    assert final.asks == ((Decimal("68.59"), Decimal(5100)),)


# -- property test against the array-based reference book ---------------------------

@st.composite
def feeds(draw):
    n = draw(st.integers(1, 120))
    msgs, live, sides, next_id = [], [], {}, 1
    for _ in range(n):
        kind = draw(st.sampled_from(["add", "add", "market", "cancel", "update"]))
        if kind in ("cancel", "update") and live:
            oid = draw(st.sampled_from(live))
            side = sides[oid]
            if kind == "cancel":
                live.remove(oid)
                msgs.append(cxl(oid))
            else:
                msgs.append(upd(oid, side, f"{draw(st.integers(995, 1005)) / 100:.2f}",
                                draw(st.integers(0, 12))))
            continue
        side = draw(st.sampled_from([BUY, SELL]))
        oid, next_id = next_id, next_id + 1
        price = f"{draw(st.integers(995, 1005)) / 100:.2f}"
        msgs.append(add(oid, side, price, draw(st.integers(1, 12)), market=kind == "market"))
        if kind != "market":
            live.append(oid)
            sides[oid] = side
    return msgs


@given(feeds())
def test_book_matches_reference(msgs):
    # orders that were filled are treated leniently so random streams stay legal
    book = LimitOrderBook("0.01")
    applied = []
    for m in msgs:
        if m.action is not Action.ADD and m.order_id not in book.index:
            continue
        book.apply_message(m)
        applied.append(m)
        assert validate_book(book) == []
    if applied:
        feed, ids = encode_feed(applied, "0.01")
        assert book_view(book) == reference_state(feed, ids, len(applied))
