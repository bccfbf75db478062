from decimal import Decimal

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mbodl.feed_io import Action, MboMessage, OrderType, Side
from mbodl.features import (FeatureError, Featurizer, WindowFile, ZScore, build_windows,
                            date_split, featurize_feed, gather_windows, normalize,
                            preprocess_message, read_windows, window_ends, write_windows)
from mbodl.synth import SynthConfig, generate_feed

D = Decimal


def msg(oid, action, side=None, price=None, size=None, market=False, ts=0):
    otype = OrderType.MARKET if market else OrderType.LIMIT
    return MboMessage(ts, oid, otype, side, action,
                      None if price is None else D(price), None if size is None else D(size))


def test_preprocess_add_then_update_then_cancel():
    state = {}
    p = preprocess_message(msg(7, Action.ADD, Side.BUY, "68.54", "8334"), state)
    assert (p.change_price, p.change_size) == (0, D(8334))
    p = preprocess_message(msg(7, Action.UPDATE, Side.BUY, "68.56", "3227"), state)
    assert p.change_price == D("0.02") and p.change_size == D(-5107)
    p = preprocess_message(msg(7, Action.CANCEL), state)
    assert (p.side, p.action, p.price, p.size) == (1, -1, D("68.56"), 0)
    assert p.change_size == D(-3227)
    assert state == {}
    with pytest.raises(FeatureError, match="unknown"):
        preprocess_message(msg(7, Action.CANCEL), state)


def test_normalize_values():
    p = preprocess_message(msg(1, Action.ADD, Side.SELL, "10.05", "300"), {})
    feats = normalize(p, D("10.00"), D("150"), D("0.01"))
    assert feats == (2.0, 1.0, 0.05, 2.0, 0.0, 2.0)
    with pytest.raises(FeatureError):
        normalize(p, None, None, D("0.01"))


def _seeded_book():
    fz = Featurizer("0.01")
    oid = 100
    for i in range(12):
        for side, base in ((Side.BUY, 1000 - i), (Side.SELL, 1001 + i)):
            oid += 1
            fz.process(msg(oid, Action.ADD, side, f"{base / 100:.2f}", "100"))
    return fz


def test_ten_level_filter_and_market_orders():
    fz = _seeded_book()
    n = fz.n_filtered
    # eleventh bid level sits at rank 10 and is filtered; rank 9 is kept
    assert fz.process(msg(900, Action.ADD, Side.BUY, "9.90", "100")) is None
    assert fz.process(msg(901, Action.ADD, Side.BUY, "9.91", "100")) is not None
    assert fz.process(msg(902, Action.ADD, Side.BUY, "9.00", "100", market=True)) is None
    assert fz.n_filtered == n + 2
    # the market order still traded, taking out the 10.01 level
    assert fz.book.best_ask().price == 1002


def test_features_use_pre_message_book_and_post_message_mid():
    fz = _seeded_book()
    feats, post_mid, _ = fz.process(msg(950, Action.ADD, Side.BUY, "10.01", "100"))
    # pre-message mid 10.005 and mid size 100; price offset in units of 100 ticks
    assert feats[2] == pytest.approx(0.005)
    assert feats[3] == 1.0
    # the add consumed the best ask; post-message mid is (10.00 + 10.02) / 2
    assert post_mid == pytest.approx(10.01)


def test_stream_columns_and_counts():
    cfg = SynthConfig(seed=2, n_messages=4000, n_days=2)
    s = featurize_feed(generate_feed(cfg), cfg.tick_size)
    assert s.mbo.shape == (len(s), 6) and s.lob.shape == (len(s), 40)
    assert set(np.unique(s.mbo[:, 0])) <= {1.0, 2.0}
    assert set(np.unique(s.mbo[:, 1])) <= {-1.0, 0.0, 1.0}
    assert s.n_messages == 4000 and len(s) + s.n_filtered + s.n_skipped == 4000
    assert np.all(np.diff(s.message_index) > 0)
    # ask ladder ascends, bid ladder descends
    assert np.all(np.diff(s.lob[:, 0::4], axis=1) > 0)
    assert np.all(np.diff(s.lob[:, 2::4], axis=1) < 0)


def test_windows_never_cross_days():
    dates = np.array(["2018-01-02"] * 5 + ["2018-01-03"] * 4, dtype="datetime64[D]")
    ends = window_ends(dates, 3)
    assert list(ends) == [2, 3, 4, 7, 8]
    rows = np.arange(9, dtype=float)[:, None]
    w = gather_windows(rows, ends, 3)
    assert w.shape == (5, 3, 1)
    assert list(w[3, :, 0]) == [5, 6, 7]
    got = list(build_windows(rows, np.arange(9) + 100, dates, 3))
    assert [g.tick_index for g in got] == [102, 103, 104, 107, 108]
    assert all(np.array_equal(g.values, w[i]) for i, g in enumerate(got))


@given(st.lists(st.integers(1, 30), min_size=1, max_size=6), st.integers(1, 10))
def test_window_count(day_lengths, lookback):
    dates = np.concatenate([np.repeat(np.datetime64("2018-01-02") + i, n)
                            for i, n in enumerate(day_lengths)])
    assert len(window_ends(dates, lookback)) == sum(max(0, n - lookback + 1) for n in day_lengths)


def test_zscore():
    rows = np.array([[1.0, 2.0], [3.0, 6.0]])
    z = ZScore.fit(rows, ["a", "b"])
    assert np.allclose(z.transform(rows), [[-1, -1], [1, 1]])
    assert ZScore.from_dict(z.to_dict()).transform(rows).tolist() == z.transform(rows).tolist()
    with pytest.raises(FeatureError, match="b has zero"):
        ZScore.fit(np.array([[1.0, 2.0], [3.0, 2.0]]), ["a", "b"])


def test_window_file_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    wf = WindowFile(rng.standard_normal((20, 6)), np.arange(20) * 3,
                    np.array(["2018-01-02"] * 10 + ["2018-01-03"] * 10, dtype="datetime64[D]"),
                    lookback=4, mode="mbo", instrument="X", meta={"a": 1})
    write_windows(tmp_path / "w.bin", wf)
    back = read_windows(tmp_path / "w.bin")
    assert np.array_equal(back.rows, wf.rows) and np.array_equal(back.tick_index, wf.tick_index)
    assert np.array_equal(back.dates, wf.dates) and back.meta == {"a": 1}
    assert list(back.ends()) == list(wf.ends())
    with open(tmp_path / "w.bin", "ab") as fh:
        fh.write(b"\0" * 8)
    with pytest.raises(FeatureError, match="does not match"):
        read_windows(tmp_path / "w.bin")


def test_date_split_is_chronological():
    dates = np.arange(np.datetime64("2018-01-02"), np.datetime64("2018-01-14"))
    sp = date_split(np.repeat(dates, 3))
    assert [len(sp[k]) for k in ("train", "val", "test")] == [6, 3, 3]
    assert sp["train"].max() < sp["val"].min() and sp["val"].max() < sp["test"].min()
    with pytest.raises(ValueError):
        date_split(dates, (1, 2))
