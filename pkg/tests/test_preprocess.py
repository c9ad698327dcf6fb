import pytest
from hypothesis import given, strategies as st

from lobgpt.feed import FeedConfig, MsgType, OrderFlowMessage as M, Side
from lobgpt.lob import OrderBook
from lobgpt.preprocess import (
    MidTracker,
    ResolutionError,
    StationarizeError,
    Stationarizer,
    abs_ticks,
    destationarize,
    destationarize_stream,
    premessages_from_bytes,
    premessages_from_csv,
    premessages_to_bytes,
    premessages_to_csv,
    rel_ticks,
    stationarize,
)
from lobgpt.synth import synth_feed

sides = st.sampled_from(list(Side))
mids = st.integers(2, 10**7)


@given(st.integers(-10**6, 10**6), mids, sides)
def test_abs_inverts_rel(rel, mid2, side):
    assert rel_ticks(abs_ticks(rel, mid2, side), mid2, side) == rel


@given(st.integers(1, 10**6), mids, sides)
def test_rel_inverts_abs(price, mid2, side):
    assert abs_ticks(rel_ticks(price, mid2, side), mid2, side) == price


def test_half_tick_mid_rounds_toward_own_side():
    # mid 100.5: a bid at 100 sits one tick on the bid side, an ask at 101 one tick on the ask side
    assert rel_ticks(100, 201, Side.BID) == -1
    assert rel_ticks(101, 201, Side.ASK) == 1
    assert rel_ticks(101, 201, Side.BID) == 0
    assert rel_ticks(100, 201, Side.ASK) == 0
    assert rel_ticks(103, 200, Side.ASK) == 3


def test_stream_round_trip():
    msgs = synth_feed(FeedConfig(seed=8), 6000)
    pres = stationarize(msgs)
    assert destationarize_stream(pres) == msgs


def test_fields_of_an_execute():
    book = OrderBook()
    for m in [M(10, MsgType.ADD, 1, Side.BID, 100, 99), M(20, MsgType.ADD, 2, Side.ASK, 100, 102)]:
        book.apply(m)
    st_ = Stationarizer(book, MidTracker.from_book(book, 20))
    pre = st_.encode(M(1_000_000_025, MsgType.EXECUTE, 1, Side.BID, 40, 99))
    assert (pre.price_rel, pre.size, pre.ref_price_rel, pre.ref_size) == (-2, 40, -2, 100)
    assert (pre.dt_s, pre.dt_ns, pre.time_s, pre.time_ns) == (1, 5, 1, 25)
    assert (pre.ref_time_s, pre.ref_time_ns) == (0, 10)


def test_one_sided_book_carries_mid_forward():
    book = OrderBook()
    tr = MidTracker()
    book.apply(M(1, MsgType.ADD, 1, Side.BID, 5, 99))
    book.apply(M(2, MsgType.ADD, 2, Side.ASK, 5, 101))
    tr.advance(book, 2)
    book.apply(M(3, MsgType.CANCEL, 2, Side.ASK, 5, 101, 0))
    tr.advance(book, 3)
    assert tr.mid2 == 200 and tr.prev_mid2 == 200


def test_encode_errors():
    with pytest.raises(StationarizeError, match="no mid"):
        Stationarizer().encode(M(1, MsgType.ADD, 1, Side.BID, 1, 1))
    st_ = Stationarizer()
    st_.push(M(5, MsgType.ADD, 1, Side.BID, 1, 10))
    with pytest.raises(StationarizeError, match="backwards"):
        st_.encode(M(4, MsgType.ADD, 2, Side.BID, 1, 10))
    with pytest.raises(StationarizeError, match="absent"):
        st_.encode(M(6, MsgType.CANCEL, 9, Side.BID, 1, 10))


def test_clamping_is_counted():
    st_ = Stationarizer()
    st_.push(M(0, MsgType.ADD, 1, Side.BID, 1, 5000))
    pre = st_.push(M(1, MsgType.ADD, 2, Side.ASK, 50000, 9000))
    assert pre.size == 9999 and pre.price_rel == 999 and st_.clamped == 1


def test_destationarize_resolution_errors():
    book = OrderBook()
    book.apply(M(1, MsgType.ADD, 1, Side.BID, 5, 99))
    book.apply(M(2, MsgType.ADD, 2, Side.ASK, 5, 101))
    tr = MidTracker.from_book(book, 2)
    pre = Stationarizer(book, tr).encode(M(3, MsgType.CANCEL, 1, Side.BID, 5, 99, 0))
    assert destationarize(pre, tr, book).order_id == 1
    from dataclasses import replace
    with pytest.raises(ResolutionError, match="no such level"):
        destationarize(replace(pre, ref_price_rel=-7), tr, book)
    with pytest.raises(ResolutionError, match="no matching order"):
        destationarize(replace(pre, ref_size=4), tr, book)
    with pytest.raises(ResolutionError, match="mid-price undefined"):
        destationarize(pre, MidTracker(), book)


def test_dumps_round_trip():
    pres = stationarize(synth_feed(FeedConfig(seed=2), 500))
    assert premessages_from_csv(premessages_to_csv(pres)) == pres
    assert premessages_from_bytes(premessages_to_bytes(pres)) == pres
    with pytest.raises(ValueError):
        premessages_from_csv("x\n")
    with pytest.raises(ValueError):
        premessages_from_bytes(b"NOPE" + bytes(8))
