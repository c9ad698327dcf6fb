import numpy as np
import pytest

from lobgpt.feed import FeedConfig, MsgType, Side
from lobgpt.preprocess import PreMessage, stationarize
from lobgpt.synth import synth_feed
from lobgpt.vocab import (
    BASE_VOCAB_SIZE,
    MSG_LEN,
    NAN_ID,
    DecodeError,
    EncodeError,
    Vocabulary,
    build_vocab,
    decode,
    decode_many,
    encode,
    encode_many,
    read_tokens,
    slot_mask,
    write_tokens,
)


@pytest.mark.parametrize("s", [1, 2, 98, 99, 1000])
def test_size_formula(s):
    v = build_vocab(s)
    assert v.size == len(v) == 12012 + s
    spans = sorted(v.ranges.values())
    assert spans[0][0] == 0 and spans[-1][1] == v.size
    assert all(a[1] == b[0] for a, b in zip(spans, spans[1:]))


def test_reference_layout():
    v = build_vocab(98)
    assert BASE_VOCAB_SIZE == 12012
    assert v.ranges["PRICE_MAG"] == (12, 1012)
    assert v.ranges["SIZE"] == (2012, 12012)
    assert v.ranges["TICKER"] == (12012, 12110)
    assert v.range_of(2) == "SPECIAL" and v.range_of(12109) == "TICKER"


def test_ticker_bounds():
    with pytest.raises(ValueError):
        Vocabulary(0)
    with pytest.raises(ValueError):
        Vocabulary(1001)


def test_digest_depends_on_ticker_count():
    assert build_vocab(3).digest == build_vocab(3).digest != build_vocab(4).digest


def test_slot_masks():
    v = build_vocab(2)
    assert list(slot_mask(0, v)) == [12012, 12013]
    assert list(slot_mask(1, v)) == [3, 4, 5, 6, 7]
    assert NAN_ID in slot_mask(4, v) and NAN_ID not in slot_mask(5, v)
    for i in range(MSG_LEN):
        ids = slot_mask(i, v)
        assert (np.diff(ids) > 0).all()
        assert v.slot_bool_mask(i).sum() == ids.size
    with pytest.raises(IndexError):
        slot_mask(24, v)


def _pre(**kw):
    base = dict(symbol_id=1, order_id=None, msg_type=MsgType.CANCEL, side=Side.ASK, price_abs=None,
                price_rel=-3, size=10, size_aux=5, dt_s=2, dt_ns=123_456_789, time_s=36_000, time_ns=7,
                old_id=None, old_price_abs=None, ref_price_rel=-3, ref_size=15, ref_time_s=35_999, ref_time_ns=999_999_999)
    base.update(kw)
    return PreMessage(**base)


def test_hand_checked_tokens():
    v = build_vocab(2)
    t = encode(_pre(), v)
    tc = v.base("TIME_COMP")
    assert list(t[:8]) == [12013, 6, 9, 11, 15, 2022, 2017, tc + 2]
    assert list(t[8:11]) == [tc + 123, tc + 456, tc + 789]
    assert list(t[11:13]) == [tc + 36, tc + 0]
    assert list(t[21:24]) == [tc + 999] * 3
    assert decode(t, v) == _pre()


def test_add_has_nan_reference_slots():
    v = build_vocab(2)
    pre = _pre(msg_type=MsgType.ADD, size_aux=None, ref_price_rel=None, ref_size=None, ref_time_s=None, ref_time_ns=None)
    t = encode(pre, v)
    assert (t[16:] == NAN_ID).all() and t[6] == NAN_ID
    assert decode(t, v) == pre


@pytest.mark.parametrize("kw", [dict(price_rel=1000), dict(size=10000), dict(dt_s=1000), dict(symbol_id=2),
                                dict(time_s=10**6), dict(size=None)])
def test_encode_rejects_out_of_range(kw):
    with pytest.raises(EncodeError):
        encode(_pre(**kw), build_vocab(2))


def test_decode_rejects_illegal_slot_token():
    v = build_vocab(2)
    t = encode(_pre(), v)
    bad = t.copy()
    bad[5] = NAN_ID
    with pytest.raises(DecodeError) as ei:
        decode(bad, v)
    assert ei.value.slot == 5
    late = t.copy()
    late[11], late[12] = v.base("TIME_COMP") + 86, v.base("TIME_COMP") + 400  # 86,400 s
    with pytest.raises(DecodeError, match="midnight"):
        decode(late, v)
    with pytest.raises(ValueError):
        decode(t[:23], v)


def test_stream_round_trip_and_length():
    v = build_vocab(1)
    pres = [p.without_raw() for p in stationarize(synth_feed(FeedConfig(seed=4), 3000))]
    toks = encode_many(pres, v)
    assert toks.size == MSG_LEN * len(pres)
    assert decode_many(toks, v) == pres
    arr, v2 = read_tokens(write_tokens(toks, v))
    assert v2 == v and (arr == toks).all()


def test_corpus_file_errors():
    v = build_vocab(1)
    with pytest.raises(EncodeError):
        write_tokens([v.size], v)
    with pytest.raises(ValueError, match="magic"):
        read_tokens(b"XXXX" + bytes(16))
