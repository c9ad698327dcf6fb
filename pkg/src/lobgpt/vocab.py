"""Token vocabulary and the 24-slot message tokenizer.

Id layout (layout version 1), contiguous and disjoint::

    SPECIAL    0..2        mask=0, nan=1, sink=2
    TYPE       3..7        Add, Execute, ExecuteAtPrice, Cancel, Replace
    SIDE       8..9        bid, ask
    SIGN       10..11      +, -
    PRICE_MAG  12..1011    0..999
    TIME_COMP  1012..2011  0..999
    SIZE       2012..12011 0..9999
    TICKER     12012..     one id per symbol

Slot layout of a tokenized message::

    0 ticker   1 type   2 side   3 price sign   4 price magnitude
    5 size     6 size_aux       7 dt seconds   8-10 dt nanoseconds (base-1000 digits)
    11-12 time seconds   13-15 time nanoseconds
    16 ref sign   17 ref magnitude   18 ref size
    19-20 ref time seconds   21-23 ref time nanoseconds
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .feed import MsgType, Side
from .preprocess import PreMessage

__all__ = [
    "Vocabulary",
    "build_vocab",
    "encode",
    "decode",
    "encode_many",
    "decode_many",
    "slot_mask",
    "EncodeError",
    "DecodeError",
    "MSG_LEN",
    "MASK_ID",
    "NAN_ID",
    "SINK_ID",
    "BASE_VOCAB_SIZE",
    "LAYOUT_VERSION",
    "write_tokens",
    "read_tokens",
]

MSG_LEN = 24
MASK_ID, NAN_ID, SINK_ID = 0, 1, 2
LAYOUT_VERSION = 1

_RANGE_SIZES = (
    ("SPECIAL", 3),
    ("TYPE", len(MsgType)),
    ("SIDE", 2),
    ("SIGN", 2),
    ("PRICE_MAG", 1000),
    ("TIME_COMP", 1000),
    ("SIZE", 10000),
)
BASE_VOCAB_SIZE = sum(n for _, n in _RANGE_SIZES)  # 12,012

# range name and nullability for each slot
_SLOTS: tuple[tuple[str, bool], ...] = (
    ("TICKER", False),
    ("TYPE", False),
    ("SIDE", False),
    ("SIGN", True),
    ("PRICE_MAG", True),
    ("SIZE", False),
    ("SIZE", True),
    ("TIME_COMP", False),
    *(("TIME_COMP", False),) * 3,
    *(("TIME_COMP", False),) * 2,
    *(("TIME_COMP", False),) * 3,
    ("SIGN", True),
    ("PRICE_MAG", True),
    ("SIZE", True),
    *(("TIME_COMP", True),) * 5,
)
assert len(_SLOTS) == MSG_LEN


class EncodeError(ValueError):
    pass


class DecodeError(ValueError):
    def __init__(self, slot: int, token: int, message: str = ""):
        super().__init__(f"slot {slot}: token {token} {message or 'outside the slot legal range'}")
        self.slot = slot
        self.token = token


@dataclass(frozen=True)
class Vocabulary:
    n_tickers: int

    def __post_init__(self) -> None:
        if not 1 <= self.n_tickers <= 1000:
            raise ValueError("ticker count must be in [1, 1000]")

    @cached_property
    def ranges(self) -> dict[str, tuple[int, int]]:
        """Half-open ``[start, stop)`` id range per field kind."""
        out, start = {}, 0
        for name, n in (*_RANGE_SIZES, ("TICKER", self.n_tickers)):
            out[name] = (start, start + n)
            start += n
        return out

    @property
    def size(self) -> int:
        return BASE_VOCAB_SIZE + self.n_tickers

    def __len__(self) -> int:
        return self.size

    def base(self, name: str) -> int:
        return self.ranges[name][0]

    def range_of(self, token: int) -> str:
        for name, (a, b) in self.ranges.items():
            if a <= token < b:
                return name
        raise KeyError(token)

    @cached_property
    def digest(self) -> str:
        desc = f"lobgpt-vocab/{LAYOUT_VERSION}/" + ",".join(f"{k}:{a}-{b}" for k, (a, b) in self.ranges.items())
        return hashlib.sha256(desc.encode()).hexdigest()[:16]

    @cached_property
    def _masks(self) -> tuple[np.ndarray, ...]:
        out = []
        for name, nullable in _SLOTS:
            a, b = self.ranges[name]
            ids = np.arange(a, b)
            if nullable:
                ids = np.concatenate([[NAN_ID], ids])
            ids.setflags(write=False)
            out.append(ids)
        return tuple(out)

    @cached_property
    def _bool_masks(self) -> np.ndarray:
        m = np.zeros((MSG_LEN, self.size), dtype=bool)
        for i, ids in enumerate(self._masks):
            m[i, ids] = True
        m.setflags(write=False)
        return m

    def slot_ids(self, slot: int) -> np.ndarray:
        return self._masks[slot]

    def slot_bool_mask(self, slot: int) -> np.ndarray:
        return self._bool_masks[slot]


def build_vocab(n_tickers: int = 98) -> Vocabulary:
    return Vocabulary(n_tickers)


def slot_mask(slot_index: int, v: Vocabulary) -> np.ndarray:
    """Sorted ids legal in ``slot_index`` (NaN included for nullable slots)."""
    if not 0 <= slot_index < MSG_LEN:
        raise IndexError(slot_index)
    return v.slot_ids(slot_index)


def _digits(value: int, n: int) -> list[int]:
    out = []
    for _ in range(n):
        value, d = divmod(value, 1000)
        out.append(d)
    if value:
        raise EncodeError(f"value does not fit {n} base-1000 digits")
    return out[::-1]


def _undigits(ds) -> int:
    v = 0
    for d in ds:
        v = v * 1000 + d
    return v


def encode(pre: PreMessage, v: Vocabulary) -> np.ndarray:
    """Tokenize one PreMessage into 24 vocabulary ids."""
    t = np.empty(MSG_LEN, dtype=np.int64)
    b = v.ranges

    def put(slot: int, kind: str, value: int | None, hi: int) -> None:
        if value is None:
            if not _SLOTS[slot][1]:
                raise EncodeError(f"slot {slot} is not nullable")
            t[slot] = NAN_ID
            return
        if not 0 <= value < hi:
            raise EncodeError(f"slot {slot}: value {value} outside [0, {hi})")
        t[slot] = b[kind][0] + value

    def put_price(slot: int, rel: int | None) -> None:
        if rel is None:
            put(slot, "SIGN", None, 2)
            put(slot + 1, "PRICE_MAG", None, 1000)
        else:
            put(slot, "SIGN", 1 if rel < 0 else 0, 2)
            put(slot + 1, "PRICE_MAG", abs(rel), 1000)

    def put_digits(slot: int, value: int | None, n: int) -> None:
        ds = [None] * n if value is None else _digits(value, n)
        for i, d in enumerate(ds):
            put(slot + i, "TIME_COMP", d, 1000)

    put(0, "TICKER", pre.symbol_id, v.n_tickers)
    put(1, "TYPE", int(pre.msg_type), len(MsgType))
    put(2, "SIDE", int(pre.side), 2)
    put_price(3, pre.price_rel)
    put(5, "SIZE", pre.size, 10000)
    put(6, "SIZE", pre.size_aux, 10000)
    put(7, "TIME_COMP", pre.dt_s, 1000)
    put_digits(8, pre.dt_ns, 3)
    put_digits(11, pre.time_s, 2)
    put_digits(13, pre.time_ns, 3)
    if pre.msg_type is MsgType.ADD:
        for i in range(16, MSG_LEN):
            t[i] = NAN_ID
    else:
        put_price(16, pre.ref_price_rel)
        put(18, "SIZE", pre.ref_size, 10000)
        put_digits(19, pre.ref_time_s, 2)
        put_digits(21, pre.ref_time_ns, 3)
    return t


def decode(tokens, v: Vocabulary) -> PreMessage:
    """Inverse of :func:`encode`; raw-only fields come back as ``None``."""
    tok = [int(x) for x in tokens]
    if len(tok) != MSG_LEN:
        raise ValueError(f"expected {MSG_LEN} tokens, got {len(tok)}")
    for i, x in enumerate(tok):
        kind, nullable = _SLOTS[i]
        a, b = v.ranges[kind]
        if not (a <= x < b or (nullable and x == NAN_ID)):
            raise DecodeError(i, x)

    def val(i: int) -> int | None:
        x = tok[i]
        return None if x == NAN_ID else x - v.ranges[_SLOTS[i][0]][0]

    def price(i: int) -> int | None:
        sign, mag = val(i), val(i + 1)
        if sign is None or mag is None:
            return None
        return -mag if sign == 1 else mag

    def digits(i: int, n: int) -> int | None:
        ds = [val(i + k) for k in range(n)]
        return None if any(d is None for d in ds) else _undigits(ds)

    time_s = digits(11, 2)
    if time_s is not None and time_s >= 86400:
        raise DecodeError(11, tok[11], "time of day past midnight")
    return PreMessage(
        symbol_id=val(0),
        order_id=None,
        msg_type=MsgType(val(1)),
        side=Side(val(2)),
        price_abs=None,
        price_rel=price(3),
        size=val(5),
        size_aux=val(6),
        dt_s=val(7),
        dt_ns=digits(8, 3),
        time_s=time_s,
        time_ns=digits(13, 3),
        old_id=None,
        old_price_abs=None,
        ref_price_rel=price(16),
        ref_size=val(18),
        ref_time_s=digits(19, 2),
        ref_time_ns=digits(21, 3),
    )


def encode_many(pres, v: Vocabulary) -> np.ndarray:
    """Flat token stream, ``24 * len(pres)`` ids."""
    if not len(pres):
        return np.zeros(0, dtype=np.int64)
    return np.concatenate([encode(p, v) for p in pres])


def decode_many(tokens, v: Vocabulary) -> list[PreMessage]:
    tokens = np.asarray(tokens)
    if tokens.size % MSG_LEN:
        raise ValueError("token stream is not a whole number of messages")
    return [decode(m, v) for m in tokens.reshape(-1, MSG_LEN)]


# ---- corpus files --------------------------------------------------------
# header: magic 4s, version H, layout H, n_tickers I, n_tokens Q (little-endian)

_TOK_MAGIC = b"LOBT"
_TOK_VERSION = 1
_TOK_HEADER = struct.Struct("<4sHHIQ")


def write_tokens(tokens, v: Vocabulary) -> bytes:
    arr = np.asarray(tokens)
    if arr.size and (arr.min() < 0 or arr.max() >= v.size):
        raise EncodeError("token id outside the vocabulary")
    return _TOK_HEADER.pack(_TOK_MAGIC, _TOK_VERSION, LAYOUT_VERSION, v.n_tickers, arr.size) + arr.astype("<u2").tobytes()


def read_tokens(data: bytes) -> tuple[np.ndarray, Vocabulary]:
    magic, version, layout, s, n = _TOK_HEADER.unpack_from(data)
    if magic != _TOK_MAGIC:
        raise ValueError("not a token corpus (bad magic)")
    if version != _TOK_VERSION or layout != LAYOUT_VERSION:
        raise ValueError(f"unsupported token corpus version {version}/layout {layout}")
    arr = np.frombuffer(data, dtype="<u2", offset=_TOK_HEADER.size, count=n).astype(np.int64)
    return arr, Vocabulary(s)
