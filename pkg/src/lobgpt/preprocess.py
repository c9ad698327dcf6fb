"""Stationary 18-field message representation and its inverse.

Prices become signed tick offsets from the mid-price prevailing before the
message; timestamps become an inter-arrival gap plus time of day, both split
into seconds and nanoseconds. Referential messages also carry the referenced
resting order's relative price, size and entry time so that the target can
be found again from a book.

The mid-price is tracked in half-ticks. When it falls on a half-tick the
offset is rounded away from the mid on the message's own side (down for
bids, up for asks), which keeps the mapping invertible and never flips the
sign of a quote sitting at the touch.
"""

from __future__ import annotations

import csv
import io
import struct
from dataclasses import astuple, dataclass, fields
from typing import Iterable, Sequence

import numpy as np

from .feed import NS_PER_SECOND, MsgType, OrderFlowMessage, Side
from .lob import OrderBook, PriceLevel, RestingOrder

__all__ = [
    "PreMessage",
    "MidTracker",
    "Stationarizer",
    "StationarizeError",
    "ResolutionError",
    "stationarize",
    "destationarize",
    "destationarize_stream",
    "find_reference",
    "rel_ticks",
    "abs_ticks",
    "MAX_REL_PRICE",
    "MAX_SIZE",
    "MAX_DT_SECONDS",
    "premessages_to_csv",
    "premessages_from_csv",
    "premessages_to_bytes",
    "premessages_from_bytes",
]

MAX_REL_PRICE = 999
MAX_SIZE = 9999
MAX_DT_SECONDS = 999


@dataclass(frozen=True, slots=True)
class PreMessage:
    symbol_id: int
    order_id: int | None  # raw, not tokenized
    msg_type: MsgType
    side: Side
    price_abs: int | None  # raw, not tokenized
    price_rel: int | None
    size: int | None
    size_aux: int | None
    dt_s: int
    dt_ns: int
    time_s: int
    time_ns: int
    old_id: int | None  # raw, not tokenized
    old_price_abs: int | None  # raw, not tokenized
    ref_price_rel: int | None
    ref_size: int | None
    ref_time_s: int | None
    ref_time_ns: int | None

    @property
    def timestamp_ns(self) -> int:
        return self.time_s * NS_PER_SECOND + self.time_ns

    @property
    def dt_total_ns(self) -> int:
        return self.dt_s * NS_PER_SECOND + self.dt_ns

    @property
    def ref_time_total_ns(self) -> int | None:
        if self.ref_time_s is None or self.ref_time_ns is None:
            return None
        return self.ref_time_s * NS_PER_SECOND + self.ref_time_ns

    def without_raw(self) -> "PreMessage":
        """Copy with the raw (never tokenized) fields set to ``None``."""
        return _replace(self, order_id=None, price_abs=None, old_id=None, old_price_abs=None)


def _replace(pre: PreMessage, **kw) -> PreMessage:
    d = {f.name: getattr(pre, f.name) for f in fields(PreMessage)}
    d.update(kw)
    return PreMessage(**d)


PREMESSAGE_FIELDS = tuple(f.name for f in fields(PreMessage))


class StationarizeError(ValueError):
    pass


class ResolutionError(LookupError):
    """A decoded referential message could not be tied to a resting order."""

    def __init__(self, kind: str, detail: str = ""):
        super().__init__(f"{kind}{': ' + detail if detail else ''}")
        self.kind = kind


def rel_ticks(price: int, mid2: int, side: Side) -> int:
    """Signed tick offset of ``price`` from a mid given in half-ticks."""
    d2 = 2 * price - mid2
    if d2 % 2 == 0:
        return d2 // 2
    return (d2 - 1) // 2 if side is Side.BID else (d2 + 1) // 2


def abs_ticks(rel: int, mid2: int, side: Side) -> int:
    """Inverse of :func:`rel_ticks`."""
    if mid2 % 2 == 0:
        return mid2 // 2 + rel
    return (2 * rel + mid2 + 1) // 2 if side is Side.BID else (2 * rel + mid2 - 1) // 2


@dataclass
class MidTracker:
    """Mid-price in half-ticks plus the stream's last timestamp.

    While the book is one-sided or empty the last two-sided mid is carried
    forward.
    """

    mid2: int | None = None
    prev_mid2: int | None = None
    last_ts: int | None = None

    def advance(self, book: OrderBook, timestamp_ns: int) -> None:
        self.prev_mid2 = self.mid2
        m = book.mid_half_ticks()
        if m is not None:
            self.mid2 = m
        self.last_ts = timestamp_ns

    @classmethod
    def from_book(cls, book: OrderBook, last_ts: int | None = None) -> "MidTracker":
        return cls(book.mid_half_ticks(), None, last_ts)


def _split(ns: int) -> tuple[int, int]:
    return ns // NS_PER_SECOND, ns % NS_PER_SECOND


class Stationarizer:
    """Streaming converter ``OrderFlowMessage -> PreMessage``.

    Owns (and mutates) the book it replays messages into. ``clamped`` counts
    messages with at least one field truncated to the vocabulary limits.
    """

    def __init__(self, book: OrderBook | None = None, tracker: MidTracker | None = None):
        self.book = OrderBook() if book is None else book
        self.tracker = MidTracker.from_book(self.book) if tracker is None else tracker
        self.clamped = 0
        self.count = 0
        self._hit = False

    def _clamp(self, v: int, lim: int, lo: int | None = None) -> int:
        lo = -lim if lo is None else lo
        if v > lim or v < lo:
            self._hit = True
            return max(lo, min(lim, v))
        return v

    def _rel(self, price: int, mid2: int, side: Side) -> int:
        return self._clamp(rel_ticks(price, mid2, side), MAX_REL_PRICE)

    def _size(self, v: int | None) -> int | None:
        return None if v is None else self._clamp(v, MAX_SIZE, 0)

    def encode(self, msg: OrderFlowMessage) -> PreMessage:
        """Stationarize ``msg`` against the current state without applying it."""
        self._hit = False
        tr = self.tracker
        mid2 = tr.mid2
        if mid2 is None:
            raise StationarizeError("no mid-price available")
        dt = 0 if tr.last_ts is None else msg.timestamp_ns - tr.last_ts
        if dt < 0:
            raise StationarizeError(f"timestamp {msg.timestamp_ns} moves backwards")
        dt_s, dt_ns = _split(dt)
        dt_s = self._clamp(dt_s, MAX_DT_SECONDS, 0)
        time_s, time_ns = _split(msg.timestamp_ns)
        t = msg.msg_type
        if t is MsgType.ADD:
            if msg.side is None or msg.price is None:
                raise StationarizeError(f"add {msg.order_id} lacks side or price")
            return PreMessage(
                msg.symbol_id, msg.order_id, t, msg.side, msg.price, self._rel(msg.price, mid2, msg.side),
                self._size(msg.size), None, dt_s, dt_ns, time_s, time_ns, None, None, None, None, None, None,
            )
        target = self.book.get(msg.order_id)
        if target is None:
            raise StationarizeError(f"{t.name} references order {msg.order_id} absent from the book")
        side = target.side
        ref_rel = self._rel(target.price, mid2, side)
        ref_size = self._size(target.size)
        ref_s, ref_ns = _split(target.entry_time_ns)
        common = dict(dt_s=dt_s, dt_ns=dt_ns, time_s=time_s, time_ns=time_ns, ref_price_rel=ref_rel,
                      ref_size=ref_size, ref_time_s=ref_s, ref_time_ns=ref_ns)
        if t is MsgType.EXECUTE:
            return PreMessage(msg.symbol_id, target.order_id, t, side, target.price, ref_rel, self._size(msg.size),
                              None, old_id=None, old_price_abs=None, **common)
        if t is MsgType.EXECUTE_AT_PRICE:
            px = msg.exec_or_new_price
            return PreMessage(msg.symbol_id, target.order_id, t, side, px, self._rel(px, mid2, side),
                              self._size(msg.size), None, old_id=target.order_id, old_price_abs=target.price,
                              **common)
        if t is MsgType.CANCEL:
            remaining = target.size - (msg.size or 0)
            return PreMessage(msg.symbol_id, target.order_id, t, side, target.price, ref_rel, self._size(msg.size),
                              self._size(remaining), old_id=None, old_price_abs=None, **common)
        px = msg.exec_or_new_price
        return PreMessage(msg.symbol_id, msg.new_order_id, t, side, px, self._rel(px, mid2, side),
                          self._size(target.size), self._size(msg.size), old_id=target.order_id,
                          old_price_abs=target.price, **common)

    def push(self, msg: OrderFlowMessage) -> PreMessage:
        if self.tracker.mid2 is None and msg.msg_type is MsgType.ADD and msg.price is not None:
            # an empty book's first quote is encoded relative to itself
            self.tracker.mid2 = 2 * msg.price
        pre = self.encode(msg)
        if self._hit:
            self.clamped += 1
        self.count += 1
        self.book.apply(msg)
        self.tracker.advance(self.book, msg.timestamp_ns)
        return pre


def stationarize(
    msgs: Iterable[OrderFlowMessage], book: OrderBook | None = None, tracker: MidTracker | None = None
) -> list[PreMessage]:
    """Stationarize a replayable message stream.

    ``book`` is the book state before the first message (it is mutated);
    ``tracker`` optionally carries the mid and last timestamp from history.
    """
    st = Stationarizer(book, tracker)
    return [st.push(m) for m in msgs]


def find_reference(pre: PreMessage, mid2: int, book: OrderBook) -> tuple[PriceLevel | None, RestingOrder | None]:
    """Locate the level a referential message points at and an exact match in it.

    The level price is ``mid + ref_price_rel``. A match is an order at that
    level whose entry time and current size equal the reference fields; when
    several match, the raw id (if present) breaks the tie, else queue order.
    """
    if pre.ref_price_rel is None:
        return None, None
    price = abs_ticks(pre.ref_price_rel, mid2, pre.side)
    level = book.level(pre.side, price)
    if level is None or not len(level):
        return None, None
    want_t, want_s = pre.ref_time_total_ns, pre.ref_size
    prefer = pre.old_id if pre.msg_type in (MsgType.REPLACE, MsgType.EXECUTE_AT_PRICE) else pre.order_id
    if prefer is not None:
        o = level.orders.get(prefer)
        if o is not None and o.entry_time_ns == want_t and o.size == want_s:
            return level, o
    for o in level:
        if o.entry_time_ns == want_t and o.size == want_s:
            return level, o
    return level, None


def build_message(
    pre: PreMessage, mid2: int, target: RestingOrder | None, timestamp_ns: int, new_order_id: int | None = None
) -> OrderFlowMessage:
    """Absolute message for ``pre`` given the resolved target order."""
    t = pre.msg_type
    sym = pre.symbol_id
    if pre.price_rel is None:
        raise ResolutionError("missing price")
    if t is MsgType.ADD:
        oid = pre.order_id if pre.order_id is not None else new_order_id
        if oid is None:
            raise ValueError("add needs an order id")
        price = abs_ticks(pre.price_rel, mid2, pre.side)
        return OrderFlowMessage(timestamp_ns, t, oid, pre.side, pre.size, price, symbol_id=sym)
    if target is None:
        raise ResolutionError("no matching order")
    if pre.size is None:
        raise ResolutionError("missing size")
    if t is MsgType.EXECUTE:
        return OrderFlowMessage(timestamp_ns, t, target.order_id, target.side, pre.size, target.price, symbol_id=sym)
    if t is MsgType.EXECUTE_AT_PRICE:
        px = abs_ticks(pre.price_rel, mid2, pre.side)
        return OrderFlowMessage(timestamp_ns, t, target.order_id, target.side, pre.size, target.price,
                                exec_or_new_price=px, symbol_id=sym)
    if t is MsgType.CANCEL:
        return OrderFlowMessage(timestamp_ns, t, target.order_id, target.side, pre.size, target.price,
                                target.size - pre.size, symbol_id=sym)
    new_id = pre.order_id if pre.order_id is not None else new_order_id
    if new_id is None:
        raise ValueError("replace needs a new order id")
    if pre.size_aux is None:
        raise ResolutionError("missing new size")
    px = abs_ticks(pre.price_rel, mid2, pre.side)
    return OrderFlowMessage(timestamp_ns, t, target.order_id, target.side, pre.size_aux, target.price,
                            target.size, new_id, px, sym)


def next_timestamp(pre: PreMessage, tracker: MidTracker) -> int:
    if tracker.last_ts is None:
        return pre.timestamp_ns
    return tracker.last_ts + pre.dt_total_ns


def destationarize(
    pre: PreMessage, mid: MidTracker, book: OrderBook, new_order_id: int | None = None
) -> OrderFlowMessage:
    """Reconstruct the absolute message; neither ``mid`` nor ``book`` is mutated.

    Raises :class:`ResolutionError` when a referential message's level is
    absent or holds no order matching the reference time and size.
    """
    if mid.mid2 is None:
        raise ResolutionError("mid-price undefined")
    ts = next_timestamp(pre, mid)
    target = None
    if pre.msg_type is not MsgType.ADD:
        level, target = find_reference(pre, mid.mid2, book)
        if level is None:
            raise ResolutionError("no such level")
        if target is None:
            raise ResolutionError("no matching order")
    return build_message(pre, mid.mid2, target, ts, new_order_id)


def destationarize_stream(
    pres: Iterable[PreMessage], book: OrderBook | None = None, tracker: MidTracker | None = None
) -> list[OrderFlowMessage]:
    """Inverse of :func:`stationarize` for a whole stream (same starting state)."""
    book = OrderBook() if book is None else book
    tracker = MidTracker.from_book(book) if tracker is None else tracker
    out = []
    for pre in pres:
        if tracker.mid2 is None:
            # an empty book's first quote is encoded relative to itself
            if pre.msg_type is not MsgType.ADD or pre.price_abs is None:
                raise ResolutionError("mid-price undefined")
            tracker.mid2 = 2 * pre.price_abs
        msg = destationarize(pre, tracker, book)
        out.append(msg)
        book.apply(msg)
        tracker.advance(book, msg.timestamp_ns)
    return out


# ---- dumps ---------------------------------------------------------------

_CSV_VERSION = "lobgpt-premessage v1"
_BIN_MAGIC = b"LOBP"
_BIN_VERSION = 1
_NAN = np.iinfo(np.int64).min


def premessages_to_csv(pres: Sequence[PreMessage]) -> str:
    buf = io.StringIO()
    buf.write(f"# {_CSV_VERSION}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(PREMESSAGE_FIELDS)
    for p in pres:
        w.writerow(["" if v is None else int(v) for v in astuple(p)])
    return buf.getvalue()


def _row_to_pre(vals: Sequence[int | None]) -> PreMessage:
    vals = list(vals)
    vals[2] = MsgType(vals[2])
    vals[3] = Side(vals[3])
    return PreMessage(*vals)


def premessages_from_csv(text: str) -> list[PreMessage]:
    lines = text.splitlines()
    if not lines or lines[0] != f"# {_CSV_VERSION}":
        raise ValueError("not a PreMessage CSV (bad version line)")
    reader = csv.reader(lines[1:])
    header = next(reader)
    if tuple(header) != PREMESSAGE_FIELDS:
        raise ValueError("unexpected PreMessage CSV columns")
    return [_row_to_pre([None if c == "" else int(c) for c in row]) for row in reader]


def premessages_to_bytes(pres: Sequence[PreMessage]) -> bytes:
    arr = np.array(
        [[_NAN if v is None else int(v) for v in astuple(p)] for p in pres], dtype="<i8"
    ).reshape(len(pres), len(PREMESSAGE_FIELDS))
    return _BIN_MAGIC + struct.pack("<HHI", _BIN_VERSION, len(PREMESSAGE_FIELDS), len(pres)) + arr.tobytes()


def premessages_from_bytes(data: bytes) -> list[PreMessage]:
    if data[:4] != _BIN_MAGIC:
        raise ValueError("not a PreMessage dump (bad magic)")
    version, nf, n = struct.unpack_from("<HHI", data, 4)
    if version != _BIN_VERSION or nf != len(PREMESSAGE_FIELDS):
        raise ValueError(f"unsupported PreMessage dump version {version}/{nf}")
    arr = np.frombuffer(data, dtype="<i8", offset=12, count=n * nf).reshape(n, nf)
    return [_row_to_pre([None if v == _NAN else int(v) for v in row]) for row in arr]
