"""Order-flow messages and the binary ITCH-subset feed codec.

Wire layout
-----------
A feed file is an optional container header followed by a stream of
length-prefixed ITCH 5.0 records (2-byte big-endian length, then the record
body starting with its one-byte kind).

Container header (all big-endian)::

    magic      4s   b"LOBF"
    version    H    currently 1
    n_symbols  H
    n_symbols x (locate H, name 8s space padded)

Records follow the ITCH 5.0 field layout: 2-byte stock locate, 2-byte
tracking number, 6-byte timestamp (ns since midnight), then the kind's
payload. Prices are 4-decimal fixed point on the wire and integer ticks
(cents) in memory.

Kinds produced/consumed: ``A``/``F`` (add), ``E`` (execute), ``C`` (execute
with price), ``X`` (partial cancel), ``D`` (delete), ``U`` (replace).  ``P``
(hidden execution) is parsed and dropped; any other kind is skipped and
counted.
"""

from __future__ import annotations

import enum
import struct
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

__all__ = [
    "MsgType",
    "Side",
    "OrderFlowMessage",
    "FeedConfig",
    "FeedParseError",
    "FeedEncodeError",
    "ParsedFeed",
    "decode_feed",
    "parse_feed",
    "write_feed",
    "filter_session",
    "NS_PER_SECOND",
    "MAX_PRICE_TICKS",
]

NS_PER_SECOND = 1_000_000_000
NS_PER_HOUR = 3600 * NS_PER_SECOND

FEED_MAGIC = b"LOBF"
FEED_VERSION = 1

_PRICE_SCALE = 100  # wire units (1e-4 dollars) per tick (1e-2 dollars)
MAX_PRICE_TICKS = 0xFFFFFFFF // _PRICE_SCALE
MAX_TIMESTAMP_NS = (1 << 48) - 1


class MsgType(enum.IntEnum):
    ADD = 0
    EXECUTE = 1
    EXECUTE_AT_PRICE = 2
    CANCEL = 3
    REPLACE = 4


class Side(enum.IntEnum):
    BID = 0
    ASK = 1

    @property
    def opposite(self) -> "Side":
        return Side.ASK if self is Side.BID else Side.BID


REFERENTIAL = frozenset({MsgType.EXECUTE, MsgType.EXECUTE_AT_PRICE, MsgType.CANCEL, MsgType.REPLACE})


@dataclass(frozen=True, slots=True)
class OrderFlowMessage:
    """One exchange event.

    ``None`` is the absent marker for fields that do not apply to the
    message type (or could not be resolved from the feed).

    Per type:

    * Add: ``order_id, side, size, price``.
    * Execute: ``order_id`` of the resting order, fill ``size``, resting ``price``.
    * ExecuteAtPrice: as Execute plus ``exec_or_new_price`` (the print price).
    * Cancel: canceled ``size`` and ``remaining_size`` after the deletion.
    * Replace: ``order_id`` is the old order, ``price``/``remaining_size`` its
      price and size before replacement; ``new_order_id``, ``size`` and
      ``exec_or_new_price`` describe the new order.
    """

    timestamp_ns: int
    msg_type: MsgType
    order_id: int
    side: Side | None
    size: int | None
    price: int | None
    remaining_size: int | None = None
    new_order_id: int | None = None
    exec_or_new_price: int | None = None
    symbol_id: int = 0

    @property
    def is_referential(self) -> bool:
        return self.msg_type in REFERENTIAL


@dataclass
class FeedConfig:
    """Session bounds plus parameters of the synthetic order-flow generator.

    ``intensities`` are arrival rates per second keyed by :class:`MsgType`.
    ``size_weights`` mixes round lots (multiples of 100), odd lots (1..99)
    and mixed lots (above 100, not a multiple of 100).
    """

    symbol_id: int = 0
    session_open_ns: int = 9 * NS_PER_HOUR + 30 * 60 * NS_PER_SECOND
    session_close_ns: int = 16 * NS_PER_HOUR
    start_ns: int | None = None
    start_price: int = 17000
    intensities: dict[MsgType, float] = field(
        default_factory=lambda: {
            MsgType.ADD: 40.0,
            MsgType.EXECUTE: 3.5,
            MsgType.EXECUTE_AT_PRICE: 0.2,
            MsgType.CANCEL: 38.0,
            MsgType.REPLACE: 10.0,
        }
    )
    size_weights: tuple[float, float, float] = (0.3, 0.45, 0.25)
    round_lot_mean: float = 2.0
    mixed_lot_median: float = 260.0
    mixed_lot_sigma: float = 0.8
    price_scale: float = 4.0
    full_fill_prob: float = 0.6
    full_cancel_prob: float = 0.9
    min_resting: int = 20
    max_resting: int = 400
    seed: int = 0

    def __post_init__(self) -> None:
        self.intensities = {MsgType(k): float(v) for k, v in self.intensities.items()}
        self.size_weights = tuple(float(w) for w in self.size_weights)
        self.validate()

    def validate(self) -> None:
        if not self.session_open_ns < self.session_close_ns:
            raise ValueError("session_open_ns must be before session_close_ns")
        missing = set(MsgType) - set(self.intensities)
        if missing:
            raise ValueError(f"missing intensities for {sorted(m.name for m in missing)}")
        if any(v <= 0 for v in self.intensities.values()):
            raise ValueError("intensities must be positive")
        if len(self.size_weights) != 3 or any(w < 0 for w in self.size_weights):
            raise ValueError("size_weights must be three non-negative weights")
        if abs(sum(self.size_weights) - 1.0) > 1e-9:
            raise ValueError("size_weights must sum to 1")
        if self.price_scale <= 0 or self.round_lot_mean < 1:
            raise ValueError("price_scale must be > 0 and round_lot_mean >= 1")
        if not 0 < self.min_resting < self.max_resting:
            raise ValueError("need 0 < min_resting < max_resting")

    @property
    def round_lot_mass(self) -> float:
        return self.size_weights[0]


class FeedParseError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at byte offset {offset}")
        self.offset = offset


class FeedEncodeError(ValueError):
    pass


# kind -> body struct (after the 1-byte kind). Common prefix: locate, tracking, ts(6s).
_HDR = ">HH6s"
_FORMATS = {
    b"A": struct.Struct(_HDR + "QcI8sI"),
    b"F": struct.Struct(_HDR + "QcI8sI4s"),
    b"E": struct.Struct(_HDR + "QIQ"),
    b"C": struct.Struct(_HDR + "QIQcI"),
    b"X": struct.Struct(_HDR + "QI"),
    b"D": struct.Struct(_HDR + "Q"),
    b"U": struct.Struct(_HDR + "QQII"),
    b"P": struct.Struct(_HDR + "QcI8sIQ"),
}
_SIDE_CODE = {b"B": Side.BID, b"S": Side.ASK}
_SIDE_BYTE = {Side.BID: b"B", Side.ASK: b"S"}


@dataclass
class ParsedFeed:
    messages: list[OrderFlowMessage]
    symbols: dict[int, str]
    version: int | None
    skipped: Counter = field(default_factory=Counter)
    unresolved: int = 0


def _ts(raw: bytes) -> int:
    return int.from_bytes(raw, "big")


def _ticks(wire_price: int, offset: int) -> int:
    if wire_price % _PRICE_SCALE:
        raise FeedParseError(f"price {wire_price} is not a whole number of ticks", offset)
    return wire_price // _PRICE_SCALE


def _read_header(data: bytes) -> tuple[int | None, dict[int, str], int]:
    if not data.startswith(FEED_MAGIC):
        return None, {}, 0
    if len(data) < 8:
        raise FeedParseError("truncated container header", 0)
    version, n_sym = struct.unpack_from(">HH", data, 4)
    if version != FEED_VERSION:
        raise FeedParseError(f"unsupported feed version {version}", 4)
    pos = 8
    symbols = {}
    for _ in range(n_sym):
        if pos + 10 > len(data):
            raise FeedParseError("truncated symbol table", pos)
        locate, name = struct.unpack_from(">H8s", data, pos)
        symbols[locate] = name.decode("ascii").rstrip()
        pos += 10
    return version, symbols, pos


def decode_feed(data: bytes) -> ParsedFeed:
    """Decode a feed, returning messages plus skip/unresolved accounting.

    Referential records carry no side or price on the wire, and deletes carry
    no size; those are filled in from a running table of live orders built
    from the same feed. References to orders never seen in the feed keep the
    absent marker and are counted in ``unresolved``.
    """
    data = bytes(data)
    version, symbols, pos = _read_header(data)
    out: list[OrderFlowMessage] = []
    skipped: Counter = Counter()
    unresolved = 0
    live: dict[int, list] = {}  # order_id -> [side, price, size]
    n = len(data)
    while pos < n:
        start = pos
        if pos + 2 > n:
            raise FeedParseError("truncated record length", start)
        (length,) = struct.unpack_from(">H", data, pos)
        pos += 2
        if length == 0 or pos + length > n:
            raise FeedParseError(f"truncated record (declared length {length})", start)
        body = data[pos : pos + length]
        pos += length
        kind = body[:1]
        fmt = _FORMATS.get(kind)
        if fmt is None:
            skipped[kind.decode("latin-1")] += 1
            continue
        if length - 1 != fmt.size:
            raise FeedParseError(f"{kind!r} record has length {length}, expected {fmt.size + 1}", start)
        f = fmt.unpack_from(body, 1)
        locate, ts = f[0], _ts(f[2])
        if kind in (b"A", b"F"):
            oid, side_b, shares, _stock, wprice = f[3:8]
            side = _SIDE_CODE.get(side_b)
            if side is None:
                raise FeedParseError(f"bad side byte {side_b!r}", start)
            price = _ticks(wprice, start)
            live[oid] = [side, price, shares]
            out.append(OrderFlowMessage(ts, MsgType.ADD, oid, side, shares, price, symbol_id=locate))
        elif kind == b"P":
            skipped["P"] += 1
        elif kind in (b"E", b"C"):
            oid, shares = f[3], f[4]
            rec = live.get(oid)
            side, price = (rec[0], rec[1]) if rec else (None, None)
            if rec is None:
                unresolved += 1
            else:
                rec[2] -= shares
                if rec[2] <= 0:
                    del live[oid]
            if kind == b"E":
                out.append(OrderFlowMessage(ts, MsgType.EXECUTE, oid, side, shares, price, symbol_id=locate))
            else:
                exec_price = _ticks(f[7], start)
                out.append(
                    OrderFlowMessage(
                        ts, MsgType.EXECUTE_AT_PRICE, oid, side, shares, price,
                        exec_or_new_price=exec_price, symbol_id=locate,
                    )
                )
        elif kind == b"X":
            oid, shares = f[3], f[4]
            rec = live.get(oid)
            if rec is None:
                unresolved += 1
                out.append(OrderFlowMessage(ts, MsgType.CANCEL, oid, None, shares, None, symbol_id=locate))
                continue
            rec[2] -= shares
            remaining = max(rec[2], 0)
            if remaining == 0:
                del live[oid]
            out.append(OrderFlowMessage(ts, MsgType.CANCEL, oid, rec[0], shares, rec[1], remaining, symbol_id=locate))
        elif kind == b"D":
            oid = f[3]
            rec = live.pop(oid, None)
            if rec is None:
                unresolved += 1
                out.append(OrderFlowMessage(ts, MsgType.CANCEL, oid, None, None, None, 0, symbol_id=locate))
                continue
            out.append(OrderFlowMessage(ts, MsgType.CANCEL, oid, rec[0], rec[2], rec[1], 0, symbol_id=locate))
        else:  # U
            old, new, shares, wprice = f[3:7]
            new_price = _ticks(wprice, start)
            rec = live.pop(old, None)
            if rec is None:
                unresolved += 1
                out.append(
                    OrderFlowMessage(ts, MsgType.REPLACE, old, None, shares, None, None, new, new_price, locate)
                )
                continue
            live[new] = [rec[0], new_price, shares]
            out.append(OrderFlowMessage(ts, MsgType.REPLACE, old, rec[0], shares, rec[1], rec[2], new, new_price, locate))
    return ParsedFeed(out, symbols, version, skipped, unresolved)


def parse_feed(data: bytes) -> list[OrderFlowMessage]:
    """Decode a feed into messages in feed order. See :func:`decode_feed`."""
    return decode_feed(data).messages


def _wire_price(ticks: int | None, what: str) -> int:
    if ticks is None or not 0 <= ticks <= MAX_PRICE_TICKS:
        raise FeedEncodeError(f"{what} {ticks!r} outside encodable range [0, {MAX_PRICE_TICKS}]")
    return ticks * _PRICE_SCALE


def _check_u32(v: int | None, what: str) -> int:
    if v is None or not 0 <= v <= 0xFFFFFFFF:
        raise FeedEncodeError(f"{what} {v!r} is not a 32-bit unsigned value")
    return v


def write_feed(msgs: Iterable[OrderFlowMessage], symbols: dict[int, str] | None = None) -> bytes:
    """Serialize messages; ``parse_feed(write_feed(m)) == m`` for consistent feeds.

    An empty message list with no symbol table encodes to empty bytes.
    """
    msgs = list(msgs)
    if not msgs and not symbols:
        return b""
    if symbols is None:
        symbols = {sid: f"SYM{sid}" for sid in sorted({m.symbol_id for m in msgs})}
    parts = [FEED_MAGIC, struct.pack(">HH", FEED_VERSION, len(symbols))]
    for locate in sorted(symbols):
        name = symbols[locate].encode("ascii")
        if len(name) > 8:
            raise FeedEncodeError(f"symbol name {symbols[locate]!r} longer than 8 bytes")
        parts.append(struct.pack(">H8s", locate, name.ljust(8)))
    match = 0
    for m in msgs:
        if not 0 <= m.timestamp_ns <= MAX_TIMESTAMP_NS:
            raise FeedEncodeError(f"timestamp {m.timestamp_ns} does not fit 48 bits")
        if not 0 <= m.symbol_id <= 0xFFFF:
            raise FeedEncodeError(f"symbol_id {m.symbol_id} does not fit 16 bits")
        ts = m.timestamp_ns.to_bytes(6, "big")
        stock = symbols.get(m.symbol_id, "").encode("ascii").ljust(8)
        t = m.msg_type
        if t is MsgType.ADD:
            if m.side is None:
                raise FeedEncodeError("add without side")
            body = b"A" + _FORMATS[b"A"].pack(
                m.symbol_id, 0, ts, m.order_id, _SIDE_BYTE[m.side], _check_u32(m.size, "size"),
                stock, _wire_price(m.price, "price"),
            )
        elif t is MsgType.EXECUTE:
            match += 1
            body = b"E" + _FORMATS[b"E"].pack(m.symbol_id, 0, ts, m.order_id, _check_u32(m.size, "size"), match)
        elif t is MsgType.EXECUTE_AT_PRICE:
            match += 1
            body = b"C" + _FORMATS[b"C"].pack(
                m.symbol_id, 0, ts, m.order_id, _check_u32(m.size, "size"), match, b"Y",
                _wire_price(m.exec_or_new_price, "execution price"),
            )
        elif t is MsgType.CANCEL:
            if m.remaining_size == 0:
                body = b"D" + _FORMATS[b"D"].pack(m.symbol_id, 0, ts, m.order_id)
            else:
                body = b"X" + _FORMATS[b"X"].pack(m.symbol_id, 0, ts, m.order_id, _check_u32(m.size, "size"))
        else:
            if m.new_order_id is None:
                raise FeedEncodeError("replace without new_order_id")
            body = b"U" + _FORMATS[b"U"].pack(
                m.symbol_id, 0, ts, m.order_id, m.new_order_id, _check_u32(m.size, "size"),
                _wire_price(m.exec_or_new_price, "replace price"),
            )
        parts.append(struct.pack(">H", len(body)))
        parts.append(body)
    return b"".join(parts)


def filter_session(msgs: Sequence[OrderFlowMessage], config: FeedConfig | None = None) -> list[OrderFlowMessage]:
    """Keep messages with ``open <= timestamp < close``, preserving order."""
    config = config or FeedConfig()
    lo, hi = config.session_open_ns, config.session_close_ns
    return [m for m in msgs if lo <= m.timestamp_ns < hi]
