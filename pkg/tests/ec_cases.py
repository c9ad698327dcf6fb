"""Error-correction scenarios against one hand-built book.

Book (mid 100.0, i.e. 200 half-ticks)::

    bid 99: #1 100@t10, #2 50@t20, #6 30@t20, #3 50@t30
    bid 98: #4 10@t35
    ask 101: #5 70@t40

Every referential case points at a level through ``ref_price_rel``
(99 is -1, 98 is -2, 101 is +1).
"""

from __future__ import annotations

from dataclasses import dataclass

from lobgpt.feed import MsgType, OrderFlowMessage as M, Side
from lobgpt.lob import OrderBook
from lobgpt.preprocess import MidTracker, PreMessage
from lobgpt.sim import Corrected, Reject, Valid, error_correct

NEW_ID = 1000
LAST_TS = 1_000


def make_book() -> tuple[OrderBook, MidTracker]:
    book = OrderBook()
    for ts, oid, side, size, px in [(10, 1, Side.BID, 100, 99), (20, 2, Side.BID, 50, 99), (20, 6, Side.BID, 30, 99),
                                    (30, 3, Side.BID, 50, 99), (35, 4, Side.BID, 10, 98), (40, 5, Side.ASK, 70, 101)]:
        book.apply(M(ts, MsgType.ADD, oid, side, size, px))
    return book, MidTracker(book.mid_half_ticks(), None, LAST_TS)


def pre(t, side=Side.BID, price_rel=-1, size=10, size_aux=None, ref=-1, ref_size=None, ref_t=None) -> PreMessage:
    add = t is MsgType.ADD
    return PreMessage(
        symbol_id=0, order_id=None, msg_type=t, side=side, price_abs=None, price_rel=price_rel, size=size,
        size_aux=size_aux, dt_s=0, dt_ns=5, time_s=0, time_ns=LAST_TS + 5, old_id=None, old_price_abs=None,
        ref_price_rel=None if add else ref, ref_size=None if add else ref_size,
        ref_time_s=None if add or ref_t is None else 0, ref_time_ns=None if add or ref_t is None else ref_t,
    )


@dataclass
class Case:
    name: str
    branch: str  # valid | queue-head | discard
    pre: PreMessage
    kind: type
    target: int | None = None  # expected order id
    reason: str | None = None
    size: int | None = None  # expected size of the emitted message
    undefined_mid: bool = False


E, EP, C, R, A = MsgType.EXECUTE, MsgType.EXECUTE_AT_PRICE, MsgType.CANCEL, MsgType.REPLACE, MsgType.ADD

CASES = [
    # valid reference
    Case("exact time and size", "valid", pre(C, size=20, ref_size=50, ref_t=30), Valid, 3, size=20),
    Case("time only, first in queue", "valid", pre(E, size=5, ref_size=7, ref_t=20), Valid, 2, size=5),
    Case("size only, first in queue", "valid", pre(E, size=5, ref_size=50, ref_t=999), Valid, 2, size=5),
    Case("size only without time", "valid", pre(C, size=5, ref_size=30), Valid, 6, size=5),
    Case("ask side", "valid", pre(E, side=Side.ASK, ref=1, size=70, ref_size=70, ref_t=40), Valid, 5, size=70),
    Case("replace keeps new size", "valid", pre(R, price_rel=-3, size=100, size_aux=40, ref_size=100, ref_t=10),
         Valid, 1, size=40),
    Case("execute at price", "valid", pre(EP, price_rel=-2, size=5, ref_size=10, ref_t=35, ref=-2), Valid, 4, size=5),
    Case("add", "valid", pre(A, price_rel=-3, size=10), Valid, None, size=10),
    # level exists, time and size both miss
    Case("queue head", "queue-head", pre(C, size=5, ref_size=7, ref_t=999), Corrected, 1, "queue head", 5),
    Case("queue head, oversized", "queue-head", pre(E, size=500, ref_size=7, ref_t=999), Corrected, 1, "queue head", 100),
    Case("no reference fields", "queue-head", pre(C, size=5), Corrected, 1, "queue head", 5),
    Case("matched but oversized", "queue-head", pre(C, size=80, ref_size=50, ref_t=30), Corrected, 3, "size clamped", 50),
    # discards
    Case("level absent", "discard", pre(C, ref=-7, ref_size=50, ref_t=30), Reject, reason="no such level"),
    Case("empty opposite level", "discard", pre(C, side=Side.ASK, ref=2, ref_size=70, ref_t=40), Reject,
         reason="no such level"),
    Case("no reference price", "discard", pre(C, ref=None), Reject, reason="no such level"),
    Case("zero size", "discard", pre(E, size=0, ref_size=50, ref_t=30), Reject, reason="zero size"),
    Case("zero new size", "discard", pre(R, size=100, size_aux=0, ref_size=100, ref_t=10), Reject, reason="zero size"),
    Case("missing size", "discard", pre(E, size=None, ref_size=50, ref_t=30), Reject, reason="missing size"),
    Case("missing new size", "discard", pre(R, size=100, size_aux=None, ref_size=100, ref_t=10), Reject,
         reason="missing new size"),
    Case("missing price", "discard", pre(R, price_rel=None, size=100, size_aux=5, ref_size=100, ref_t=10), Reject,
         reason="missing price"),
    Case("add without price", "discard", pre(A, price_rel=None), Reject, reason="missing price"),
    Case("add below zero", "discard", pre(A, price_rel=-500), Reject, reason="price out of range"),
    Case("print below zero", "discard", pre(EP, price_rel=-500, size=5, ref_size=10, ref_t=35, ref=-2), Reject,
         reason="price out of range"),
    Case("mid undefined", "discard", pre(C, ref_size=50, ref_t=30), Reject, reason="mid-price undefined",
         undefined_mid=True),
]


def check(case: Case) -> str | None:
    """Run one case on a fresh book; returns a failure description or None."""
    book, tracker = make_book()
    if case.undefined_mid:
        tracker = MidTracker()
    before = book.state_hash()
    res = error_correct(case.pre, book, tracker, NEW_ID)
    if book.state_hash() != before:
        return "error_correct mutated the book"
    if not isinstance(res, case.kind):
        return f"expected {case.kind.__name__}, got {res!r}"
    if isinstance(res, Reject):
        return None if res.reason == case.reason else f"reason {res.reason!r}"
    if isinstance(res, Corrected) and res.reason != case.reason:
        return f"reason {res.reason!r}"
    msg = res.msg
    if case.target is not None and (res.target is None or res.target.order_id != case.target):
        return f"target {res.target}"
    if case.size is not None and msg.size != case.size:
        return f"size {msg.size}"
    if msg.timestamp_ns != LAST_TS + 5:
        return f"timestamp {msg.timestamp_ns}"
    try:
        book.apply(msg)  # whatever survives correction must be applicable
    except Exception as exc:  # noqa: BLE001 - report any failure
        return f"apply failed: {exc}"
    return None
