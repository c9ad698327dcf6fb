"""Full-depth (level-3) limit order book with price-time priority."""

from __future__ import annotations

import bisect
import csv
import hashlib
import io
from dataclasses import dataclass
from typing import Iterable, Sequence

from .feed import NS_PER_SECOND, MsgType, OrderFlowMessage, Side

__all__ = [
    "RestingOrder",
    "PriceLevel",
    "OrderBook",
    "BookSnapshot",
    "Trade",
    "Placed",
    "Canceled",
    "Replaced",
    "BookEvent",
    "BookError",
    "ReferentialError",
    "SizeError",
    "ReplayError",
    "replay",
    "snapshot",
    "snapshot_grid_csv",
]


@dataclass(slots=True)
class RestingOrder:
    order_id: int
    side: Side
    price: int
    size: int
    entry_time_ns: int


@dataclass(frozen=True, slots=True)
class Trade:
    maker_id: int
    taker_side: Side
    price: int
    size: int


@dataclass(frozen=True, slots=True)
class Placed:
    order_id: int
    side: Side
    price: int
    size: int


@dataclass(frozen=True, slots=True)
class Canceled:
    order_id: int
    size: int


@dataclass(frozen=True, slots=True)
class Replaced:
    old_id: int
    new_id: int


BookEvent = Trade | Placed | Canceled | Replaced


class BookError(Exception):
    pass


class ReferentialError(BookError):
    def __init__(self, kind: str, order_id: int):
        super().__init__(f"{kind}: order {order_id}")
        self.kind = kind
        self.order_id = order_id


class SizeError(BookError):
    pass


class ReplayError(BookError):
    def __init__(self, index: int, cause: BookError):
        super().__init__(f"message {index}: {cause}")
        self.index = index
        self.cause = cause


class PriceLevel:
    """FIFO queue of resting orders at one price.

    Backed by an insertion-ordered dict so removal from the middle is O(1).
    """

    __slots__ = ("price", "orders", "volume")

    def __init__(self, price: int):
        self.price = price
        self.orders: dict[int, RestingOrder] = {}
        self.volume = 0

    def __len__(self) -> int:
        return len(self.orders)

    def __iter__(self):
        return iter(self.orders.values())

    def head(self) -> RestingOrder:
        return next(iter(self.orders.values()))

    def append(self, order: RestingOrder) -> None:
        self.orders[order.order_id] = order
        self.volume += order.size

    def remove(self, order_id: int) -> RestingOrder:
        order = self.orders.pop(order_id)
        self.volume -= order.size
        return order


class _BookSide:
    __slots__ = ("side", "levels", "prices")

    def __init__(self, side: Side):
        self.side = side
        self.levels: dict[int, PriceLevel] = {}
        self.prices: list[int] = []  # ascending

    def best(self) -> int | None:
        if not self.prices:
            return None
        return self.prices[-1] if self.side is Side.BID else self.prices[0]

    def level(self, price: int, create: bool = False) -> PriceLevel | None:
        lvl = self.levels.get(price)
        if lvl is None and create:
            lvl = self.levels[price] = PriceLevel(price)
            bisect.insort(self.prices, price)
        return lvl

    def drop_if_empty(self, lvl: PriceLevel) -> None:
        if not lvl.orders:
            del self.levels[lvl.price]
            i = bisect.bisect_left(self.prices, lvl.price)
            del self.prices[i]

    def ordered_prices(self) -> list[int]:
        """Prices from best to worst."""
        return self.prices[::-1] if self.side is Side.BID else list(self.prices)


@dataclass(frozen=True)
class BookSnapshot:
    best_bid: int | None
    best_ask: int | None
    mid_half_ticks: int | None
    spread: int | None
    vol_at_best_bid: int
    vol_at_best_ask: int
    bid_depth: tuple[tuple[int, int], ...] = ()
    ask_depth: tuple[tuple[int, int], ...] = ()

    @property
    def mid(self) -> float | None:
        """Mid-price in ticks (may end in .5)."""
        return None if self.mid_half_ticks is None else self.mid_half_ticks / 2


class OrderBook:
    """Level-3 book. ``apply`` is O(log P + k) apart from level creation/removal."""

    def __init__(self) -> None:
        self.bids = _BookSide(Side.BID)
        self.asks = _BookSide(Side.ASK)
        self.orders: dict[int, RestingOrder] = {}

    def _side(self, side: Side) -> _BookSide:
        return self.bids if side is Side.BID else self.asks

    # ---- queries -------------------------------------------------------

    @property
    def best_bid(self) -> int | None:
        return self.bids.best()

    @property
    def best_ask(self) -> int | None:
        return self.asks.best()

    def mid_half_ticks(self) -> int | None:
        b, a = self.bids.best(), self.asks.best()
        if b is None or a is None:
            return None
        return b + a

    def level(self, side: Side, price: int) -> PriceLevel | None:
        return self._side(side).level(price)

    def depth(self, price: int, side: Side) -> int:
        lvl = self._side(side).level(price)
        return 0 if lvl is None else lvl.volume

    def get(self, order_id: int) -> RestingOrder | None:
        return self.orders.get(order_id)

    def __contains__(self, order_id: int) -> bool:
        return order_id in self.orders

    def __len__(self) -> int:
        return len(self.orders)

    def total_volume(self) -> int:
        return sum(o.size for o in self.orders.values())

    def state(self) -> tuple:
        """Canonical full state: per side, levels best-first with their queues."""
        out = []
        for s in (self.bids, self.asks):
            out.append(
                tuple(
                    (p, tuple((o.order_id, o.size, o.entry_time_ns) for o in s.levels[p]))
                    for p in s.ordered_prices()
                )
            )
        return tuple(out)

    def state_hash(self) -> str:
        return hashlib.sha256(repr(self.state()).encode()).hexdigest()

    def copy(self) -> "OrderBook":
        new = OrderBook()
        for s_old, s_new in ((self.bids, new.bids), (self.asks, new.asks)):
            s_new.prices = list(s_old.prices)
            for p, lvl in s_old.levels.items():
                nl = PriceLevel(p)
                for o in lvl:
                    ro = RestingOrder(o.order_id, o.side, o.price, o.size, o.entry_time_ns)
                    nl.append(ro)
                    new.orders[ro.order_id] = ro
                s_new.levels[p] = nl
        return new

    # ---- mutation ------------------------------------------------------

    def _remove(self, order: RestingOrder) -> None:
        s = self._side(order.side)
        lvl = s.levels[order.price]
        lvl.remove(order.order_id)
        s.drop_if_empty(lvl)
        del self.orders[order.order_id]

    def _reduce(self, order: RestingOrder, qty: int) -> None:
        if qty > order.size:
            raise SizeError(f"order {order.order_id}: reduce by {qty} exceeds resting size {order.size}")
        if qty == order.size:
            self._remove(order)
        else:
            order.size -= qty
            self._side(order.side).levels[order.price].volume -= qty

    def _lookup(self, order_id: int) -> RestingOrder:
        order = self.orders.get(order_id)
        if order is None:
            raise ReferentialError("missing order", order_id)
        return order

    def _add(self, order_id: int, side: Side, price: int, size: int, ts: int, events: list) -> None:
        if order_id in self.orders:
            raise ReferentialError("duplicate order id", order_id)
        if size < 1:
            raise SizeError(f"order {order_id}: size {size} < 1")
        remaining = size
        opp = self._side(side.opposite)
        while remaining:
            best = opp.best()
            if best is None or (best > price if side is Side.BID else best < price):
                break
            maker = opp.levels[best].head()
            fill = min(remaining, maker.size)
            events.append(Trade(maker.order_id, side, best, fill))
            self._reduce(maker, fill)
            remaining -= fill
        if remaining:
            order = RestingOrder(order_id, side, price, remaining, ts)
            self._side(side).level(price, create=True).append(order)
            self.orders[order_id] = order
            events.append(Placed(order_id, side, price, remaining))

    def apply(self, msg: OrderFlowMessage) -> list[BookEvent]:
        events: list[BookEvent] = []
        t = msg.msg_type
        if t is MsgType.ADD:
            if msg.side is None or msg.price is None or msg.size is None:
                raise BookError(f"add {msg.order_id} missing side/price/size")
            self._add(msg.order_id, msg.side, msg.price, msg.size, msg.timestamp_ns, events)
            return events
        order = self._lookup(msg.order_id)
        if t is MsgType.EXECUTE or t is MsgType.EXECUTE_AT_PRICE:
            if not msg.size or msg.size < 1:
                raise SizeError(f"execution of {msg.order_id} with size {msg.size}")
            price = order.price if t is MsgType.EXECUTE else msg.exec_or_new_price
            if price is None:
                raise BookError(f"execute-at-price on {msg.order_id} without price")
            self._reduce(order, msg.size)
            events.append(Trade(order.order_id, order.side.opposite, price, msg.size))
        elif t is MsgType.CANCEL:
            if msg.size is None or msg.size < 1:
                raise SizeError(f"cancel of {msg.order_id} with size {msg.size}")
            self._reduce(order, msg.size)
            events.append(Canceled(order.order_id, msg.size))
        else:
            if msg.new_order_id is None or msg.exec_or_new_price is None or msg.size is None:
                raise BookError(f"replace of {msg.order_id} missing new id/price/size")
            if msg.size < 1:
                raise SizeError(f"replace of {msg.order_id} with size {msg.size}")
            if msg.new_order_id in self.orders and msg.new_order_id != order.order_id:
                raise ReferentialError("duplicate order id", msg.new_order_id)
            self._remove(order)
            events.append(Replaced(order.order_id, msg.new_order_id))
            self._add(msg.new_order_id, order.side, msg.exec_or_new_price, msg.size, msg.timestamp_ns, events)
        return events


def replay(msgs: Iterable[OrderFlowMessage], book: OrderBook | None = None) -> OrderBook:
    """Apply messages in order; the first failure raises :class:`ReplayError`."""
    book = OrderBook() if book is None else book
    for i, m in enumerate(msgs):
        try:
            book.apply(m)
        except BookError as exc:
            raise ReplayError(i, exc) from exc
    return book


def snapshot(book: OrderBook, depth_levels: int = 10) -> BookSnapshot:
    bb, ba = book.best_bid, book.best_ask
    mid = spread = None
    if bb is not None and ba is not None:
        mid = bb + ba
        spread = ba - bb

    def prof(s: _BookSide) -> tuple[tuple[int, int], ...]:
        return tuple((p, s.levels[p].volume) for p in s.ordered_prices()[:depth_levels])

    return BookSnapshot(
        best_bid=bb,
        best_ask=ba,
        mid_half_ticks=mid,
        spread=spread,
        vol_at_best_bid=0 if bb is None else book.bids.levels[bb].volume,
        vol_at_best_ask=0 if ba is None else book.asks.levels[ba].volume,
        bid_depth=prof(book.bids),
        ask_depth=prof(book.asks),
    )


def snapshot_grid_csv(
    msgs: Sequence[OrderFlowMessage], book: OrderBook | None = None, step_ns: int = NS_PER_SECOND
) -> str:
    """Replay ``msgs`` and sample the book on a fixed grid (state at each grid instant).

    Columns: ``time_s,best_bid,best_ask,spread,vol_bid_1,vol_ask_1``; absent
    values are empty cells.
    """
    book = OrderBook() if book is None else book
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["time_s", "best_bid", "best_ask", "spread", "vol_bid_1", "vol_ask_1"])
    if not msgs:
        return buf.getvalue()
    t = (msgs[0].timestamp_ns // step_ns + 1) * step_ns
    rows: list[tuple[int, BookSnapshot]] = []
    for m in msgs:
        while m.timestamp_ns >= t:
            rows.append((t // NS_PER_SECOND, snapshot(book, 0)))
            t += step_ns
        book.apply(m)
    rows.append((t // NS_PER_SECOND, snapshot(book, 0)))

    def cell(v):
        return "" if v is None else v

    for time_s, s in rows:
        w.writerow([time_s, cell(s.best_bid), cell(s.best_ask), cell(s.spread), s.vol_at_best_bid, s.vol_at_best_ask])
    return buf.getvalue()

