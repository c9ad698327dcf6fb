"""Intensity-driven zero-intelligence order-flow generator.

A test fixture standing in for proprietary exchange data, not a market
model. Every referential message it emits targets an order resting in the
book at that moment, so generated feeds always replay cleanly.
"""

from __future__ import annotations

import numpy as np

from .feed import FeedConfig, MsgType, OrderFlowMessage, Side, NS_PER_SECOND
from .lob import OrderBook

__all__ = ["synth_feed", "OrderFlowGenerator"]

_MAX_SIZE = 9999


class _LiveIds:
    """Set of ids supporting O(1) uniform random choice."""

    def __init__(self) -> None:
        self.items: list[int] = []
        self.pos: dict[int, int] = {}

    def add(self, oid: int) -> None:
        self.pos[oid] = len(self.items)
        self.items.append(oid)

    def discard(self, oid: int) -> None:
        i = self.pos.pop(oid, None)
        if i is None:
            return
        last = self.items.pop()
        if i < len(self.items):
            self.items[i] = last
            self.pos[last] = i

    def choice(self, rng: np.random.Generator) -> int:
        return self.items[int(rng.integers(len(self.items)))]

    def __len__(self) -> int:
        return len(self.items)


class OrderFlowGenerator:
    def __init__(self, config: FeedConfig):
        self.cfg = config
        self.rng = np.random.default_rng(config.seed)
        self.book = OrderBook()
        self.live = _LiveIds()
        self.next_id = 1
        self.t = config.session_open_ns if config.start_ns is None else config.start_ns
        types = list(MsgType)
        rates = np.array([config.intensities[m] for m in types])
        self._types = types
        self._type_cdf = np.cumsum(rates / rates.sum())
        self._size_cdf = np.cumsum(config.size_weights)
        self._total_rate = float(rates.sum())

    def _size(self) -> int:
        cfg, rng = self.cfg, self.rng
        kind = min(int(np.searchsorted(self._size_cdf, rng.random(), side="right")), 2)
        if kind == 0:
            lots = min(int(rng.geometric(1.0 / cfg.round_lot_mean)), _MAX_SIZE // 100)
            return 100 * lots
        if kind == 1:
            return int(rng.integers(1, 100))
        while True:
            s = int(round(rng.lognormal(np.log(cfg.mixed_lot_median), cfg.mixed_lot_sigma)))
            if 100 < s <= _MAX_SIZE and s % 100:
                return s

    def _price(self, side: Side) -> int:
        """Non-crossing quote at a geometric distance behind the opposite best."""
        b, a = self.book.best_bid, self.book.best_ask
        depth = int(self.rng.geometric(1.0 / self.cfg.price_scale)) - 1
        p0 = self.cfg.start_price
        if side is Side.BID:
            anchor = a if a is not None else (b + 1 if b is not None else p0)
            return max(anchor - 1 - depth, 1)
        anchor = b if b is not None else (a - 1 if a is not None else p0 - 1)
        return anchor + 1 + depth

    def _new_id(self) -> int:
        oid = self.next_id
        self.next_id += 1
        return oid

    def _choose_type(self) -> MsgType:
        i = int(np.searchsorted(self._type_cdf, self.rng.random(), side="right"))
        mt = self._types[min(i, len(self._types) - 1)]
        n = len(self.live)
        if mt is not MsgType.ADD and n < self.cfg.min_resting:
            return MsgType.ADD
        if mt is MsgType.ADD and n > self.cfg.max_resting:
            return MsgType.CANCEL
        return mt

    def _emit(self, msg: OrderFlowMessage) -> OrderFlowMessage:
        self.book.apply(msg)
        if msg.msg_type is MsgType.ADD:
            self.live.add(msg.order_id)
        elif msg.msg_type is MsgType.REPLACE:
            self.live.discard(msg.order_id)
            self.live.add(msg.new_order_id)
        elif msg.order_id not in self.book:
            self.live.discard(msg.order_id)
        return msg

    def next(self) -> OrderFlowMessage:
        cfg, rng, book = self.cfg, self.rng, self.book
        self.t += int(rng.exponential(NS_PER_SECOND / self._total_rate))
        t, sym = self.t, cfg.symbol_id
        mt = self._choose_type()
        if book.best_bid is None or book.best_ask is None:
            mt = MsgType.ADD
            side = Side.BID if book.best_bid is None else Side.ASK
        else:
            side = Side(int(rng.integers(2)))

        if mt is MsgType.ADD:
            return self._emit(OrderFlowMessage(t, mt, self._new_id(), side, self._size(), self._price(side), symbol_id=sym))

        if mt in (MsgType.EXECUTE, MsgType.EXECUTE_AT_PRICE):
            best = book.best_bid if side is Side.BID else book.best_ask
            order = book.level(side, best).head()
            fill = order.size if order.size == 1 or rng.random() < cfg.full_fill_prob else int(rng.integers(1, order.size))
            if mt is MsgType.EXECUTE:
                return self._emit(OrderFlowMessage(t, mt, order.order_id, order.side, fill, order.price, symbol_id=sym))
            exec_price = order.price + int(rng.integers(-1, 2))
            return self._emit(
                OrderFlowMessage(t, mt, order.order_id, order.side, fill, order.price,
                                 exec_or_new_price=max(exec_price, 1), symbol_id=sym)
            )

        order = book.get(self.live.choice(rng))
        if mt is MsgType.CANCEL:
            full = order.size == 1 or rng.random() < cfg.full_cancel_prob
            qty = order.size if full else int(rng.integers(1, order.size))
            return self._emit(
                OrderFlowMessage(t, mt, order.order_id, order.side, qty, order.price, order.size - qty, symbol_id=sym)
            )
        # Replace keeps the side; the new quote must not cross the opposite best.
        new_price = self._price(order.side)
        return self._emit(
            OrderFlowMessage(t, mt, order.order_id, order.side, self._size(), order.price, order.size,
                             self._new_id(), new_price, sym)
        )


def synth_feed(config: FeedConfig | None = None, n_messages: int = 0) -> list[OrderFlowMessage]:
    """Generate ``n_messages`` internally consistent messages; deterministic per seed."""
    if n_messages < 0:
        raise ValueError("n_messages must be >= 0")
    gen = OrderFlowGenerator(config or FeedConfig())
    return [gen.next() for _ in range(n_messages)]
