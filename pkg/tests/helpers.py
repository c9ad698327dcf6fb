"""Reference implementations shared by several test modules."""

from __future__ import annotations

from lobgpt.feed import MsgType, OrderFlowMessage, Side


class ListBook:
    """Brute-force book: a flat list of resting orders in arrival order.

    Matching scans the whole list for the best price each time, so every
    operation is O(n) and a replay is O(n^2). Deliberately shares no code
    with the real book.
    """

    def __init__(self):
        self.orders: list[list] = []  # [id, side, price, size, ts]

    def _find(self, oid):
        for o in self.orders:
            if o[0] == oid:
                return o
        raise KeyError(oid)

    def _take(self, oid, qty):
        o = self._find(oid)
        assert qty <= o[3]
        o[3] -= qty
        if o[3] == 0:
            self.orders.remove(o)

    def _add(self, oid, side, price, size, ts):
        while size:
            opp = [o for o in self.orders if o[1] != side]
            if side is Side.BID:
                opp = [o for o in opp if o[2] <= price]
                best = min((o[2] for o in opp), default=None)
            else:
                opp = [o for o in opp if o[2] >= price]
                best = max((o[2] for o in opp), default=None)
            if best is None:
                break
            maker = next(o for o in opp if o[2] == best)  # earliest arrival at that price
            fill = min(size, maker[3])
            self._take(maker[0], fill)
            size -= fill
        if size:
            self.orders.append([oid, side, price, size, ts])

    def apply(self, m: OrderFlowMessage):
        t = m.msg_type
        if t is MsgType.ADD:
            self._add(m.order_id, m.side, m.price, m.size, m.timestamp_ns)
        elif t in (MsgType.EXECUTE, MsgType.EXECUTE_AT_PRICE, MsgType.CANCEL):
            self._take(m.order_id, m.size)
        else:
            o = self._find(m.order_id)
            self.orders.remove(o)
            self._add(m.new_order_id, o[1], m.exec_or_new_price, m.size, m.timestamp_ns)

    def state(self):
        out = []
        for side, rev in ((Side.BID, True), (Side.ASK, False)):
            prices = sorted({o[2] for o in self.orders if o[1] is side}, reverse=rev)
            out.append(tuple(
                (p, tuple((o[0], o[3], o[4]) for o in self.orders if o[1] is side and o[2] == p))
                for p in prices
            ))
        return tuple(out)
