"""Discrete event simulator driven by the generative world agent.

Each timestep samples one 24-token message, decodes it, resolves it against
the book (error correction), applies it through the matching engine and
appends its canonical re-encoding to the model context. A message that
fails any stage is discarded and the timestep is re-run from an identical
state; only the sampling stream advances.

Trace file format (JSON lines, one record per attempt)::

    {"attempt", "outcome": "accepted" | "discarded", "generated": [24 ids],
     "reason", "field", "corrected", "tokens": [24 ids], "msg": {...},
     "pre": [18 values], "top": [best_bid, best_ask, vol_bid, vol_ask],
     "trades": [[price, size], ...], "rng": <generator state after the attempt>}

Accepted records carry ``tokens`` (the context form), ``msg``, ``pre``,
``top`` and ``trades``; discarded records carry ``reason`` and ``field``.
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
from collections import Counter, deque
from dataclasses import astuple, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .feed import MAX_PRICE_TICKS, NS_PER_HOUR, MsgType, OrderFlowMessage, Side
from .lob import BookError, BookEvent, OrderBook, PriceLevel, RestingOrder, Trade
from .model import MessageTransformer, SampleParams, generate_message
from .preprocess import (
    MidTracker,
    PreMessage,
    ResolutionError,
    Stationarizer,
    abs_ticks,
    build_message,
    next_timestamp,
)
from .vocab import BASE_VOCAB_SIZE, MSG_LEN, DecodeError, Vocabulary, decode, encode

__all__ = [
    "SimConfig",
    "SimState",
    "SimTrace",
    "SimError",
    "LivelockError",
    "Valid",
    "Corrected",
    "Reject",
    "Accepted",
    "Discarded",
    "init_sim",
    "error_correct",
    "step",
    "run",
    "state_hash",
    "load_trace",
    "message_to_dict",
    "message_from_dict",
]

log = logging.getLogger(__name__)

DEFAULT_START_NS = 10 * NS_PER_HOUR  # about half an hour after the open


class SimError(RuntimeError):
    pass


class LivelockError(SimError):
    def __init__(self, n: int, reasons: Counter):
        top = ", ".join(f"{k}={v}" for k, v in reasons.most_common(5))
        super().__init__(f"{n} consecutive discards (recent reasons: {top})")
        self.reasons = reasons


@dataclass(frozen=True)
class SimConfig:
    """Simulation trial settings.

    ``context_messages`` defaults to the largest window the model fits:
    the sink plus ``context_messages`` whole messages within L, which also
    leaves room for the 23 tokens of the message being generated.
    ``start_time_ns`` cuts the history; ``None`` uses all of it.
    """

    context_messages: int | None = None
    max_messages: int = 1000
    wall_clock_s: float | None = None
    start_time_ns: int | None = DEFAULT_START_NS
    temperature: float = 1.02
    top_p: float = 0.98
    seed: int = 0
    trial_id: int = 0
    pin_sink: bool = True
    max_consecutive_discards: int = 100
    symbol_id: int | None = None

    def __post_init__(self) -> None:
        if self.max_messages < 0:
            raise ValueError("max_messages must be >= 0")
        if self.max_consecutive_discards < 1:
            raise ValueError("max_consecutive_discards must be >= 1")
        SampleParams(self.temperature, self.top_p, self.seed)

    @property
    def sample_params(self) -> SampleParams:
        return SampleParams(self.temperature, self.top_p, self.seed)

    def resolve_context(self, max_context_tokens: int) -> int:
        cm = self.context_messages
        if cm is None:
            cm = max_context_tokens // MSG_LEN - 1
        if cm < 1 or cm * MSG_LEN + 1 > max_context_tokens:
            raise ValueError(
                f"context of {cm} messages does not fit {max_context_tokens} tokens with the sink"
            )
        return cm


# ---- error correction ----------------------------------------------------


@dataclass(frozen=True)
class Valid:
    msg: OrderFlowMessage
    target: RestingOrder | None = None


@dataclass(frozen=True)
class Corrected:
    msg: OrderFlowMessage
    target: RestingOrder
    reason: str


@dataclass(frozen=True)
class Reject:
    reason: str
    field: str


def _match(level: PriceLevel, pre: PreMessage) -> RestingOrder | None:
    want_t, want_s = pre.ref_time_total_ns, pre.ref_size
    by_time = by_size = None
    for o in level:
        t_ok = want_t is not None and o.entry_time_ns == want_t
        s_ok = want_s is not None and o.size == want_s
        if t_ok and s_ok:
            return o
        if t_ok and by_time is None:
            by_time = o
        if s_ok and by_size is None:
            by_size = o
    return by_time or by_size


def _price_ok(p: int | None) -> bool:
    return p is None or 0 < p <= MAX_PRICE_TICKS


def error_correct(pre: PreMessage, book: OrderBook, tracker: MidTracker, new_order_id: int) -> Valid | Corrected | Reject:
    """Tie a decoded message to the book, correcting or rejecting it.

    Adds pass through. For referential messages the target level is
    ``mid + ref_price_rel`` on the message side; if it holds no orders the
    message is rejected. Inside the level an order whose entry time and
    size both match the reference wins, then one matching the time, then
    one matching the size; any of these is valid. With no match at all the
    head of the level's queue is substituted. Executions and cancels larger
    than the chosen order are clamped to its resting size.
    """
    mid2 = tracker.mid2
    if mid2 is None:
        return Reject("mid-price undefined", "price")
    ts = next_timestamp(pre, tracker)
    t = pre.msg_type
    sizes = (pre.size, pre.size_aux) if t is MsgType.REPLACE else (pre.size,)
    if any(s is not None and s < 1 for s in sizes):
        return Reject("zero size", "size")
    if t is MsgType.ADD:
        try:
            msg = build_message(pre, mid2, None, ts, new_order_id)
        except ResolutionError as exc:
            return Reject(exc.kind, "price")
        if not _price_ok(msg.price):
            return Reject("price out of range", "price")
        return Valid(msg)

    if pre.ref_price_rel is None:
        return Reject("no such level", "ref_price")
    level = book.level(pre.side, abs_ticks(pre.ref_price_rel, mid2, pre.side))
    if level is None or not len(level):
        return Reject("no such level", "ref_price")
    target = _match(level, pre)
    reason = None
    if target is None:
        target, reason = level.head(), "queue head"
    if t is not MsgType.REPLACE and pre.size is not None and pre.size > target.size:
        pre = replace(pre, size=target.size)
        reason = reason or "size clamped"
    try:
        msg = build_message(pre, mid2, target, ts, new_order_id)
    except ResolutionError as exc:
        return Reject(exc.kind, "size" if "size" in exc.kind else "price")
    if not _price_ok(msg.exec_or_new_price):
        return Reject("price out of range", "price")
    if reason is None:
        return Valid(msg, target)
    return Corrected(msg, target, reason)


# ---- state ----------------------------------------------------------------


@dataclass(frozen=True)
class Accepted:
    msg: OrderFlowMessage
    pre: PreMessage
    events: list[BookEvent]
    corrected: str | None
    record: dict


@dataclass(frozen=True)
class Discarded:
    reason: str
    field: str
    record: dict


@dataclass
class SimState:
    config: SimConfig
    model: MessageTransformer
    vocab: Vocabulary
    book: OrderBook
    tracker: MidTracker
    context: deque
    context_messages: int
    symbol_id: int
    next_order_id: int
    rng: np.random.Generator
    stream: object = None
    evicted: int = 0
    attempts: int = 0
    accepted: int = 0
    corrected: int = 0
    discarded: int = 0
    consecutive_discards: int = 0
    reasons: Counter = field(default_factory=Counter)

    def prompt_tokens(self) -> np.ndarray:
        if not self.context:
            return np.zeros(0, dtype=np.int64)
        return np.concatenate(list(self.context))

    def has_sink(self) -> bool:
        return self.config.pin_sink or self.evicted == 0

    def rebuild(self) -> None:
        """Recompute the model cache over the current window from scratch."""
        with torch.inference_mode():
            self.stream = self.model.prime(self.prompt_tokens(), sink=self.has_sink(), pin_sink=self.config.pin_sink)


def state_hash(state: SimState) -> str:
    """Digest of everything the next attempt depends on except the RNG."""
    h = hashlib.sha256()
    h.update(state.book.state_hash().encode())
    h.update(repr((state.tracker.mid2, state.tracker.prev_mid2, state.tracker.last_ts, state.next_order_id)).encode())
    h.update(state.prompt_tokens().astype("<i8").tobytes())
    s = state.stream
    h.update(repr((tuple(s.tokens), s.n_prefix, len(s))).encode())
    for k, v in zip(s.keys, s.values):
        h.update(k.contiguous().numpy().tobytes())
        h.update(v.contiguous().numpy().tobytes())
    h.update(s.last_logits.contiguous().numpy().tobytes())
    return h.hexdigest()


def _vocab_for(model: MessageTransformer) -> Vocabulary:
    n = model.cfg.vocab_size - BASE_VOCAB_SIZE
    if n < 1:
        raise SimError(f"model vocabulary of {model.cfg.vocab_size} ids has no ticker range")
    return Vocabulary(n)


def _max_id(msgs: Sequence[OrderFlowMessage]) -> int:
    hi = 0
    for m in msgs:
        hi = max(hi, m.order_id, m.new_order_id or 0)
    return hi


def init_sim(history: Sequence[OrderFlowMessage], model: MessageTransformer, config: SimConfig) -> SimState:
    """Seed the book from ``history`` and prime the model with its tail."""
    model.eval()
    vocab = _vocab_for(model)
    cm = config.resolve_context(model.cfg.max_context_tokens)
    if config.start_time_ns is not None:
        history = [m for m in history if m.timestamp_ns < config.start_time_ns]
    if len(history) < cm:
        raise SimError(f"history of {len(history)} messages is shorter than the {cm}-message context")
    st = Stationarizer(OrderBook())
    pres = [st.push(m) for m in history]
    symbol = history[-1].symbol_id if config.symbol_id is None else config.symbol_id
    context = deque((encode(p, vocab) for p in pres[-cm:]), maxlen=None)
    state = SimState(
        config=config,
        model=model,
        vocab=vocab,
        book=st.book,
        tracker=st.tracker,
        context=context,
        context_messages=cm,
        symbol_id=symbol,
        next_order_id=_max_id(history) + 1,
        rng=np.random.default_rng([config.seed, config.trial_id]),
    )
    state.rebuild()
    return state


# ---- stepping ------------------------------------------------------------


def message_to_dict(m: OrderFlowMessage) -> dict:
    return {
        "ts": m.timestamp_ns,
        "type": int(m.msg_type),
        "id": m.order_id,
        "side": None if m.side is None else int(m.side),
        "size": m.size,
        "price": m.price,
        "remaining": m.remaining_size,
        "new_id": m.new_order_id,
        "new_price": m.exec_or_new_price,
        "symbol": m.symbol_id,
    }


def message_from_dict(d: dict) -> OrderFlowMessage:
    return OrderFlowMessage(
        d["ts"], MsgType(d["type"]), d["id"], None if d["side"] is None else Side(d["side"]), d["size"],
        d["price"], d["remaining"], d["new_id"], d["new_price"], d["symbol"],
    )


def _pre_values(pre: PreMessage) -> list:
    return [None if v is None else int(v) for v in astuple(pre)]


def _rng_state(rng: np.random.Generator) -> dict:
    return rng.bit_generator.state


def _discard(state: SimState, checkpoint: int, logits, generated, reason: str, fld: str) -> Discarded:
    state.stream.truncate(checkpoint)
    state.stream.last_logits = logits
    state.discarded += 1
    state.consecutive_discards += 1
    state.reasons[reason] += 1
    rec = {"attempt": state.attempts - 1, "outcome": "discarded", "generated": [int(x) for x in generated],
           "reason": reason, "field": fld, "rng": _rng_state(state.rng)}
    return Discarded(reason, fld, rec)


def step(state: SimState) -> Accepted | Discarded:
    """One attempt: generate, decode, error-correct, apply, append."""
    cfg = state.config
    stream = state.stream
    checkpoint, logits = len(stream), stream.last_logits
    state.attempts += 1
    with torch.inference_mode():
        generated = generate_message(state.model, stream, cfg.sample_params, state.vocab, state.rng)
    try:
        pre = decode(generated, state.vocab)
    except DecodeError as exc:
        return _discard(state, checkpoint, logits, generated, "decode", f"slot {exc.slot}")
    pre = replace(pre, symbol_id=state.symbol_id)
    res = error_correct(pre, state.book, state.tracker, state.next_order_id)
    if isinstance(res, Reject):
        return _discard(state, checkpoint, logits, generated, res.reason, res.field)
    msg = res.msg
    try:
        canon = Stationarizer(state.book, state.tracker).encode(msg)
        tokens = encode(canon, state.vocab)
        events = state.book.apply(msg)
    except (BookError, ValueError) as exc:
        return _discard(state, checkpoint, logits, generated, f"apply: {type(exc).__name__}", str(exc))

    state.tracker.advance(state.book, msg.timestamp_ns)
    if msg.msg_type is MsgType.ADD:
        state.next_order_id = max(state.next_order_id, msg.order_id + 1)
    elif msg.msg_type is MsgType.REPLACE:
        state.next_order_id = max(state.next_order_id, msg.new_order_id + 1)
    state.context.append(tokens)
    while len(state.context) > state.context_messages:
        state.context.popleft()
        state.evicted += 1
    state.rebuild()

    corrected = res.reason if isinstance(res, Corrected) else None
    state.accepted += 1
    state.consecutive_discards = 0
    if corrected:
        state.corrected += 1
    b = state.book
    rec = {
        "attempt": state.attempts - 1,
        "outcome": "accepted",
        "generated": [int(x) for x in generated],
        "corrected": corrected,
        "tokens": [int(x) for x in tokens],
        "msg": message_to_dict(msg),
        "pre": _pre_values(canon),
        "top": [b.best_bid, b.best_ask, b.depth(b.best_bid, Side.BID) if b.best_bid is not None else 0,
                b.depth(b.best_ask, Side.ASK) if b.best_ask is not None else 0],
        "trades": [[e.price, e.size] for e in events if isinstance(e, Trade)],
        "rng": _rng_state(state.rng),
    }
    return Accepted(msg, canon, events, corrected, rec)


# ---- traces --------------------------------------------------------------


@dataclass
class SimTrace:
    """Attempt records of one trial plus its counters."""

    records: list[dict] = field(default_factory=list)
    trial_id: int = 0
    seed: int = 0
    status: str = "complete"
    wall_clock_s: float = 0.0

    @property
    def accepted_records(self) -> list[dict]:
        return [r for r in self.records if r["outcome"] == "accepted"]

    @property
    def messages(self) -> list[OrderFlowMessage]:
        return [message_from_dict(r["msg"]) for r in self.accepted_records]

    @property
    def premessages(self) -> list[PreMessage]:
        out = []
        for r in self.accepted_records:
            v = list(r["pre"])
            v[2], v[3] = MsgType(v[2]), Side(v[3])
            out.append(PreMessage(*v))
        return out

    @property
    def discards(self) -> list[dict]:
        return [r for r in self.records if r["outcome"] == "discarded"]

    @property
    def counts(self) -> dict:
        acc = self.accepted_records
        return {
            "attempts": len(self.records),
            "accepted": len(acc),
            "corrected": sum(1 for r in acc if r.get("corrected")),
            "discarded": len(self.records) - len(acc),
        }

    @property
    def discard_rate(self) -> float:
        n = len(self.records)
        return 0.0 if n == 0 else self.counts["discarded"] / n

    def summary(self) -> dict:
        reasons = Counter(r["reason"] for r in self.discards)
        corrections = Counter(r["corrected"] for r in self.accepted_records if r.get("corrected"))
        return {
            "trial_id": self.trial_id,
            "seed": self.seed,
            "status": self.status,
            **self.counts,
            "discard_rate": self.discard_rate,
            "discard_reasons": dict(sorted(reasons.items())),
            "corrections": dict(sorted(corrections.items())),
            "wall_clock_s": round(self.wall_clock_s, 3),
        }


def load_trace(path: str | Path) -> SimTrace:
    """Read a JSONL trace; an incomplete final line (interrupted write) is ignored."""
    records = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            if not line.endswith("\n"):
                break
            records.append(json.loads(line))
    trace = SimTrace(records)
    summ = Path(path).with_name("summary.json")
    if summ.exists():
        s = json.loads(summ.read_text())
        trace.trial_id, trace.seed, trace.status = s.get("trial_id", 0), s.get("seed", 0), s.get("status", "")
    return trace


def _restore(state: SimState, records: list[dict]) -> None:
    """Re-apply persisted attempts so ``state`` matches the end of the trace."""
    for r in records:
        state.attempts += 1
        if r["outcome"] == "discarded":
            state.discarded += 1
            state.consecutive_discards += 1
            state.reasons[r["reason"]] += 1
            continue
        msg = message_from_dict(r["msg"])
        state.book.apply(msg)
        state.tracker.advance(state.book, msg.timestamp_ns)
        if msg.msg_type is MsgType.ADD:
            state.next_order_id = max(state.next_order_id, msg.order_id + 1)
        elif msg.msg_type is MsgType.REPLACE:
            state.next_order_id = max(state.next_order_id, msg.new_order_id + 1)
        state.context.append(np.asarray(r["tokens"], dtype=np.int64))
        while len(state.context) > state.context_messages:
            state.context.popleft()
            state.evicted += 1
        state.accepted += 1
        state.consecutive_discards = 0
        state.corrected += bool(r.get("corrected"))
    if records:
        state.rng.bit_generator.state = records[-1]["rng"]
        state.rebuild()


def run(
    state: SimState,
    budget: int | None = None,
    trace_path: str | Path | None = None,
    *,
    resume: bool = False,
    on_accept=None,
) -> SimTrace:
    """Step until ``budget`` accepted messages (default ``config.max_messages``).

    With ``trace_path`` every attempt is appended and flushed as it happens
    and ``summary.json`` is written next to it at the end. ``resume`` picks
    up an interrupted trace: its attempts are re-applied to ``state`` (which
    must come fresh from :func:`init_sim` with the same inputs) and the run
    continues exactly where it stopped.
    """
    cfg = state.config
    budget = cfg.max_messages if budget is None else budget
    if budget < 0:
        raise ValueError("budget must be >= 0")
    trace = SimTrace(trial_id=cfg.trial_id, seed=cfg.seed)
    out = None
    if trace_path is not None:
        trace_path = Path(trace_path)
        if resume and trace_path.exists():
            trace.records = load_trace(trace_path).records
            _restore(state, trace.records)
            good = "".join(json.dumps(r, sort_keys=True) + "\n" for r in trace.records)
            trace_path.write_text(good, encoding="utf-8")
        else:
            trace_path.write_text("", encoding="utf-8")
        out = open(trace_path, "a", encoding="utf-8")
    t0 = time.monotonic()
    try:
        while state.accepted < budget:
            if cfg.wall_clock_s is not None and time.monotonic() - t0 > cfg.wall_clock_s:
                trace.status = "wall_clock"
                break
            res = step(state)
            trace.records.append(res.record)
            if out is not None:
                out.write(json.dumps(res.record, sort_keys=True) + "\n")
                out.flush()
            if isinstance(res, Accepted) and on_accept is not None:
                on_accept(state, res)
            if state.consecutive_discards >= cfg.max_consecutive_discards:
                trace.status = "livelock"
                recent = Counter(r["reason"] for r in trace.records[-cfg.max_consecutive_discards:])
                raise LivelockError(state.consecutive_discards, recent)
    finally:
        trace.wall_clock_s = time.monotonic() - t0
        if out is not None:
            out.close()
            summ = trace_path.with_name("summary.json")
            summ.write_text(json.dumps(trace.summary(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return trace
