import json
from collections import deque

import numpy as np
import pytest
import torch

from helpers import ListBook
from lobgpt import sim
from lobgpt.feed import FeedConfig, MsgType
from lobgpt.lob import OrderBook, replay
from lobgpt.preprocess import stationarize
from lobgpt.sim import (
    Accepted,
    Discarded,
    LivelockError,
    SimConfig,
    SimError,
    init_sim,
    load_trace,
    message_from_dict,
    message_to_dict,
    run,
    state_hash,
    step,
)
from lobgpt.synth import synth_feed
from lobgpt.vocab import MSG_LEN, NAN_ID, build_vocab, encode


def cfg(**kw):
    base = dict(start_time_ns=None, seed=1, max_consecutive_discards=1000)
    base.update(kw)
    return SimConfig(**base)


@pytest.fixture
def world(tiny_world):
    model, msgs = tiny_world
    return model, msgs


def test_init_state(world):
    model, msgs = world
    st = init_sim(msgs, model, cfg())
    assert st.context_messages == 96 // MSG_LEN - 1 == 3
    assert len(st.context) == 3 and len(st.stream) == 1 + 3 * MSG_LEN
    assert st.book.state() == replay(msgs).state()
    assert st.next_order_id == max(max(m.order_id, m.new_order_id or 0) for m in msgs) + 1
    v = build_vocab(1)
    tail = [encode(p, v) for p in stationarize(msgs)[-3:]]
    assert all((a == b).all() for a, b in zip(st.context, tail))


def test_init_errors(world):
    model, msgs = world
    with pytest.raises(SimError, match="shorter"):
        init_sim(msgs[:2], model, cfg())
    with pytest.raises(SimError, match="shorter"):
        init_sim(msgs, model, cfg(start_time_ns=0))
    with pytest.raises(ValueError, match="does not fit"):
        init_sim(msgs, model, cfg(context_messages=4))
    with pytest.raises(ValueError):
        SimConfig(temperature=0)
    with pytest.raises(ValueError):
        SimConfig(max_messages=-1)


def test_start_time_cuts_history(world):
    model, msgs = world
    cut = msgs[1500].timestamp_ns
    st = init_sim(msgs, model, cfg(start_time_ns=cut))
    assert st.book.state() == replay([m for m in msgs if m.timestamp_ns < cut]).state()


def test_run_is_deterministic_and_replays(world, tmp_path):
    model, msgs = world
    a = run(init_sim(msgs, model, cfg()), 25, tmp_path / "a.jsonl")
    b = run(init_sim(msgs, model, cfg()), 25, tmp_path / "b.jsonl")
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
    assert a.counts["accepted"] == 25 and a.counts["discarded"] > 0
    fast, slow = replay(msgs), ListBook()
    for m in msgs:
        slow.apply(m)
    for m in a.messages:
        fast.apply(m)
        slow.apply(m)
        assert fast.state() == slow.state()
    c = run(init_sim(msgs, model, cfg(trial_id=1)), 25)
    assert [r["generated"] for r in c.records] != [r["generated"] for r in a.records]


def test_trace_contents(world, tmp_path):
    model, msgs = world
    tr = run(init_sim(msgs, model, cfg()), 10, tmp_path / "t.jsonl")
    loaded = load_trace(tmp_path / "t.jsonl")
    assert loaded.records == json.loads(json.dumps(tr.records))
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["accepted"] == 10 and summary["status"] == "complete"
    assert summary["discard_rate"] == pytest.approx(tr.discard_rate)
    for r in tr.accepted_records:
        assert len(r["tokens"]) == MSG_LEN and len(r["pre"]) == 18
    v = build_vocab(1)
    for pre, r in zip(tr.premessages, tr.accepted_records):
        assert list(encode(pre, v)) == r["tokens"]


def test_context_window_and_cache(world):
    model, msgs = world
    st = init_sim(msgs, model, cfg())
    seen = 0
    while seen < 6:
        if isinstance(step(st), Accepted):
            seen += 1
            assert len(st.context) == st.context_messages
            assert len(st.stream) == 1 + MSG_LEN * st.context_messages <= model.cfg.max_context_tokens
            assert st.stream.tokens[0] == 2
            ref = model.prime(st.prompt_tokens())
            assert torch.equal(ref.last_logits, st.stream.last_logits)
    assert st.evicted == 6


def test_discard_leaves_state_identical(world, monkeypatch):
    model, msgs = world
    st = init_sim(msgs, model, cfg())
    before = state_hash(st)
    bad = np.full(MSG_LEN, NAN_ID)  # slot 0 is never nullable
    monkeypatch.setattr(sim, "generate_message", lambda *a, **k: bad)
    res = step(st)
    assert isinstance(res, Discarded) and res.field == "slot 0"
    assert state_hash(st) == before


def test_discard_after_partial_generation_restores_cache(world, monkeypatch):
    model, msgs = world
    st = init_sim(msgs, model, cfg())
    before = state_hash(st)
    real = sim.generate_message
    v = build_vocab(1)

    def gen(model_, stream, params, vocab, rng):
        real(model_, stream, params, vocab, rng)  # advances the cache by 23 tokens
        pre = stationarize(msgs)[-1]
        t = encode(pre, v)
        t[16] = v.base("SIGN")  # reference 999 ticks above the mid: no such level
        t[17] = v.base("PRICE_MAG") + 999
        t[1] = v.base("TYPE") + int(MsgType.CANCEL)
        return t

    monkeypatch.setattr(sim, "generate_message", gen)
    res = step(st)
    assert isinstance(res, Discarded) and res.reason == "no such level"
    assert state_hash(st) == before


def test_livelock(world, monkeypatch):
    model, msgs = world
    st = init_sim(msgs, model, cfg(max_consecutive_discards=5))
    monkeypatch.setattr(sim, "generate_message", lambda *a, **k: np.full(MSG_LEN, NAN_ID))
    with pytest.raises(LivelockError) as ei:
        run(st, 3)
    assert ei.value.reasons == {"decode": 5}


def test_zero_budget_and_wall_clock(world):
    model, msgs = world
    st = init_sim(msgs, model, cfg())
    h = state_hash(st)
    tr = run(st, 0)
    assert tr.records == [] and state_hash(st) == h
    tr = run(init_sim(msgs, model, cfg(wall_clock_s=0.0)), 10)
    assert tr.status == "wall_clock"
    with pytest.raises(ValueError):
        run(st, -1)


def test_resume_matches_uninterrupted(world, tmp_path):
    model, msgs = world
    full = tmp_path / "full" / "trace.jsonl"
    full.parent.mkdir()
    run(init_sim(msgs, model, cfg()), 20, full)
    part = tmp_path / "part" / "trace.jsonl"
    part.parent.mkdir()
    run(init_sim(msgs, model, cfg()), 8, part)
    with open(part, "a") as f:
        f.write('{"attempt": 99, "outc')  # torn final write
    st = init_sim(msgs, model, cfg())
    run(st, 20, part, resume=True)
    assert part.read_bytes() == full.read_bytes()


def test_unpinned_sink_is_dropped(world):
    model, msgs = world
    st = init_sim(msgs, model, cfg(pin_sink=False))
    assert st.has_sink()
    while st.evicted == 0:
        step(st)
    assert not st.has_sink() and len(st.stream) == MSG_LEN * st.context_messages


def test_symbol_override(world):
    model, msgs = world
    tr = run(init_sim(msgs, model, cfg(symbol_id=0)), 3)
    assert {m.symbol_id for m in tr.messages} == {0}


def test_message_dict_round_trip():
    for m in synth_feed(FeedConfig(seed=2), 300):
        assert message_from_dict(json.loads(json.dumps(message_to_dict(m)))) == m
