import numpy as np

from lobgpt.feed import FeedConfig, MsgType
from lobgpt.lob import OrderBook
from lobgpt.synth import synth_feed


def test_deterministic_per_seed():
    assert synth_feed(FeedConfig(seed=1), 500) == synth_feed(FeedConfig(seed=1), 500)
    assert synth_feed(FeedConfig(seed=1), 500) != synth_feed(FeedConfig(seed=2), 500)


def test_replays_and_never_crosses_on_rest():
    book = OrderBook()
    for m in synth_feed(FeedConfig(seed=4), 5000):
        book.apply(m)
        if book.best_bid is not None and book.best_ask is not None:
            assert book.best_bid < book.best_ask


def test_type_mix_and_sizes():
    msgs = synth_feed(FeedConfig(seed=6), 20000)
    types = np.array([int(m.msg_type) for m in msgs])
    assert set(types) == {int(t) for t in MsgType}
    ts = np.array([m.timestamp_ns for m in msgs])
    assert (np.diff(ts) >= 0).all()
    sizes = np.array([m.size for m in msgs if m.msg_type is MsgType.ADD])
    assert sizes.min() >= 1 and sizes.max() <= 9999
    assert 0.2 < np.mean(sizes % 100 == 0) < 0.4  # round lots near their 0.3 weight


def test_zero_messages():
    assert synth_feed(n_messages=0) == []
