import numpy as np
import pytest

from lobgpt.feed import FeedConfig
from lobgpt.synth import synth_feed

_REPORT: list[str] = []


@pytest.fixture(scope="session")
def acceptance_report():
    """Collects one line per acceptance criterion; printed after the run."""
    return _REPORT


def pytest_terminal_summary(terminalreporter):
    if _REPORT:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_REPORT, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def feed_small():
    return synth_feed(FeedConfig(seed=3), 3000)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def tiny_world():
    """A 1-layer model briefly trained on synthetic flow, plus that flow.

    Good enough to emit mostly decodable messages, so simulator tests see
    accepts, corrections and discards within a few dozen attempts.
    """
    import torch

    from lobgpt.model import ModelConfig, TrainConfig, train
    from lobgpt.preprocess import stationarize
    from lobgpt.vocab import build_vocab, encode_many

    torch.set_num_threads(1)
    v = build_vocab(1)
    msgs = synth_feed(FeedConfig(seed=21), 3000)
    toks = encode_many(stationarize(msgs), v)
    cfg = ModelConfig(d_model=16, n_layers=1, n_heads=2, vocab_size=v.size, max_context_tokens=96)
    res = train(toks, cfg, TrainConfig(steps=250, micro_batch=4, lr=1e-2, warmup=10, seed=0))
    return res.model, msgs
