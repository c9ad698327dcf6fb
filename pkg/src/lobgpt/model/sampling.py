"""Slot-constrained temperature / nucleus sampling."""

from __future__ import annotations

import numpy as np
import torch

from ..vocab import MSG_LEN, Vocabulary
from .config import SampleParams
from .transformer import MessageTransformer, StreamState

__all__ = ["sample_token", "nucleus_distribution", "generate_message", "SamplingError"]


class SamplingError(ValueError):
    pass


def nucleus_distribution(logits, params: SampleParams, legal=None) -> tuple[np.ndarray, np.ndarray]:
    """Ids kept by the nucleus and their renormalized probabilities.

    Pipeline: mask illegal ids, divide by temperature, softmax, keep the
    smallest prefix of ids sorted by (probability desc, id asc) whose mass
    reaches ``top_p`` (at least one id), renormalize.
    """
    z = np.asarray(logits.detach().cpu() if isinstance(logits, torch.Tensor) else logits, dtype=np.float64)
    if legal is None:
        ids = np.arange(z.size)
    else:
        legal = np.asarray(legal)
        ids = np.flatnonzero(legal) if legal.dtype == bool else np.unique(legal)
    if ids.size == 0:
        raise SamplingError("empty legal set")
    x = z[ids] / params.temperature
    finite = np.isfinite(x)
    if not finite.any():
        raise SamplingError("every legal logit is -inf")
    x = np.where(finite, x, -np.inf)
    x = x - x.max()
    p = np.exp(x)
    p /= p.sum()
    order = np.argsort(-p, kind="stable")  # ids ascend, so ties break by id
    cum = np.cumsum(p[order])
    k = min(int(np.searchsorted(cum, params.top_p, side="left")) + 1, ids.size)
    keep = order[:k]
    q = p[keep]
    return ids[keep], q / q.sum()


def sample_token(logits, params: SampleParams, legal, rng: np.random.Generator, size: int | None = None):
    """One id from the nucleus, or an array of ``size`` independent draws."""
    kept, q = nucleus_distribution(logits, params, legal)
    u = rng.random() if size is None else rng.random(size)
    i = np.minimum(np.searchsorted(np.cumsum(q), u, side="right"), kept.size - 1)
    return int(kept[i]) if size is None else kept[i]


@torch.no_grad()
def generate_message(
    model: MessageTransformer,
    state: StreamState,
    params: SampleParams,
    vocab: Vocabulary,
    rng: np.random.Generator,
) -> np.ndarray:
    """Sample one 24-token message, slot ``i`` restricted to ``slot_mask(i)``.

    The first 23 sampled tokens are fed back into ``state``; the last one is
    returned but not yet appended, so the caller decides whether the message
    enters the context.
    """
    if state.last_logits is None:
        raise SamplingError("stream has no pending logits")
    out = np.empty(MSG_LEN, dtype=np.int64)
    logits = state.last_logits
    for slot in range(MSG_LEN):
        tok = sample_token(logits, params, vocab.slot_ids(slot), rng)
        out[slot] = tok
        if slot < MSG_LEN - 1:
            logits = model.step([tok], state)[-1]
    return out
