"""Sampling pipeline checks shared by unit and acceptance tests."""

from __future__ import annotations

import numpy as np
from scipy import stats
from scipy.special import softmax

from lobgpt.model import SampleParams, sample_token
from lobgpt.vocab import MSG_LEN, build_vocab


def illegal_draws(n_draws=10**6, seed=0, n_tickers=3) -> tuple[int, int]:
    """Draws through every slot mask from adversarial logits; returns (illegal, total).

    Logits favour ids outside the slot (they get +8), so a masking bug
    would show up quickly.
    """
    v = build_vocab(n_tickers)
    rng = np.random.default_rng(seed)
    per = -(-n_draws // (MSG_LEN * 20))  # round up so the total reaches n_draws
    bad = total = 0
    for rep in range(20):
        for slot in range(MSG_LEN):
            legal = v.slot_bool_mask(slot)
            z = rng.normal(size=v.size) + np.where(legal, 0.0, 8.0)
            params = SampleParams(temperature=float(rng.uniform(0.3, 2.0)), top_p=float(rng.uniform(0.5, 1.0)))
            d = sample_token(z, params, v.slot_ids(slot), rng, size=per)
            bad += int((~legal[d]).sum())
            total += d.size
    return bad, total


def argmax_mismatches(n=200, seed=0) -> int:
    rng = np.random.default_rng(seed)
    miss = 0
    for _ in range(n):
        z = rng.normal(size=50)
        legal = rng.random(50) < 0.5
        legal[rng.integers(50)] = True
        got = sample_token(z, SampleParams(temperature=1e-6, top_p=0.9), legal, rng)
        miss += got != int(np.flatnonzero(legal)[np.argmax(z[legal])])
    return miss


def chi2_pvalue(n_draws=200_000, seed=0, temperature=1.3) -> float:
    rng = np.random.default_rng(seed)
    z = rng.normal(scale=1.5, size=20)
    d = sample_token(z, SampleParams(temperature=temperature, top_p=1.0), None, rng, size=n_draws)
    obs = np.bincount(d, minlength=20)
    exp = softmax(z / temperature) * n_draws
    return float(stats.chisquare(obs, exp).pvalue)
