import numpy as np
import pytest
import torch

from model_checks import small_model
from sampling_checks import argmax_mismatches, chi2_pvalue, illegal_draws
from lobgpt.model import SampleParams, SamplingError, generate_message, nucleus_distribution, sample_token
from lobgpt.vocab import MSG_LEN, build_vocab, decode


def test_nucleus_hand_example():
    z = np.log([0.5, 0.3, 0.15, 0.05])
    ids, q = nucleus_distribution(z, SampleParams(temperature=1.0, top_p=0.79))
    assert list(ids) == [0, 1] and np.allclose(q, [0.625, 0.375])
    ids, _ = nucleus_distribution(z, SampleParams(temperature=1.0, top_p=0.81))
    assert list(ids) == [0, 1, 2]


def test_nucleus_keeps_at_least_one_and_breaks_ties_by_id():
    ids, q = nucleus_distribution(np.zeros(5), SampleParams(top_p=1e-9))
    assert list(ids) == [0] and q[0] == 1.0
    ids, _ = nucleus_distribution(np.zeros(5), SampleParams(temperature=1.0, top_p=0.5))
    assert list(ids) == [0, 1, 2]


def test_mask_forms_agree():
    z = np.random.default_rng(0).normal(size=30)
    mask = np.zeros(30, bool)
    mask[[3, 7, 8]] = True
    a = nucleus_distribution(z, SampleParams(), mask)
    b = nucleus_distribution(z, SampleParams(), [8, 3, 7])
    assert (a[0] == b[0]).all() and np.allclose(a[1], b[1])


def test_errors():
    with pytest.raises(SamplingError):
        nucleus_distribution(np.zeros(4), SampleParams(), np.zeros(4, bool))
    with pytest.raises(SamplingError):
        nucleus_distribution(np.full(4, -np.inf), SampleParams(), None)


def test_illegal_logits_are_ignored():
    z = np.array([100.0, -np.inf, 0.0])
    assert sample_token(z, SampleParams(), [1, 2], np.random.default_rng(0)) == 2


def test_no_illegal_tokens_small():
    assert illegal_draws(n_draws=48_000) == (0, 48_000)


def test_temperature_to_zero_is_argmax():
    assert argmax_mismatches() == 0


def test_frequencies_match_softmax():
    assert chi2_pvalue() > 0.01


def test_scalar_and_vector_draws_agree():
    z = np.random.default_rng(1).normal(size=40)
    a = [sample_token(z, SampleParams(), None, np.random.default_rng(5))]
    b = sample_token(z, SampleParams(), None, np.random.default_rng(5), size=1)
    assert a == list(b)


def test_generate_message_is_decodable_shape_and_reproducible():
    v = build_vocab(1)
    m = small_model(dtype=torch.float32, vocab_size=v.size, max_context_tokens=96)
    st1, st2 = m.new_stream(), m.new_stream()
    a = generate_message(m, st1, SampleParams(), v, np.random.default_rng(3))
    b = generate_message(m, st2, SampleParams(), v, np.random.default_rng(3))
    assert a.shape == (MSG_LEN,) and (a == b).all()
    assert all(v.slot_bool_mask(i)[t] for i, t in enumerate(a))
    assert len(st1) == 1 + MSG_LEN - 1  # the last token is left to the caller
    st1.last_logits = None
    with pytest.raises(SamplingError):
        generate_message(m, st1, SampleParams(), v, np.random.default_rng(3))
