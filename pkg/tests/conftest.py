from __future__ import annotations

import numpy as np
import pytest

from memex.core import TokenSeq, default_vocab
from memex.samplers import SamplerConfig, TokenRule
from memex.toymodel import corpus_from_rows, fit


@pytest.fixture
def single_seq_model():
    """One memorized sequence, L=6, K=4, eta=0.1."""
    vocab = default_vocab(4)
    corpus = corpus_from_rows([[0, 1, 2, 3, 0, 1]], vocab)
    return fit(corpus, 0.1)


@pytest.fixture
def two_seq_model():
    """Two equal-weight sequences disagreeing at positions 1 and 4."""
    vocab = default_vocab(4)
    corpus = corpus_from_rows([[0, 1, 2, 3, 0, 1], [0, 2, 2, 3, 1, 1]], vocab)
    return fit(corpus, 0.1)


@pytest.fixture
def random_sampler():
    return SamplerConfig("random_uniform", TokenRule.gumbel(1.0), seed=7)


@pytest.fixture
def greedy_sampler():
    return SamplerConfig("greedy_confidence", TokenRule.argmax(), seed=7)


def brute_force_conditional(model, observed: TokenSeq, target: int) -> np.ndarray:
    """Independent oracle: P(token at target | observed) by summing the joint
    mixture over every full-sequence completion. Exponential in the number of
    hidden positions; use only on tiny instances."""
    from itertools import product

    vocab = model.vocab
    k = vocab.size
    hidden = sorted(observed.masked_positions)
    weights = np.asarray(model.corpus.weights, dtype=float)
    weights = weights / weights.sum()
    eta = model.eta
    p_match = (1 - eta) + eta / k
    p_miss = eta / k

    def joint(tokens):
        total = 0.0
        for w, comp in zip(weights, model.corpus.sequences):
            lik = w
            for pos, tok in enumerate(tokens):
                lik *= p_match if comp.tokens[pos] == tok else p_miss
            total += lik
        return total

    mass = np.zeros(k)
    for fill in product(range(k), repeat=len(hidden)):
        tokens = list(observed.tokens)
        for pos, tok in zip(hidden, fill):
            tokens[pos] = tok
        value = joint(tokens)
        mass[tokens[target]] += value
    return mass / mass.sum()
