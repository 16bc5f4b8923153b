"""Deterministic desk-scale corpus builders.

The interesting memorization structure comes from "confusable neighbors":
extra corpus sequences that differ from a base sequence at only one or two
positions. A neighbor is crushed by the posterior the moment any of its
differing positions is observed, so it matters exactly when those positions
fall inside the mask — which both spreads single-trial recovery
probabilities across decades (more/heavier neighbors, lower probability) and
creates resolution gains (recovering one differing position of a two-flip
neighbor kills it before the second is scored).
"""

from __future__ import annotations

import numpy as np

from .core import TokenSeq, default_vocab
from .samplers import substream
from .toymodel import Corpus, corpus_from_rows


def confusable_corpus(
    seed: int,
    vocab_size: int,
    length: int,
    bases: list[tuple[int, int, float]],
    base_weight: float = 1.0,
) -> Corpus:
    """One base sequence per (n_neighbors, flips_each, neighbor_weight) spec.

    The base rows come first (probe them); each neighbor copies its base and
    rewrites `flips_each` random positions to a different token.
    """
    rng = substream(seed, 101)
    vocab = default_vocab(vocab_size)
    base_rows = [rng.integers(0, vocab_size, size=length) for _ in bases]
    rows = [[int(t) for t in b] for b in base_rows]
    weights = [base_weight] * len(bases)
    for base, (n_neighbors, flips, weight) in zip(base_rows, bases):
        for _ in range(n_neighbors):
            row = base.copy()
            positions = rng.choice(length, size=flips, replace=False)
            for pos in positions:
                row[pos] = (row[pos] + 1 + int(rng.integers(0, vocab_size - 1))) % vocab_size
            rows.append([int(t) for t in row])
            weights.append(weight)
    return corpus_from_rows(rows, vocab, weights)


def scatter_corpus(seed: int = 7) -> Corpus:
    """56 probe bases (K=16, L=24) whose single-flip neighbor load spreads
    recovery probabilities over roughly two decades."""
    spec = []
    neighbor_counts = (0, 2, 4, 8, 12, 16)
    neighbor_weights = (1.0, 3.0, 9.0)
    for i in range(56):
        spec.append((neighbor_counts[i % 6], 1, neighbor_weights[i % 3]))
    return confusable_corpus(seed, vocab_size=16, length=24, bases=spec)


def sweep_corpus(seed: int = 11) -> Corpus:
    """6 probe bases (K=12, L=20), each with 32 two-flip neighbors of
    weight 3: masks covering both flips of a neighbor reward finer grids."""
    spec = [(32, 2, 3.0)] * 6
    return confusable_corpus(seed, vocab_size=12, length=20, bases=spec)


def window_corpus(seed: int = 13, n_sequences: int = 6) -> Corpus:
    """Unrelated length-100 sequences for the error-distribution protocol."""
    rng = substream(seed, 202)
    vocab = default_vocab(12)
    rows = [[int(t) for t in rng.integers(0, 12, size=100)] for _ in range(n_sequences)]
    return corpus_from_rows(rows, vocab)


def train_heldout_pair(
    seed: int = 17,
    n_prototypes: int = 8,
    copies: int = 12,
    length: int = 24,
    vocab_size: int = 12,
    flip_prob: float = 0.15,
) -> tuple[Corpus, list[TokenSeq]]:
    """A training corpus and a disjoint same-distribution held-out set.

    Both sides are noisy copies of the same prototypes; only the training
    copies enter the corpus, so held-out sequences are in-domain but unseen.
    """
    rng = substream(seed, 303)
    vocab = default_vocab(vocab_size)

    def noisy(proto: np.ndarray) -> list[int]:
        row = proto.copy()
        flips = rng.random(length) < flip_prob
        row[flips] = rng.integers(0, vocab_size, size=int(flips.sum()))
        return [int(t) for t in row]

    prototypes = [rng.integers(0, vocab_size, size=length) for _ in range(n_prototypes)]
    train_rows = [noisy(p) for p in prototypes for _ in range(copies)]
    heldout_rows = [noisy(p) for p in prototypes for _ in range(copies)]
    seen = {tuple(r) for r in train_rows}
    heldout = [TokenSeq(tuple(r), vocab) for r in heldout_rows if tuple(r) not in seen]
    return corpus_from_rows(train_rows, vocab), heldout


def chain_pair(length: int = 20, vocab_size: int = 8) -> tuple[Corpus, TokenSeq]:
    """Sequential-dependency control: two components disagreeing everywhere.

    With everything masked, the first committed token decides which component
    the posterior follows, so error counts pile up near 0 and near `length` —
    a distribution no normal fit should pass.
    """
    vocab = default_vocab(vocab_size)
    a = [i % vocab_size for i in range(length)]
    b = [(t + 1) % vocab_size for t in a]
    corpus = corpus_from_rows([a, b], vocab)
    return corpus, TokenSeq(tuple(a), vocab)


def assumption_violating_pair() -> tuple[Corpus, TokenSeq]:
    """Two-component instance where extra correct context lowers recovery.

    The probe sequence matches component A except at the last position, where
    it matches B. Observing that position shifts posterior mass to B, which
    disagrees with the probe everywhere else, so conditioning on more correct
    context lowers the recovery probability of the earlier positions.
    """
    vocab = default_vocab(3)
    corpus = corpus_from_rows([[0, 0, 0, 0], [1, 1, 1, 1]], vocab)
    probe = TokenSeq((0, 0, 0, 1), vocab)
    return corpus, probe


_FILLER_WORDS = (
    "meeting", "report", "quarter", "update", "draft", "agenda", "notes",
    "review", "budget", "invoice", "project", "status", "summary", "thanks",
)


def synthetic_pii_texts(seed: int = 23, n_docs: int = 40) -> dict[str, str]:
    """ASCII documents with one fixed-width email and one phone number each,
    placed after enough filler for a full 100-token (character) prefix.

    Targets are width-padded so every record of a category yields the same
    sequence length, letting one equal-length corpus serve a whole category.
    """
    rng = substream(seed, 505)
    docs: dict[str, str] = {}
    for i in range(n_docs):
        words = [
            _FILLER_WORDS[int(rng.integers(0, len(_FILLER_WORDS)))] for _ in range(60)
        ]
        filler = " ".join(words)
        email = f"user{i:03d}@mail{i % 7}.com"
        phone = f"{200 + i:03d}-555-{1000 + i:04d}"
        docs[f"doc{i:03d}"] = f"{filler} contact {email} {filler[:120]} call {phone} end"
    return docs


def random_instance(
    seed: int,
    max_length: int = 8,
    max_vocab: int = 4,
    multi_component: bool = False,
) -> tuple[Corpus, TokenSeq]:
    """Small random instance for exhaustive oracle checks.

    Single-component instances (the default) satisfy the context-monotonicity
    property by construction of the noise process; multi-component draws may
    or may not and should be filtered by the caller.
    """
    rng = substream(seed, 404)
    length = int(rng.integers(4, max_length + 1))
    k = int(rng.integers(2, max_vocab + 1))
    vocab = default_vocab(k)
    n_seqs = int(rng.integers(2, 4)) if multi_component else 1
    rows = [[int(t) for t in rng.integers(0, k, size=length)] for _ in range(n_seqs)]
    weights = [float(w) for w in rng.uniform(0.5, 2.0, size=n_seqs)]
    corpus = corpus_from_rows(rows, vocab, weights)
    return corpus, corpus.sequences[0]
