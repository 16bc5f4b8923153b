"""Shared domain types: vocabularies, token sequences, masks, time grids,
recovery orders/partitions, and the Hamming metric.

Indices are 0-based everywhere. All types are immutable after construction
and safe to share across workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence


class InvalidResolutionError(ValueError):
    """Raised for a non-positive sampling resolution."""


class InvalidIntervalError(ValueError):
    """Raised when a reverse step does not satisfy 0 <= s < t <= 1."""


class IncompatiblePartitionError(ValueError):
    """Raised when two partitions do not cover the same index set."""


@dataclass(frozen=True)
class VocabSpec:
    """Ordinary token ids 0..size-1 plus a reserved mask sentinel."""

    size: int
    mask_id: int

    def __post_init__(self) -> None:
        if self.size < 2:
            raise ValueError(f"vocab size must be >= 2, got {self.size}")
        if 0 <= self.mask_id < self.size:
            raise ValueError(
                f"mask_id {self.mask_id} collides with ordinary ids 0..{self.size - 1}"
            )

    def is_ordinary(self, token: int) -> bool:
        return 0 <= token < self.size


def default_vocab(size: int) -> VocabSpec:
    """Vocabulary with the conventional sentinel mask_id == size."""
    return VocabSpec(size=size, mask_id=size)


@dataclass(frozen=True)
class TokenSeq:
    """An immutable token sequence; may contain mask sentinels."""

    tokens: tuple[int, ...]
    vocab: VocabSpec

    def __post_init__(self) -> None:
        if len(self.tokens) < 1:
            raise ValueError("empty token sequence")
        object.__setattr__(self, "tokens", tuple(int(t) for t in self.tokens))
        for t in self.tokens:
            if not (self.vocab.is_ordinary(t) or t == self.vocab.mask_id):
                raise ValueError(f"token {t} outside vocab of size {self.vocab.size}")

    def __len__(self) -> int:
        return len(self.tokens)

    @classmethod
    def _trusted(cls, tokens: tuple[int, ...], vocab: VocabSpec) -> "TokenSeq":
        # construction bypass for tokens already known to be in-vocab
        obj = object.__new__(cls)
        object.__setattr__(obj, "tokens", tokens)
        object.__setattr__(obj, "vocab", vocab)
        return obj

    @property
    def masked_positions(self) -> frozenset[int]:
        m = self.vocab.mask_id
        return frozenset(i for i, t in enumerate(self.tokens) if t == m)

    def is_mask_free(self) -> bool:
        m = self.vocab.mask_id
        return all(t != m for t in self.tokens)

    def restrict(self, positions: Iterable[int]) -> tuple[int, ...]:
        """Tokens at the given positions, in ascending position order."""
        return tuple(self.tokens[i] for i in sorted(positions))

    def with_tokens(self, assignments: dict[int, int]) -> "TokenSeq":
        toks = list(self.tokens)
        vocab = self.vocab
        for pos, tok in assignments.items():
            tok = int(tok)
            if not (vocab.is_ordinary(tok) or tok == vocab.mask_id):
                raise ValueError(f"token {tok} outside vocab of size {vocab.size}")
            toks[pos] = tok
        return TokenSeq._trusted(tuple(toks), vocab)

    def masked_at(self, positions: Iterable[int]) -> "TokenSeq":
        toks = list(self.tokens)
        m = self.vocab.mask_id
        for pos in positions:
            toks[pos] = m
        return TokenSeq._trusted(tuple(toks), self.vocab)


@dataclass(frozen=True)
class MaskPattern:
    """The hidden index set M within a length-L sequence; complement is observed."""

    masked: frozenset[int]
    length: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "masked", frozenset(int(i) for i in self.masked))
        if any(i < 0 or i >= self.length for i in self.masked):
            raise ValueError("mask index out of range")

    @property
    def complement(self) -> frozenset[int]:
        return frozenset(range(self.length)) - self.masked

    def __len__(self) -> int:
        return len(self.masked)


@dataclass(frozen=True)
class RecoveryOrder:
    """A fixed permutation of the masked indices."""

    order: tuple[int, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "order", tuple(int(i) for i in self.order))
        if len(set(self.order)) != len(self.order):
            raise ValueError("recovery order repeats an index")

    @property
    def indices(self) -> frozenset[int]:
        return frozenset(self.order)

    def __len__(self) -> int:
        return len(self.order)


@dataclass(frozen=True)
class Partition:
    """Ordered disjoint nonempty chunks whose union is the masked set."""

    chunks: tuple[frozenset[int], ...]

    def __post_init__(self) -> None:
        chunks = tuple(frozenset(int(i) for i in c) for c in self.chunks)
        object.__setattr__(self, "chunks", chunks)
        if not chunks:
            raise ValueError("partition needs at least one chunk")
        seen: set[int] = set()
        for c in chunks:
            if not c:
                raise ValueError("empty chunk in partition")
            if seen & c:
                raise ValueError("overlapping chunks in partition")
            seen |= c

    @property
    def indices(self) -> frozenset[int]:
        return frozenset().union(*self.chunks)

    def __len__(self) -> int:
        return len(self.chunks)

    def respects(self, order: RecoveryOrder) -> bool:
        """Chunks taken in sequence consume the order's indices in blocks."""
        if self.indices != order.indices:
            return False
        i = 0
        for chunk in self.chunks:
            block = set(order.order[i : i + len(chunk)])
            if block != set(chunk):
                return False
            i += len(chunk)
        return True


@dataclass(frozen=True)
class TimeGrid:
    """Strictly decreasing times t_0=1 .. t_N=0, stored as exact rationals."""

    times: tuple[Fraction, ...] = field(repr=False)

    def __post_init__(self) -> None:
        ts = tuple(Fraction(t) for t in self.times)
        object.__setattr__(self, "times", ts)
        if len(ts) < 2 or ts[0] != 1 or ts[-1] != 0:
            raise ValueError("grid must run from t=1 down to t=0")
        if any(ts[i + 1] >= ts[i] for i in range(len(ts) - 1)):
            raise ValueError("grid times must be strictly decreasing")

    @property
    def resolution(self) -> int:
        return len(self.times) - 1

    def as_floats(self) -> tuple[float, ...]:
        return tuple(float(t) for t in self.times)

    def steps(self) -> Iterable[tuple[Fraction, Fraction]]:
        """(t, s) pairs for each reverse step t -> s."""
        for i in range(self.resolution):
            yield self.times[i], self.times[i + 1]


def make_linear_grid(resolution: int) -> TimeGrid:
    """Evenly spaced grid t_i = 1 - i/N."""
    if resolution < 1:
        raise InvalidResolutionError(f"resolution must be >= 1, got {resolution}")
    n = int(resolution)
    return TimeGrid(tuple(Fraction(n - i, n) for i in range(n + 1)))


def tokens_to_recover(
    t: Fraction | float,
    s: Fraction | float,
    num_masked: int,
    *,
    at_least_one: bool = False,
) -> int:
    """Number of masked tokens to reveal on the step t -> s.

    floor(num_masked * (1 - s/t)); at s=0 every remaining token is revealed,
    which guarantees termination even when intermediate floors are 0.
    `at_least_one` forces a minimum of one per step instead of the literal
    floor. Exact when t and s are rationals.
    """
    if num_masked < 0:
        raise ValueError("num_masked must be >= 0")
    if not (0 <= s < t <= 1):
        raise InvalidIntervalError(f"need 0 <= s < t <= 1, got s={s}, t={t}")
    if s == 0:
        return num_masked
    k = math.floor(num_masked * (1 - s / t))
    if at_least_one and num_masked > 0:
        k = max(k, 1)
    return k


def is_refinement(fine: Partition, coarse: Partition) -> bool:
    """True iff every coarse chunk is a union of consecutive fine chunks."""
    if fine.indices != coarse.indices:
        raise IncompatiblePartitionError("partitions cover different index sets")
    i = 0
    for target in coarse.chunks:
        acc: set[int] = set()
        while acc != target:
            if i >= len(fine.chunks):
                return False
            nxt = fine.chunks[i]
            if not (nxt <= target - acc):
                return False
            acc |= nxt
            i += 1
    return i == len(fine.chunks)


def even_split(order: RecoveryOrder, n_chunks: int) -> Partition:
    """Contiguous even split of the order; remainder goes to the earliest chunks."""
    m = len(order)
    if not (1 <= n_chunks <= m):
        raise ValueError(f"need 1 <= n_chunks <= {m}, got {n_chunks}")
    base, rem = divmod(m, n_chunks)
    chunks = []
    i = 0
    for c in range(n_chunks):
        size = base + (1 if c < rem else 0)
        chunks.append(frozenset(order.order[i : i + size]))
        i += size
    return Partition(tuple(chunks))


def refine_to(order: RecoveryOrder, coarse: Partition, n_chunks: int) -> Partition:
    """Refine `coarse` to `n_chunks` chunks by repeatedly halving the largest chunk.

    Ties break toward the earliest chunk; each half is an even split, so the
    result is a refinement of `coarse` by construction and the chain of
    intermediate partitions is canonical.
    """
    if not coarse.respects(order):
        raise IncompatiblePartitionError("partition does not respect the order")
    if n_chunks < len(coarse):
        raise ValueError("cannot coarsen: target has fewer chunks")
    if n_chunks > len(order):
        raise ValueError("more chunks than indices")
    # Work with contiguous spans of the order so splits stay consecutive.
    spans: list[tuple[int, int]] = []
    i = 0
    for chunk in coarse.chunks:
        spans.append((i, i + len(chunk)))
        i += len(chunk)
    while len(spans) < n_chunks:
        sizes = [b - a for a, b in spans]
        j = max(range(len(spans)), key=lambda idx: (sizes[idx], -idx))
        a, b = spans[j]
        mid = a + (b - a + 1) // 2  # remainder to the earlier half
        spans[j : j + 1] = [(a, mid), (mid, b)]
    return Partition(tuple(frozenset(order.order[a:b]) for a, b in spans))


def per_token_partition(order: RecoveryOrder) -> Partition:
    return Partition(tuple(frozenset((i,)) for i in order.order))


def hamming(a: Sequence[int], b: Sequence[int]) -> int:
    """Positions at which two equal-length token restrictions differ."""
    if len(a) != len(b):
        raise ValueError(f"length mismatch: {len(a)} vs {len(b)}")
    return sum(1 for x, y in zip(a, b) if x != y)
