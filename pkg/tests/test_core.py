from __future__ import annotations

from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from memex.core import (
    IncompatiblePartitionError,
    InvalidIntervalError,
    InvalidResolutionError,
    MaskPattern,
    Partition,
    RecoveryOrder,
    TokenSeq,
    VocabSpec,
    default_vocab,
    even_split,
    hamming,
    is_refinement,
    make_linear_grid,
    per_token_partition,
    refine_to,
    tokens_to_recover,
)


class TestVocabAndSequences:
    def test_mask_id_must_be_reserved(self):
        with pytest.raises(ValueError):
            VocabSpec(size=4, mask_id=2)
        with pytest.raises(ValueError):
            VocabSpec(size=1, mask_id=1)

    def test_out_of_vocab_token_rejected(self):
        with pytest.raises(ValueError):
            TokenSeq((0, 9), default_vocab(4))

    def test_masked_positions_and_restrict(self):
        vocab = default_vocab(4)
        seq = TokenSeq((0, 1, 2, 3), vocab).masked_at([1, 3])
        assert seq.masked_positions == {1, 3}
        assert seq.restrict([2, 0]) == (0, 2)

    def test_mask_pattern_bounds(self):
        with pytest.raises(ValueError):
            MaskPattern(frozenset({5}), 4)
        m = MaskPattern(frozenset({1, 2}), 4)
        assert m.complement == {0, 3}


class TestLinearGrid:
    def test_single_step(self):
        assert make_linear_grid(1).as_floats() == (1.0, 0.0)

    def test_two_and_four_steps(self):
        assert make_linear_grid(2).as_floats() == (1.0, 0.5, 0.0)
        assert make_linear_grid(4).as_floats() == (1.0, 0.75, 0.5, 0.25, 0.0)

    def test_zero_resolution_rejected(self):
        with pytest.raises(InvalidResolutionError):
            make_linear_grid(0)

    def test_times_are_exact_rationals(self):
        grid = make_linear_grid(5)
        assert grid.times[1] == Fraction(4, 5)


class TestTokensToRecover:
    def test_examples(self):
        assert tokens_to_recover(1, 0.5, 10) == 5
        assert tokens_to_recover(1, 0, 7) == 7
        assert tokens_to_recover(0.5, 0.25, 3) == 1

    def test_invalid_interval(self):
        with pytest.raises(InvalidIntervalError):
            tokens_to_recover(0.5, 0.5, 3)
        with pytest.raises(InvalidIntervalError):
            tokens_to_recover(0.2, 0.4, 3)

    def test_at_least_one(self):
        t, s = Fraction(1), Fraction(9, 10)
        assert tokens_to_recover(t, s, 3) == 0
        assert tokens_to_recover(t, s, 3, at_least_one=True) == 1

    @given(n=st.integers(1, 40), m=st.integers(0, 200))
    @settings(max_examples=60, deadline=None)
    def test_grid_always_recovers_everything(self, n, m):
        grid = make_linear_grid(n)
        remaining = m
        for t, s in grid.steps():
            if remaining == 0:
                break
            remaining -= tokens_to_recover(t, s, remaining)
        assert remaining == 0

    def test_exact_rational_floors(self):
        # float arithmetic alone would compute floor(10 * 0.19999...) = 1
        grid = make_linear_grid(5)
        t, s = grid.times[0], grid.times[1]
        assert tokens_to_recover(t, s, 10) == 2


def _parts(*chunks):
    return Partition(tuple(frozenset(c) for c in chunks))


class TestPartitions:
    def test_refinement_examples(self):
        fine = _parts({0}, {1}, {2})
        coarse = _parts({0, 1}, {2})
        assert is_refinement(fine, coarse)
        assert is_refinement(coarse, coarse)
        assert not is_refinement(_parts({0, 1}, {2}), _parts({0}, {1, 2}))

    def test_incompatible_index_sets(self):
        with pytest.raises(IncompatiblePartitionError):
            is_refinement(_parts({0}, {1}), _parts({0, 2}))

    def test_disjointness_enforced(self):
        with pytest.raises(ValueError):
            _parts({0, 1}, {1, 2})

    def test_respects_order(self):
        order = RecoveryOrder((2, 0, 1))
        assert _parts({2, 0}, {1}).respects(order)
        assert not _parts({0, 1}, {2}).respects(order)

    def test_even_split_remainder_goes_first(self):
        order = RecoveryOrder((4, 2, 0, 1, 3))
        part = even_split(order, 2)
        assert part.chunks == (frozenset({4, 2, 0}), frozenset({1, 3}))

    def test_refine_to_builds_refinements(self):
        order = RecoveryOrder(tuple(range(7)))
        coarse = even_split(order, 2)
        for n in range(2, 8):
            fine = refine_to(order, coarse, n)
            assert len(fine) == n
            assert is_refinement(fine, coarse)

    def test_refine_chain_is_nested(self):
        order = RecoveryOrder((3, 1, 4, 0, 2, 5))
        base = even_split(order, 1)
        chain = [refine_to(order, base, n) for n in range(1, 7)]
        for a, b in zip(chain, chain[1:]):
            assert is_refinement(b, a)
        assert chain[-1] == per_token_partition(order)

    @given(st.data())
    @settings(max_examples=40, deadline=None)
    def test_per_token_refines_everything(self, data):
        m = data.draw(st.integers(2, 7))
        order = RecoveryOrder(tuple(data.draw(st.permutations(range(m)))))
        n = data.draw(st.integers(1, m))
        part = refine_to(order, even_split(order, 1), n)
        assert is_refinement(per_token_partition(order), part)


class TestHamming:
    def test_examples(self):
        assert hamming([1, 2, 3], [1, 2, 3]) == 0
        assert hamming([1, 2, 3], [1, 9, 3]) == 1
        assert hamming([1, 2, 3], [1, 9, 8]) == 2

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            hamming([1, 2], [1, 2, 3])

    @given(
        a=st.lists(st.integers(0, 5), min_size=1, max_size=12),
        data=st.data(),
    )
    @settings(max_examples=60, deadline=None)
    def test_metric_properties(self, a, data):
        n = len(a)
        b = data.draw(st.lists(st.integers(0, 5), min_size=n, max_size=n))
        c = data.draw(st.lists(st.integers(0, 5), min_size=n, max_size=n))
        assert hamming(a, b) >= 0
        assert (hamming(a, b) == 0) == (a == b)
        assert hamming(a, b) == hamming(b, a)
        assert hamming(a, c) <= hamming(a, b) + hamming(b, c)
