"""Brute-force ground truth for the estimators: exact recovery probabilities
under fixed partitions, exact expectations over random recovery paths,
exhaustive monotonicity checking, refinement verification, and the
ARM-equivalence identity.

Everything here is exact (no sampling) and guarded to desk-scale sizes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations
from typing import Literal

import numpy as np

from .core import (
    MaskPattern,
    Partition,
    RecoveryOrder,
    TimeGrid,
    TokenSeq,
    even_split,
    per_token_partition,
    refine_to,
)
from .engine import ConditionalPredictor, TruthConditionalCache, _resolve_grid
from .extraction import _chunk_sizes
from .samplers import GREEDY_CONFIDENCE, RANDOM_UNIFORM

DEFAULT_MAX_MASK = 8
DEFAULT_MAX_LEN = 8


class SizeGuardError(ValueError):
    """The instance is too large for exhaustive enumeration."""


def log_exact_pz_fixed_partition(
    model: ConditionalPredictor,
    z: TokenSeq,
    mask: MaskPattern,
    order: RecoveryOrder,
    partition: Partition,
) -> float:
    """Log of the exact recovery probability along one chunk sequence.

    Each chunk's tokens are scored against the truth-valued context holding
    everything revealed by earlier chunks.
    """
    if order.indices != mask.masked:
        raise ValueError("order does not cover the mask")
    if not partition.respects(order):
        raise ValueError("partition does not respect the recovery order")
    cache = TruthConditionalCache(model, z, mask)
    bits = 0
    total = 0.0
    for chunk in partition.chunks:
        conds = cache.log_conds(bits)
        for pos in sorted(chunk):
            total += float(conds[cache.positions.index(pos)])
        for pos in chunk:
            bits |= cache.bit(pos)
    return total


def exact_pz_fixed_partition(
    model: ConditionalPredictor,
    z: TokenSeq,
    mask: MaskPattern,
    order: RecoveryOrder,
    partition: Partition,
) -> float:
    return math.exp(log_exact_pz_fixed_partition(model, z, mask, order, partition))


def enumerate_orders_pz(
    model: ConditionalPredictor,
    z: TokenSeq,
    mask: MaskPattern,
    grid: TimeGrid | Literal["max"],
    position_rule: str,
    *,
    max_mask: int = DEFAULT_MAX_MASK,
) -> float:
    """Exact expectation of the single-trial recovery probability over the
    stochastic recovery path.

    random_uniform: each step reveals a uniformly chosen k-subset of the
    remaining positions; the expectation runs over all chunk sequences.
    greedy_confidence: the path is deterministic (confidences from the
    truth-valued context), so the expectation is a single product.
    """
    m = len(mask)
    if m == 0:
        return 1.0
    if m > max_mask:
        raise SizeGuardError(
            f"|mask|={m} exceeds the enumeration guard ({max_mask}); "
            "use extraction.estimate_pz for instances this large"
        )
    grid = _resolve_grid(grid, m)
    sizes = _chunk_sizes(grid, m, False)
    cache = TruthConditionalCache(model, z, mask)
    full = (1 << m) - 1
    cum = np.cumsum([0] + sizes)
    step_of_count = {int(c): i for i, c in enumerate(cum)}

    if position_rule == GREEDY_CONFIDENCE:
        bits = 0
        total = 0.0
        for k in sizes:
            ctx = cache.context_for(bits)
            targets = [p for i, p in enumerate(cache.positions) if not (bits >> i & 1)]
            logp = model.log_predict(ctx, targets)
            conf = {pos: float(np.max(logp[row])) for row, pos in enumerate(targets)}
            chunk = sorted(targets, key=lambda p: (-conf[p], p))[:k]
            conds = cache.log_conds(bits)
            total += float(sum(conds[cache.positions.index(p)] for p in chunk))
            for p in chunk:
                bits |= cache.bit(p)
        return math.exp(total)

    if position_rule != RANDOM_UNIFORM:
        raise ValueError(f"unknown position rule {position_rule!r}")

    memo: dict[int, float] = {full: 1.0}

    def expectation(bits: int) -> float:
        hit = memo.get(bits)
        if hit is not None:
            return hit
        recovered = bin(bits).count("1")
        k = sizes[step_of_count[recovered]]
        remaining = [i for i in range(m) if not (bits >> i & 1)]
        conds = np.exp(cache.log_conds(bits))
        total = 0.0
        n_subsets = 0
        for subset in combinations(remaining, k):
            prob = 1.0
            nxt = bits
            for i in subset:
                prob *= float(conds[i])
                nxt |= 1 << i
            total += prob * expectation(nxt)
            n_subsets += 1
        value = total / n_subsets
        memo[bits] = value
        return value

    return expectation(0)


@dataclass(frozen=True)
class MonotonicityViolation:
    observed_small: frozenset[int]  # U
    observed_large: frozenset[int]  # W, a strict superset of U
    targets: frozenset[int]
    prob_small: float
    prob_large: float

    @property
    def gap(self) -> float:
        return self.prob_small - self.prob_large

    def to_dict(self) -> dict:
        return {
            "observed_small": sorted(self.observed_small),
            "observed_large": sorted(self.observed_large),
            "targets": sorted(self.targets),
            "prob_small": self.prob_small,
            "prob_large": self.prob_large,
            "gap": self.gap,
        }


@dataclass(frozen=True)
class MonotonicityReport:
    violations: tuple[MonotonicityViolation, ...]
    triples_checked: int

    @property
    def holds(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict:
        return {
            "holds": self.holds,
            "triples_checked": self.triples_checked,
            "violations": [v.to_dict() for v in self.violations],
        }


def _subset_indicators(n: int) -> np.ndarray:
    """(2^n, n) 0/1 matrix; row b marks the bits of b."""
    rows = np.arange(1 << n)[:, None]
    return (rows >> np.arange(n) & 1).astype(float)


def check_assumption1(
    model: ConditionalPredictor,
    z: TokenSeq,
    *,
    max_len: int = DEFAULT_MAX_LEN,
    tol: float = 1e-12,
) -> MonotonicityReport:
    """Exhaustively test whether more correct context ever lowers the exact
    recovery probability of any target set.

    Enumerates every pair of observation sets U strictly inside W and every
    nonempty target set disjoint from W, comparing the products of per-token
    truth conditionals. An empty violation list means the property holds on
    this instance.
    """
    length = len(z)
    if length > max_len:
        raise SizeGuardError(f"L={length} exceeds the exhaustive guard ({max_len})")
    mask_all = MaskPattern(frozenset(range(length)), length)
    cache = TruthConditionalCache(model, z, mask_all)
    full = (1 << length) - 1

    log_conds = {w: cache.log_conds(w) for w in range(full + 1)}
    violations: list[MonotonicityViolation] = []
    checked = 0

    for w_bits in range(full + 1):
        comp = [i for i in range(length) if not (w_bits >> i & 1)]
        if not comp:
            continue
        indicators = _subset_indicators(len(comp))[1:]  # skip the empty target set
        cond_w = log_conds[w_bits][comp]
        # iterate U over strict submasks of W
        u_bits = (w_bits - 1) & w_bits
        while True:
            cond_u = log_conds[u_bits][comp]
            diff = cond_w - cond_u  # per-target-position log gain from W
            sums = indicators @ diff
            checked += indicators.shape[0]
            bad = np.flatnonzero(sums < -tol)
            for b in bad:
                members = frozenset(comp[i] for i in range(len(comp)) if (b + 1) >> i & 1)
                lp_w = float(indicators[b] @ cond_w)
                lp_u = float(indicators[b] @ cond_u)
                violations.append(
                    MonotonicityViolation(
                        observed_small=frozenset(i for i in range(length) if u_bits >> i & 1),
                        observed_large=frozenset(i for i in range(length) if w_bits >> i & 1),
                        targets=members,
                        prob_small=math.exp(lp_u),
                        prob_large=math.exp(lp_w),
                    )
                )
            if u_bits == 0:
                break
            u_bits = (u_bits - 1) & w_bits
    violations.sort(
        key=lambda v: (sorted(v.observed_large), sorted(v.observed_small), sorted(v.targets))
    )
    return MonotonicityReport(tuple(violations), checked)


@dataclass(frozen=True)
class RefinementVerdict:
    status: Literal["holds", "violated", "assumption_failed"]
    fine_log_pz: float
    coarse_log_pz: float
    failed_positions: tuple[int, ...] = ()

    @property
    def log_gap(self) -> float:
        return self.fine_log_pz - self.coarse_log_pz

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "fine_log_pz": self.fine_log_pz,
            "coarse_log_pz": self.coarse_log_pz,
            "log_gap": self.log_gap,
            "failed_positions": sorted(self.failed_positions),
        }


def check_theorem1(
    model: ConditionalPredictor,
    z: TokenSeq,
    mask: MaskPattern,
    order: RecoveryOrder,
    n_fine: int,
    n_coarse: int,
    *,
    tol: float = 1e-12,
) -> RefinementVerdict:
    """Compare exact recovery probabilities of a refinement pair.

    The coarse partition is the contiguous even split of the order into
    n_coarse chunks; the fine one refines it by repeated even halving of the
    largest chunk. If the per-position monotonicity premise holds along this
    pair's context chain, a fine value below the coarse one is reported as a
    genuine violation; otherwise the verdict is `assumption_failed` (the
    inequality is conditional, and both values are still reported).
    """
    if n_fine <= n_coarse:
        raise ValueError("n_fine must exceed n_coarse")
    coarse = even_split(order, n_coarse)
    fine = refine_to(order, coarse, n_fine)
    cache = TruthConditionalCache(model, z, mask)

    def walk(partition: Partition) -> tuple[float, dict[int, float]]:
        bits = 0
        per_pos: dict[int, float] = {}
        for chunk in partition.chunks:
            conds = cache.log_conds(bits)
            for pos in sorted(chunk):
                per_pos[pos] = float(conds[cache.positions.index(pos)])
            for pos in chunk:
                bits |= cache.bit(pos)
        return sum(per_pos.values()), per_pos

    fine_total, fine_pos = walk(fine)
    coarse_total, coarse_pos = walk(coarse)
    failed = tuple(
        sorted(p for p in fine_pos if fine_pos[p] < coarse_pos[p] - tol)
    )
    if failed:
        return RefinementVerdict("assumption_failed", fine_total, coarse_total, failed)
    status = "holds" if fine_total >= coarse_total - tol else "violated"
    return RefinementVerdict(status, fine_total, coarse_total)


def canonical_refinement_chain(order: RecoveryOrder) -> list[Partition]:
    """The chain P_1 ⊑ P_2 ⊑ ... ⊑ P_m from repeated even halving."""
    base = even_split(order, 1)
    return [refine_to(order, base, n) for n in range(1, len(order) + 1)]


def check_proposition1(
    model: ConditionalPredictor,
    z: TokenSeq,
    mask: MaskPattern,
    *,
    rel_tol: float = 1e-10,
) -> bool:
    """Per-token left-to-right recovery equals the sequential chain product.

    The fine route walks the per-token partition through the chunk machinery;
    the chain route re-queries the model one position at a time with
    explicitly assembled contexts. Equality is checked in the log domain.
    """
    order = RecoveryOrder(tuple(sorted(mask.masked)))
    fine = log_exact_pz_fixed_partition(model, z, mask, order, per_token_partition(order))

    ctx = z.masked_at(mask.masked)
    chain = 0.0
    for pos in order.order:
        logp = model.log_predict(ctx, [pos])
        chain += float(logp[0][z.tokens[pos]])
        ctx = ctx.with_tokens({pos: z.tokens[pos]})
    return math.isclose(fine, chain, rel_tol=rel_tol, abs_tol=1e-12)
