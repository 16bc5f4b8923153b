"""Memorization estimators: trajectory recovery probabilities, R-trial
averaging with bootstrap intervals, query budgets, empirical and
error-tolerant hit rates, Hamming-error statistics, and the Gaussian CDF
shortcut.

Rates are accumulated in the linear domain (the estimators are arithmetic
means of probabilities); individual trajectory probabilities are computed in
the log domain. Trial fan-out uses per-trial Philox substreams and slots
results by trial index, so outputs are identical for any worker count.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Literal, Sequence

import numpy as np

from .core import MaskPattern, TimeGrid, TokenSeq, hamming, tokens_to_recover
from .engine import (
    ConditionalPredictor,
    TrajectoryRecord,
    TruthConditionalCache,
    _resolve_grid,
    reverse_generate,
)
from .samplers import (
    GREEDY_CONFIDENCE,
    RANDOM_UNIFORM,
    SamplerConfig,
    TokenRule,
    commit_probability,
    substream,
)

BOOTSTRAP_RESAMPLES = 1000
CENTRAL_FIT_THRESHOLD = 0.08

# substream namespaces so trial, bootstrap, and pattern draws never collide
_NS_TRIAL = 1
_NS_BOOTSTRAP = 2
_NS_PATTERN = 3


class IncompleteTrajectoryError(ValueError):
    """The trajectory does not cover the expected mask."""


@dataclass(frozen=True)
class PzEstimate:
    """R-trial mean of single-trial recovery probabilities."""

    mean: float
    trials: int
    stderr: float
    ci_low: float
    ci_high: float
    per_trial: np.ndarray | None = None

    def __post_init__(self) -> None:
        if not (0.0 <= self.ci_low <= self.mean <= self.ci_high <= 1.0):
            raise ValueError("estimate/interval ordering violated")


@dataclass(frozen=True)
class BudgetResult:
    """Minimal query count n with 1 - (1 - p_z)^n >= p; None when unbounded."""

    n: int | None
    target_p: float
    source_pz: float

    @property
    def unbounded(self) -> bool:
        return self.n is None


@dataclass(frozen=True)
class HammingStats:
    """Sample moments and raw histogram of Hamming-error counts."""

    mu: float
    sigma: float
    count: int
    histogram: np.ndarray  # counts indexed by distance 0..max


def pz_from_trajectory(traj: TrajectoryRecord, mask: MaskPattern | None = None) -> float:
    """exp(sum of ground-truth log-conditionals); in (0, 1]."""
    covered = traj.covered()
    if set(traj.log_conditionals) != set(covered):
        raise IncompleteTrajectoryError("conditionals missing for some chunk positions")
    if mask is not None and covered != mask.masked:
        raise IncompleteTrajectoryError("trajectory does not cover the mask")
    return float(math.exp(traj.log_pz))


def success_probability(p_z: float, n: int) -> float:
    """1 - (1 - p_z)^n, computed stably."""
    if p_z <= 0.0:
        return 0.0
    if p_z >= 1.0:
        return 1.0
    return -math.expm1(n * math.log1p(-p_z))


def required_queries(p_z: float, p: float) -> BudgetResult:
    """Minimal n with 1 - (1 - p_z)^n >= p.

    p_z == 1 needs a single query; p_z == 0 is unbounded (n = None).
    """
    if not (0.0 < p < 1.0):
        raise ValueError(f"target p must be in (0, 1), got {p}")
    if p_z >= 1.0:
        return BudgetResult(n=1, target_p=p, source_pz=p_z)
    if p_z <= 0.0:
        return BudgetResult(n=None, target_p=p, source_pz=p_z)
    n = math.ceil(math.log1p(-p) / math.log1p(-p_z))
    n = max(n, 1)
    # guard the ceil against float edges: enforce minimality exactly
    while n > 1 and success_probability(p_z, n - 1) >= p:
        n -= 1
    while success_probability(p_z, n) < p:
        n += 1
    return BudgetResult(n=n, target_p=p, source_pz=p_z)


def discoverable_count(
    estimates: Sequence[PzEstimate | float], n: int, p: float
) -> int:
    """How many examples satisfy 1 - (1 - p_hat)^n >= p."""
    if n < 1:
        raise ValueError("n must be >= 1")
    count = 0
    for e in estimates:
        p_hat = e.mean if isinstance(e, PzEstimate) else float(e)
        if success_probability(p_hat, n) >= p:
            count += 1
    return count


def _bootstrap_ci(
    values: np.ndarray, rng: np.random.Generator, resamples: int = BOOTSTRAP_RESAMPLES
) -> tuple[float, float]:
    """Percentile 95% interval of the mean."""
    n = values.size
    means = np.empty(resamples)
    for i in range(resamples):
        means[i] = values[rng.integers(0, n, n)].mean()
    lo, hi = np.percentile(means, [2.5, 97.5])
    mean = float(values.mean())
    return float(min(lo, mean)), float(max(hi, mean))


def _estimate_from_values(
    values: np.ndarray, base_seed: int, keep_trials: bool
) -> PzEstimate:
    mean = float(values.mean())
    stderr = float(values.std(ddof=1) / math.sqrt(values.size)) if values.size > 1 else 0.0
    if values.size > 1 and values.std() > 0:
        ci_low, ci_high = _bootstrap_ci(values, substream(base_seed, _NS_BOOTSTRAP))
    else:
        ci_low = ci_high = mean
    return PzEstimate(
        mean=mean,
        trials=values.size,
        stderr=stderr,
        ci_low=ci_low,
        ci_high=ci_high,
        per_trial=values if keep_trials else None,
    )


def _chunk_sizes(grid: TimeGrid, mask_size: int, at_least_one: bool) -> list[int]:
    """Deterministic per-step reveal counts for a grid (zeros dropped)."""
    sizes = []
    remaining = mask_size
    for t, s in grid.steps():
        if remaining == 0:
            break
        k = tokens_to_recover(t, s, remaining, at_least_one=at_least_one)
        if k:
            sizes.append(k)
            remaining -= k
    return sizes


def _random_order_log_pz(
    cache: TruthConditionalCache,
    sizes: Sequence[int],
    perm: np.ndarray,
) -> float:
    """Eq-style product along one sampled chunk sequence (local indices)."""
    bits = 0
    total = 0.0
    start = 0
    for k in sizes:
        members = perm[start : start + k]
        conds = cache.log_conds(bits)
        total += float(conds[members].sum())
        for i in members:
            bits |= 1 << int(i)
        start += k
    return total


def estimate_pz(
    model: ConditionalPredictor,
    z: TokenSeq,
    mask: MaskPattern,
    grid: TimeGrid | Literal["max"],
    sampler: SamplerConfig,
    trials: int,
    rng: int | None = None,
    *,
    threads: int = 1,
    keep_trials: bool = False,
    at_least_one: bool = False,
) -> PzEstimate:
    """Mean ground-truth recovery probability over `trials` trajectories.

    Trial randomness comes from position selection. For the random-uniform
    rule the chunk sequence does not depend on committed tokens, so chunk
    sequences are sampled directly (uniform permutation cut to the grid's
    chunk sizes) and scored from cached truth-context conditionals; the
    greedy rule runs the full generation loop per trial.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if not mask.masked:
        raise ValueError("mask must be nonempty")
    base_seed = sampler.seed if rng is None else int(rng)
    grid = _resolve_grid(grid, len(mask))

    if sampler.position_rule == RANDOM_UNIFORM:
        cache = TruthConditionalCache(model, z, mask)
        m = len(mask)
        sizes = _chunk_sizes(grid, m, at_least_one)
        gen = substream(base_seed, _NS_TRIAL)
        perms = np.argsort(gen.random((trials, m)), axis=1)
        log_values = np.fromiter(
            (_random_order_log_pz(cache, sizes, perms[i]) for i in range(trials)),
            dtype=float,
            count=trials,
        )
        values = np.exp(log_values)
        return _estimate_from_values(values, base_seed, keep_trials)

    def one(i: int) -> float:
        traj = reverse_generate(
            model, z, mask, grid, sampler, substream(base_seed, _NS_TRIAL, i),
            at_least_one=at_least_one,
        )
        return pz_from_trajectory(traj, mask)

    values = _fan_out(one, trials, threads)
    return _estimate_from_values(values, base_seed, keep_trials)


def _fan_out(fn, trials: int, threads: int) -> np.ndarray:
    out = np.empty(trials)
    if threads <= 1:
        for i in range(trials):
            out[i] = fn(i)
        return out
    with ThreadPoolExecutor(max_workers=threads) as pool:
        for i, val in zip(range(trials), pool.map(fn, range(trials))):
            out[i] = val
    return out


def _distance_trials(
    model: ConditionalPredictor,
    z: TokenSeq,
    mask: MaskPattern,
    grid: TimeGrid | Literal["max"],
    sampler: SamplerConfig,
    trials: int,
    rng: int | None,
    threads: int = 1,
    at_least_one: bool = False,
) -> np.ndarray:
    """Hamming distance over the mask for each of `trials` full generations."""
    base_seed = sampler.seed if rng is None else int(rng)
    grid = _resolve_grid(grid, len(mask))
    truth = z.restrict(mask.masked)

    def one(i: int) -> float:
        traj = reverse_generate(
            model, z, mask, grid, sampler, substream(base_seed, _NS_TRIAL, i),
            at_least_one=at_least_one,
        )
        return hamming(traj.generated.restrict(mask.masked), truth)

    return _fan_out(one, trials, threads).astype(int)


def empirical_hit_rate(
    model: ConditionalPredictor,
    z: TokenSeq,
    mask: MaskPattern,
    grid: TimeGrid | Literal["max"],
    sampler: SamplerConfig,
    trials: int,
    rng: int | None = None,
    *,
    threads: int = 1,
    at_least_one: bool = False,
) -> float:
    """Fraction of unconstrained generations that match z exactly on the mask.

    An empty mask is a vacuous success (rate 1). Shares its trial engine with
    eps_hit_rate, so eps=0 agrees bit-for-bit on a shared seed.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if not mask.masked:
        return 1.0
    d = _distance_trials(model, z, mask, grid, sampler, trials, rng, threads, at_least_one)
    return float((d == 0).mean())


def eps_hit_rate(
    model: ConditionalPredictor,
    z: TokenSeq,
    mask: MaskPattern,
    grid: TimeGrid | Literal["max"],
    sampler: SamplerConfig,
    trials: int,
    eps: int,
    rng: int | None = None,
    *,
    threads: int = 1,
    at_least_one: bool = False,
) -> float:
    """Fraction of generations within Hamming distance eps of the truth."""
    if eps < 0:
        raise ValueError("eps must be >= 0")
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if not mask.masked:
        return 1.0
    d = _distance_trials(model, z, mask, grid, sampler, trials, rng, threads, at_least_one)
    return float((d <= eps).mean())


def hamming_trials(
    model: ConditionalPredictor,
    z: TokenSeq,
    mask: MaskPattern,
    grid: TimeGrid | Literal["max"],
    sampler: SamplerConfig,
    trials: int,
    rng: int | None = None,
    *,
    threads: int = 1,
    at_least_one: bool = False,
) -> np.ndarray:
    """Raw per-trial Hamming distances (the inputs to hamming_stats)."""
    if not mask.masked:
        return np.zeros(trials, dtype=int)
    return _distance_trials(model, z, mask, grid, sampler, trials, rng, threads, at_least_one)


def hamming_stats(trials: Iterable[int]) -> HammingStats:
    """Sample mean/std and histogram of a nonempty distance sample."""
    d = np.asarray(list(trials) if not isinstance(trials, np.ndarray) else trials, dtype=int)
    if d.size == 0:
        raise ValueError("empty distance sample")
    if np.any(d < 0):
        raise ValueError("negative Hamming distance")
    hist = np.bincount(d)
    return HammingStats(
        mu=float(d.mean()),
        sigma=float(d.std(ddof=0)),
        count=int(d.size),
        histogram=hist,
    )


def gaussian_eps_approx(stats: HammingStats, eps: float) -> float:
    """Phi((eps - mu) / sigma); a point mass (sigma=0) yields a step at mu."""
    if stats.sigma == 0:
        return 1.0 if eps >= stats.mu else 0.0
    x = (eps - stats.mu) / stats.sigma
    return 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))


def gaussian_fit_sup_distance(
    distances: np.ndarray, stats: HammingStats | None = None
) -> float:
    """Sup gap between the empirical CDF and the fitted normal CDF over the
    central window [mu - 2*sigma, mu + 2*sigma].

    Distances are integers, so the normal CDF is read on the half-integer
    lattice (eps + 1/2, the usual continuity correction); the uncorrected
    integer grid misstates the fit for any discrete distribution.
    """
    d = np.asarray(distances, dtype=float)
    if stats is None:
        stats = hamming_stats(d.astype(int))
    if stats.sigma == 0:
        return 0.0
    lo = int(math.ceil(stats.mu - 2 * stats.sigma))
    hi = int(math.floor(stats.mu + 2 * stats.sigma))
    gaps = []
    for eps in range(max(lo, 0), hi + 1):
        emp = float((d <= eps).mean())
        gauss = gaussian_eps_approx(stats, eps + 0.5)
        gaps.append(abs(emp - gauss))
    return max(gaps) if gaps else 0.0


def passes_normality_check(distances: np.ndarray, threshold: float = CENTRAL_FIT_THRESHOLD) -> bool:
    """Central-regime Gaussian fit test used for the error-distribution claim."""
    return gaussian_fit_sup_distance(np.asarray(distances)) <= threshold


ESTIMATES_CSV_SCHEMA = "memex-estimates/1"


def write_estimates_csv(
    path,
    estimates: Sequence[tuple[str, PzEstimate]],
    config_hash: str,
) -> None:
    """One row per example: id, mean, stderr, interval, trial count."""
    import csv
    from pathlib import Path

    fieldnames = [
        "schema", "config_hash", "example_id", "pz_hat", "stderr",
        "ci_low", "ci_high", "trials",
    ]
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="\n") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        for example_id, est in estimates:
            writer.writerow(
                {
                    "schema": ESTIMATES_CSV_SCHEMA,
                    "config_hash": config_hash,
                    "example_id": example_id,
                    "pz_hat": est.mean,
                    "stderr": est.stderr,
                    "ci_low": est.ci_low,
                    "ci_high": est.ci_high,
                    "trials": est.trials,
                }
            )


def estimates_summary(estimates: Sequence[tuple[str, PzEstimate]]) -> dict:
    """JSON-ready aggregate over a batch of estimates."""
    values = np.array([est.mean for _, est in estimates])
    return {
        "schema": ESTIMATES_CSV_SCHEMA,
        "count": int(values.size),
        "mean": float(values.mean()) if values.size else None,
        "median": float(np.median(values)) if values.size else None,
        "min": float(values.min()) if values.size else None,
        "max": float(values.max()) if values.size else None,
    }


# ---------------------------------------------------------------------------
# Mask-pattern-mode estimators (scatter protocol): every trial draws a fresh
# mask pattern at a ratio from [lo, hi] and scores/simulates a single-step
# recovery. These are the desk-scale workhorses behind the scatter command.
# ---------------------------------------------------------------------------


def sample_mask_patterns(
    length: int,
    ratio_range: tuple[float, float],
    trials: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """(trials, length) boolean matrix; each row masks round(ratio*L) >= 1 positions."""
    lo, hi = ratio_range
    if not (0.0 < lo <= hi <= 1.0):
        raise ValueError("ratio range must satisfy 0 < lo <= hi <= 1")
    ratios = rng.uniform(lo, hi, size=trials)
    sizes = np.maximum(1, np.rint(ratios * length).astype(int))
    ranks = np.argsort(rng.random((trials, length)), axis=1).argsort(axis=1)
    return ranks < sizes[:, None]


def pattern_pz_estimate(
    model: ConditionalPredictor,
    z: TokenSeq,
    ratio_range: tuple[float, float],
    trials: int,
    rng: int,
    *,
    keep_trials: bool = False,
) -> PzEstimate:
    """Single-step recovery probability averaged over random mask patterns."""
    gen = substream(rng, _NS_PATTERN)
    masks = sample_mask_patterns(len(z), ratio_range, trials, gen)
    if hasattr(model, "batch_pattern_log_pz"):
        log_values = model.batch_pattern_log_pz(z, masks)
    else:
        log_values = np.empty(trials)
        for i in range(trials):
            positions = np.flatnonzero(masks[i])
            observed = z.masked_at(positions)
            logp = model.log_predict(observed, list(positions))
            truth = [z.tokens[p] for p in positions]
            log_values[i] = float(logp[np.arange(len(positions)), truth].sum())
    return _estimate_from_values(np.exp(log_values), rng, keep_trials)


def pattern_hit_rate(
    model: ConditionalPredictor,
    z: TokenSeq,
    ratio_range: tuple[float, float],
    trials: int,
    rng: int,
) -> tuple[float, float]:
    """(rate, stderr) of exact single-step recovery with per-trial patterns.

    Tokens are drawn from the per-position predictive distributions
    (categorical sampling, i.e. unit-temperature random decoding).
    """
    gen = substream(rng, _NS_PATTERN)
    masks = sample_mask_patterns(len(z), ratio_range, trials, gen)
    if hasattr(model, "batch_pattern_hits"):
        hits = model.batch_pattern_hits(z, masks, gen)
    else:
        hits = np.empty(trials, dtype=bool)
        for i in range(trials):
            positions = np.flatnonzero(masks[i])
            observed = z.masked_at(positions)
            logp = model.log_predict(observed, list(positions))
            ok = True
            for row, pos in enumerate(positions):
                dist = np.exp(logp[row])
                tok = int(gen.choice(dist.size, p=dist / dist.sum()))
                if tok != z.tokens[pos]:
                    ok = False
            hits[i] = ok
    rate = float(hits.mean())
    stderr = math.sqrt(max(rate * (1.0 - rate), 1e-300) / trials)
    return rate, stderr


# ---------------------------------------------------------------------------
# Alive-beam exact-hit estimator (step-sweep workhorse). A trial can only hit
# if every commit is correct, and committed tokens never change, so dead
# trials stop early; along the alive path the sampled context equals the
# truth context, letting per-position success probabilities come from the
# truth-conditional cache.
# ---------------------------------------------------------------------------


class _CommitProbCache:
    """Per-context probability of committing the *true* token at each position."""

    def __init__(self, model, z: TokenSeq, mask: MaskPattern, rule: TokenRule):
        self.cache = TruthConditionalCache(model, z, mask)
        self.rule = rule
        self.z = z
        self._probs: dict[int, np.ndarray] = {}
        # fast path: unit-temperature gumbel/temperature == the conditional itself
        self._identity = rule.kind in ("gumbel", "temperature") and rule.param == 1.0

    def probs(self, bits: int) -> np.ndarray:
        hit = self._probs.get(bits)
        if hit is not None:
            return hit
        if self._identity:
            out = np.exp(self.cache.log_conds(bits))
        else:
            positions = self.cache.positions
            ctx = self.cache.context_for(bits)
            targets = [p for i, p in enumerate(positions) if not (bits >> i & 1)]
            out = np.full(len(positions), np.nan)
            if targets:
                logp = self.cache.model.log_predict(ctx, targets)
                for row, pos in enumerate(targets):
                    dist = np.exp(logp[row])
                    out[positions.index(pos)] = commit_probability(
                        dist, self.rule, self.z.tokens[pos]
                    )
        self._probs[bits] = out
        return out


def fast_exact_hit_rate(
    model: ConditionalPredictor,
    z: TokenSeq,
    mask: MaskPattern,
    grid: TimeGrid | Literal["max"],
    sampler: SamplerConfig,
    trials: int,
    rng: int | None = None,
    *,
    at_least_one: bool = False,
) -> float:
    """Monte Carlo exact-recovery rate, equivalent in distribution to counting
    exact matches over full generations but pruning trials at the first wrong
    commit."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if not mask.masked:
        return 1.0
    base_seed = sampler.seed if rng is None else int(rng)
    grid = _resolve_grid(grid, len(mask))
    m = len(mask)
    sizes = _chunk_sizes(grid, m, at_least_one)
    cache = _CommitProbCache(model, z, mask, sampler.token_rule)
    gen = substream(base_seed, _NS_TRIAL)

    if sampler.position_rule == GREEDY_CONFIDENCE:
        # the alive path is unique: chunk sequence fixed by truth confidences
        probs = _greedy_alive_probs(model, z, mask, sizes, cache)
        u = gen.random((trials, m))
        hits = np.all(u < probs[None, :], axis=1)
        return float(hits.mean())

    perms = np.argsort(gen.random((trials, m)), axis=1)
    u = gen.random((trials, m))
    hits = 0
    for i in range(trials):
        bits = 0
        alive = True
        start = 0
        perm = perms[i]
        for k in sizes:
            members = perm[start : start + k]
            p = cache.probs(bits)
            if np.any(u[i, start : start + k] >= p[members]):
                alive = False
                break
            for j in members:
                bits |= 1 << int(j)
            start += k
        if alive:
            hits += 1
    return hits / trials


def _greedy_alive_probs(
    model, z: TokenSeq, mask: MaskPattern, sizes: Sequence[int], cache: _CommitProbCache
) -> np.ndarray:
    """Commit probabilities along the deterministic greedy all-correct path."""
    positions = cache.cache.positions
    remaining = set(range(len(positions)))
    bits = 0
    ctx = z.masked_at(mask.masked)
    out: list[float] = []
    for k in sizes:
        targets = [positions[i] for i in sorted(remaining)]
        logp = model.log_predict(ctx, targets)
        conf = {pos: float(np.max(logp[row])) for row, pos in enumerate(targets)}
        ranked = sorted(targets, key=lambda p: (-conf[p], p))[:k]
        p = cache.probs(bits)
        for pos in sorted(ranked):
            out.append(float(p[positions.index(pos)]))
        for pos in ranked:
            i = positions.index(pos)
            remaining.discard(i)
            bits |= 1 << i
        ctx = ctx.with_tokens({pos: z.tokens[pos] for pos in ranked})
    return np.asarray(out)
