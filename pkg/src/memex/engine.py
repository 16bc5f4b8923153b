"""Forward masking and the reverse generation loop (diffusion mode), plus
sequential left-to-right decoding (autoregressive mode). Each run yields a
full TrajectoryRecord.

Two log-probabilities are recorded per trajectory:

* ``log_pz`` — the product of ground-truth conditionals: every revealed
  position is scored against a context in which previously revealed positions
  hold their *true* tokens. When the sampler commits a wrong token the model
  is re-queried with the truth-substituted context, so ``log_pz`` always
  measures the all-correct recovery probability along the realized chunk
  sequence. This is the quantity every estimator consumes.
* ``log_path`` — the probability of the trajectory actually sampled
  (committed tokens scored against the sampled context); diagnostic only.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Literal, Protocol, Sequence

import numpy as np

from .core import (
    MaskPattern,
    Partition,
    TimeGrid,
    TokenSeq,
    VocabSpec,
    make_linear_grid,
    tokens_to_recover,
)
from .samplers import SamplerConfig, commit_token, select_positions

TRACE_SCHEMA = "memex-trace/1"


class ConditionalPredictor(Protocol):
    """What the engine needs from a model (toymodel or remote)."""

    vocab: VocabSpec

    def log_predict(self, observed: TokenSeq, targets: Sequence[int]) -> np.ndarray: ...


@dataclass(frozen=True)
class TrajectoryRecord:
    """One complete reverse-sampling (or ARM) run."""

    chunks: Partition
    observed_sets: tuple[frozenset[int], ...]
    log_conditionals: dict[int, float]  # position -> log ground-truth conditional
    log_pz: float
    log_path: float
    generated: TokenSeq
    exact_match: bool

    @property
    def conditionals(self) -> dict[int, float]:
        """Ground-truth conditionals in probability space."""
        return {p: float(np.exp(v)) for p, v in self.log_conditionals.items()}

    def covered(self) -> frozenset[int]:
        return self.chunks.indices


def forward_mask(z0: TokenSeq, t: float, rng: np.random.Generator) -> TokenSeq:
    """Independently replace each token with the mask sentinel w.p. t."""
    if not z0.is_mask_free():
        raise ValueError("z0 must be mask-free")
    if not (0.0 <= t <= 1.0):
        raise ValueError(f"t must be in [0, 1], got {t}")
    hide = rng.random(len(z0)) < t
    return z0.masked_at([i for i in range(len(z0)) if hide[i]])


def _resolve_grid(grid: TimeGrid | Literal["max"], mask_size: int) -> TimeGrid:
    if grid == "max":
        return make_linear_grid(max(mask_size, 1))
    return grid


def reverse_generate(
    model: ConditionalPredictor,
    z: TokenSeq,
    mask: MaskPattern,
    grid: TimeGrid | Literal["max"],
    sampler: SamplerConfig,
    rng: np.random.Generator,
    *,
    at_least_one: bool = False,
) -> TrajectoryRecord:
    """Run the reverse loop over the masked positions of ground-truth `z`.

    `z` must be mask-free (it supplies the ground-truth tokens). Positions
    outside the mask never change. Predictive distributions are computed once
    per step for all still-masked positions; position confidences come from
    the unperturbed distributions.
    """
    if not z.is_mask_free():
        raise ValueError("z must be the mask-free ground truth")
    if len(z) != mask.length:
        raise ValueError("mask length does not match sequence length")
    if not mask.masked:
        raise ValueError("reverse_generate requires a nonempty mask")
    grid = _resolve_grid(grid, len(mask))

    cur = z.masked_at(mask.masked)  # the sampled path
    truth_ctx = cur  # identical until a wrong token is committed
    diverged = False
    remaining = set(mask.masked)
    observed_sets = [frozenset(mask.complement)]
    chunks: list[frozenset[int]] = []
    log_conditionals: dict[int, float] = {}
    committed: dict[int, int] = {}
    log_pz = 0.0
    log_path = 0.0

    for t, s in grid.steps():
        if not remaining:
            break
        k = tokens_to_recover(t, s, len(remaining), at_least_one=at_least_one)
        if k == 0:
            continue
        targets = sorted(remaining)
        log_dists = model.log_predict(cur, targets)  # (|targets|, K)
        row = {pos: i for i, pos in enumerate(targets)}
        confidences = {pos: float(np.max(log_dists[row[pos]])) for pos in targets}
        chunk = select_positions(confidences, k, sampler.position_rule, rng)

        if diverged:
            truth_log = model.log_predict(truth_ctx, list(chunk))
            truth_rows = {pos: truth_log[i] for i, pos in enumerate(chunk)}
        else:
            truth_rows = {pos: log_dists[row[pos]] for pos in chunk}

        step_tokens: dict[int, int] = {}
        for pos in chunk:  # ascending order fixes the rng draw sequence
            log_row = log_dists[row[pos]]
            tok = commit_token(None, sampler.token_rule, rng, log_dist=log_row)
            step_tokens[pos] = tok
            committed[pos] = tok
            log_path += float(log_dists[row[pos]][tok])
            cond = float(truth_rows[pos][z.tokens[pos]])
            log_conditionals[pos] = cond
            log_pz += cond

        cur = cur.with_tokens(step_tokens)
        truth_ctx = truth_ctx.with_tokens({p: z.tokens[p] for p in chunk})
        if any(step_tokens[p] != z.tokens[p] for p in chunk):
            diverged = True
        remaining -= set(chunk)
        chunks.append(frozenset(chunk))
        observed_sets.append(observed_sets[-1] | frozenset(chunk))

    exact = all(committed[p] == z.tokens[p] for p in mask.masked)
    return TrajectoryRecord(
        chunks=Partition(tuple(chunks)),
        observed_sets=tuple(observed_sets),
        log_conditionals=log_conditionals,
        log_pz=log_pz,
        log_path=log_path,
        generated=cur,
        exact_match=exact,
    )


def arm_generate(
    model: ConditionalPredictor,
    prefix: Sequence[int],
    target: Sequence[int],
    sampler: SamplerConfig,
    rng: np.random.Generator,
    *,
    seq_length: int | None = None,
) -> TrajectoryRecord:
    """Decode the target suffix one token per step, left to right.

    The record uses singleton chunks in index order; log_pz is the chain-rule
    log-probability of the exact suffix (each step conditioned on the true
    previous tokens). Positions beyond prefix+target, if any, stay masked.
    """
    prefix = tuple(int(t) for t in prefix)
    target = tuple(int(t) for t in target)
    if not target:
        raise ValueError("empty target suffix")
    length = seq_length if seq_length is not None else getattr(model, "seq_length", None)
    if length is None:
        length = len(prefix) + len(target)
    if len(prefix) + len(target) > length:
        raise ValueError("prefix plus target exceed the sequence length")
    vocab = model.vocab
    suffix_positions = tuple(range(len(prefix), len(prefix) + len(target)))
    base = prefix + (vocab.mask_id,) * (length - len(prefix))

    cur = TokenSeq(base, vocab)
    truth_ctx = cur
    diverged = False
    observed_sets = [frozenset(range(len(prefix)))]
    log_conditionals: dict[int, float] = {}
    committed: dict[int, int] = {}
    log_pz = 0.0
    log_path = 0.0

    for i, pos in enumerate(suffix_positions):
        log_dist = model.log_predict(cur, [pos])[0]
        truth_log = model.log_predict(truth_ctx, [pos])[0] if diverged else log_dist
        tok = commit_token(None, sampler.token_rule, rng, log_dist=log_dist)
        committed[pos] = tok
        log_path += float(log_dist[tok])
        true_tok = target[i]
        cond = float(truth_log[true_tok])
        log_conditionals[pos] = cond
        log_pz += cond
        cur = cur.with_tokens({pos: tok})
        truth_ctx = truth_ctx.with_tokens({pos: true_tok})
        if tok != true_tok:
            diverged = True
        observed_sets.append(observed_sets[-1] | {pos})

    exact = all(committed[p] == target[i] for i, p in enumerate(suffix_positions))
    return TrajectoryRecord(
        chunks=Partition(tuple(frozenset((p,)) for p in suffix_positions)),
        observed_sets=tuple(observed_sets),
        log_conditionals=log_conditionals,
        log_pz=log_pz,
        log_path=log_path,
        generated=cur,
        exact_match=exact,
    )


class TruthConditionalCache:
    """Memoized ground-truth log-conditionals keyed by the recovered subset.

    For a fixed (model, z, mask), the conditional of each still-hidden
    position depends only on which masked positions have been revealed (with
    their true tokens). Subsets are encoded as bitmasks over the sorted
    masked positions.
    """

    def __init__(self, model: ConditionalPredictor, z: TokenSeq, mask: MaskPattern):
        if not z.is_mask_free():
            raise ValueError("z must be mask-free")
        self.model = model
        self.z = z
        self.mask = mask
        self.positions = tuple(sorted(mask.masked))
        self._base = z.masked_at(mask.masked)
        self._cache: dict[int, np.ndarray] = {}

    def bit(self, position: int) -> int:
        return 1 << self.positions.index(position)

    def context_for(self, recovered_bits: int) -> TokenSeq:
        """The truth-valued context with the given subset revealed."""
        reveal = {
            pos: self.z.tokens[pos]
            for i, pos in enumerate(self.positions)
            if recovered_bits >> i & 1
        }
        return self._base.with_tokens(reveal)

    def log_conds(self, recovered_bits: int) -> np.ndarray:
        """Array over sorted masked positions; NaN at already-recovered slots."""
        hit = self._cache.get(recovered_bits)
        if hit is not None:
            return hit
        ctx = self.context_for(recovered_bits)
        targets = [
            pos
            for i, pos in enumerate(self.positions)
            if not (recovered_bits >> i & 1)
        ]
        out = np.full(len(self.positions), np.nan)
        if targets:
            logp = self.model.log_predict(ctx, targets)
            truth = [self.z.tokens[p] for p in targets]
            vals = logp[np.arange(len(targets)), truth]
            idx = [self.positions.index(p) for p in targets]
            out[idx] = vals
        self._cache[recovered_bits] = out
        return out

    def log_cond(self, position: int, recovered: Iterable[int]) -> float:
        bits = 0
        for p in recovered:
            bits |= self.bit(p)
        return float(self.log_conds(bits)[self.positions.index(position)])


def write_trace(records: Iterable[TrajectoryRecord], path: str | Path) -> None:
    """Line-delimited trace: a schema header, then one JSON object per run."""
    lines = [json.dumps({"schema": TRACE_SCHEMA})]
    for r in records:
        lines.append(
            json.dumps(
                {
                    "chunks": [sorted(c) for c in r.chunks.chunks],
                    "observed_0": sorted(r.observed_sets[0]),
                    "log_conditionals": {str(k): v for k, v in sorted(r.log_conditionals.items())},
                    "log_pz": r.log_pz,
                    "log_path": r.log_path,
                    "generated": list(r.generated.tokens),
                    "vocab_size": r.generated.vocab.size,
                    "mask_id": r.generated.vocab.mask_id,
                    "exact_match": r.exact_match,
                },
                sort_keys=True,
            )
        )
    Path(path).write_text("\n".join(lines) + "\n")


def read_trace(path: str | Path) -> list[TrajectoryRecord]:
    lines = Path(path).read_text().splitlines()
    if not lines or json.loads(lines[0]).get("schema") != TRACE_SCHEMA:
        raise ValueError(f"not a {TRACE_SCHEMA} trace: {path}")
    out = []
    for line in lines[1:]:
        d = json.loads(line)
        vocab = VocabSpec(size=d["vocab_size"], mask_id=d["mask_id"])
        chunks = Partition(tuple(frozenset(c) for c in d["chunks"]))
        observed = [frozenset(d["observed_0"])]
        for c in chunks.chunks:
            observed.append(observed[-1] | c)
        out.append(
            TrajectoryRecord(
                chunks=chunks,
                observed_sets=tuple(observed),
                log_conditionals={int(k): float(v) for k, v in d["log_conditionals"].items()},
                log_pz=float(d["log_pz"]),
                log_path=float(d["log_path"]),
                generated=TokenSeq(tuple(d["generated"]), vocab),
                exact_match=bool(d["exact_match"]),
            )
        )
    return out
