"""Token-selection rules (argmax, temperature, top-k, Gumbel) and masked-
position-selection rules (greedy-confidence, random-uniform).

Randomness comes from counter-based Philox substreams keyed on
(seed, trial index, ...), so trials reproduce identically regardless of
scheduling or worker count.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

GREEDY_CONFIDENCE = "greedy_confidence"
RANDOM_UNIFORM = "random_uniform"
POSITION_RULES = (GREEDY_CONFIDENCE, RANDOM_UNIFORM)

TOKEN_RULES = ("argmax", "temperature", "top_k", "gumbel")


def substream(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for (seed, key...) — stable across runs and workers."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(seed: int, *key: int) -> int:
    """A 63-bit child seed for (seed, key...); stable across runs."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> 1)


@dataclass(frozen=True)
class TokenRule:
    """How a committed token is chosen from a predictive distribution."""

    kind: str
    param: float | None = None

    def __post_init__(self) -> None:
        if self.kind not in TOKEN_RULES:
            raise ValueError(f"unknown token rule {self.kind!r}")
        if self.kind == "temperature" and not (self.param and self.param > 0):
            raise ValueError("temperature requires T > 0")
        if self.kind == "top_k" and not (self.param and int(self.param) >= 1):
            raise ValueError("top_k requires k >= 1")
        if self.kind == "gumbel" and (self.param is None or self.param < 0):
            raise ValueError("gumbel requires T >= 0")

    @staticmethod
    def argmax() -> "TokenRule":
        return TokenRule("argmax")

    @staticmethod
    def temperature(t: float) -> "TokenRule":
        return TokenRule("temperature", float(t))

    @staticmethod
    def top_k(k: int) -> "TokenRule":
        return TokenRule("top_k", float(k))

    @staticmethod
    def gumbel(t: float) -> "TokenRule":
        return TokenRule("gumbel", float(t))


@dataclass(frozen=True)
class SamplerConfig:
    position_rule: str
    token_rule: TokenRule
    seed: int = 0

    def __post_init__(self) -> None:
        if self.position_rule not in POSITION_RULES:
            raise ValueError(f"unknown position rule {self.position_rule!r}")

    def to_dict(self) -> dict:
        return {
            "position_rule": self.position_rule,
            "token_rule": {"kind": self.token_rule.kind, "param": self.token_rule.param},
            "seed": self.seed,
        }

    @staticmethod
    def from_dict(d: Mapping) -> "SamplerConfig":
        tr = d["token_rule"]
        return SamplerConfig(
            position_rule=d["position_rule"],
            token_rule=TokenRule(tr["kind"], tr.get("param")),
            seed=int(d.get("seed", 0)),
        )


def _as_log_scores(scores: np.ndarray, logits: bool) -> np.ndarray:
    scores = np.asarray(scores, dtype=float)
    if logits:
        return scores
    if np.any(scores < 0):
        raise ValueError("probabilities must be nonnegative (pass logits=True for logits)")
    with np.errstate(divide="ignore"):
        return np.log(scores)


def _softmax(log_scores: np.ndarray) -> np.ndarray:
    shifted = log_scores - np.max(log_scores)
    w = np.exp(shifted)
    return w / w.sum()


def temperature_transform(scores: np.ndarray, t: float, *, logits: bool = False) -> np.ndarray:
    """softmax(l / T). `scores` is a probability vector, or raw logits with logits=True."""
    if t <= 0:
        raise ValueError(f"temperature must be > 0, got {t}")
    return _softmax(_as_log_scores(scores, logits) / t)


def topk_transform(probs: np.ndarray, k: int) -> np.ndarray:
    """Zero everything outside the k most probable tokens and renormalize.

    Ties at the k-th value break toward lower token ids.
    """
    probs = np.asarray(probs, dtype=float)
    if not (1 <= k <= probs.size):
        raise ValueError(f"need 1 <= k <= {probs.size}, got {k}")
    # stable selection: order by (-p, id), keep the first k
    order = np.lexsort((np.arange(probs.size), -probs))
    keep = order[:k]
    out = np.zeros_like(probs)
    out[keep] = probs[keep]
    total = out.sum()
    if total <= 0:
        raise ValueError("top-k support has zero total mass")
    return out / total


def gumbel_select(
    scores: np.ndarray,
    t_gumbel: float,
    rng: np.random.Generator,
    *,
    logits: bool = False,
) -> int:
    """Perturbed-score argmax: argmax_v exp(l_v) / (-log U_v)**T.

    Computed in the log domain: argmax l_v - T*log(-log U_v). At T=0 this is
    plain argmax (ties to the lowest id). Probabilities and logits are
    interchangeable here up to the argmax. Zero uniform draws are resampled.
    """
    if t_gumbel < 0:
        raise ValueError(f"gumbel temperature must be >= 0, got {t_gumbel}")
    log_scores = _as_log_scores(scores, logits)
    if t_gumbel == 0:
        return int(np.argmax(log_scores))
    u = rng.random(log_scores.size)
    while np.any(u == 0.0):
        redo = u == 0.0
        u[redo] = rng.random(int(redo.sum()))
    perturbed = log_scores - t_gumbel * np.log(-np.log(u))
    return int(np.argmax(perturbed))


def commit_token(
    dist: np.ndarray | None,
    rule: TokenRule,
    rng: np.random.Generator,
    *,
    log_dist: np.ndarray | None = None,
) -> int:
    """Draw one token id from a predictive distribution under the given rule.

    Either the distribution or its log (or both, agreeing) may be passed;
    log-domain callers avoid an exp/log round trip.
    """
    if dist is None and log_dist is None:
        raise ValueError("need dist or log_dist")
    if rule.kind == "argmax":
        return int(np.argmax(log_dist if log_dist is not None else dist))
    if rule.kind == "temperature":
        scores = log_dist if log_dist is not None else _as_log_scores(dist, False)
        return int(rng.choice(scores.size, p=_softmax(scores / rule.param)))
    if rule.kind == "top_k":
        if dist is None:
            dist = np.exp(log_dist)
        return int(rng.choice(dist.size, p=topk_transform(dist, int(rule.param))))
    if log_dist is not None:
        return gumbel_select(log_dist, rule.param, rng, logits=True)
    return gumbel_select(dist, rule.param, rng)


def commit_probability(dist: np.ndarray, rule: TokenRule, token: int) -> float:
    """Probability that commit_token returns `token` for this distribution.

    Gumbel selection with temperature T is distributionally identical to
    sampling from softmax(log p / T); T=0 and argmax give point masses.
    """
    dist = np.asarray(dist, dtype=float)
    if rule.kind == "argmax" or (rule.kind == "gumbel" and rule.param == 0):
        return 1.0 if int(np.argmax(dist)) == token else 0.0
    if rule.kind == "temperature":
        return float(temperature_transform(dist, rule.param)[token])
    if rule.kind == "top_k":
        return float(topk_transform(dist, int(rule.param))[token])
    return float(temperature_transform(dist, rule.param)[token])


def select_positions(
    confidences: Mapping[int, float],
    k: int,
    rule: str,
    rng: np.random.Generator | None = None,
) -> tuple[int, ...]:
    """Choose k candidate positions; returned sorted ascending.

    greedy_confidence: the k highest-confidence positions, ties to the lowest
    index. random_uniform: uniform without replacement (requires rng).
    """
    positions = sorted(confidences)
    if k > len(positions):
        raise ValueError(f"cannot select {k} of {len(positions)} positions")
    if k == 0:
        return ()
    if rule == GREEDY_CONFIDENCE:
        ranked = sorted(positions, key=lambda p: (-confidences[p], p))
        return tuple(sorted(ranked[:k]))
    if rule == RANDOM_UNIFORM:
        if rng is None:
            raise ValueError("random_uniform selection requires an rng")
        chosen = rng.choice(len(positions), size=k, replace=False)
        return tuple(sorted(positions[i] for i in chosen))
    raise ValueError(f"unknown position rule {rule!r}")
