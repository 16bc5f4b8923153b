"""Exact conditional predictor over a finite weighted corpus with token noise.

Generative semantics: draw component j with probability weight_j / sum(weights),
then emit each position l independently as w_j[l] with probability
(1 - eta) + eta/K and as any other fixed token with probability eta/K.
`predict` is the exact Bayes posterior of that process, so every downstream
estimate can be verified against closed forms and brute-force enumeration.

All probability arithmetic is done in the log domain with log-sum-exp.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import TokenSeq, VocabSpec, default_vocab

DEFAULT_ETA = 0.05


def logsumexp(a: np.ndarray, axis: int | None = None, keepdims: bool = False):
    """Stable log-sum-exp without scipy's per-call dispatch overhead."""
    a = np.asarray(a, dtype=float)
    if axis is None:
        a = a.ravel()
        axis = 0
    m = np.max(a, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(a - m), axis=axis, keepdims=keepdims))
    return out + (m if keepdims else np.squeeze(m, axis=axis))


@dataclass(frozen=True)
class Corpus:
    """Equal-length, mask-free training sequences with positive weights."""

    sequences: tuple[TokenSeq, ...]
    weights: tuple[float, ...]

    def __post_init__(self) -> None:
        if not self.sequences:
            raise ValueError("empty corpus")
        if len(self.weights) != len(self.sequences):
            raise ValueError("one weight per sequence required")
        lengths = {len(s) for s in self.sequences}
        if len(lengths) != 1:
            raise ValueError(f"ragged sequence lengths: {sorted(lengths)}")
        for s in self.sequences:
            if not s.is_mask_free():
                raise ValueError("corpus sequences must be mask-free")
        if any(w <= 0 or not math.isfinite(w) for w in self.weights):
            raise ValueError("weights must be positive and finite")

    @property
    def length(self) -> int:
        return len(self.sequences[0])

    @property
    def vocab(self) -> VocabSpec:
        return self.sequences[0].vocab


def corpus_from_rows(
    rows: Sequence[Sequence[int]],
    vocab: VocabSpec,
    weights: Sequence[float] | None = None,
) -> Corpus:
    seqs = tuple(TokenSeq(tuple(r), vocab) for r in rows)
    w = tuple(float(x) for x in (weights if weights is not None else [1.0] * len(rows)))
    return Corpus(seqs, w)


def load_corpus(path: str | Path, vocab: VocabSpec | None = None) -> Corpus:
    """Read the newline-delimited corpus format.

    Each record: whitespace-separated integer token ids, optionally followed
    by `# weight=<float>`. Blank lines and lines starting with `#` are skipped.
    When `vocab` is omitted, K = 1 + max token id.
    """
    rows: list[list[int]] = []
    weights: list[float] = []
    for raw in Path(path).read_text().splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        body, _, suffix = line.partition("#")
        weight = 1.0
        suffix = suffix.strip()
        if suffix:
            if not suffix.startswith("weight="):
                raise ValueError(f"unrecognized record suffix: {suffix!r}")
            weight = float(suffix[len("weight=") :])
        rows.append([int(tok) for tok in body.split()])
        weights.append(weight)
    if not rows:
        raise ValueError(f"no records in corpus file {path}")
    if vocab is None:
        vocab = default_vocab(max(2, 1 + max(max(r) for r in rows)))
    return corpus_from_rows(rows, vocab, weights)


def save_corpus(corpus: Corpus, path: str | Path) -> None:
    lines = []
    for seq, w in zip(corpus.sequences, corpus.weights):
        record = " ".join(str(t) for t in seq.tokens)
        if w != 1.0:
            record += f"  # weight={w!r}"
        lines.append(record)
    Path(path).write_text("\n".join(lines) + "\n")


class PosteriorModel:
    """Bayes-exact conditional predictor for the noisy-mixture process.

    Immutable after construction; `predict` is pure and safe to call from
    concurrent workers.
    """

    def __init__(self, corpus: Corpus, eta: float) -> None:
        if not (0.0 < eta < 1.0):
            raise ValueError(f"eta must be in (0, 1), got {eta}")
        self.corpus = corpus
        self.eta = float(eta)
        self.vocab = corpus.vocab
        k = self.vocab.size
        self._log_match = math.log((1.0 - eta) + eta / k)
        self._log_miss = math.log(eta / k)
        self._components = np.asarray(
            [s.tokens for s in corpus.sequences], dtype=np.int64
        )  # (J, L)
        weights = np.asarray(corpus.weights, dtype=float)
        self._log_prior = np.log(weights / weights.sum())  # (J,)

    @property
    def seq_length(self) -> int:
        return self.corpus.length

    def posterior_log_weights(self, observed: TokenSeq) -> np.ndarray:
        """Log posterior over components given the unmasked tokens of `observed`."""
        if len(observed) != self.seq_length:
            raise ValueError("observation length mismatch")
        obs = np.asarray(observed.tokens)
        visible = obs != self.vocab.mask_id
        ll = self._log_prior.copy()
        if visible.any():
            matches = (self._components[:, visible] == obs[visible]).sum(axis=1)
            n_vis = int(visible.sum())
            ll = ll + matches * self._log_match + (n_vis - matches) * self._log_miss
        return ll - logsumexp(ll)

    def log_predict(self, observed: TokenSeq, targets: Sequence[int]) -> np.ndarray:
        """(len(targets), K) log-probabilities for each target position.

        Targets must be masked in `observed`; an empty observation set is a
        valid prior-predictive query.
        """
        targets = [int(p) for p in targets]
        mask_id = self.vocab.mask_id
        for pos in targets:
            if observed.tokens[pos] != mask_id:
                raise ValueError(f"target position {pos} is not masked")
        log_post = self.posterior_log_weights(observed)  # (J,)
        j, k = self._components.shape[0], self.vocab.size
        t = len(targets)
        # (T, J, K) log emissions: the miss floor plus the match bump
        scores = np.full((t, j, k), self._log_miss)
        scores[
            np.arange(t)[:, None], np.arange(j)[None, :], self._components[:, targets].T
        ] = self._log_match
        return logsumexp(log_post[None, :, None] + scores, axis=1)

    def predict(self, observed: TokenSeq, targets: Sequence[int]) -> dict[int, np.ndarray]:
        """Per-target probability distributions over the vocabulary."""
        logp = self.log_predict(observed, targets)
        return {pos: np.exp(logp[i]) for i, pos in enumerate(targets)}

    def log_joint(self, z: TokenSeq) -> float:
        """Exact mixture log-likelihood of a full mask-free sequence."""
        if not z.is_mask_free():
            raise ValueError("sequence has mask sentinels")
        obs = np.asarray(z.tokens)
        matches = (self._components == obs).sum(axis=1)
        ll = self._log_prior + matches * self._log_match + (len(z) - matches) * self._log_miss
        return float(logsumexp(ll))

    def arm_conditional(self, prefix: Sequence[int] | TokenSeq) -> np.ndarray:
        """Next-position distribution given a left prefix (chain-rule conditional)."""
        toks = tuple(prefix.tokens if isinstance(prefix, TokenSeq) else prefix)
        if len(toks) >= self.seq_length:
            raise ValueError("prefix must be shorter than the sequence length")
        padded = toks + (self.vocab.mask_id,) * (self.seq_length - len(toks))
        observed = TokenSeq(padded, self.vocab)
        return self.predict(observed, [len(toks)])[len(toks)]

    def _truth_emissions(self, z: TokenSeq) -> np.ndarray:
        """(J, L) log emission of z's token at each position per component."""
        if not z.is_mask_free():
            raise ValueError("sequence has mask sentinels")
        obs = np.asarray(z.tokens)
        return np.where(self._components == obs, self._log_match, self._log_miss)

    def batch_pattern_log_pz(self, z: TokenSeq, masks: np.ndarray) -> np.ndarray:
        """Single-step log recovery probability for each mask row.

        For row r with mask M_r: sum over l in M_r of
        log P(z_l | z at the complement of M_r). Vectorized equivalent of the
        per-pattern log_predict loop; chunked to bound memory.
        """
        emis = self._truth_emissions(z)  # (J, L)
        base = self._log_prior + emis.sum(axis=1)  # (J,)
        masks = np.asarray(masks, dtype=bool)
        out = np.empty(masks.shape[0])
        step = max(1, 4_000_000 // (emis.size + 1))
        for a in range(0, masks.shape[0], step):
            b = masks[a : a + step].astype(float)  # (r, L)
            obs_ll = base[None, :] - b @ emis.T  # (r, J)
            log_post = obs_ll - logsumexp(obs_ll, axis=1, keepdims=True)
            # (r, J, L) -> per-position conditionals
            cond = logsumexp(log_post[:, :, None] + emis[None, :, :], axis=1)
            out[a : a + step] = (cond * b).sum(axis=1)
        return out

    def batch_pattern_hits(
        self, z: TokenSeq, masks: np.ndarray, rng: np.random.Generator
    ) -> np.ndarray:
        """Simulate one categorical single-step decode per mask row; True on
        exact recovery. Each masked position draws a component from the
        posterior and succeeds with that component's truth-emission odds —
        identical in law to sampling the token from the mixture conditional."""
        emis = self._truth_emissions(z)
        base = self._log_prior + emis.sum(axis=1)
        masks = np.asarray(masks, dtype=bool)
        n_rows = masks.shape[0]
        hits = np.empty(n_rows, dtype=bool)
        step = max(1, 4_000_000 // (emis.size + 1))
        for a in range(0, n_rows, step):
            b = masks[a : a + step]
            bf = b.astype(float)
            obs_ll = base[None, :] - bf @ emis.T
            log_post = obs_ll - logsumexp(obs_ll, axis=1, keepdims=True)
            cum = np.cumsum(np.exp(log_post), axis=1)  # (r, J)
            r_rows, length = b.shape
            u = rng.random((r_rows, length))
            comp = (u[:, :, None] > cum[:, None, :]).sum(axis=2)  # (r, L)
            comp = np.minimum(comp, cum.shape[1] - 1)
            p_true = np.exp(emis[comp, np.arange(length)[None, :]])  # (r, L)
            ok = rng.random((r_rows, length)) < p_true
            hits[a : a + step] = np.all(ok | ~b, axis=1)
        return hits

    def nll_bound(
        self,
        z0: TokenSeq,
        mc_draws: int,
        rng: np.random.Generator,
        t_min: float = 1e-3,
    ) -> float:
        """Monte Carlo loss-bound estimate: E_t[(1/t) sum_masked -log p(z0_l | z_t)].

        t is drawn uniformly from [t_min, 1] (the 1/t weight diverges at 0, so
        the integral is truncated; the omitted [0, t_min) mass biases the
        estimate low by at most t_min * L * log K).
        """
        if not z0.is_mask_free():
            raise ValueError("z0 must be mask-free")
        if mc_draws < 1:
            raise ValueError("mc_draws must be >= 1")
        total = 0.0
        span = 1.0 - t_min
        for _ in range(mc_draws):
            t = t_min + span * rng.random()
            keep = rng.random(len(z0)) >= t
            masked = [i for i in range(len(z0)) if not keep[i]]
            if not masked:
                continue
            observed = z0.masked_at(masked)
            logp = self.log_predict(observed, masked)
            truth = [z0.tokens[i] for i in masked]
            total += span * (1.0 / t) * float(-logp[np.arange(len(masked)), truth].sum())
        return total / mc_draws


def fit(corpus: Corpus, eta: float = DEFAULT_ETA) -> PosteriorModel:
    """Build the exact posterior predictor; eta must lie strictly in (0, 1)."""
    return PosteriorModel(corpus, eta)


def save_model(model: PosteriorModel, path: str | Path) -> None:
    """Serialize corpus + eta + vocab as a deterministic text artifact."""
    import json

    payload = {
        "schema": "memex-model/1",
        "vocab_size": model.vocab.size,
        "mask_id": model.vocab.mask_id,
        "eta": model.eta,
        "weights": list(model.corpus.weights),
        "sequences": [list(s.tokens) for s in model.corpus.sequences],
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True, separators=(",", ":")))


def load_model(path: str | Path) -> PosteriorModel:
    import json

    payload = json.loads(Path(path).read_text())
    if payload.get("schema") != "memex-model/1":
        raise ValueError(f"unrecognized model artifact schema in {path}")
    vocab = VocabSpec(size=payload["vocab_size"], mask_id=payload["mask_id"])
    corpus = corpus_from_rows(payload["sequences"], vocab, payload["weights"])
    return fit(corpus, payload["eta"])
