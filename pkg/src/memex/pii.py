"""PII target discovery (email/phone regexes), prefix-conditioned record
construction, and the audit that tabulates discoverable records per query
budget and target probability.
"""

from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass
from typing import Literal, Mapping, Protocol, Sequence

from .core import MaskPattern, RecoveryOrder, TokenSeq, per_token_partition
from .engine import ConditionalPredictor
from .extraction import PzEstimate, discoverable_count, estimate_pz
from .oracle import log_exact_pz_fixed_partition
from .samplers import SamplerConfig

logger = logging.getLogger(__name__)

PREFIX_TOKENS = 100

EMAIL_RE = re.compile(r"^([a-zA-Z0-9_\-\.]+)@([a-zA-Z0-9_\-\.]+)\.([a-zA-Z]{2,5})$")
PHONE_RE = re.compile(r"[0-9][0-9][0-9][-.()][0-9][0-9][0-9][-.()][0-9][0-9][0-9][0-9]")

EMAIL = "email"
PHONE = "phone"
CATEGORIES = (EMAIL, PHONE)

_WORD = re.compile(r"\S+")


def scan(text: str) -> list[tuple[str, tuple[int, int]]]:
    """All category matches as (category, (start, end)) sorted by offset.

    The email pattern is anchored, so it is applied to each
    whitespace-delimited token in full; the phone pattern is searched as a
    substring. Matches never overlap within a category.
    """
    found: list[tuple[str, tuple[int, int]]] = []
    for tok in _WORD.finditer(text):
        if EMAIL_RE.match(tok.group()):
            found.append((EMAIL, (tok.start(), tok.end())))
    for m in PHONE_RE.finditer(text):
        found.append((PHONE, (m.start(), m.end())))
    found.sort(key=lambda item: (item[1][0], item[0]))
    return found


class Tokenizer(Protocol):
    vocab_size: int

    def encode_with_offsets(self, text: str) -> list[tuple[int, int, int]]:
        """(token_id, char_start, char_end) triples covering the text."""
        ...


class ByteTokenizer:
    """Identity tokenizer: one token per character, id = codepoint (< 256)."""

    vocab_size = 256

    def encode_with_offsets(self, text: str) -> list[tuple[int, int, int]]:
        out = []
        for i, ch in enumerate(text):
            code = ord(ch)
            if code >= 256:
                raise ValueError(f"non Latin-1 character {ch!r} at offset {i}")
            out.append((code, i, i + 1))
        return out


@dataclass(frozen=True)
class PiiRecord:
    doc_id: str
    category: str
    char_span: tuple[int, int]
    token_span: tuple[int, int]
    prefix_tokens: tuple[int, ...]
    target_tokens: tuple[int, ...]

    def __post_init__(self) -> None:
        if self.category not in CATEGORIES:
            raise ValueError(f"unknown category {self.category!r}")
        if len(self.prefix_tokens) != PREFIX_TOKENS:
            raise ValueError(f"prefix must hold exactly {PREFIX_TOKENS} tokens")
        if not self.target_tokens:
            raise ValueError("empty target")

    def to_dict(self) -> dict:
        return {
            "doc_id": self.doc_id,
            "category": self.category,
            "char_span": list(self.char_span),
            "token_span": list(self.token_span),
            "prefix_tokens": list(self.prefix_tokens),
            "target_tokens": list(self.target_tokens),
        }

    @staticmethod
    def from_dict(d: Mapping) -> "PiiRecord":
        return PiiRecord(
            doc_id=str(d["doc_id"]),
            category=d["category"],
            char_span=tuple(d["char_span"]),
            token_span=tuple(d["token_span"]),
            prefix_tokens=tuple(d["prefix_tokens"]),
            target_tokens=tuple(d["target_tokens"]),
        )


def _snap_outward(
    tokens: Sequence[tuple[int, int, int]], span: tuple[int, int]
) -> tuple[int, int] | None:
    """Smallest token range covering the char span (outward snap)."""
    first = last = None
    for i, (_tok, start, end) in enumerate(tokens):
        if end > span[0] and start < span[1]:
            if first is None:
                first = i
            last = i
    if first is None:
        return None
    return first, last + 1


def build_records(
    texts: Mapping[str, str] | Sequence[tuple[str, str]],
    tokenizer: Tokenizer,
    per_category_cap: int,
) -> list[PiiRecord]:
    """Locate PII targets and keep those with a full 100-token prefix.

    Documents are processed by ascending id, matches by offset. Email records
    whose prefix window intersects any other email match are dropped. At most
    `per_category_cap` records are kept per category, in discovery order.
    """
    items = sorted(texts.items()) if isinstance(texts, Mapping) else sorted(texts)
    kept: list[PiiRecord] = []
    counts = {c: 0 for c in CATEGORIES}
    dropped = {"short_prefix": 0, "extra_email": 0}
    for doc_id, text in items:
        matches = scan(text)
        tokens = tokenizer.encode_with_offsets(text)
        email_spans = [span for cat, span in matches if cat == EMAIL]
        for category, span in matches:
            if counts[category] >= per_category_cap:
                continue
            token_range = _snap_outward(tokens, span)
            if token_range is None:
                continue
            t0, t1 = token_range
            if t0 < PREFIX_TOKENS:
                dropped["short_prefix"] += 1
                continue
            prefix_slice = tokens[t0 - PREFIX_TOKENS : t0]
            prefix_char_range = (prefix_slice[0][1], prefix_slice[-1][2])
            if category == EMAIL:
                extra = [
                    s
                    for s in email_spans
                    if s != span and s[0] < prefix_char_range[1] and s[1] > prefix_char_range[0]
                ]
                if extra:
                    dropped["extra_email"] += 1
                    continue
            kept.append(
                PiiRecord(
                    doc_id=str(doc_id),
                    category=category,
                    char_span=span,
                    token_span=(t0, t1),
                    prefix_tokens=tuple(tok for tok, _, _ in prefix_slice),
                    target_tokens=tuple(tok for tok, _, _ in tokens[t0:t1]),
                )
            )
            counts[category] += 1
    for category in CATEGORIES:
        if counts[category] < per_category_cap:
            logger.info(
                "only %d %s records found (cap %d); dropped: %s",
                counts[category],
                category,
                per_category_cap,
                dropped,
            )
    return kept


RECORDS_SCHEMA = "memex-pii/1"


def save_records(records: Sequence[PiiRecord], path) -> None:
    """Newline-delimited JSON: a schema header line, then one record per line."""
    import json
    from pathlib import Path

    lines = [json.dumps({"schema": RECORDS_SCHEMA})]
    lines += [json.dumps(r.to_dict(), sort_keys=True) for r in records]
    Path(path).write_text("\n".join(lines) + "\n")


def load_records(path) -> list[PiiRecord]:
    import json
    from pathlib import Path

    lines = Path(path).read_text().splitlines()
    if not lines or json.loads(lines[0]).get("schema") != RECORDS_SCHEMA:
        raise ValueError(f"not a {RECORDS_SCHEMA} record file: {path}")
    return [PiiRecord.from_dict(json.loads(line)) for line in lines[1:]]


@dataclass(frozen=True)
class AuditResult:
    """Per-category discoverable counts and the underlying estimates."""

    counts: dict[str, dict[float, int]]
    estimates: dict[str, list[PzEstimate]]
    n_queries: int

    def count(self, category: str, p: float) -> int:
        return self.counts[category][p]


def record_sequence(record: PiiRecord, model: ConditionalPredictor) -> tuple[TokenSeq, MaskPattern]:
    """Prefix+target as a model-ready sequence with the target masked."""
    tokens = record.prefix_tokens + record.target_tokens
    length = getattr(model, "seq_length", len(tokens))
    if len(tokens) > length:
        raise ValueError("record longer than the model's sequence length")
    padded = tokens + (model.vocab.mask_id,) * (length - len(tokens))
    seq = TokenSeq(padded, model.vocab)
    mask = MaskPattern(
        frozenset(range(len(record.prefix_tokens), len(tokens))), length
    )
    return seq, mask


def audit_pii(
    model: ConditionalPredictor,
    records: Sequence[PiiRecord],
    mode: Literal["diffusion", "arm"],
    sampler: SamplerConfig,
    trials: int,
    target_probabilities: Sequence[float],
    n_queries: int,
    *,
    grid=None,
    rng: int | None = None,
    at_least_one: bool = False,
) -> AuditResult:
    """Treat each record's target as the mask, estimate its recovery
    probability, and count records clearing each target probability under the
    query budget.

    Diffusion mode needs a time grid ("max" resolves per record); ARM mode
    scores the deterministic left-to-right chain, so a single trial suffices.
    """
    if not records:
        raise ValueError("no records to audit")
    estimates: dict[str, list[PzEstimate]] = {c: [] for c in CATEGORIES}
    for record in records:
        seq, mask = record_sequence(record, model)
        if mode == "diffusion":
            if grid is None:
                raise ValueError("diffusion mode requires a grid")
            est = estimate_pz(model, seq, mask, grid, sampler, trials, rng, at_least_one=at_least_one)
        elif mode == "arm":
            # deterministic left-to-right chain: one exact evaluation
            order = RecoveryOrder(tuple(sorted(mask.masked)))
            value = math.exp(
                log_exact_pz_fixed_partition(model, seq, mask, order, per_token_partition(order))
            )
            est = PzEstimate(mean=value, trials=1, stderr=0.0, ci_low=value, ci_high=value)
        else:
            raise ValueError(f"unknown mode {mode!r}")
        estimates[record.category].append(est)
    counts = {
        category: {
            float(p): discoverable_count(estimates[category], n_queries, p)
            for p in target_probabilities
        }
        for category in CATEGORIES
        if estimates[category]
    }
    for category in CATEGORIES:
        counts.setdefault(category, {float(p): 0 for p in target_probabilities})
    return AuditResult(counts=counts, estimates=estimates, n_queries=n_queries)
