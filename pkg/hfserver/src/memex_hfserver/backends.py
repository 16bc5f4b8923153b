"""Model backends: one forward pass per request, log-probabilities computed
in full precision on the final layer regardless of model compute dtype.

All sampling lives on the client side; the server only scores.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from transformers import AutoModelForCausalLM, AutoModelForMaskedLM, AutoTokenizer


class BackendError(Exception):
    """Maps to a structured protocol error response."""

    def __init__(self, code: str, message: str, status: int = 400):
        super().__init__(message)
        self.code = code
        self.status = status


@dataclass(frozen=True)
class Manifest:
    vocab_size: int
    mask_id: int
    tokenizer_name: str
    max_length: int


def _max_length(config) -> int:
    for attr in ("max_position_embeddings", "n_positions", "max_sequence_length"):
        value = getattr(config, attr, None)
        if isinstance(value, int) and value > 0:
            return value
    return 512


def _resolve_dtype(name: str | None):
    if not name or name == "auto":
        return None
    dtype = getattr(torch, name, None)
    if not isinstance(dtype, torch.dtype):
        raise ValueError(f"unknown dtype {name!r}")
    return dtype


class MaskedBackend:
    """Bidirectional masked-LM scoring: hidden positions are filled with the
    tokenizer's mask token and scored jointly in one forward pass."""

    def __init__(self, model_name: str, device: str = "cpu", dtype: str | None = None):
        self.tokenizer = AutoTokenizer.from_pretrained(model_name)
        if self.tokenizer.mask_token_id is None:
            raise ValueError(f"{model_name} has no mask token; use the causal adapter?")
        kwargs = {}
        resolved = _resolve_dtype(dtype)
        if resolved is not None:
            kwargs["dtype"] = resolved
        self.model = AutoModelForMaskedLM.from_pretrained(model_name, **kwargs)
        self.model.to(device).eval()
        self.device = device
        self.manifest = Manifest(
            vocab_size=int(self.model.config.vocab_size),
            mask_id=int(self.tokenizer.mask_token_id),
            tokenizer_name=str(getattr(self.tokenizer, "name_or_path", model_name)),
            max_length=_max_length(self.model.config),
        )

    def fill_value(self) -> int:
        return self.manifest.mask_id

    def validate(self, tokens: list[int | None], positions: list[int]) -> None:
        for pos in positions:
            if tokens[pos] is not None:
                raise BackendError(
                    "malformed-request", f"position {pos} is observed, not hidden"
                )

    @torch.no_grad()
    def logprobs(self, tokens: list[int | None], positions: list[int]) -> list[list[float]]:
        filled = [self.fill_value() if t is None else int(t) for t in tokens]
        ids = torch.tensor([filled], dtype=torch.long, device=self.device)
        logits = self.model(input_ids=ids).logits[0]  # (L, V)
        rows = logits[torch.tensor(positions, dtype=torch.long, device=self.device)]
        logp = torch.log_softmax(rows.float(), dim=-1)
        return logp.cpu().tolist()


class CausalBackend:
    """Autoregressive adapter: each requested position must have fully
    observed left context; the returned row is the model's next-token
    distribution given that prefix."""

    def __init__(self, model_name: str, device: str = "cpu", dtype: str | None = None):
        self.tokenizer = AutoTokenizer.from_pretrained(model_name)
        kwargs = {}
        resolved = _resolve_dtype(dtype)
        if resolved is not None:
            kwargs["dtype"] = resolved
        self.model = AutoModelForCausalLM.from_pretrained(model_name, **kwargs)
        self.model.to(device).eval()
        self.device = device
        vocab_size = int(self.model.config.vocab_size)
        mask_id = self.tokenizer.mask_token_id
        if mask_id is None:
            mask_id = vocab_size  # out-of-range sentinel, request encoding only
        self.manifest = Manifest(
            vocab_size=vocab_size,
            mask_id=int(mask_id),
            tokenizer_name=str(getattr(self.tokenizer, "name_or_path", model_name)),
            max_length=_max_length(self.model.config),
        )

    def fill_value(self) -> int:
        # hidden positions sit at or after every requested position, so the
        # causal attention mask makes the fill token irrelevant
        if self.tokenizer.pad_token_id is not None:
            return int(self.tokenizer.pad_token_id)
        if self.tokenizer.eos_token_id is not None:
            return int(self.tokenizer.eos_token_id)
        return 0

    def validate(self, tokens: list[int | None], positions: list[int]) -> None:
        for pos in positions:
            if tokens[pos] is not None:
                raise BackendError(
                    "malformed-request", f"position {pos} is observed, not hidden"
                )
            if pos == 0 or any(tokens[i] is None for i in range(pos)):
                raise BackendError(
                    "causal-context-violation",
                    f"position {pos} lacks fully observed left context",
                )

    @torch.no_grad()
    def logprobs(self, tokens: list[int | None], positions: list[int]) -> list[list[float]]:
        filled = [self.fill_value() if t is None else int(t) for t in tokens]
        ids = torch.tensor([filled], dtype=torch.long, device=self.device)
        logits = self.model(input_ids=ids).logits[0]  # (L, V)
        # next-token conditional for position p lives at row p-1
        rows = logits[torch.tensor([p - 1 for p in positions], dtype=torch.long, device=self.device)]
        logp = torch.log_softmax(rows.float(), dim=-1)
        return logp.cpu().tolist()
