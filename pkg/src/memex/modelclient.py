"""Client for the memex/1 logits wire protocol.

A conforming server exposes GET /manifest and POST /predict (see PROTOCOL.md
for the exact JSON schemas). RemoteModel adapts a verified endpoint to the
same conditional-predictor interface the local posterior model implements, so
every estimator and oracle runs unchanged against a remote model.
"""

from __future__ import annotations

import itertools
import os
import threading
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import requests

from .core import TokenSeq
from .toymodel import logsumexp

PROTOCOL_VERSION = "memex/1"
TOKEN_ENV_VAR = "MEMEX_BEARER_TOKEN"
MANIFEST_PATH = "/manifest"
PREDICT_PATH = "/predict"
DEFAULT_TIMEOUT = 60.0
SUM_TOLERANCE = 1e-4


class ProtocolError(RuntimeError):
    """A wire-protocol contract violation; `code` names the failed check."""

    def __init__(self, code: str, message: str):
        super().__init__(f"{code}: {message}")
        self.code = code


@dataclass(frozen=True)
class RemoteVocab:
    """Vocabulary descriptor from a manifest.

    Unlike the local VocabSpec, the mask sentinel of a real checkpoint may sit
    inside [0, size); it must simply never collide with audited content
    tokens.
    """

    size: int
    mask_id: int

    def is_ordinary(self, token: int) -> bool:
        return 0 <= token < self.size and token != self.mask_id


@dataclass(frozen=True)
class RemoteModelHandle:
    endpoint: str
    vocab_size: int
    mask_id: int
    tokenizer_name: str
    max_length: int
    timeout: float = DEFAULT_TIMEOUT
    max_concurrency: int = 8


def _headers() -> dict[str, str]:
    token = os.environ.get(TOKEN_ENV_VAR)
    if token:
        return {"Authorization": f"Bearer {token}"}
    return {}


def handshake(endpoint: str, timeout: float = DEFAULT_TIMEOUT) -> RemoteModelHandle:
    """Fetch and validate the manifest; raises ProtocolError on any mismatch."""
    url = endpoint.rstrip("/") + MANIFEST_PATH
    try:
        resp = requests.get(url, timeout=timeout, headers=_headers())
        resp.raise_for_status()
        manifest = resp.json()
    except requests.RequestException as exc:
        raise ProtocolError("endpoint-unreachable", f"{url}: {exc}") from exc
    except ValueError as exc:
        raise ProtocolError("malformed-manifest", f"{url}: not JSON") from exc
    for key in ("version", "vocab_size", "mask_id", "tokenizer_name", "max_length"):
        if key not in manifest:
            raise ProtocolError("malformed-manifest", f"missing field {key!r}")
    if manifest["version"] != PROTOCOL_VERSION:
        raise ProtocolError(
            "version-mismatch",
            f"server speaks {manifest['version']!r}, client requires {PROTOCOL_VERSION!r}",
        )
    vocab_size = int(manifest["vocab_size"])
    if vocab_size < 2:
        raise ProtocolError("malformed-manifest", f"vocab_size {vocab_size} < 2")
    return RemoteModelHandle(
        endpoint=endpoint.rstrip("/"),
        vocab_size=vocab_size,
        mask_id=int(manifest["mask_id"]),
        tokenizer_name=str(manifest["tokenizer_name"]),
        max_length=int(manifest["max_length"]),
        timeout=timeout,
    )


_request_ids = itertools.count(1)


def remote_predict(
    handle: RemoteModelHandle,
    observed: TokenSeq | Sequence[int | None],
    targets: Sequence[int],
) -> dict[int, np.ndarray]:
    """Per-target probability distributions from one /predict round trip.

    `observed` uses None (or the mask sentinel) at hidden positions. Received
    log-probabilities are validated (shape, finiteness, total mass within
    1e-4) and renormalized before exponentiation.
    """
    if isinstance(observed, TokenSeq):
        tokens = [None if t == handle.mask_id else int(t) for t in observed.tokens]
    else:
        tokens = [None if t is None or t == handle.mask_id else int(t) for t in observed]
    if len(tokens) > handle.max_length:
        raise ProtocolError(
            "sequence-overflow", f"{len(tokens)} tokens > max_length {handle.max_length}"
        )
    request_id = next(_request_ids)
    body = {
        "version": PROTOCOL_VERSION,
        "id": request_id,
        "tokens": tokens,
        "positions": [int(p) for p in targets],
    }
    url = handle.endpoint + PREDICT_PATH
    try:
        resp = requests.post(url, json=body, timeout=handle.timeout, headers=_headers())
    except requests.RequestException as exc:
        raise ProtocolError("endpoint-unreachable", f"{url}: {exc}") from exc
    if resp.status_code != 200:
        try:
            err = resp.json().get("error", {})
            code = err.get("code", f"http-{resp.status_code}")
            message = err.get("message", resp.text)
        except ValueError:
            code, message = f"http-{resp.status_code}", resp.text
        raise ProtocolError(code, message)
    payload = resp.json()
    if payload.get("version") != PROTOCOL_VERSION:
        raise ProtocolError("version-mismatch", f"response version {payload.get('version')!r}")
    if "id" in payload and payload["id"] != request_id:
        raise ProtocolError("id-mismatch", f"sent {request_id}, got {payload['id']}")
    logprobs = payload.get("logprobs")
    if not isinstance(logprobs, list) or len(logprobs) != len(targets):
        got = len(logprobs) if isinstance(logprobs, list) else "none"
        raise ProtocolError(
            "shape-mismatch", f"expected {len(targets)} distributions, got {got}"
        )
    out: dict[int, np.ndarray] = {}
    for pos, row in zip(targets, logprobs):
        arr = np.asarray(row, dtype=float)
        if arr.shape != (handle.vocab_size,):
            raise ProtocolError(
                "shape-mismatch",
                f"position {pos}: expected {handle.vocab_size} values, got {arr.shape}",
            )
        if not np.all(np.isfinite(arr)):
            raise ProtocolError("non-finite", f"position {pos}: non-finite log-probability")
        total = float(np.exp(logsumexp(arr)))
        if abs(total - 1.0) > SUM_TOLERANCE:
            raise ProtocolError(
                "not-normalized", f"position {pos}: mass {total} outside 1 ± {SUM_TOLERANCE}"
            )
        out[int(pos)] = np.exp(arr - logsumexp(arr))
    return out


class RemoteModel:
    """Drop-in conditional predictor backed by a memex/1 endpoint.

    One /predict request per call (the engine already batches all masked
    positions of a step into one call); in-flight requests are bounded by the
    handle's concurrency limit.
    """

    def __init__(self, handle: RemoteModelHandle):
        self.handle = handle
        self.vocab = RemoteVocab(size=handle.vocab_size, mask_id=handle.mask_id)
        self._gate = threading.Semaphore(handle.max_concurrency)

    @classmethod
    def connect(cls, endpoint: str, timeout: float = DEFAULT_TIMEOUT) -> "RemoteModel":
        return cls(handshake(endpoint, timeout))

    def log_predict(self, observed: TokenSeq, targets: Sequence[int]) -> np.ndarray:
        with self._gate:
            dists = remote_predict(self.handle, observed, targets)
        out = np.empty((len(targets), self.handle.vocab_size))
        with np.errstate(divide="ignore"):
            for i, pos in enumerate(targets):
                out[i] = np.log(dists[int(pos)])
        return out

    def predict(self, observed: TokenSeq, targets: Sequence[int]) -> dict[int, np.ndarray]:
        with self._gate:
            return remote_predict(self.handle, observed, targets)
