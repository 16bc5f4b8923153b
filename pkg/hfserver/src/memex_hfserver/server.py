"""FastAPI app exposing a backend behind the memex/1 wire protocol."""

from __future__ import annotations

import threading
from typing import Any

import torch
import uvicorn
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .backends import BackendError, CausalBackend, MaskedBackend

PROTOCOL_VERSION = "memex/1"


def _error(code: str, message: str, status: int = 400) -> JSONResponse:
    return JSONResponse(
        status_code=status, content={"error": {"code": code, "message": message}}
    )


def create_app(backend) -> FastAPI:
    app = FastAPI(title="memex-hfserver", docs_url=None, redoc_url=None)
    # single-worker queue per device: one forward pass at a time
    gate = threading.Lock()

    @app.get("/manifest")
    def manifest() -> dict[str, Any]:
        m = backend.manifest
        return {
            "version": PROTOCOL_VERSION,
            "vocab_size": m.vocab_size,
            "mask_id": m.mask_id,
            "tokenizer_name": m.tokenizer_name,
            "max_length": m.max_length,
        }

    @app.post("/predict")
    async def predict(request: Request):
        try:
            payload = await request.json()
        except Exception:
            return _error("malformed-request", "body is not JSON")
        if not isinstance(payload, dict):
            return _error("malformed-request", "body must be a JSON object")
        version = payload.get("version")
        if version != PROTOCOL_VERSION:
            return _error("version-mismatch", f"unsupported version {version!r}")
        tokens = payload.get("tokens")
        positions = payload.get("positions")
        if not isinstance(tokens, list) or not isinstance(positions, list) or not positions:
            return _error("malformed-request", "tokens and positions must be nonempty lists")
        m = backend.manifest
        if len(tokens) > m.max_length:
            return _error(
                "sequence-overflow",
                f"{len(tokens)} tokens > max_length {m.max_length}",
                status=413,
            )
        normalized: list[int | None] = []
        for tok in tokens:
            if tok is None or tok == m.mask_id:
                normalized.append(None)
            elif isinstance(tok, int) and 0 <= tok < m.vocab_size:
                normalized.append(tok)
            else:
                return _error("malformed-request", f"bad token {tok!r}")
        for pos in positions:
            if not isinstance(pos, int) or not (0 <= pos < len(tokens)):
                return _error("malformed-request", f"position {pos!r} out of range")
        try:
            backend.validate(normalized, positions)
            with gate:
                rows = backend.logprobs(normalized, positions)
        except BackendError as exc:
            return _error(exc.code, str(exc), status=exc.status)
        except torch.cuda.OutOfMemoryError as exc:
            return _error("out-of-memory", str(exc), status=507)
        except RuntimeError as exc:
            if "out of memory" in str(exc).lower():
                return _error("out-of-memory", str(exc), status=507)
            raise
        response: dict[str, Any] = {"version": PROTOCOL_VERSION, "logprobs": rows}
        if "id" in payload:
            response["id"] = payload["id"]
        return response

    return app


def build_backend(model_name: str, mode: str, device: str = "cpu", dtype: str | None = None):
    if mode == "masked":
        return MaskedBackend(model_name, device=device, dtype=dtype)
    if mode == "causal":
        return CausalBackend(model_name, device=device, dtype=dtype)
    raise ValueError(f"unknown mode {mode!r}; expected masked or causal")


def serve(
    model_name: str,
    mode: str = "masked",
    device: str = "cpu",
    port: int = 8123,
    host: str = "127.0.0.1",
    dtype: str | None = None,
) -> None:
    app = create_app(build_backend(model_name, mode, device, dtype))
    uvicorn.run(app, host=host, port=port, log_level="warning")


def serve_arm_adapter(
    model_name: str,
    device: str = "cpu",
    port: int = 8123,
    host: str = "127.0.0.1",
    dtype: str | None = None,
) -> None:
    """Serve a causal checkpoint: /predict only accepts positions whose left
    context is fully observed and returns next-token conditionals."""
    serve(model_name, mode="causal", device=device, port=port, host=host, dtype=dtype)


class ServerThread:
    """Run the app on an ephemeral port in a background thread (tests,
    embedded audits)."""

    def __init__(self, backend, host: str = "127.0.0.1"):
        config = uvicorn.Config(
            create_app(backend), host=host, port=0, log_level="error"
        )
        self._server = uvicorn.Server(config)
        self._thread = threading.Thread(target=self._server.run, daemon=True)
        self.host = host

    def __enter__(self) -> str:
        self._thread.start()
        while not self._server.started:
            if not self._thread.is_alive():
                raise RuntimeError("server thread died during startup")
        port = self._server.servers[0].sockets[0].getsockname()[1]
        return f"http://{self.host}:{port}"

    def __exit__(self, *exc) -> None:
        self._server.should_exit = True
        self._thread.join(timeout=10)
