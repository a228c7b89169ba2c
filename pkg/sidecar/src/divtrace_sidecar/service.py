"""HTTP service speaking the scorer wire protocol.

Routes: POST /v1/embed, POST /v1/nli, GET /v1/models, GET /healthz.
Every served model tag must resolve to a backend before the service
reports healthy; until then /healthz and the /v1 routes answer 503.
Over-length inputs are truncated to the backend's token limit and the
response carries a count of truncated inputs, so callers can surface
the loss instead of inheriting it silently. Request handling is
concurrent; backend forward passes are serialized per device.
"""
from __future__ import annotations

import threading
from contextlib import asynccontextmanager
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from fastapi import FastAPI, HTTPException, Request
from pydantic import BaseModel, ConfigDict

from .backends import DEFAULT_REGISTRY, WIRE_LABELS, BackendError, resolve_backend


@dataclass(frozen=True)
class SidecarConfig:
    """Service settings: which tags are served and by what, plus limits."""

    registry: Mapping[str, str] = field(default_factory=lambda: dict(DEFAULT_REGISTRY))
    port: int = 8080
    max_batch: int = 256
    device: str = "cpu"
    bearer_token: str | None = None

    def __post_init__(self):
        if not self.registry:
            raise ValueError("registry must serve at least one model tag")
        if not 0 <= self.port <= 65535:
            raise ValueError(f"port {self.port} out of range")
        if self.max_batch < 1:
            raise ValueError(f"max_batch must be >= 1, got {self.max_batch}")
        if not self.device:
            raise ValueError("device tag must be non-empty")


class ServiceState:
    """Warm-state and instrumentation shared by all routes."""

    def __init__(self, config: SidecarConfig):
        self.config = config
        self.backends: dict[str, object] = {}
        self.ready = False
        self.warm_error: str | None = None
        self.device_lock = threading.Lock()
        self._count_lock = threading.Lock()
        self.request_counts: dict[str, int] = {}

    def warm(self):
        """Resolve every registry entry; any failure keeps the service
        unready rather than serving a partial registry."""
        try:
            resolved = {
                tag: resolve_backend(tag, spec) for tag, spec in self.config.registry.items()
            }
        except BackendError as e:
            self.warm_error = str(e)
            return
        self.backends = resolved
        self.ready = True

    def count(self, path: str):
        with self._count_lock:
            self.request_counts[path] = self.request_counts.get(path, 0) + 1

    def total_requests(self) -> int:
        with self._count_lock:
            return sum(self.request_counts.values())


class EmbedRequest(BaseModel):
    model_config = ConfigDict(protected_namespaces=())
    model: str
    texts: list[str]


class NliPair(BaseModel):
    premise: str
    hypothesis: str


class NliRequest(BaseModel):
    model_config = ConfigDict(protected_namespaces=())
    model: str
    pairs: list[NliPair]


def _truncate(text: str, max_tokens: int) -> tuple[str, bool]:
    tokens = text.split()
    if len(tokens) <= max_tokens:
        return text, False
    return " ".join(tokens[:max_tokens]), True


def create_app(config: SidecarConfig | None = None) -> FastAPI:
    state = ServiceState(config or SidecarConfig())

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        state.warm()
        yield

    app = FastAPI(title="divtrace scorer sidecar", version="0.1.0", lifespan=lifespan)
    app.state.service = state

    @app.middleware("http")
    async def count_requests(request: Request, call_next):
        state.count(request.url.path)
        return await call_next(request)

    def gate(request: Request):
        token = state.config.bearer_token
        if token is not None and request.headers.get("authorization") != f"Bearer {token}":
            raise HTTPException(401, "missing or wrong bearer token")
        if not state.ready:
            raise HTTPException(503, state.warm_error or "warming up")

    def lookup(tag: str, kind: str):
        backend = state.backends.get(tag)
        if backend is None:
            raise HTTPException(400, f"unknown model tag {tag!r}; serving {sorted(state.backends)}")
        if backend.kind != kind:
            raise HTTPException(400, f"model tag {tag!r} is a {backend.kind} model, not {kind}")
        return backend

    def check_batch(n: int):
        if n > state.config.max_batch:
            raise HTTPException(413, f"batch of {n} exceeds max_batch {state.config.max_batch}")

    @app.get("/healthz")
    def healthz(request: Request):
        if not state.ready:
            raise HTTPException(503, state.warm_error or "warming up")
        return {"status": "ok", "models": sorted(state.backends)}

    @app.get("/v1/models")
    def models(request: Request):
        gate(request)
        return {
            "models": [
                {
                    "tag": tag,
                    "kind": backend.kind,
                    "dim": getattr(backend, "dim", None),
                    "max_tokens": backend.max_tokens,
                }
                for tag, backend in sorted(state.backends.items())
            ]
        }

    @app.post("/v1/embed")
    def embed(req: EmbedRequest, request: Request):
        gate(request)
        backend = lookup(req.model, "embed")
        check_batch(len(req.texts))
        truncated = 0
        texts = []
        for text in req.texts:
            text, cut = _truncate(text, backend.max_tokens)
            truncated += cut
            texts.append(text)
        with state.device_lock:
            rows = backend.embed(texts)
        return {
            "model": req.model,
            "dim": backend.dim,
            "vectors": rows.tolist(),
            "truncated": truncated,
        }

    @app.post("/v1/nli")
    def nli(req: NliRequest, request: Request):
        gate(request)
        backend = lookup(req.model, "nli")
        check_batch(len(req.pairs))
        truncated = 0
        pairs = []
        for i, pair in enumerate(req.pairs):
            if not pair.premise.strip():
                raise HTTPException(400, f"pair {i}: empty premise")
            if not pair.hypothesis.strip():
                raise HTTPException(400, f"pair {i}: empty hypothesis")
            premise, cut_p = _truncate(pair.premise, backend.max_tokens)
            hypothesis, cut_h = _truncate(pair.hypothesis, backend.max_tokens)
            truncated += cut_p + cut_h
            pairs.append((premise, hypothesis))
        with state.device_lock:
            native = backend.nli(pairs)
        # native head order -> fixed wire order; the core never sees
        # model-specific label conventions
        perm = [backend.label_order.index(label) for label in WIRE_LABELS]
        wire = np.asarray(native)[:, perm]
        return {"model": req.model, "probs": wire.tolist(), "truncated": truncated}

    return app
