"""HTTP service: caption endpoint, entity lookup, health check."""

from __future__ import annotations

import asyncio
import logging
import threading
from typing import Any

import uvicorn
from fastapi import FastAPI, Request
from fastapi.concurrency import run_in_threadpool
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from newscap.config import RunConfig
from newscap.emkb import KnowledgeBase
from newscap.errors import StageError
from newscap.gateways import Gateways, ImageError
from newscap.ner import NER
from newscap.pipeline import kb_ner, run_pipeline
from newscap.runtime import is_gateway_failure

logger = logging.getLogger(__name__)


class CaptionRequest(BaseModel):
    article_text: str = Field(min_length=1)
    image_ref: str | None = None


class ServiceState:
    """The served knowledge base; :meth:`swap_kb` replaces it between requests."""

    def __init__(self, kb: KnowledgeBase, gateways: Gateways, config: RunConfig, ner: NER | None = None):
        self.kb = kb
        self.gateways = gateways
        self.config = config
        self.ner = ner if ner is not None else kb_ner(kb)
        self.in_flight = 0
        self._lock = threading.Lock()

    def swap_kb(self, kb: KnowledgeBase, ner: NER | None = None) -> None:
        with self._lock:
            self.kb, self.ner = kb, (ner if ner is not None else kb_ner(kb))

    def current(self) -> tuple[KnowledgeBase, NER]:
        with self._lock:
            return self.kb, self.ner


def _caused_by(exc: BaseException | None, kind: type) -> bool:
    while exc is not None:
        if isinstance(exc, kind):
            return True
        exc = exc.__cause__
    return False


def create_app(state: ServiceState) -> FastAPI:
    app = FastAPI(title="newscap", version="0.1.0")
    app.state.service = state
    slots = asyncio.Semaphore(state.config.workers)

    @app.exception_handler(RequestValidationError)
    async def bad_request(request: Request, exc: RequestValidationError) -> JSONResponse:
        fields = sorted({".".join(str(p) for p in e["loc"][1:]) or "body" for e in exc.errors()})
        return JSONResponse(status_code=400, content={"error": "malformed request body", "fields": fields})

    @app.exception_handler(Exception)
    async def internal(request: Request, exc: Exception) -> JSONResponse:
        logger.exception("unhandled error")
        return JSONResponse(status_code=500, content={"error": "internal error"})

    @app.get("/healthz")
    async def healthz() -> dict[str, Any]:
        kb, _ = state.current()
        return {"status": "ok", "kb": kb.stats(), "in_flight": state.in_flight}

    @app.get("/v1/entities/{entity_id}")
    async def entity(entity_id: str) -> JSONResponse:
        kb, _ = state.current()
        rec = kb.get(entity_id)
        if rec is None:
            return JSONResponse(status_code=404, content={"error": "unknown entity", "entity_id": entity_id})
        return JSONResponse(
            {
                "entity_id": rec.entity_id,
                "name": rec.canonical_name,
                "type": rec.entity_type.value,
                "background_text": rec.background_text,
                "images": [{"asset_id": a.asset_id, "source": a.source.value, "uri": a.uri} for a in rec.images],
                "subgraph": rec.subgraph.to_dict(),
            }
        )

    @app.post("/v1/caption")
    async def caption(body: CaptionRequest) -> JSONResponse:
        if not body.article_text.strip():
            return JSONResponse(status_code=400, content={"error": "malformed request body", "fields": ["article_text"]})
        kb, ner = state.current()
        async with slots:
            state.in_flight += 1
            try:
                result = await run_in_threadpool(
                    run_pipeline, body.image_ref, body.article_text, kb, state.gateways, state.config, ner
                )
            except StageError as exc:
                # messages stay generic: raw model output must not leak
                if _caused_by(exc, ImageError):
                    return JSONResponse(status_code=400, content={"error": "unreadable image", "stage": exc.stage})
                if is_gateway_failure(exc):
                    return JSONResponse(status_code=503, content={"error": "model gateway unavailable", "stage": exc.stage})
                logger.error("caption failed at %s: %s", exc.stage, exc.message)
                return JSONResponse(status_code=500, content={"error": "internal error", "stage": exc.stage})
            finally:
                state.in_flight -= 1
        return JSONResponse(result.to_dict())

    return app


class ServiceRunner:
    """Runs the app under uvicorn in a background thread.

    :meth:`stop` waits for in-flight requests up to ``drain_timeout`` seconds,
    then returns.
    """

    def __init__(self, app: FastAPI, host: str = "127.0.0.1", port: int = 8080, drain_timeout: float = 10.0):
        self.drain_timeout = drain_timeout
        cfg = uvicorn.Config(
            app, host=host, port=port, log_level="warning", timeout_graceful_shutdown=drain_timeout, lifespan="off"
        )
        self.server = uvicorn.Server(cfg)
        self._thread: threading.Thread | None = None

    def start(self, ready_timeout: float = 10.0) -> ServiceRunner:
        self._thread = threading.Thread(target=self.server.run, name="newscap-service", daemon=True)
        self._thread.start()
        deadline = threading.Event()
        waited = 0.0
        while not self.server.started and waited < ready_timeout:
            deadline.wait(0.02)
            waited += 0.02
        if not self.server.started:
            raise RuntimeError("service failed to start")
        return self

    @property
    def port(self) -> int:
        sock = self.server.servers[0].sockets[0]
        return sock.getsockname()[1]

    def stop(self) -> None:
        self.server.should_exit = True
        if self._thread is not None:
            self._thread.join(self.drain_timeout + 5.0)
