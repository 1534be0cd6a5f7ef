"""FastAPI wrapper: POST /recommendations and GET /health."""

from __future__ import annotations

import logging
import socket
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse

from ..bundle import ModelBundle, load_bundle
from ..errors import BadRequest, BindError, EmptyHistory, UnknownScale
from .cache import EmbeddingCache
from .core import recommend
from .schemas import ErrorResponse, HealthResponse, RecommendationRequest, RecommendationResponse

log = logging.getLogger(__name__)

ERROR_STATUS = {BadRequest: 400, UnknownScale: 422, EmptyHistory: 422}


def _error(status: int, exc: Exception, detail: str | None = None) -> JSONResponse:
    body = ErrorResponse(error=type(exc).__name__, detail=detail or str(exc).strip("'\""))
    return JSONResponse(status_code=status, content=body.model_dump())


def create_app(bundle: ModelBundle, cache_capacity: int = 10_000) -> FastAPI:
    app = FastAPI(title="sizerec", version=bundle.version)
    app.state.bundle = bundle
    app.state.cache = EmbeddingCache(cache_capacity)

    @app.exception_handler(RequestValidationError)
    async def _invalid(request: Request, exc: RequestValidationError):
        first = exc.errors()[0] if exc.errors() else {}
        where = ".".join(str(x) for x in first.get("loc", ()))
        return _error(422, exc, f"{where}: {first.get('msg', 'invalid request')}")

    for err, status in ERROR_STATUS.items():
        app.add_exception_handler(err, lambda request, exc, status=status: _error(status, exc))

    # sync handlers run on the threadpool; the model is read-only, the cache locks itself
    @app.post("/recommendations", response_model=RecommendationResponse,
              responses={400: {"model": ErrorResponse}, 422: {"model": ErrorResponse}})
    def recommendations(body: RecommendationRequest) -> RecommendationResponse:
        return recommend(body, app.state.bundle, app.state.cache)

    @app.get("/health", response_model=HealthResponse)
    def health() -> HealthResponse:
        b = app.state.bundle
        return HealthResponse(model_type=b.model_type, model_version=b.version, cache_entries=len(app.state.cache))

    return app


def check_bind(host: str, port: int):
    try:
        with socket.socket(socket.AF_INET6 if ":" in host else socket.AF_INET) as s:
            s.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
            s.bind((host, port))
    except OSError as exc:
        raise BindError(f"cannot bind {host}:{port}: {exc.strerror}") from None


def serve(bundle_path: str | Path, host: str = "127.0.0.1", port: int = 8000, cache_capacity: int = 10_000,
          log_level: str = "info"):
    import uvicorn

    bundle = load_bundle(bundle_path)
    check_bind(host, port)
    log.info("serving %s bundle %s on %s:%d", bundle.model_type, bundle.version, host, port)
    uvicorn.run(create_app(bundle, cache_capacity), host=host, port=port, log_level=log_level.lower())
