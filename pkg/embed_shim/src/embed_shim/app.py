"""HTTP surface: POST /embed and GET /health.

Environment variables: EMBED_SHIM_BACKEND (real|hash, default real),
EMBED_SHIM_MODEL (default paraphrase-multilingual-MiniLM-L12-v2),
EMBED_SHIM_PORT (default 8090), EMBED_SHIM_BATCH_CAP (default 256), and
EMBED_SHIM_TOKEN for optional shared-token auth (clients then send
``X-Auth-Token``). No auth is required by default; the service is a
localhost convenience.
"""

from __future__ import annotations

import os

from fastapi import FastAPI, Header, HTTPException
from pydantic import BaseModel, Field

from .backends import BackendError, backend_from_name

DEFAULT_BATCH_CAP = 256


class EmbedRequest(BaseModel):
    texts: list[str] = Field(..., description="documents to embed, in order")
    normalize: bool = True


class EmbedResponse(BaseModel):
    dim: int
    vectors: list[list[float]]
    model: str


class HealthResponse(BaseModel):
    status: str
    model: str
    dim: int


def create_app(backend=None, batch_cap: int | None = None, token: str | None = None) -> FastAPI:
    if backend is None:
        backend = backend_from_name(
            os.environ.get("EMBED_SHIM_BACKEND", "real"),
            os.environ.get("EMBED_SHIM_MODEL", "paraphrase-multilingual-MiniLM-L12-v2"),
        )
    if batch_cap is None:
        batch_cap = int(os.environ.get("EMBED_SHIM_BATCH_CAP", DEFAULT_BATCH_CAP))
    if token is None:
        token = os.environ.get("EMBED_SHIM_TOKEN") or None

    app = FastAPI(title="embed-shim")

    def check_token(provided: str | None) -> None:
        if token is not None and provided != token:
            raise HTTPException(status_code=401, detail="bad or missing token")

    @app.get("/health", response_model=HealthResponse)
    def health(x_auth_token: str | None = Header(default=None)) -> HealthResponse:
        check_token(x_auth_token)
        try:
            dim = backend.dim
        except BackendError as exc:
            raise HTTPException(status_code=503, detail=str(exc)) from exc
        return HealthResponse(status="ok", model=backend.model_name, dim=dim)

    @app.post("/embed", response_model=EmbedResponse)
    def embed(
        request: EmbedRequest,
        x_auth_token: str | None = Header(default=None),
    ) -> EmbedResponse:
        check_token(x_auth_token)
        if len(request.texts) == 0:
            raise HTTPException(status_code=400, detail="texts must be non-empty")
        if len(request.texts) > batch_cap:
            raise HTTPException(
                status_code=413,
                detail=f"batch of {len(request.texts)} exceeds cap {batch_cap}",
            )
        try:
            vectors = backend.encode(request.texts, request.normalize)
            dim = backend.dim
        except BackendError as exc:
            raise HTTPException(status_code=503, detail=str(exc)) from exc
        return EmbedResponse(
            dim=dim,
            vectors=[row.tolist() for row in vectors],
            model=backend.model_name,
        )

    return app


def serve() -> None:
    import uvicorn

    port = int(os.environ.get("EMBED_SHIM_PORT", "8090"))
    uvicorn.run(create_app(), host="127.0.0.1", port=port)
