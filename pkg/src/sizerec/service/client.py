"""Thin HTTP client for a running service."""

from __future__ import annotations

import httpx

from ..errors import BadRequest
from .schemas import RecommendationResponse


class Client:
    def __init__(self, url: str, timeout: float = 30.0):
        self._http = httpx.Client(base_url=url.rstrip("/"), timeout=timeout)

    def health(self) -> dict:
        r = self._http.get("/health")
        r.raise_for_status()
        return r.json()

    def recommend(self, payload: dict) -> RecommendationResponse:
        r = self._http.post("/recommendations", json=payload)
        if 400 <= r.status_code < 500:
            body = r.json()
            raise BadRequest(f"{r.status_code} {body.get('error')}: {body.get('detail')}")
        r.raise_for_status()
        return RecommendationResponse.model_validate(r.json())

    def close(self):
        self._http.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
