"""Recommendation service: request schemas, history cache, FastAPI app, HTTP client."""

from .cache import EmbeddingCache
from .core import recommend
from .schemas import RecommendationRequest, RecommendationResponse

__all__ = ["EmbeddingCache", "RecommendationRequest", "RecommendationResponse", "recommend"]
