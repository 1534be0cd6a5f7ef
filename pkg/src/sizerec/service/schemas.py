"""Request/response bodies for the recommendation endpoint."""

from __future__ import annotations

from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator


class EventIn(BaseModel):
    """One raw history event. Give either `size_code` or `size_position`."""

    model_config = ConfigDict(extra="forbid")

    event_type: Literal["Order", "Add2Bag"]
    timestamp: int = Field(ge=0)
    brand_id: str
    category_id: str
    scale_id: str
    size_code: Optional[str] = None
    size_position: Optional[int] = Field(default=None, ge=0)
    return_reason: Optional[Literal["NotReturned", "TooLarge", "TooSmall", "OtherReason", "NotApplicable"]] = None
    product_id: Optional[str] = None

    @model_validator(mode="after")
    def _size_given(self):
        if self.size_code is None and self.size_position is None:
            raise ValueError("event needs size_code or size_position")
        return self


class ProductIn(BaseModel):
    model_config = ConfigDict(extra="forbid")

    product_id: str
    brand_id: str
    category_id: str
    scale_id: str
    gender: Literal["Women", "Men", "Unisex", "Kids"] = "Unisex"


class RecommendationRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    user_id: str = "anonymous"
    events: list[EventIn] = Field(default_factory=list)
    history_token: Optional[str] = None
    product: ProductIn
    k: int = Field(default=3, ge=1)
    # reference day for day offsets; defaults to the day after the newest event
    timestamp: Optional[int] = Field(default=None, ge=0)

    @model_validator(mode="after")
    def _has_history(self):
        if not self.events and not self.history_token:
            raise ValueError("request needs at least one event or a history_token")
        return self


class RankedSize(BaseModel):
    size_code: str
    size_position: int
    probability: float


class RecommendationResponse(BaseModel):
    sizes: list[RankedSize]
    model_type: str
    model_version: str
    cache_hit: bool = False
    history_token: Optional[str] = None
    served_ms: float = 0.0


class HealthResponse(BaseModel):
    status: str = "ok"
    model_type: str
    model_version: str
    cache_entries: int = 0


class ErrorResponse(BaseModel):
    error: str
    detail: str
