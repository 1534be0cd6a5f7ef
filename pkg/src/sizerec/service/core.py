"""Framework-free request handling shared by the HTTP service and the offline CLI."""

from __future__ import annotations

import time

from ..bundle import ModelBundle
from ..catalog import (
    Event,
    EventType,
    Gender,
    Instance,
    Product,
    ReturnReason,
    UserHistory,
    map_size_to_position,
)
from ..errors import BadRequest, EmptyHistory, UnknownScale, UnknownSize
from ..models import SSPModel, rank_positions
from .cache import EmbeddingCache, history_key
from .schemas import EventIn, RankedSize, RecommendationRequest, RecommendationResponse


def _event(ev: EventIn, bundle: ModelBundle) -> Event:
    scale = bundle.scales.get(ev.scale_id)
    if ev.size_position is not None:
        pos = ev.size_position
        if scale is not None and pos >= len(scale):
            raise BadRequest(f"size_position {pos} outside scale {ev.scale_id!r} (length {len(scale)})")
        if ev.size_code is not None and scale is not None and scale.size_at(pos) != ev.size_code:
            raise BadRequest(f"size_code {ev.size_code!r} is not position {pos} of {ev.scale_id!r}")
    else:
        if scale is None:
            raise UnknownScale(f"unknown scale {ev.scale_id!r}; send size_position instead of size_code")
        try:
            pos = map_size_to_position(ev.size_code, scale)
        except UnknownSize as exc:
            raise BadRequest(str(exc)) from None
    etype = EventType(ev.event_type)
    if ev.return_reason is None:
        reason = ReturnReason.NOT_APPLICABLE if etype is EventType.ADD2BAG else ReturnReason.NOT_RETURNED
    else:
        reason = ReturnReason(ev.return_reason)
    try:
        return Event(etype, ev.timestamp, ev.brand_id, ev.category_id, ev.scale_id, pos, reason, ev.product_id)
    except ValueError as exc:
        raise BadRequest(str(exc)) from None


def parse_request(request: RecommendationRequest | dict, bundle: ModelBundle):
    """Validate against the bundle; returns (history, product, reference_day)."""
    if isinstance(request, dict):
        request = RecommendationRequest.model_validate(request)
    p = request.product
    if p.scale_id not in bundle.scales:
        raise UnknownScale(f"unknown product scale {p.scale_id!r}")
    product = Product(p.product_id, p.brand_id, p.category_id, p.scale_id, Gender(p.gender))
    events = sorted((_event(e, bundle) for e in request.events), key=lambda e: e.timestamp)
    if request.timestamp is not None:
        ref = request.timestamp
        if events and events[-1].timestamp >= ref:
            raise BadRequest("history events must be strictly before the request timestamp")
    else:
        ref = events[-1].timestamp + 1 if events else 0
    return UserHistory(request.user_id, tuple(events)), product, ref


def recommend(request: RecommendationRequest | dict, bundle: ModelBundle,
              cache: EmbeddingCache | None = None) -> RecommendationResponse:
    """Rank the product's feasible sizes for this user history.

    SSP models always go through the history-representation path, so a
    cache hit and a cold computation run identical arithmetic.
    """
    t0 = time.perf_counter()
    if isinstance(request, dict):
        request = RecommendationRequest.model_validate(request)
    history, product, ref = parse_request(request, bundle)
    model = bundle.model
    token, hit = None, False

    if isinstance(model, SSPModel):
        if request.events:
            batch = bundle.encoder.encode_queries([(history, product, ref)])
            if not batch.hist_mask.any():
                raise EmptyHistory("no admissible events in the history for this model")
            token = history_key(bundle.version, batch.hist_ids, batch.day_offsets)
            if cache is None:
                rep = model.encode_history(batch)
            else:
                rep, hit = cache.get_or_insert(token, lambda: model.encode_history(batch))
        else:
            rep = cache.get(request.history_token) if cache is not None else None
            if rep is None:
                raise BadRequest("unknown or expired history_token")
            token, hit = request.history_token, True
            batch = bundle.encoder.encode_queries([(UserHistory(request.user_id), product, ref)])
        probs = model.predict_from_cache(rep, batch)
    else:
        if not request.events:
            raise BadRequest(f"history_token is only supported by sequence models, not {bundle.model_type}")
        batch = bundle.encoder.encode_queries([(history, product, ref)])
        probs = model.predict_proba(batch)

    scale = bundle.scales[product.scale_id]
    order = rank_positions(probs, batch.feasible)[0][: min(request.k, len(scale))]
    sizes = [RankedSize(size_code=scale.size_at(int(p)), size_position=int(p), probability=float(probs[0, p]))
             for p in order]
    return RecommendationResponse(
        sizes=sizes,
        model_type=bundle.model_type,
        model_version=bundle.version,
        cache_hit=hit,
        history_token=token,
        served_ms=(time.perf_counter() - t0) * 1e3,
    )


def request_from_instance(inst: Instance, scales: dict | None = None, k: int = 3) -> dict:
    """Wire payload for an instance; size codes are included when the scale is known."""
    events = []
    for e in inst.history.events:
        ev = {"event_type": e.event_type.value, "timestamp": e.timestamp, "brand_id": e.brand_id,
              "category_id": e.category_id, "scale_id": e.scale_id, "size_position": e.size_position,
              "return_reason": e.return_reason.value}
        if scales and e.scale_id in scales:
            ev["size_code"] = scales[e.scale_id].size_at(e.size_position)
        if e.product_id is not None:
            ev["product_id"] = e.product_id
        events.append(ev)
    p = inst.product
    return {"user_id": inst.user_id, "events": events, "timestamp": inst.timestamp, "k": k,
            "product": {"product_id": p.product_id, "brand_id": p.brand_id, "category_id": p.category_id,
                        "scale_id": p.scale_id, "gender": p.gender.value}}


def ranking(response: RecommendationResponse) -> list[tuple[str, int, float]]:
    """The comparable part of a response (drops timing and cache flags)."""
    return [(s.size_code, s.size_position, s.probability) for s in response.sizes]


__all__ = ["parse_request", "recommend", "ranking", "request_from_instance"]
