"""Turn instances into padded integer arrays the models consume."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .catalog import (
    N_EVENT_FIELDS,
    PAD,
    T_MAX,
    EventType,
    Instance,
    Product,
    Scale,
    UserHistory,
    Vocabulary,
    encode_event,
)

ALL_EVENT_TYPES = (EventType.ORDER, EventType.ADD2BAG)
# column of each event field inside the 6-wide id vector
EVENT_TYPE_COL, BRAND_COL, CATEGORY_COL, SCALE_COL, SIZE_COL, REASON_COL = range(N_EVENT_FIELDS)


@dataclass
class Batch:
    hist_ids: np.ndarray      # [B, T, 6] int
    hist_mask: np.ndarray     # [B, T] bool
    day_offsets: np.ndarray   # [B, T] int
    product_fields: np.ndarray  # [B, 6] int, event-shaped (non-product slots PAD)
    product_ids: np.ndarray   # [B] int
    user_ids: np.ndarray      # [B] int
    feasible: np.ndarray      # [B, P] bool
    labels: np.ndarray | None = None
    users: list = field(default_factory=list)
    products: list = field(default_factory=list)

    def __len__(self):
        return self.hist_ids.shape[0]

    @property
    def lengths(self) -> np.ndarray:
        return self.hist_mask.sum(axis=1)

    def subset(self, idx) -> "Batch":
        idx = np.asarray(idx)
        mask = self.hist_mask[idx]
        t = max(1, int(mask.sum(axis=1).max())) if len(idx) else 1
        return replace(
            self,
            hist_ids=self.hist_ids[idx, :t],
            hist_mask=mask[:, :t],
            day_offsets=self.day_offsets[idx, :t],
            product_fields=self.product_fields[idx],
            product_ids=self.product_ids[idx],
            user_ids=self.user_ids[idx],
            feasible=self.feasible[idx],
            labels=None if self.labels is None else self.labels[idx],
            users=[self.users[i] for i in idx],
            products=[self.products[i] for i in idx],
        )


class Encoder:
    """Vocabulary-backed encoder with a fixed history policy.

    ``history_types`` selects which event types survive into the history,
    truncation keeps the ``t_max`` most recent survivors, and
    ``mask_return_reason`` blanks the return_reason slot to PAD.
    """

    def __init__(self, vocab: Vocabulary, scales: dict[str, Scale], num_positions: int,
                 t_max: int = T_MAX, history_types=ALL_EVENT_TYPES, mask_return_reason: bool = False):
        self.vocab = vocab
        self.scales = scales
        self.num_positions = num_positions
        self.t_max = t_max
        self.history_types = tuple(EventType(t) for t in history_types)
        self.mask_return_reason = mask_return_reason

    def with_history_types(self, history_types) -> "Encoder":
        return Encoder(self.vocab, self.scales, self.num_positions, self.t_max, history_types,
                       self.mask_return_reason)

    def prepare_history(self, history: UserHistory) -> UserHistory:
        if set(self.history_types) != set(ALL_EVENT_TYPES):
            history = history.only(self.history_types)
        return history.recent(self.t_max)

    def encode_history(self, history: UserHistory, reference_day: int):
        hist = self.prepare_history(history)
        ids = np.zeros((len(hist), N_EVENT_FIELDS), dtype=np.int64)
        offsets = np.zeros(len(hist), dtype=np.int64)
        for j, ev in enumerate(hist.events):
            ids[j], offsets[j] = encode_event(ev, self.vocab, reference_day)
        if self.mask_return_reason:
            ids[:, REASON_COL] = PAD
        return ids, offsets

    def feasible_mask(self, product: Product) -> np.ndarray:
        mask = np.zeros(self.num_positions, dtype=bool)
        scale = self.scales.get(product.scale_id)
        n = len(scale) if scale is not None else self.num_positions
        mask[:n] = True
        return mask

    def product_fields(self, product: Product) -> np.ndarray:
        out = np.zeros(N_EVENT_FIELDS, dtype=np.int64)
        out[BRAND_COL] = self.vocab.lookup("brand_id", product.brand_id)
        out[CATEGORY_COL] = self.vocab.lookup("category_id", product.category_id)
        out[SCALE_COL] = self.vocab.lookup("scale_id", product.scale_id)
        return out

    def encode(self, instances: Sequence[Instance], with_labels: bool = True) -> Batch:
        return self.encode_queries(
            [(inst.history, inst.product, inst.timestamp) for inst in instances],
            labels=[inst.label for inst in instances] if with_labels else None,
        )

    def encode_queries(self, queries, labels=None) -> Batch:
        """Encode (history, product, reference_day) triples."""
        encoded = [self.encode_history(h, day) for h, _, day in queries]
        B = len(queries)
        T = max([1] + [len(ids) for ids, _ in encoded])
        hist_ids = np.zeros((B, T, N_EVENT_FIELDS), dtype=np.int64)
        mask = np.zeros((B, T), dtype=bool)
        offsets = np.zeros((B, T), dtype=np.int64)
        for b, (ids, offs) in enumerate(encoded):
            n = len(ids)
            hist_ids[b, :n] = ids
            mask[b, :n] = True
            offsets[b, :n] = offs
        products = [p for _, p, _ in queries]
        return Batch(
            hist_ids=hist_ids,
            hist_mask=mask,
            day_offsets=offsets,
            product_fields=np.stack([self.product_fields(p) for p in products]) if B
            else np.zeros((0, N_EVENT_FIELDS), dtype=np.int64),
            product_ids=np.array([self.vocab.lookup("product_id", p.product_id) for p in products], dtype=np.int64),
            user_ids=np.array([self.vocab.lookup("user_id", h.user_id) for h, _, _ in queries], dtype=np.int64),
            feasible=np.stack([self.feasible_mask(p) for p in products]) if B
            else np.zeros((0, self.num_positions), dtype=bool),
            labels=None if labels is None else np.asarray(labels, dtype=np.int64),
            users=[h.user_id for h, _, _ in queries],
            products=products,
        )

    def config(self) -> dict:
        return {
            "t_max": self.t_max,
            "history_types": [t.value for t in self.history_types],
            "mask_return_reason": self.mask_return_reason,
        }
