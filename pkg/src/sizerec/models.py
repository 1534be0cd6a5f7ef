"""The four size recommenders: PMCV, SFNet, SSP-LSTM and SSP-Attention.

All of them answer the same question, a distribution over size positions
for a (user, product) pair, restricted to the positions that exist in the
product's scale. Neural models share :class:`NeuralModel`; PMCV is a
frequency table lookup.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import nncore as nn
from .catalog import EVENT_FIELD_ORDER, N_EVENT_FIELDS, Instance, Product, Vocabulary
from .encoding import Batch
from .errors import EmptyHistory, EmptyTrainingSet, InvalidConfig
from .nncore import Tensor, no_grad

MODEL_TYPES = ("pmcv", "sfnet", "ssp-lstm", "ssp-attn")
SSP_TYPES = ("ssp-lstm", "ssp-attn")


def canonical_model_type(name: str) -> str:
    aliases = {"ssp-attention": "ssp-attn", "ssp_attn": "ssp-attn", "ssp_lstm": "ssp-lstm"}
    name = aliases.get(name.lower(), name.lower())
    if name not in MODEL_TYPES:
        raise InvalidConfig(f"unknown model type {name!r}; expected one of {MODEL_TYPES}")
    return name


def rank_positions(probs: np.ndarray, feasible: np.ndarray) -> np.ndarray:
    """Positions sorted by descending probability (ties -> lower position), infeasible last."""
    scores = np.where(feasible, probs, -np.inf)
    return np.argsort(-scores, axis=-1, kind="stable")


# --------------------------------------------------------------------------
# PMCV
# --------------------------------------------------------------------------

PMCV_TEMPLATES = (
    ("user", "category", "brand"),
    ("user", "brand"),
    ("user", "category"),
    ("user",),
    ("category", "brand"),
    ("brand",),
)


def _key_values(user_id: str, product: Product, template) -> tuple:
    parts = {"user": user_id, "category": product.category_id, "brand": product.brand_id}
    return tuple(parts[k] for k in template)


def _ordered(counts: Counter, n_feasible: int) -> list[int]:
    return sorted((p for p in counts if p < n_feasible), key=lambda p: (-counts[p], p))


class PMCVModel:
    """Personalised most-common-value lookup over a specificity-ordered key hierarchy."""

    model_type = "pmcv"

    def __init__(self, templates=PMCV_TEMPLATES):
        self.templates = tuple(tuple(t) for t in templates)
        self.tables: list[dict[tuple, Counter]] = [{} for _ in self.templates]
        self.global_counts: Counter = Counter()

    @property
    def modes(self) -> list[dict[tuple, int]]:
        return [{key: _ordered(c, 10 ** 9)[0] for key, c in table.items()} for table in self.tables]

    @property
    def global_mode(self) -> int:
        return _ordered(self.global_counts, 10 ** 9)[0]

    def hyperparameters(self) -> dict:
        return {"templates": [list(t) for t in self.templates]}

    def lookup(self, user_id: str, product: Product, n_feasible: int):
        """(template index or None, counts) of the most specific key with a feasible label."""
        for k, template in enumerate(self.templates):
            counts = self.tables[k].get(_key_values(user_id, product, template))
            if counts and any(p < n_feasible for p in counts):
                return k, counts
        return None, self.global_counts

    def predict(self, user_id: str, product: Product, n_feasible: int) -> list[int]:
        """Ranked feasible positions: matched key frequencies, then global frequencies, then ascending."""
        _, counts = self.lookup(user_id, product, n_feasible)
        ranked = _ordered(counts, n_feasible)
        seen = set(ranked)
        for p in _ordered(self.global_counts, n_feasible) + list(range(n_feasible)):
            if p not in seen:
                ranked.append(p)
                seen.add(p)
        return ranked

    def proba(self, user_id: str, product: Product, n_positions: int, n_feasible: int) -> np.ndarray:
        _, counts = self.lookup(user_id, product, n_feasible)
        out = np.zeros(n_positions)
        for p, c in counts.items():
            if p < n_feasible:
                out[p] = c
        total = out.sum()
        if total == 0:
            out[:n_feasible] = 1.0
            total = float(n_feasible)
        return out / total

    def predict_proba(self, batch: Batch) -> np.ndarray:
        n_pos = batch.feasible.shape[1]
        return np.stack([
            self.proba(u, p, n_pos, int(batch.feasible[b].sum()))
            for b, (u, p) in enumerate(zip(batch.users, batch.products))
        ]) if len(batch) else np.zeros((0, n_pos))

    def rank(self, batch: Batch) -> np.ndarray:
        n_pos = batch.feasible.shape[1]
        out = np.full((len(batch), n_pos), -1, dtype=np.int64)
        for b, (u, p) in enumerate(zip(batch.users, batch.products)):
            r = self.predict(u, p, int(batch.feasible[b].sum()))
            out[b, :len(r)] = r
        return out

    def to_dict(self) -> dict:
        return {
            "templates": [list(t) for t in self.templates],
            "tables": [[[list(key), {str(p): c for p, c in sorted(cnt.items())}] for key, cnt in table.items()]
                       for table in self.tables],
            "global": {str(p): c for p, c in sorted(self.global_counts.items())},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PMCVModel":
        model = cls(d["templates"])
        for k, rows in enumerate(d["tables"]):
            model.tables[k] = {tuple(key): Counter({int(p): c for p, c in cnt.items()}) for key, cnt in rows}
        model.global_counts = Counter({int(p): c for p, c in d["global"].items()})
        return model


def pmcv_fit(train: Sequence[Instance], templates=PMCV_TEMPLATES) -> PMCVModel:
    if not train:
        raise EmptyTrainingSet("PMCV needs at least one training instance")
    model = PMCVModel(templates)
    for inst in train:
        model.global_counts[inst.label] += 1
        for k, template in enumerate(model.templates):
            key = _key_values(inst.user_id, inst.product, template)
            model.tables[k].setdefault(key, Counter())[inst.label] += 1
    return model


def pmcv_predict(model: PMCVModel, user_id: str, product: Product, scale_length: int) -> list[int]:
    return model.predict(user_id, product, scale_length)


# --------------------------------------------------------------------------
# neural models
# --------------------------------------------------------------------------

@dataclass
class SFNetConfig:
    user_dim: int = 64
    field_dim: int = 32
    product_dim: int = 64
    joint_hidden: list[int] = field(default_factory=lambda: [256, 128, 64])


@dataclass
class SSPConfig:
    field_dim: int = 32          # v: per-field embedding width
    lstm_hidden: int = 64        # H
    product_hidden: int = 128    # Product Encoder output (LSTM variant)
    mix_hidden: int = 128        # Mix Encoder output (LSTM variant)
    heads: int = 4
    ffn_mult: int = 4
    out_hidden: int = 128        # output MLP width (attention variant)

    @property
    def event_dim(self) -> int:
        return N_EVENT_FIELDS * self.field_dim


def _config_from(cls, d):
    d = dict(d or {})
    known = set(cls.__dataclass_fields__)
    if set(d) - known:
        raise InvalidConfig(f"unknown {cls.__name__} fields {sorted(set(d) - known)}")
    return cls(**d)


def cardinalities(vocab: Vocabulary) -> dict[str, int]:
    return {name: vocab.cardinality(name) for name in vocab.fields()}


class NeuralModel(nn.Module):
    model_type = ""

    def logits(self, batch: Batch) -> Tensor:
        raise NotImplementedError

    def loss(self, batch: Batch) -> Tensor:
        return nn.softmax_cross_entropy(self.logits(batch), batch.labels, batch.feasible)

    def predict_proba(self, batch: Batch) -> np.ndarray:
        with no_grad():
            return nn.softmax(self.logits(batch), batch.feasible).data

    def rank(self, batch: Batch) -> np.ndarray:
        return rank_positions(self.predict_proba(batch), batch.feasible)


class SFNetModel(NeuralModel):
    """User-id embedding and MLP-combined product embedding, jointly encoded by an MLP."""

    model_type = "sfnet"

    def __init__(self, cards: dict[str, int], num_positions: int, config: SFNetConfig | dict | None = None,
                 seed: int = 0):
        cfg = config if isinstance(config, SFNetConfig) else _config_from(SFNetConfig, config)
        self.config = cfg
        self.num_positions = num_positions
        rng = np.random.default_rng(seed)
        self.user = nn.Embedding(cards["user_id"], cfg.user_dim, rng)
        self.fields = {
            name: nn.Embedding(cards[name], cfg.field_dim, rng)
            for name in ("product_id", "brand_id", "category_id", "scale_id")
        }
        self.combiner = nn.MLP([4 * cfg.field_dim, cfg.product_dim], rng)
        self.joint = nn.MLP([cfg.user_dim + cfg.product_dim] + list(cfg.joint_hidden), rng)
        self.head = nn.Linear(cfg.joint_hidden[-1], num_positions, rng)

    def hyperparameters(self) -> dict:
        return asdict(self.config)

    def logits(self, batch: Batch) -> Tensor:
        pf = batch.product_fields
        cols = {"product_id": batch.product_ids, "brand_id": pf[:, 1], "category_id": pf[:, 2], "scale_id": pf[:, 3]}
        prod = nn.concat([self.fields[name](ids) for name, ids in cols.items()], axis=-1)
        joint = nn.concat([self.user(batch.user_ids), self.combiner(prod)], axis=-1)
        return self.head(self.joint(joint))


class EventEmbedder(nn.Module):
    """One table per event field; an event becomes the concatenation of its 6 field vectors."""

    def __init__(self, cards: dict[str, int], dim: int, rng):
        self.tables = {name: nn.Embedding(cards[name], dim, rng) for name in EVENT_FIELD_ORDER}

    def __call__(self, ids: np.ndarray) -> Tensor:
        return nn.concat([self.tables[name](ids[..., j]) for j, name in enumerate(EVENT_FIELD_ORDER)], axis=-1)


@dataclass
class HistoryCache:
    """Product-independent part of an SSP forward pass."""

    model_type: str
    vector: np.ndarray | None = None     # SSP-LSTM history embedding [B, 2H]
    sequence: np.ndarray | None = None   # SSP-Attention transformed history [B, T, D]
    mask: np.ndarray | None = None       # [B, T] bool

    def __len__(self):
        return (self.vector if self.vector is not None else self.sequence).shape[0]

    def row(self, b: int) -> "HistoryCache":
        if self.vector is not None:
            return HistoryCache(self.model_type, vector=self.vector[b:b + 1])
        n = max(1, int(self.mask[b].sum()))
        return HistoryCache(self.model_type, sequence=self.sequence[b:b + 1, :n], mask=self.mask[b:b + 1, :n])

    def to_bytes(self) -> bytes:
        tensors = {}
        if self.vector is not None:
            tensors["vector"] = self.vector
        else:
            tensors["sequence"] = self.sequence
            tensors["mask"] = self.mask.astype(np.float64)
        return self.model_type.encode() + b"\n" + nn.dumps_tensors(tensors)

    @classmethod
    def from_bytes(cls, blob: bytes) -> "HistoryCache":
        head, _, body = blob.partition(b"\n")
        t = nn.loads_tensors(body)
        if "vector" in t:
            return cls(head.decode(), vector=t["vector"])
        return cls(head.decode(), sequence=t["sequence"], mask=t["mask"].astype(bool))


class SSPModel(NeuralModel):
    """Shared pieces of both sequence size predictors."""

    def __init__(self, cards, num_positions, config, seed):
        cfg = config if isinstance(config, SSPConfig) else _config_from(SSPConfig, config)
        self.config = cfg
        self.num_positions = num_positions
        self._rng = np.random.default_rng(seed)
        self.embed = EventEmbedder(cards, cfg.field_dim, self._rng)

    def hyperparameters(self) -> dict:
        return asdict(self.config)

    @staticmethod
    def _check_history(batch: Batch):
        if len(batch) and not batch.hist_mask.any(axis=1).all():
            raise EmptyHistory("SSP models need at least one event in the history")

    def encode_history(self, batch: Batch) -> HistoryCache:
        with no_grad():
            return self._cache_from(self._history(batch), batch)

    def predict_from_cache(self, cache: HistoryCache, batch: Batch) -> np.ndarray:
        with no_grad():
            return nn.softmax(self._head(self._history_from(cache), batch), batch.feasible).data

    def logits(self, batch: Batch) -> Tensor:
        return self._head(self._history(batch), batch)


class SSPLSTMModel(SSPModel):
    model_type = "ssp-lstm"

    def __init__(self, cards: dict[str, int], num_positions: int, config: SSPConfig | dict | None = None,
                 seed: int = 0):
        super().__init__(cards, num_positions, config, seed)
        cfg, rng = self.config, self._rng
        self.lstm = nn.BiLSTM(cfg.event_dim, cfg.lstm_hidden, rng)
        self.product_encoder = nn.MLP([cfg.event_dim, cfg.product_hidden], rng)
        self.mix_encoder = nn.MLP([2 * cfg.lstm_hidden + cfg.product_hidden, cfg.mix_hidden], rng)
        self.head = nn.Linear(cfg.mix_hidden, num_positions, rng)
        del self._rng

    def _history(self, batch):
        self._check_history(batch)
        return self.lstm(self.embed(batch.hist_ids), batch.hist_mask)

    def _cache_from(self, hist, batch):
        return HistoryCache(self.model_type, vector=hist.data.copy())

    def _history_from(self, cache):
        return Tensor(cache.vector)

    def _head(self, hist, batch):
        prod = self.product_encoder(self.embed(batch.product_fields))
        return self.head(self.mix_encoder(nn.concat([hist, prod], axis=-1)))


class SSPAttentionModel(SSPModel):
    model_type = "ssp-attn"

    def __init__(self, cards: dict[str, int], num_positions: int, config: SSPConfig | dict | None = None,
                 seed: int = 0):
        super().__init__(cards, num_positions, config, seed)
        cfg, rng = self.config, self._rng
        d = cfg.event_dim
        self.self_block = nn.TransformerBlock(d, cfg.heads, cfg.ffn_mult * d, rng)
        self.cross_block = nn.TransformerBlock(d, cfg.heads, cfg.ffn_mult * d, rng)
        self.out_mlp = nn.MLP([d, cfg.out_hidden], rng)
        self.head = nn.Linear(cfg.out_hidden, num_positions, rng)
        del self._rng

    def _history(self, batch):
        self._check_history(batch)
        x = nn.add(self.embed(batch.hist_ids), nn.sinusoidal_encoding(batch.day_offsets, self.config.event_dim))
        return self.self_block(x, x, x, batch.hist_mask), batch.hist_mask

    def _cache_from(self, hist, batch):
        seq, mask = hist
        return HistoryCache(self.model_type, sequence=seq.data.copy(), mask=mask.copy())

    def _history_from(self, cache):
        return Tensor(cache.sequence), cache.mask

    def _head(self, hist, batch):
        seq, mask = hist
        B = len(batch)
        query = nn.reshape(self.embed(batch.product_fields), (B, 1, self.config.event_dim))
        out = self.cross_block(query, seq, seq, mask)
        return self.head(self.out_mlp(nn.reshape(out, (B, self.config.event_dim))))


NEURAL_CLASSES = {"sfnet": SFNetModel, "ssp-lstm": SSPLSTMModel, "ssp-attn": SSPAttentionModel}


def build_model(model_type: str, vocab: Vocabulary, num_positions: int, hyperparameters: dict | None = None,
                seed: int = 0):
    model_type = canonical_model_type(model_type)
    if model_type == "pmcv":
        return PMCVModel(**(hyperparameters or {}))
    return NEURAL_CLASSES[model_type](cardinalities(vocab), num_positions, hyperparameters, seed)
