"""Mini-batch training with Adam, early stopping on validation top-1, seeded throughout."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from . import nncore as nn
from .bundle import ModelBundle
from .catalog import (
    T_MAX,
    EventType,
    Instance,
    ReturnReason,
    Scale,
    build_vocabulary,
)
from .encoding import ALL_EVENT_TYPES, Batch, Encoder
from .errors import ConfigInvalid, DivergedLoss, EmptyEvaluationSet, EmptyTrainingSet
from .models import SSP_TYPES, build_model, canonical_model_type, pmcv_fit

log = logging.getLogger(__name__)

PAPER_DEFAULTS = {
    "sfnet": {"batch_size": 8128, "epochs": 35, "wd": 1e-5},
    "ssp-lstm": {"batch_size": 1024, "epochs": 25, "wd": 1e-4},
    "ssp-attn": {"batch_size": 1024, "epochs": 25, "wd": 1e-4},
    "pmcv": {"batch_size": 1, "epochs": 1, "wd": 0.0},
}


@dataclass
class TrainConfig:
    model_type: str = "ssp-attn"
    batch_size: int = 1024
    epochs: int = 25
    lr: float = 1e-3
    wd: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    patience: int = 5
    seed: int = 0
    t_max: int = T_MAX
    history_types: tuple = ("Order", "Add2Bag")
    mask_return_reason: bool = False
    hyperparameters: dict = field(default_factory=dict)
    eval_batch_size: int = 512
    bucket_batches: int = 50

    def __post_init__(self):
        self.model_type = canonical_model_type(self.model_type)
        self.history_types = tuple(EventType(t).value for t in self.history_types)
        if self.batch_size < 1 or self.epochs < 0 or self.patience < 1 or self.t_max < 1:
            raise ConfigInvalid("batch_size, patience and t_max must be >= 1, epochs >= 0")
        if self.lr < 0 or self.wd < 0 or not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigInvalid("lr/wd must be >= 0 and betas in [0, 1)")

    @classmethod
    def for_model(cls, model_type: str, **overrides) -> "TrainConfig":
        model_type = canonical_model_type(model_type)
        known = {f.name for f in fields(cls)}
        bad = set(overrides) - known
        if bad:
            raise ConfigInvalid(f"unknown training fields {sorted(bad)}")
        return cls(model_type=model_type, **{**PAPER_DEFAULTS[model_type], **overrides})

    def to_dict(self) -> dict:
        d = asdict(self)
        d["history_types"] = list(self.history_types)
        return d


@dataclass
class TrainReport:
    model_type: str
    epochs: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    best_val_top1: float = float("nan")
    stopped_early: bool = False
    initial_loss: float = float("nan")
    n_train: int = 0
    n_val: int = 0

    def to_dict(self, with_timing: bool = True) -> dict:
        d = asdict(self)
        if not with_timing:
            d["epochs"] = [{k: v for k, v in e.items() if k != "seconds"} for e in d["epochs"]]
        return d

    def write(self, path: str | Path) -> Path:
        """One JSON object per epoch, then a summary line."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w") as fh:
            for e in self.epochs:
                fh.write(json.dumps({"event": "epoch", "model_type": self.model_type, **e}) + "\n")
            summary = {k: v for k, v in self.to_dict().items() if k != "epochs"}
            fh.write(json.dumps({"event": "summary", **summary}) + "\n")
        return path


def make_training_instances(instances: Sequence[Instance]) -> list[Instance]:
    """Labelled instances are kept orders; histories keep returned orders and Add2Bag events."""
    return [inst for inst in instances if inst.return_reason is ReturnReason.NOT_RETURNED]


def with_history(instances: Sequence[Instance], history_types=ALL_EVENT_TYPES) -> list[Instance]:
    """Instances whose history has at least one event of an admitted type."""
    keep = {EventType(t) for t in history_types}
    return [inst for inst in instances if any(e.event_type in keep for e in inst.history.events)]


def _as_batch(model_or_bundle, data, encoder=None) -> tuple[object, Batch]:
    if isinstance(model_or_bundle, ModelBundle):
        encoder = encoder or model_or_bundle.encoder
        model = model_or_bundle.model
    else:
        model = model_or_bundle
    if isinstance(data, Batch):
        return model, data
    if encoder is None:
        raise ValueError("raw instances need an encoder (pass a ModelBundle)")
    return model, encoder.encode(data)


def predict_ranks(model_or_bundle, data, encoder=None, chunk: int = 512) -> tuple[np.ndarray, np.ndarray]:
    model, batch = _as_batch(model_or_bundle, data, encoder)
    ranks = []
    for start in range(0, len(batch), chunk):
        ranks.append(model.rank(batch.subset(np.arange(start, min(start + chunk, len(batch))))))
    return np.concatenate(ranks) if ranks else np.zeros((0, batch.feasible.shape[1]), int), batch.labels


def evaluate_topk(model_or_bundle, data, ks=(1, 2, 3), encoder=None, chunk: int = 512) -> dict[int, float]:
    """Fraction of instances whose label is among the k most probable feasible positions."""
    ranks, labels = predict_ranks(model_or_bundle, data, encoder, chunk)
    if len(labels) == 0:
        raise EmptyEvaluationSet("no instances to evaluate")
    return {k: float(np.mean((ranks[:, :k] == labels[:, None]).any(axis=1))) for k in ks}


def bucketed_batches(lengths: np.ndarray, batch_size: int, rng: np.random.Generator, bucket: int = 50):
    """Shuffled mini-batches of similar history length (sort within shuffled pools)."""
    order = rng.permutation(len(lengths))
    pool = batch_size * bucket
    batches = []
    for start in range(0, len(order), pool):
        chunk = order[start:start + pool]
        chunk = chunk[np.argsort(lengths[chunk], kind="stable")]
        batches.extend(chunk[i:i + batch_size] for i in range(0, len(chunk), batch_size))
    return [batches[i] for i in rng.permutation(len(batches))]


def train(model_type: str, train_instances: Sequence[Instance], val_instances: Sequence[Instance],
          scales: dict[str, Scale], config: TrainConfig | None = None,
          num_positions: int | None = None) -> tuple[ModelBundle, TrainReport]:
    """Fit one model on the training split; vocabulary comes from the training split only."""
    model_type = canonical_model_type(model_type)
    cfg = config or TrainConfig.for_model(model_type)
    if cfg.model_type != model_type:
        cfg = TrainConfig(**{**cfg.to_dict(), "model_type": model_type})
    if not train_instances:
        raise EmptyTrainingSet("no training instances")
    num_positions = num_positions or max(len(s) for s in scales.values())
    vocab = build_vocabulary(train_instances)
    encoder = Encoder(vocab, scales, num_positions, cfg.t_max, cfg.history_types, cfg.mask_return_reason)
    report = TrainReport(model_type, n_train=len(train_instances), n_val=len(val_instances))

    if model_type == "pmcv":
        model = pmcv_fit(train_instances)
        bundle = ModelBundle(model_type, model, encoder, model.hyperparameters(), cfg.to_dict())
        if val_instances:
            report.best_val_top1 = evaluate_topk(bundle, val_instances, ks=(1,))[1]
        report.best_epoch = 0
        report.epochs.append({"epoch": 0, "train_loss": float("nan"), "val_top1": report.best_val_top1,
                              "seconds": 0.0})
        bundle.version = bundle.fingerprint()
        return bundle, report

    model = build_model(model_type, vocab, num_positions, cfg.hyperparameters, seed=cfg.seed)
    train_batch = encoder.encode(train_instances)
    val_batch = encoder.encode(val_instances) if val_instances else None
    rng = np.random.default_rng(cfg.seed)
    state = nn.AdamState(cfg.lr, cfg.wd, cfg.beta1, cfg.beta2, cfg.eps)
    params = model.parameters()
    lengths = train_batch.lengths
    best_state, since_best = model.state_dict(), 0

    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        total, seen = 0.0, 0
        for idx in bucketed_batches(lengths, cfg.batch_size, rng, cfg.bucket_batches):
            batch = train_batch.subset(idx)
            loss = model.loss(batch)
            value = loss.item()
            if not math.isfinite(value):
                raise DivergedLoss(f"non-finite loss at epoch {epoch}")
            if math.isnan(report.initial_loss):
                report.initial_loss = value
            loss.backward()
            nn.adam_step(state, params)
            total += value * len(idx)
            seen += len(idx)
        val_top1 = evaluate_topk(model, val_batch, ks=(1,), chunk=cfg.eval_batch_size)[1] if val_batch else float("nan")
        seconds = time.perf_counter() - t0
        report.epochs.append({"epoch": epoch, "train_loss": total / max(seen, 1), "val_top1": val_top1,
                              "seconds": seconds})
        log.info("%s epoch %d loss %.4f val_top1 %.4f (%.1fs)", model_type, epoch, total / max(seen, 1),
                 val_top1, seconds)
        if val_batch is None or val_top1 > report.best_val_top1 or math.isnan(report.best_val_top1):
            report.best_val_top1, report.best_epoch = val_top1, epoch
            best_state, since_best = model.state_dict(), 0
        else:
            since_best += 1
            if since_best >= cfg.patience:
                report.stopped_early = True
                break

    model.load_state_dict(best_state)
    bundle = ModelBundle(model_type, model, encoder, model.hyperparameters(), cfg.to_dict())
    bundle.version = bundle.fingerprint()
    return bundle, report


def initial_loss_reference(batch: Batch) -> float:
    """Mean ln(#feasible positions): the loss of a uniform masked prediction."""
    return float(np.mean(np.log(batch.feasible.sum(axis=1))))


__all__ = [
    "TrainConfig", "TrainReport", "evaluate_topk", "make_training_instances", "predict_ranks", "train",
    "with_history", "bucketed_batches", "initial_loss_reference", "SSP_TYPES",
]
