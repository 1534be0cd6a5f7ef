"""Model bundles: everything needed to serve a trained model.

A bundle is a directory holding ``bundle.json`` (format version, model
type tag, hyperparameters, encoder policy, vocabulary, scales) and, for
neural models, ``params.bin`` in the nncore tensor container format.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import nncore as nn
from .catalog import Instance, Scale, Vocabulary
from .encoding import Batch, Encoder
from .errors import BundleCorrupt, ModelLoadError
from .models import PMCVModel, build_model, canonical_model_type

BUNDLE_FORMAT = "sizerec-bundle"
BUNDLE_VERSION = 1
META_FILE = "bundle.json"
PARAMS_FILE = "params.bin"


@dataclass
class ModelBundle:
    model_type: str
    model: object
    encoder: Encoder
    hyperparameters: dict = field(default_factory=dict)
    train_config: dict = field(default_factory=dict)
    version: str = ""

    @property
    def vocab(self) -> Vocabulary:
        return self.encoder.vocab

    @property
    def scales(self) -> dict[str, Scale]:
        return self.encoder.scales

    @property
    def num_positions(self) -> int:
        return self.encoder.num_positions

    def encode(self, instances: Sequence[Instance]) -> Batch:
        return self.encoder.encode(instances)

    def predict_proba(self, batch: Batch) -> np.ndarray:
        return self.model.predict_proba(batch)

    def rank(self, batch: Batch) -> np.ndarray:
        return self.model.rank(batch)

    def _meta(self) -> dict:
        meta = {
            "format": BUNDLE_FORMAT,
            "version": BUNDLE_VERSION,
            "model_type": self.model_type,
            "hyperparameters": self.hyperparameters,
            "encoder": self.encoder.config(),
            "num_positions": self.num_positions,
            "scales": {sid: list(s.ordered_sizes) for sid, s in self.scales.items()},
            "vocabulary": self.vocab.to_dict(),
            "train_config": self.train_config,
        }
        if isinstance(self.model, PMCVModel):
            meta["pmcv"] = self.model.to_dict()
        return meta

    def fingerprint(self) -> str:
        meta = json.dumps(self._meta(), sort_keys=True).encode()
        params = b"" if isinstance(self.model, PMCVModel) else nn.dumps_tensors(self.model.state_dict())
        return hashlib.sha256(meta + params).hexdigest()[:12]


def save_bundle(bundle: ModelBundle, path: str | Path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    meta = json.dumps(bundle._meta(), indent=1, sort_keys=True).encode()
    params = b""
    if not isinstance(bundle.model, PMCVModel):
        params = nn.dumps_tensors(bundle.model.state_dict())
        (path / PARAMS_FILE).write_bytes(params)
    (path / META_FILE).write_bytes(meta)
    bundle.version = bundle.fingerprint()
    return path


def load_bundle(path: str | Path) -> ModelBundle:
    path = Path(path)
    meta_path = path / META_FILE
    if not meta_path.is_file():
        raise ModelLoadError(f"no {META_FILE} under {path}")
    try:
        meta = json.loads(meta_path.read_text())
    except json.JSONDecodeError as exc:
        raise BundleCorrupt(f"{meta_path}: {exc}") from None
    if meta.get("format") != BUNDLE_FORMAT or meta.get("version") != BUNDLE_VERSION:
        raise BundleCorrupt(f"{path} is not a version-{BUNDLE_VERSION} {BUNDLE_FORMAT}")
    try:
        model_type = canonical_model_type(meta["model_type"])
        scales = {sid: Scale(sid, tuple(codes)) for sid, codes in meta["scales"].items()}
        vocab = Vocabulary.from_dict(meta["vocabulary"])
        enc = meta["encoder"]
        encoder = Encoder(vocab, scales, int(meta["num_positions"]), enc["t_max"], enc["history_types"],
                          enc["mask_return_reason"])
        if model_type == "pmcv":
            model = PMCVModel.from_dict(meta["pmcv"])
        else:
            model = build_model(model_type, vocab, encoder.num_positions, meta["hyperparameters"])
            model.load_state_dict(nn.load_tensors(path / PARAMS_FILE))
    except BundleCorrupt:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise BundleCorrupt(f"{path}: {exc}") from None
    except OSError as exc:
        raise ModelLoadError(f"{path}: {exc}") from None
    bundle = ModelBundle(model_type, model, encoder, meta["hyperparameters"], meta.get("train_config", {}))
    bundle.version = bundle.fingerprint()
    return bundle
