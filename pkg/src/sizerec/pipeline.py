"""Experiment configs and the generate -> train -> evaluate pipeline."""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Sequence

import yaml

from .bundle import ModelBundle, save_bundle
from .catalog import Dataset, GeneratorConfig, Instance, generate_synthetic_dataset, save_dataset, split_backtesting
from .errors import ConfigInvalid
from .evaluation import run_add2bag_ablation, run_return_reason_ablation, run_scenarios
from .models import MODEL_TYPES, SSP_TYPES, canonical_model_type
from .training import TrainConfig, TrainReport, make_training_instances, train, with_history

log = logging.getLogger(__name__)

BUILTIN_CONFIGS = ("default", "noiseless", "add2bag", "smoke", "paper")


@dataclass
class ExperimentConfig:
    seed: int = 0
    data: dict = field(default_factory=dict)
    split: tuple = (0.8, 0.1, 0.1)
    models: tuple = MODEL_TYPES
    training: dict = field(default_factory=dict)

    def __post_init__(self):
        self.models = tuple(canonical_model_type(m) for m in self.models)
        self.split = tuple(float(x) for x in self.split)
        self.training = {canonical_model_type(k): dict(v or {}) for k, v in (self.training or {}).items()}
        GeneratorConfig.from_dict(self.generator_dict())
        for m in self.models:
            self.train_config(m)

    def generator_dict(self) -> dict:
        return {"seed": self.seed, **self.data}

    def train_config(self, model_type: str, **overrides) -> TrainConfig:
        model_type = canonical_model_type(model_type)
        return TrainConfig.for_model(model_type, **{"seed": self.seed, **self.training.get(model_type, {}),
                                                    **overrides})

    def train_overrides(self) -> dict:
        return {m: {"seed": self.seed, **self.training.get(m, {})} for m in MODEL_TYPES}

    def with_seed(self, seed: int | None) -> "ExperimentConfig":
        if seed is None:
            return self
        return ExperimentConfig(seed, dict(self.data), self.split, self.models, self.training)

    def to_dict(self) -> dict:
        return {"seed": self.seed, "data": self.data, "split": list(self.split), "models": list(self.models),
                "training": self.training}


def load_config(source: str | Path | dict | None = None) -> ExperimentConfig:
    """A YAML path, the name of a bundled config, or an already-parsed mapping."""
    if source is None:
        source = "default"
    if isinstance(source, dict):
        raw = source
    else:
        path = Path(source)
        if path.is_file():
            text = path.read_text()
        elif str(source) in BUILTIN_CONFIGS:
            text = resources.files("sizerec").joinpath(f"configs/{source}.yaml").read_text()
        else:
            raise ConfigInvalid(f"no config file or bundled config named {source!r}")
        raw = yaml.safe_load(text) or {}
    if not isinstance(raw, dict):
        raise ConfigInvalid("config must be a mapping")
    unknown = set(raw) - {"seed", "data", "split", "models", "training"}
    if unknown:
        raise ConfigInvalid(f"unknown config sections {sorted(unknown)}")
    try:
        return ExperimentConfig(**raw)
    except TypeError as exc:
        raise ConfigInvalid(str(exc)) from None


@dataclass
class Splits:
    train: list[Instance]
    val: list[Instance]
    test: list[Instance]


def make_splits(dataset: Dataset, ratios: Sequence[float] = (0.8, 0.1, 0.1)) -> Splits:
    """Kept orders whose history has at least one event, split chronologically."""
    labelled = with_history(make_training_instances(dataset.instances))
    return Splits(*split_backtesting(labelled, ratios))


def generate(config: ExperimentConfig) -> Dataset:
    return generate_synthetic_dataset(config.generator_dict())


def train_all(config: ExperimentConfig, dataset: Dataset, splits: Splits,
              models: Sequence[str] | None = None) -> tuple[dict[str, ModelBundle], dict[str, TrainReport]]:
    bundles, reports = {}, {}
    for m in models or config.models:
        log.info("training %s on %d instances", m, len(splits.train))
        bundles[m], reports[m] = train(m, splits.train, splits.val, dataset.scales, config.train_config(m),
                                       num_positions=dataset.num_positions)
    return bundles, reports


def _sha(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def run_pipeline(config: ExperimentConfig, out_dir: str | Path, ablations: Sequence[str] = ()) -> dict:
    """Write data, bundles, train logs and evaluation reports under `out_dir`.

    Everything except ``train_log_*.jsonl`` (wall-clock per epoch) is a
    pure function of the config and seed.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(config.to_dict(), indent=1, sort_keys=True) + "\n")
    dataset = generate(config)
    save_dataset(dataset, out / "data.jsonl")
    splits = make_splits(dataset, config.split)
    bundles, reports = train_all(config, dataset, splits)
    manifest = {"data_sha256": _sha(out / "data.jsonl"), "split_sizes": [len(splits.train), len(splits.val),
                                                                        len(splits.test)], "bundles": {}}
    for m, bundle in bundles.items():
        save_bundle(bundle, out / "bundles" / m)
        reports[m].write(out / f"train_log_{m}.jsonl")
        (out / f"train_report_{m}.json").write_text(
            json.dumps(reports[m].to_dict(with_timing=False), indent=1, sort_keys=True) + "\n")
        manifest["bundles"][m] = bundle.version
    run_scenarios(bundles, splits.test, dataset, splits.train).write(out)
    ssp = [m for m in config.models if m in SSP_TYPES]
    for axis in ablations:
        run_ablation(axis, config, dataset, splits, ssp).write(out)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return manifest


def run_ablation(axis: str, config: ExperimentConfig, dataset: Dataset, splits: Splits,
                 models: Sequence[str] = SSP_TYPES):
    axis = axis.replace("_", "-").lower()
    args = (dataset, splits.train, splits.val, splits.test, tuple(models), config.train_overrides())
    if axis == "add2bag":
        return run_add2bag_ablation(*args)
    if axis == "return-reason":
        return run_return_reason_ablation(*args)
    raise ConfigInvalid(f"unknown ablation axis {axis!r}")
