"""CPU inference-latency benchmark over batch size and history length."""

from __future__ import annotations

import csv
import io
import os
import platform
import statistics
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from threadpoolctl import threadpool_info, threadpool_limits

from .bundle import ModelBundle, load_bundle
from .catalog import EVENT_FIELD_ORDER, N_EVENT_FIELDS, Scale, Vocabulary
from .encoding import Batch, Encoder
from .errors import InvalidConfig, ModelLoadError
from .models import build_model

DEFAULT_BATCHES = (1, 8, 32, 128)
DEFAULT_HISTORIES = (5, 10, 20, 30, 40)
SERIES_HISTORY = 20


@dataclass
class BenchConfig:
    models: tuple = ("sfnet", "ssp-lstm", "ssp-attn")
    batch_sizes: tuple = DEFAULT_BATCHES
    history_lengths: tuple = DEFAULT_HISTORIES
    warmup: int = 5
    iterations: int = 30
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        self.models = tuple(self.models)
        self.batch_sizes = tuple(int(b) for b in self.batch_sizes)
        self.history_lengths = tuple(int(h) for h in self.history_lengths)
        if self.iterations < 30 or self.warmup < 5:
            raise InvalidConfig("need iterations >= 30 and warmup >= 5")
        if not self.batch_sizes or min(self.batch_sizes) < 1:
            raise InvalidConfig("batch sizes must be >= 1")
        if not self.history_lengths or min(self.history_lengths) < 1:
            raise InvalidConfig("history lengths must be >= 1")


@dataclass
class BenchRow:
    model: str
    batch_size: int
    history_length: int
    mean_ms: float
    p50_ms: float
    p95_ms: float
    std_ms: float
    machine: str


def _cpu_model() -> str:
    try:
        with open("/proc/cpuinfo") as fh:
            for line in fh:
                if line.startswith("model name"):
                    return line.split(":", 1)[1].strip()
    except OSError:
        pass
    return platform.processor() or platform.machine()


def machine_descriptor(threads: int = 1) -> str:
    blas = ",".join(sorted({i.get("internal_api", "?") for i in threadpool_info()})) or "none"
    return (f"{_cpu_model()} x {os.cpu_count()} | {platform.system()} {platform.release()} | "
            f"python {platform.python_version()} | numpy {np.__version__} | blas {blas} | threads {threads}")


def synthetic_vocabulary(n_users: int = 1000, n_products: int = 1000, n_brands: int = 100, n_categories: int = 50,
                         n_scales: int = 20) -> Vocabulary:
    vocab = Vocabulary()
    for name, n, prefix in (("user_id", n_users, "U"), ("product_id", n_products, "P"), ("brand_id", n_brands, "B"),
                            ("category_id", n_categories, "C"), ("scale_id", n_scales, "S")):
        for i in range(n):
            vocab.add(name, f"{prefix}{i}")
    return vocab


def synthetic_batch(vocab: Vocabulary, num_positions: int, batch_size: int, history_length: int,
                    rng: np.random.Generator) -> Batch:
    """Random but valid ids; every row has a full history of `history_length` events."""
    hist = np.zeros((batch_size, history_length, N_EVENT_FIELDS), dtype=np.int64)
    for j, name in enumerate(EVENT_FIELD_ORDER):
        hist[..., j] = rng.integers(2, max(3, vocab.cardinality(name)), size=(batch_size, history_length))
    product = np.zeros((batch_size, N_EVENT_FIELDS), dtype=np.int64)
    for j in (1, 2, 3):
        product[:, j] = rng.integers(2, max(3, vocab.cardinality(EVENT_FIELD_ORDER[j])), size=batch_size)
    feasible = np.zeros((batch_size, num_positions), dtype=bool)
    lengths = rng.integers(min(6, num_positions), num_positions + 1, size=batch_size)
    for b, n in enumerate(lengths):
        feasible[b, :n] = True
    offsets = np.sort(rng.integers(0, 366, size=(batch_size, history_length)), axis=1)[:, ::-1].copy()
    return Batch(
        hist_ids=hist,
        hist_mask=np.ones((batch_size, history_length), dtype=bool),
        day_offsets=offsets,
        product_fields=product,
        product_ids=rng.integers(2, max(3, vocab.cardinality("product_id")), size=batch_size),
        user_ids=rng.integers(2, max(3, vocab.cardinality("user_id")), size=batch_size),
        feasible=feasible,
    )


def synthetic_bundle(model_type: str, seed: int = 0, num_positions: int = 30) -> ModelBundle:
    """An untrained model at default (full-size) hyperparameters; latency does not depend on weights."""
    vocab = synthetic_vocabulary()
    scales = {"S0": Scale("S0", tuple(str(i) for i in range(num_positions)))}
    model = build_model(model_type, vocab, num_positions, seed=seed)
    return ModelBundle(model_type, model, Encoder(vocab, scales, num_positions), model.hyperparameters())


def _time_ms(fn, warmup: int, iterations: int) -> list[float]:
    for _ in range(warmup):
        fn()
    out = []
    for _ in range(iterations):
        t0 = time.perf_counter()
        fn()
        out.append((time.perf_counter() - t0) * 1e3)
    return out


def _percentile(xs: Sequence[float], q: float) -> float:
    return float(np.percentile(np.asarray(xs), q))


def bench_model(bundle: ModelBundle | str | Path, config: BenchConfig | None = None,
                name: str | None = None) -> list[BenchRow]:
    cfg = config or BenchConfig()
    if not isinstance(bundle, ModelBundle):
        bundle = load_bundle(bundle)
    if bundle.model_type == "pmcv":
        raise ModelLoadError("the latency benchmark covers the neural models only")
    name = name or bundle.model_type
    machine = machine_descriptor(cfg.threads)
    rng = np.random.default_rng(cfg.seed)
    rows = []
    with threadpool_limits(limits=cfg.threads):
        for hl in cfg.history_lengths:
            for bs in cfg.batch_sizes:
                batch = synthetic_batch(bundle.vocab, bundle.num_positions, bs, hl, rng)
                samples = _time_ms(lambda: bundle.model.predict_proba(batch), cfg.warmup, cfg.iterations)
                rows.append(BenchRow(name, bs, hl, statistics.fmean(samples), _percentile(samples, 50),
                                     _percentile(samples, 95), statistics.pstdev(samples), machine))
    return rows


def _write(path: Path, header, rows, preamble=()) -> Path:
    buf = io.StringIO()
    for line in preamble:
        buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    path.write_text(buf.getvalue())
    return path


def _ms(x: float) -> str:
    return f"{x:.4f}"


def emit_bench_report(rows: Sequence[BenchRow], out_dir: str | Path) -> list[Path]:
    """bench.csv (all rows), latency_vs_batch.csv (history 20) and latency_vs_history_<model>.csv."""
    if not rows:
        raise ValueError("no benchmark rows to emit")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    machines = sorted({r.machine for r in rows})
    header = [f.name for f in BenchRow.__dataclass_fields__.values() if f.name != "machine"]
    table = [[r.model, r.batch_size, r.history_length, _ms(r.mean_ms), _ms(r.p50_ms), _ms(r.p95_ms),
              _ms(r.std_ms)] for r in rows]
    paths = [_write(out / "bench.csv", header, table, [f"machine: {m}" for m in machines])]

    series_hl = SERIES_HISTORY if any(r.history_length == SERIES_HISTORY for r in rows) \
        else max(r.history_length for r in rows)
    by_batch = [[r.model, r.batch_size, _ms(r.mean_ms)] for r in rows if r.history_length == series_hl]
    paths.append(_write(out / "latency_vs_batch.csv", ["model", "batch_size", "mean_ms"], by_batch,
                        [f"history_length: {series_hl}"]))
    for model in dict.fromkeys(r.model for r in rows):
        series = sorted((r for r in rows if r.model == model), key=lambda r: (r.batch_size, r.history_length))
        paths.append(_write(out / f"latency_vs_history_{model}.csv", ["batch_size", "history_length", "mean_ms"],
                            [[r.batch_size, r.history_length, _ms(r.mean_ms)] for r in series]))
    return paths


def rows_to_dicts(rows: Sequence[BenchRow]) -> list[dict]:
    return [asdict(r) for r in rows]
