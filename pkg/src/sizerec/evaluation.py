"""Scenario evaluation, the Add2Bag and return_reason ablations, and coverage accounting."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

from .bundle import ModelBundle
from .catalog import Dataset, EventType, Instance, Scenario, filter_scenario
from .errors import EmptyPopulation, InsufficientAblationUsers
from .models import SSP_TYPES
from .training import TrainConfig, evaluate_topk, train, with_history

KS = (1, 2, 3)
ORDERS_ONLY = (EventType.ORDER,)
ORDERS_AND_BAG = (EventType.ORDER, EventType.ADD2BAG)
MODEL_LABELS = {"pmcv": "PMCV", "sfnet": "SFNet", "ssp-lstm": "SSP-LSTM", "ssp-attn": "SSP-Attention"}


def _fmt(x) -> str:
    return f"{x:.6f}" if isinstance(x, float) else str(x)


def _csv(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def _type_name(event) -> str:
    t = event.event_type
    return t.value if isinstance(t, Enum) else str(t)


def _covered(users: dict[str, Sequence], sources: Iterable, pop: list[str]) -> int:
    admitted = {s.value if isinstance(s, Enum) else str(s) for s in sources}
    return sum(1 for uid in pop if any(_type_name(e) in admitted for e in users.get(uid, ())))


def compute_coverage(users: dict[str, Sequence], sources: Iterable, population: Iterable[str] | None = None) -> float:
    """Fraction of `population` users with at least one event whose type is in `sources`."""
    pop = list(users) if population is None else list(population)
    if not pop:
        raise EmptyPopulation("coverage over an empty population")
    return _covered(users, sources, pop) / len(pop)


# --------------------------------------------------------------------------
# scenarios
# --------------------------------------------------------------------------

@dataclass
class ScenarioReport:
    rows: list[dict] = field(default_factory=list)

    def cell(self, scenario: str, model: str) -> dict:
        for row in self.rows:
            if row["scenario"] == scenario and row["model"] == model:
                return row
        raise KeyError((scenario, model))

    def to_csv(self) -> str:
        """Long format: one line per (scenario, model)."""
        header = ["scenario", "model", "top1_acc", "top2_acc", "top3_acc", "n_instances", "n_users",
                  "user_coverage"]
        return _csv(header, ([r[h] for h in header] for r in self.rows))

    def to_table(self) -> str:
        """Model rows x scenario column groups (Table 1 layout)."""
        scenarios = list(dict.fromkeys(r["scenario"] for r in self.rows))
        models = list(dict.fromkeys(r["model"] for r in self.rows))
        header = ["model"] + [f"{s}_{m}" for s in scenarios for m in ("top1_acc", "top2_acc", "top3_acc")]
        rows = []
        for m in models:
            row = [m]
            for s in scenarios:
                c = self.cell(s, m)
                row += [c["top1_acc"], c["top2_acc"], c["top3_acc"]]
            rows.append(row)
        return _csv(header, rows)

    def write(self, out_dir: str | Path, stem: str = "scenarios") -> list[Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        long_path, table_path = out_dir / f"{stem}.csv", out_dir / f"{stem}_table.csv"
        long_path.write_text(self.to_csv())
        table_path.write_text(self.to_table())
        return [long_path, table_path]


def run_scenarios(bundles: dict[str, ModelBundle], test: Sequence[Instance], full: Dataset,
                  train_instances: Sequence[Instance], scenarios=tuple(Scenario)) -> ScenarioReport:
    report = ScenarioReport()
    general_users = len({inst.user_id for inst in test})
    for scenario in scenarios:
        scenario = Scenario(scenario)
        subset = filter_scenario(test, full, scenario, train_instances)
        n_users = len({inst.user_id for inst in subset})
        for name, bundle in bundles.items():
            acc = evaluate_topk(bundle, subset, KS) if subset else {k: float("nan") for k in KS}
            report.rows.append({
                "scenario": scenario.value,
                "model": MODEL_LABELS.get(name, name),
                "top1_acc": acc[1], "top2_acc": acc[2], "top3_acc": acc[3],
                "n_instances": len(subset),
                "n_users": n_users,
                "user_coverage": n_users / general_users if general_users else float("nan"),
            })
    return report


# --------------------------------------------------------------------------
# ablations
# --------------------------------------------------------------------------

@dataclass
class AblationReport:
    axis: str
    rows: list[dict] = field(default_factory=list)
    coverage: dict = field(default_factory=dict)
    train_reports: dict = field(default_factory=dict)

    def to_csv(self) -> str:
        if not self.rows:
            return ""
        header = list(self.rows[0])
        return _csv(header, ([r[h] for h in header] for r in self.rows))

    def coverage_csv(self) -> str:
        return _csv(["metric", "value"], sorted(self.coverage.items()))

    def write(self, out_dir: str | Path) -> list[Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        stem = self.axis.replace("_", "-")
        paths = [out_dir / f"ablation_{stem}.csv"]
        paths[0].write_text(self.to_csv())
        if self.coverage:
            paths.append(out_dir / f"ablation_{stem}_coverage.csv")
            paths[1].write_text(self.coverage_csv())
        return paths


def _config(model_type, train_configs, **overrides) -> TrainConfig:
    base = dict((train_configs or {}).get(model_type, {}))
    base.update(overrides)
    return TrainConfig.for_model(model_type, **base)


def _acc_cols(prefix, acc):
    return {f"{prefix}top{k}_acc": acc[k] for k in KS}


def add2bag_eval_subset(test: Sequence[Instance], full: Dataset) -> list[Instance]:
    """Test instances of users with both Add2Bag and Order events in the test period, and an Order in history."""
    if not test:
        return []
    lo = min(inst.timestamp for inst in test)
    hi = max(inst.timestamp for inst in test)
    both = set()
    for uid, events in full.users.items():
        kinds = {e.event_type for e in events if lo <= e.timestamp <= hi}
        if EventType.ORDER in kinds and EventType.ADD2BAG in kinds:
            both.add(uid)
    return [inst for inst in with_history(test, ORDERS_ONLY) if inst.user_id in both]


def add2bag_coverage(full: Dataset) -> dict:
    population = list(full.users)
    if not population:
        raise EmptyPopulation("coverage over an empty population")
    # gain from integer counts, so it is exactly the census ratio
    n_orders = _covered(full.users, ORDERS_ONLY, population)
    n_both = _covered(full.users, ORDERS_AND_BAG, population)
    census = full.census
    out = {
        "coverage_orders": n_orders / len(population),
        "coverage_orders_and_add2bag": n_both / len(population),
        "coverage_gain": (n_both - n_orders) / n_orders if n_orders else float("nan"),
    }
    if census.get("n_users_with_orders"):
        out["census_gain"] = census["n_users_add2bag_only"] / census["n_users_with_orders"]
    return out


def run_add2bag_ablation(full: Dataset, train_instances: Sequence[Instance], val: Sequence[Instance],
                         test: Sequence[Instance], model_types=SSP_TYPES, train_configs: dict | None = None,
                         min_instances: int = 1) -> AblationReport:
    """Two training compositions x two inference compositions per SSP model."""
    subset = add2bag_eval_subset(test, full)
    if len(subset) < min_instances:
        raise InsufficientAblationUsers(f"only {len(subset)} instances from users with both event types")
    report = AblationReport("add2bag", coverage=add2bag_coverage(full))
    report.coverage["eval_instances"] = len(subset)
    report.coverage["eval_users"] = len({inst.user_id for inst in subset})
    for model_type in model_types:
        variants = {}
        for label, types in (("orders_only", ORDERS_ONLY), ("orders_and_add2bag", ORDERS_AND_BAG)):
            cfg = _config(model_type, train_configs, history_types=[t.value for t in types])
            bundle, rep = train(model_type, with_history(train_instances, types), with_history(val, types),
                                full.scales, cfg, num_positions=full.num_positions)
            variants[label] = bundle
            report.train_reports[f"{model_type}/{label}"] = rep
        for at_inference, types in (("yes", ORDERS_AND_BAG), ("no", ORDERS_ONLY)):
            row = {"model": MODEL_LABELS[model_type], "add2bag_in_history": at_inference}
            for label, bundle in variants.items():
                encoder = bundle.encoder.with_history_types(types)
                row.update(_acc_cols(f"trained_{label}_", evaluate_topk(bundle, subset, KS, encoder=encoder)))
            report.rows.append(row)
    return report


def run_return_reason_ablation(full: Dataset, train_instances: Sequence[Instance], val: Sequence[Instance],
                               test: Sequence[Instance], model_types=SSP_TYPES,
                               train_configs: dict | None = None) -> AblationReport:
    """Order-only histories, trained and evaluated with and without the return_reason field."""
    train_o = with_history(train_instances, ORDERS_ONLY)
    val_o = with_history(val, ORDERS_ONLY)
    test_o = with_history(test, ORDERS_ONLY)
    report = AblationReport("return_reason")
    report.coverage["eval_instances"] = len(test_o)
    for model_type in model_types:
        for label, masked in (("yes", False), ("no", True)):
            cfg = _config(model_type, train_configs, history_types=["Order"], mask_return_reason=masked)
            bundle, rep = train(model_type, train_o, val_o, full.scales, cfg, num_positions=full.num_positions)
            report.train_reports[f"{model_type}/{label}"] = rep
            row = {"model": MODEL_LABELS[model_type], "return_reason": label}
            row.update(_acc_cols("", evaluate_topk(bundle, test_o, KS)))
            report.rows.append(row)
    return report
