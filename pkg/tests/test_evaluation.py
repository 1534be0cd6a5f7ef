import dataclasses
from types import SimpleNamespace

import numpy as np
import pytest
from conftest import bag, order
from hypothesis import given
from hypothesis import strategies as st

from sizerec.catalog import EventType, Instance, ReturnReason, Scenario, UserHistory
from sizerec.encoding import Encoder
from sizerec.errors import EmptyPopulation, InsufficientAblationUsers
from sizerec.evaluation import (
    ORDERS_AND_BAG,
    ORDERS_ONLY,
    add2bag_coverage,
    add2bag_eval_subset,
    compute_coverage,
    run_add2bag_ablation,
    run_return_reason_ablation,
    run_scenarios,
)
from sizerec.training import evaluate_topk

TINY_SSP = {"ssp-lstm": {"batch_size": 64, "epochs": 1,
                         "hyperparameters": dict(field_dim=4, lstm_hidden=8, product_hidden=8, mix_hidden=8)},
            "ssp-attn": {"batch_size": 64, "epochs": 1,
                         "hyperparameters": dict(field_dim=4, heads=2, ffn_mult=2, out_hidden=8)}}


def wish(day):
    return SimpleNamespace(event_type="Add2Wishlist", timestamp=day)


USERS = {"o": [order(1, 2)], "b": [bag(1, 2)], "ob": [order(1, 2), bag(2, 2)], "w": [wish(1)]}


def test_coverage_hand_example():
    assert compute_coverage(USERS, ORDERS_ONLY) == 0.5
    assert compute_coverage(USERS, ORDERS_AND_BAG) == 0.75
    assert compute_coverage(USERS, ["Add2Wishlist"]) == 0.25
    assert compute_coverage(USERS, ORDERS_ONLY, population=["o", "missing"]) == 0.5


def test_coverage_empty_population():
    with pytest.raises(EmptyPopulation):
        compute_coverage({}, ORDERS_ONLY)


@given(st.sets(st.sampled_from(["Order", "Add2Bag", "Add2Wishlist"])),
       st.sets(st.sampled_from(["Order", "Add2Bag", "Add2Wishlist"])))
def test_coverage_monotone_in_sources(a, b):
    assert compute_coverage(USERS, a) <= compute_coverage(USERS, a | b)


def test_coverage_gain_matches_census(smoke_data):
    cov = add2bag_coverage(smoke_data)
    assert cov["coverage_orders"] < cov["coverage_orders_and_add2bag"] <= 1.0
    assert cov["coverage_gain"] == cov["census_gain"]


def test_add2bag_subset_definition(smoke_data, smoke_splits):
    subset = add2bag_eval_subset(smoke_splits.test, smoke_data)
    assert subset
    lo = min(i.timestamp for i in smoke_splits.test)
    hi = max(i.timestamp for i in smoke_splits.test)
    for inst in subset:
        kinds = {e.event_type for e in smoke_data.users[inst.user_id] if lo <= e.timestamp <= hi}
        assert kinds >= {EventType.ORDER, EventType.ADD2BAG}
        assert any(e.event_type is EventType.ORDER for e in inst.history.events)
    assert add2bag_eval_subset([], smoke_data) == []


@pytest.fixture(scope="module")
def scenario_report(smoke_bundles, smoke_splits, smoke_data):
    return run_scenarios(smoke_bundles, smoke_splits.test, smoke_data, smoke_splits.train)


def test_scenario_report_shape(scenario_report, smoke_splits):
    assert len(scenario_report.rows) == len(Scenario) * 4
    general = scenario_report.cell("General", "SSP-LSTM")
    assert general["user_coverage"] == 1.0
    assert general["n_instances"] == len(smoke_splits.test)
    for s in Scenario:
        row = scenario_report.cell(s.value, "PMCV")
        assert row["n_users"] <= general["n_users"]
        if row["n_instances"]:
            assert row["top1_acc"] <= row["top2_acc"] <= row["top3_acc"]
    header = scenario_report.to_table().splitlines()[0].split(",")
    assert header[0] == "model" and "VIP_top3_acc" in header and len(header) == 1 + 3 * len(Scenario)


def test_scenario_report_deterministic(tmp_path, scenario_report, smoke_bundles, smoke_splits, smoke_data):
    again = run_scenarios(smoke_bundles, smoke_splits.test, smoke_data, smoke_splits.train)
    assert again.to_csv() == scenario_report.to_csv()
    a = [p.read_bytes() for p in scenario_report.write(tmp_path / "a")]
    b = [p.read_bytes() for p in again.write(tmp_path / "b")]
    assert a == b


def test_training_users_scenario_is_intersection(scenario_report, smoke_splits):
    seen = {i.user_id for i in smoke_splits.train}
    expected = [i for i in smoke_splits.test if i.user_id in seen]
    assert scenario_report.cell("TrainingUsers", "SFNet")["n_instances"] == len(expected)


def _shuffle_reasons(instances, seed):
    rng = np.random.default_rng(seed)
    reasons = [ReturnReason.NOT_RETURNED, ReturnReason.TOO_LARGE, ReturnReason.TOO_SMALL, ReturnReason.OTHER]
    out = []
    for inst in instances:
        events = tuple(dataclasses.replace(e, return_reason=reasons[rng.integers(4)])
                       if e.event_type is EventType.ORDER else e for e in inst.history.events)
        out.append(Instance(UserHistory(inst.user_id, events), inst.product, inst.label, inst.timestamp))
    return out


@pytest.mark.parametrize("mt", ["ssp-lstm", "ssp-attn"])
def test_masked_variant_ignores_reasons(smoke_bundles, smoke_splits, mt):
    bundle = smoke_bundles[mt]
    enc = bundle.encoder
    masked = Encoder(enc.vocab, enc.scales, enc.num_positions, enc.t_max, enc.history_types, True)
    test = smoke_splits.test[:150]
    shuffled = _shuffle_reasons(test, 0)
    a = bundle.model.predict_proba(masked.encode(test))
    b = bundle.model.predict_proba(masked.encode(shuffled))
    assert np.array_equal(a, b)
    # the unmasked encoder does see the difference
    assert not np.array_equal(bundle.model.predict_proba(enc.encode(test)),
                              bundle.model.predict_proba(enc.encode(shuffled)))


def test_return_reason_ablation_layout(smoke_data, smoke_splits):
    rep = run_return_reason_ablation(smoke_data, smoke_splits.train, smoke_splits.val, smoke_splits.test,
                                     model_types=("ssp-lstm",), train_configs=TINY_SSP)
    assert [(r["model"], r["return_reason"]) for r in rep.rows] == [("SSP-LSTM", "yes"), ("SSP-LSTM", "no")]
    assert rep.to_csv().splitlines()[0] == "model,return_reason,top1_acc,top2_acc,top3_acc"
    assert rep.train_reports["ssp-lstm/no"].n_train == rep.train_reports["ssp-lstm/yes"].n_train


def test_add2bag_ablation_layout(tmp_path, smoke_data, smoke_splits):
    rep = run_add2bag_ablation(smoke_data, smoke_splits.train, smoke_splits.val, smoke_splits.test,
                               model_types=("ssp-attn",), train_configs=TINY_SSP)
    assert [r["add2bag_in_history"] for r in rep.rows] == ["yes", "no"]
    assert {"trained_orders_only_top1_acc", "trained_orders_and_add2bag_top3_acc"} <= set(rep.rows[0])
    assert rep.train_reports["ssp-attn/orders_only"].n_train < rep.train_reports["ssp-attn/orders_and_add2bag"].n_train
    names = [p.name for p in rep.write(tmp_path)]
    assert names == ["ablation_add2bag.csv", "ablation_add2bag_coverage.csv"]
    with pytest.raises(InsufficientAblationUsers):
        run_add2bag_ablation(smoke_data, smoke_splits.train, smoke_splits.val, smoke_splits.test,
                             model_types=("ssp-attn",), train_configs=TINY_SSP, min_instances=10 ** 6)


def test_history_type_filter_changes_inputs(smoke_bundles, smoke_data, smoke_splits):
    bundle = smoke_bundles["ssp-lstm"]
    subset = add2bag_eval_subset(smoke_splits.test, smoke_data)
    with_bag = evaluate_topk(bundle, subset, (1,))
    orders = evaluate_topk(bundle, subset, (1,), encoder=bundle.encoder.with_history_types(ORDERS_ONLY))
    assert 0 <= with_bag[1] <= 1 and 0 <= orders[1] <= 1
    b1 = bundle.encoder.encode(subset)
    b2 = bundle.encoder.with_history_types(ORDERS_ONLY).encode(subset)
    assert b2.hist_mask.sum() < b1.hist_mask.sum()
