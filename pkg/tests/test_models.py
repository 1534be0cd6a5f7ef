import numpy as np
import pytest
from conftest import bag, make_instance, order
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import pmcv_rank1_oracle

from sizerec.bundle import load_bundle, save_bundle
from sizerec.catalog import Product, ReturnReason, build_vocabulary
from sizerec.encoding import REASON_COL, Encoder
from sizerec.errors import BundleCorrupt, EmptyHistory, EmptyTrainingSet, InvalidConfig, ModelLoadError
from sizerec.models import (
    HistoryCache,
    PMCVModel,
    SSPAttentionModel,
    SSPConfig,
    build_model,
    pmcv_fit,
    pmcv_predict,
    rank_positions,
)

SMALL_SSP = dict(field_dim=4, lstm_hidden=5, product_hidden=6, mix_hidden=7, heads=2, ffn_mult=2, out_hidden=8)
SMALL_SFNET = dict(user_dim=4, field_dim=3, product_dim=5, joint_hidden=[8, 6])
SSP = ("ssp-lstm", "ssp-attn")


@pytest.fixture
def toy(toy_scales):
    train = [
        make_instance("u1", [order(1, 2), bag(2, 3, brand="BR1")], 5, 2),
        make_instance("u2", [order(3, 1, scale="S1", reason=ReturnReason.TOO_SMALL)], 6, 2, scale="S1"),
        make_instance("u3", [order(1, 4), order(2, 4, cat="CAT1"), bag(4, 5)], 9, 4, brand="BR1", pid="P1"),
    ]
    vocab = build_vocabulary(train)
    return train, Encoder(vocab, toy_scales, 6)


def small(model_type, vocab, seed=0):
    hp = SMALL_SFNET if model_type == "sfnet" else SMALL_SSP
    return build_model(model_type, vocab, 6, hp, seed=seed)


# ---------------------------------------------------------------- PMCV

def test_pmcv_counts_and_tiebreak():
    train = [make_instance("u", [], 1, 1), make_instance("u", [], 2, 3), make_instance("u", [], 3, 3)]
    p = train[0].product
    assert pmcv_predict(pmcv_fit(train), "u", p, 6)[0] == 3
    tie = pmcv_fit(train[:2])
    assert tie.predict("u", p, 6)[0] == 1
    assert tie.predict("u", p, 6)[:2] == [1, 3]


def test_pmcv_falls_back_through_hierarchy():
    train = [make_instance("u", [], 1, 1, brand="A"), make_instance("v", [], 1, 4, brand="B"),
             make_instance("w", [], 1, 4, brand="B")]
    model = pmcv_fit(train)
    # user u, unseen brand: the user's own mode wins over the brand table
    assert model.predict("u", Product("p", "B", "CAT0", "S0"), 6)[0] == 1
    # unseen user, known brand
    assert model.predict("new", Product("p", "B", "CAT9", "S0"), 6)[0] == 4
    # nothing matches at all: global mode
    assert model.predict("new", Product("p", "Z", "CAT9", "S0"), 6)[0] == 4


def test_pmcv_respects_feasibility():
    model = pmcv_fit([make_instance("u", [], 1, 5), make_instance("u", [], 2, 5), make_instance("u", [], 3, 1)])
    ranked = model.predict("u", Product("p", "BR0", "CAT0", "S1"), 4)
    assert ranked[0] == 1
    assert sorted(ranked) == [0, 1, 2, 3]


def test_pmcv_empty():
    with pytest.raises(EmptyTrainingSet):
        pmcv_fit([])


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.sampled_from("abc"), st.sampled_from("XY"), st.sampled_from("KL"), st.integers(0, 5)),
                min_size=1, max_size=30),
       st.sampled_from("abcd"), st.sampled_from("XYZ"), st.sampled_from("KLM"), st.sampled_from([4, 6]))
def test_pmcv_matches_bruteforce_oracle(rows, user, brand, cat, n_feasible):
    train = [make_instance(u, [], 1, lab, brand=b, cat=c) for u, b, c, lab in rows]
    product = Product("p", brand, cat, "S0")
    assert pmcv_fit(train).predict(user, product, n_feasible)[0] == pmcv_rank1_oracle(train, user, product, n_feasible)


def test_pmcv_dict_roundtrip(toy):
    train, enc = toy
    model = pmcv_fit(train)
    back = PMCVModel.from_dict(model.to_dict())
    batch = enc.encode(train)
    assert np.array_equal(model.rank(batch), back.rank(batch))
    probs = back.predict_proba(batch)
    assert np.allclose(probs.sum(1), 1) and np.all(probs[~batch.feasible] == 0)


# ---------------------------------------------------------------- shared neural behaviour

@pytest.mark.parametrize("mt", ["sfnet", *SSP])
def test_outputs_are_masked_distributions(toy, mt):
    train, enc = toy
    batch = enc.encode(train)
    probs = small(mt, enc.vocab).predict_proba(batch)
    assert probs.shape == (3, 6)
    assert np.all(probs[~batch.feasible] == 0)
    assert np.allclose(probs.sum(1), 1, atol=1e-12)
    ranks = small(mt, enc.vocab).rank(batch)
    assert set(ranks[1, 4:]) == {4, 5}  # S1 has 4 sizes: infeasible positions rank last


@pytest.mark.parametrize("mt", ["sfnet", *SSP])
def test_same_seed_same_weights(toy, mt):
    _, enc = toy
    a, b = small(mt, enc.vocab, seed=3).state_dict(), small(mt, enc.vocab, seed=3).state_dict()
    assert all(np.array_equal(a[k], b[k]) for k in a)


def test_rank_positions_ties_and_infeasible():
    probs = np.array([[0.2, 0.4, 0.4, 0.0, 0.9]])
    feas = np.array([[True, True, True, True, False]])
    assert rank_positions(probs, feas).tolist() == [[1, 2, 0, 3, 4]]


def test_unknown_model_and_hyperparameter(toy):
    _, enc = toy
    with pytest.raises(InvalidConfig):
        build_model("xgboost", enc.vocab, 6)
    with pytest.raises(InvalidConfig):
        build_model("ssp-lstm", enc.vocab, 6, {"bogus": 1})


def test_default_ssp_dimensions(toy):
    _, enc = toy
    cfg = SSPConfig()
    assert cfg.event_dim == 192
    m = SSPAttentionModel({n: enc.vocab.cardinality(n) for n in enc.vocab.fields()}, 6)
    assert m.cross_block.attn.q.weight.shape == (192, 192)


# ---------------------------------------------------------------- SFNet

def test_sfnet_unknown_users_share_prediction(toy):
    train, enc = toy
    model = small("sfnet", enc.vocab)
    prod = train[0].product
    batch = enc.encode([make_instance("ghost-1", [order(1, 0)], 3, 0, pid=prod.product_id),
                        make_instance("ghost-2", [order(2, 5, brand="BR1")], 8, 0, pid=prod.product_id)])
    assert batch.user_ids.tolist() == [1, 1]
    probs = model.predict_proba(batch)
    assert np.array_equal(probs[0], probs[1])


# ---------------------------------------------------------------- SSP

@pytest.mark.parametrize("mt", SSP)
def test_ssp_padding_neutral(toy, mt):
    train, enc = toy
    model = small(mt, enc.vocab)
    alone = model.predict_proba(enc.encode(train[1:2]))
    padded_batch = enc.encode(train)
    assert padded_batch.hist_mask[1].sum() < padded_batch.hist_mask.shape[1]
    together = model.predict_proba(padded_batch)
    assert np.allclose(alone[0], together[1], atol=1e-12, rtol=0)


@pytest.mark.parametrize("mt", SSP)
def test_ssp_empty_history(toy, mt):
    _, enc = toy
    with pytest.raises(EmptyHistory):
        small(mt, enc.vocab).predict_proba(enc.encode([make_instance("u1", [], 3, 0)]))


def test_lstm_is_order_sensitive(toy):
    train, enc = toy
    model = small("ssp-lstm", enc.vocab)
    batch = enc.encode(train[2:3])
    flipped = enc.encode(train[2:3])
    flipped.hist_ids = flipped.hist_ids[:, ::-1].copy()
    assert not np.allclose(model.predict_proba(batch), model.predict_proba(flipped))


def test_attention_is_permutation_invariant(toy):
    train, enc = toy
    model = small("ssp-attn", enc.vocab)
    batch = enc.encode(train[2:3])
    perm = enc.encode(train[2:3])
    idx = [2, 0, 1]
    perm.hist_ids, perm.day_offsets = perm.hist_ids[:, idx].copy(), perm.day_offsets[:, idx].copy()
    assert np.allclose(model.predict_proba(batch), model.predict_proba(perm), atol=1e-12, rtol=0)


def test_attention_uses_time_offsets(toy):
    train, enc = toy
    model = small("ssp-attn", enc.vocab)
    batch = enc.encode(train[2:3])
    later = enc.encode(train[2:3])
    later.day_offsets = later.day_offsets + 30
    assert not np.allclose(model.predict_proba(batch), model.predict_proba(later))


@pytest.mark.parametrize("mt", SSP)
def test_cached_history_is_bitwise_identical(toy, mt):
    train, enc = toy
    model = small(mt, enc.vocab)
    hist = train[2].history
    products = [Product(f"P{i}", b, c, s) for i, (b, c, s) in
                enumerate([("BR0", "CAT0", "S0"), ("BR1", "CAT1", "S1"), ("BR0", "CAT1", "S0"),
                           ("new", "CAT0", "S1"), ("BR1", "new", "S0")])]
    cache = model.encode_history(enc.encode_queries([(hist, products[0], 10)]))
    cache = HistoryCache.from_bytes(cache.to_bytes())
    for p in products:
        batch = enc.encode_queries([(hist, p, 10)])
        assert np.array_equal(model.predict_from_cache(cache, batch), model.predict_proba(batch))


@pytest.mark.parametrize("mt", SSP)
def test_return_reason_is_an_input(toy, mt):
    train, enc = toy
    model = small(mt, enc.vocab)
    inst = train[1]
    flipped = make_instance("u2", [order(3, 1, scale="S1", reason=ReturnReason.TOO_LARGE)], 6, 2, scale="S1")
    assert not np.allclose(model.predict_proba(enc.encode([inst])), model.predict_proba(enc.encode([flipped])))
    masked = Encoder(enc.vocab, enc.scales, 6, mask_return_reason=True)
    a, b = masked.encode([inst]), masked.encode([flipped])
    assert np.all(a.hist_ids[..., REASON_COL] == 0)
    assert np.array_equal(model.predict_proba(a), model.predict_proba(b))


# ---------------------------------------------------------------- bundles

@pytest.mark.parametrize("mt", ["pmcv", "sfnet", *SSP])
def test_bundle_roundtrip(tmp_path, smoke_bundles, smoke_splits, mt):
    bundle = smoke_bundles[mt]
    save_bundle(bundle, tmp_path / mt)
    back = load_bundle(tmp_path / mt)
    batch = back.encode(smoke_splits.test[:64])
    assert back.model_type == mt and back.version == bundle.version
    assert np.array_equal(back.predict_proba(batch), bundle.predict_proba(bundle.encode(smoke_splits.test[:64])))


def test_bundle_errors(tmp_path, smoke_bundles):
    with pytest.raises(ModelLoadError):
        load_bundle(tmp_path / "missing")
    path = save_bundle(smoke_bundles["ssp-lstm"], tmp_path / "b")
    (path / "params.bin").write_bytes(b"garbage")
    with pytest.raises(BundleCorrupt):
        load_bundle(path)
    (path / "bundle.json").write_text("{not json")
    with pytest.raises(BundleCorrupt):
        load_bundle(path)
