import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from homeonet import homeostat as H
from homeonet import nn
from homeonet.oracle import oracle_check, oracle_decide

SMALL = (784, 12, 10, 10)


def make_state(controller="homeostatic", capacity=8, seed=0, **kw):
    return H.HomeostatState(controller=controller, store=H.ReplayStore(capacity),
                            rng=np.random.default_rng(seed), **kw)


def sample(rng, label=None):
    img = rng.random(784) * (rng.random(784) < 0.2)
    return img, int(rng.integers(0, 10)) if label is None else label


def test_effect_map():
    assert H.effect_of(3) == -1
    assert H.effect_of(7) == 1
    assert H.effect_of(4) == -1 and H.effect_of(5) == 1
    assert list(H.default_effect_map()) == [-1] * 5 + [1] * 5


def test_apply_effect_up_one_step():
    for rule in H.STEP_RULES:
        s = make_state(step_rule=rule)
        assert H.apply_effect(0.005, 1, s) == pytest.approx(0.006, abs=1e-15)


def test_apply_effect_multiplicative_asymmetry():
    s = make_state(step_rule="multiplicative")
    lr = H.apply_effect(H.apply_effect(0.01, 1, s), -1, s)
    assert lr == pytest.approx(0.0096, rel=1e-14)


def test_apply_effect_additive_symmetric():
    s = make_state(step_rule="additive")
    assert H.apply_effect(H.apply_effect(0.01, 1, s), -1, s) == pytest.approx(0.01, rel=1e-14)
    assert H.apply_effect(0.005, -1, s) == pytest.approx(0.004, rel=1e-14)


def test_apply_effect_clamps():
    for rule in H.STEP_RULES:
        s = make_state(step_rule=rule)
        assert H.apply_effect(s.lr_min, -1, s) == s.lr_min
        assert H.apply_effect(s.lr_max, 1, s) == s.lr_max


def test_state_validation():
    with pytest.raises(ValueError):
        make_state(controller="adam")
    with pytest.raises(ValueError):
        make_state(lr_init=1.0)
    with pytest.raises(ValueError):
        make_state(delta=0.0)
    assert make_state().lr == 0.005


def test_store_ring_semantics(rng):
    store = H.ReplayStore(3)
    assert len(store) == 0
    items = [sample(rng, k) for k in range(4)]
    store.push(*items[0])
    assert len(store) == 1
    for img, lab in items[1:]:
        store.push(img, lab)
    assert len(store) == 3
    kept = store.items()
    assert [lab for _, lab in kept] == [1, 2, 3]
    assert np.array_equal(kept[0][0], items[1][0])


def test_store_keeps_label_as_served(rng):
    store = H.ReplayStore(4)
    img, _ = sample(rng)
    store.push(img, 0)
    # a later concept change does not touch what was stored
    store.push(img, 9)
    assert [lab for _, lab in store.items()] == [0, 9]


def test_store_copy_independent(rng):
    store = H.ReplayStore(2)
    store.push(*sample(rng, 1))
    dup = store.copy()
    dup.push(*sample(rng, 2))
    assert len(store) == 1 and len(dup) == 2


def test_empty_store_rejects(rng):
    net = nn.init_mlp(SMALL, rng)
    d = H.counterfactual_decide(net, make_state(), 7)
    assert d.choice == H.REJECT
    assert math.isnan(d.loss_ingest) and math.isnan(d.loss_reject)
    assert d.expected_direction == 1


def test_equal_branch_lrs_tie_rejects(rng):
    net = nn.init_mlp(SMALL, rng)
    state = make_state()
    state.lr = state.lr_max
    for _ in range(5):
        state.store.push(*sample(rng))
    d = H.counterfactual_decide(net, state, 8)
    assert d.lr_ingest == d.lr_reject == state.lr_max
    assert abs(d.loss_ingest - d.loss_reject) <= 1e-12
    assert d.choice == H.REJECT


def test_decision_matches_oracle_small_batch():
    report = oracle_check(200, seed=11)
    assert report.mismatches == 0
    assert 0 < report.n_ingest < 200


def test_oracle_on_full_size_net(rng):
    net = nn.init_mlp(nn.DEFAULT_DIMS, rng)
    state = make_state(capacity=100)
    for _ in range(100):
        state.store.push(*sample(rng))
    for pred in (2, 6):
        got = H.counterfactual_decide(net, state, pred)
        want, la, lb = oracle_decide(net, state, pred)
        assert got.choice == want
        assert got.loss_ingest == pytest.approx(la, rel=1e-10)
        assert got.loss_reject == pytest.approx(lb, rel=1e-10)


def test_decide_leaves_live_net_untouched(rng):
    net = nn.init_mlp(SMALL, rng)
    state = make_state()
    for _ in range(8):
        state.store.push(*sample(rng))
    before = net.params.copy()
    H.counterfactual_decide(net, state, 5)
    assert np.array_equal(net.params, before)


def test_multiple_passes_config(rng):
    net = nn.init_mlp(SMALL, rng)
    state = make_state(store_passes=3)
    for _ in range(6):
        state.store.push(*sample(rng))
    got = H.counterfactual_decide(net, state, 1)
    want, la, _ = oracle_decide(net, state, 1)
    assert got.choice == want and got.loss_ingest == pytest.approx(la, rel=1e-10)


def forced(choice):
    def decide(net, state, predicted):
        lr_a = H.apply_effect(state.lr, H.effect_of(predicted, state.effects), state)
        return H.Decision(choice, predicted, H.effect_of(predicted, state.effects),
                          lr_a, state.lr, 0.0, 1.0)
    return decide


def test_ingest_correct_excitatory_raises_lr(rng, monkeypatch):
    net = nn.init_mlp(SMALL, rng)
    net.biases[-1][7] = 50.0  # always predicts 7
    monkeypatch.setattr(H, "counterfactual_decide", forced(H.INGEST))
    state = make_state()
    log = H.homeostat_step(net, state, sample(rng, 7))
    assert log.correct and log.decision.ingested
    assert log.lr_after == pytest.approx(0.006, abs=1e-15)


def test_misprediction_applies_true_effect(rng, monkeypatch):
    net = nn.init_mlp(SMALL, rng)
    net.biases[-1][8] = 50.0  # predicts excitatory 8
    monkeypatch.setattr(H, "counterfactual_decide", forced(H.INGEST))
    state = make_state()
    log = H.homeostat_step(net, state, sample(rng, 2))
    assert log.decision.expected_direction == 1
    assert log.decision.realized_direction == -1
    assert log.lr_after == pytest.approx(0.004, abs=1e-15)


def test_predicted_label_realization_switch(rng, monkeypatch):
    net = nn.init_mlp(SMALL, rng)
    net.biases[-1][8] = 50.0
    monkeypatch.setattr(H, "counterfactual_decide", forced(H.INGEST))
    state = make_state(realized_effect="predicted_label")
    log = H.homeostat_step(net, state, sample(rng, 2))
    assert log.lr_after == pytest.approx(0.006, abs=1e-15)


def test_reject_keeps_lr_and_trains(rng, monkeypatch):
    net = nn.init_mlp(SMALL, rng)
    monkeypatch.setattr(H, "counterfactual_decide", forced(H.REJECT))
    state = make_state()
    before = net.params.copy()
    log = H.homeostat_step(net, state, sample(rng, 6))
    assert log.lr_after == log.lr_before == 0.005
    assert not np.array_equal(net.params, before)
    assert len(state.store) == 1


def test_step_order_sgd_after_decision(rng):
    """The SGD step uses the post-decision learning rate."""
    net = nn.init_mlp(SMALL, rng)
    state = make_state()
    for _ in range(8):
        state.store.push(*sample(rng))
    img, lab = sample(rng)
    ref = net.copy()
    log = H.homeostat_step(net, state, (img, lab))
    nn.train_sample(ref, img, lab, log.lr_after)
    assert np.array_equal(net.params, ref.params)
    assert state.store.items()[-1][1] == lab


@settings(max_examples=25)
@given(st.integers(0, 2**32 - 1), st.sampled_from(H.STEP_RULES))
def test_step_log_invariants(seed, rule):
    rng = np.random.default_rng(seed)
    net = nn.init_mlp(SMALL, rng)
    state = make_state(capacity=5, seed=seed, step_rule=rule,
                       lr=float(10 ** rng.uniform(-5, np.log10(0.5))))
    learner = H.Learner(net, state)
    for g in range(30):
        log = learner.step(*sample(rng), g)
        d = log.decision
        assert state.lr_min <= log.lr_after <= state.lr_max
        assert d.expected_direction == H.effect_of(log.predicted_label)
        assert d.realized_direction == H.effect_of(log.true_label)
        if d.expected_direction != d.realized_direction:
            assert log.predicted_label != log.true_label
        if d.ingested:
            assert log.lr_after == H.apply_effect(log.lr_before, d.realized_direction, state)
        else:
            assert log.lr_after == log.lr_before


def run_random(seed, steps, **kw):
    net = nn.init_mlp((784, 4, 10), np.random.default_rng(seed))
    state = make_state("random", seed=seed, **kw)
    img = np.zeros(784)
    lrs = np.empty(steps)
    for g in range(steps):
        lrs[g] = H.random_step(net, state, (img, g % 10), g).lr_after
    return lrs, state


def test_random_walk_bounds_and_upward_drift():
    finals = []
    for seed in range(20):
        lrs, state = run_random(seed, 10_000)
        assert lrs.min() >= state.lr_min and lrs.max() <= state.lr_max
        finals.append(lrs[-1])
    assert np.median(finals) > 0.005


def test_random_walk_multiplicative_drifts_down():
    """Symmetric multiplicative steps shrink in expectation of log lr."""
    finals = [run_random(seed, 10_000, step_rule="multiplicative")[0][-1] for seed in range(20)]
    assert np.median(finals) < 0.005


def test_random_walk_reproducible():
    a, _ = run_random(3, 500)
    b, _ = run_random(3, 500)
    c, _ = run_random(4, 500)
    assert np.array_equal(a, b) and not np.array_equal(a, c)


def test_random_pushes_store(rng):
    state = make_state("random")
    H.random_step(nn.init_mlp(SMALL, rng), state, sample(rng))
    assert len(state.store) == 1


def test_constant_lr_fixed_and_matches_plain_sgd():
    rng = np.random.default_rng(8)
    net = nn.init_mlp(SMALL, rng)
    ref = net.copy()
    dense = net.copy()
    state = make_state("constant")
    learner = H.Learner(net, state)
    data = [sample(rng) for _ in range(50)]
    for step in range(10_000):
        img, lab = data[step % 50]
        log = learner.step(img, lab, step)
        assert log.decision is None
        nn.train_sample(ref, img, lab, 0.005)
        if step < 200:
            _, g = nn.backward(dense, img, np.array([lab]))
            nn.sgd_step(dense, g, 0.005)
        if step == 199:
            np.testing.assert_allclose(net.params, dense.params, atol=1e-12)
    assert learner.lr == 0.005
    assert log.lr_after == 0.005
    assert np.array_equal(net.params, ref.params)
