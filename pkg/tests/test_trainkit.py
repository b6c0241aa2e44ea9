import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from motoclf import model as mo
from motoclf import trainkit as tk
from motoclf.chargrains import EncodedSample
from motoclf.model import ModelConfig, ModelParams
from motoclf.trainkit import AdamState, Metrics, TrainConfig

VOCAB = {"char": 6, "radical": 6, "wubi": 6, "pinyin": 6}
LENGTHS = {"char": 3, "radical": 4, "wubi": 2, "pinyin": 3}


def small_model(seed=0, K=3):
    cfg = ModelConfig(dim=4, num_classes=K, vocab_sizes=VOCAB, lengths=LENGTHS, dropout=0.0, seed=seed)
    return ModelParams.initialize(cfg)


def random_sample(rng, K=3):
    ids = {g: tuple(int(x) for x in rng.integers(0, VOCAB[g], LENGTHS[g])) for g in VOCAB}
    return EncodedSample(ids["char"], ids["radical"], ids["wubi"], ids["pinyin"], int(rng.integers(K)))


def test_adam_zero_gradient():
    params = {"w": np.array([1.0, -2.0])}
    state = AdamState.zeros_like(params)
    tk.adam_step(params, {"w": np.zeros(2)}, state)
    np.testing.assert_array_equal(params["w"], [1.0, -2.0])
    assert state.t == 1


def test_adam_first_step_closed_form():
    params = {"w": np.array([0.0])}
    tk.adam_step(params, {"w": np.array([1.0])}, AdamState.zeros_like(params))
    assert params["w"][0] == pytest.approx(-0.001 / (1 + 1e-8), rel=1e-12)
    assert f"{params['w'][0]:.12f}" == "-0.000999999990"


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3, allow_subnormal=False), min_size=1, max_size=5))
def test_adam_odd_symmetry(g):
    g = np.array(g)
    a, b = {"w": np.zeros(len(g))}, {"w": np.zeros(len(g))}
    tk.adam_step(a, {"w": g}, AdamState.zeros_like(a))
    tk.adam_step(b, {"w": -g}, AdamState.zeros_like(b))
    np.testing.assert_array_equal(a["w"], -b["w"])


def test_adam_matches_reference_over_steps(rng):
    p = {"w": rng.normal(size=3)}
    state = AdamState.zeros_like(p, lr=0.01)
    w, m, v = p["w"].copy(), np.zeros(3), np.zeros(3)
    for t in range(1, 6):
        g = rng.normal(size=3)
        tk.adam_step(p, {"w": g}, state)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        w = w - 0.01 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
    np.testing.assert_allclose(p["w"], w, rtol=1e-14)
    assert state.t == 5


def test_adam_shape_mismatch():
    params = {"w": np.zeros(2)}
    with pytest.raises(ValueError):
        tk.adam_step(params, {"w": np.zeros(3)}, AdamState.zeros_like(params))


@pytest.mark.parametrize("p, r, f1", [(0.8346, 0.8287, 0.8316), (0.9671, 0.9605, 0.9638), (1.0, 1.0, 1.0)])
def test_f1_reported_pairs(p, r, f1):
    assert abs(tk.f1_score(p, r) - f1) <= 1e-4


def test_f1_identities():
    assert tk.f1_score(0.0, 0.0) == 0.0
    for p, r in [(0.3, 0.9), (0.5, 0.5), (0.01, 0.99)]:
        assert tk.f1_score(p, r) == 2 * p * r / (p + r)
        assert tk.f1_score(p, r) == tk.f1_score(r, p)
        assert tk.f1_score(p, r) <= (p + r) / 2


def test_metrics_zero_division_counts_class():
    m = Metrics.from_labels([0, 0, 1], [0, 0, 0], 3)
    np.testing.assert_array_equal(m.precision, [2 / 3, 0.0, 0.0])
    np.testing.assert_array_equal(m.recall, [1.0, 0.0, 0.0])
    assert m.macro_precision == pytest.approx(2 / 9)
    assert m.accuracy == pytest.approx(2 / 3)
    np.testing.assert_array_equal(m.support, [2, 1, 0])


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 10), st.integers(1, 300), st.integers(0, 2**32 - 1))
def test_metrics_match_brute_force(k, n, seed):
    rng = np.random.default_rng(seed)
    gold, pred = rng.integers(0, k, n).tolist(), rng.integers(0, k, n).tolist()
    m = Metrics.from_labels(gold, pred, k)
    assert m.confusion.tolist() == oracles.confusion_counts(gold, pred, k)
    assert int(m.confusion.sum()) == n
    bp, br = oracles.per_class_pr(gold, pred, k)
    assert m.precision.tolist() == bp and m.recall.tolist() == br


def test_one_sample_loss_strictly_decreases(rng):
    params = small_model(seed=1)
    sample = [random_sample(rng)]
    state = AdamState.zeros_like(params.arrays)
    losses = []
    for _ in range(11):
        value, grads = tk.batch_loss(params, sample, None)
        losses.append(value)
        tk.adam_step(params.arrays, grads, state)
    assert all(b < a for a, b in zip(losses, losses[1:]))


def test_single_step_descent_property():
    rng = np.random.default_rng(2024)
    ok = 0
    for trial in range(100):
        params = small_model(seed=trial)
        sample = [random_sample(rng)]
        before, grads = tk.batch_loss(params, sample, None)
        tk.adam_step(params.arrays, grads, AdamState.zeros_like(params.arrays, lr=1e-3))
        after, _ = tk.batch_loss(params, sample, None)
        ok += after <= before
    assert ok >= 95


def test_every_epoch_is_a_permutation(rng, monkeypatch):
    samples = [random_sample(rng) for _ in range(10)]
    seen = []
    real = tk.batch_loss

    def spy(params, batch, r):
        seen.append([id(s) for s in batch])
        return real(params, batch, r)

    monkeypatch.setattr(tk, "batch_loss", spy)
    tk.train(small_model(), samples, TrainConfig(batch_size=3, max_epochs=2))
    assert [len(b) for b in seen] == [3, 3, 3, 1] * 2
    want = sorted(id(s) for s in samples)
    for epoch in (seen[:4], seen[4:]):
        assert sorted(i for b in epoch for i in b) == want
    assert seen[:4] != seen[4:]


def test_training_is_deterministic(rng):
    samples = [random_sample(rng) for _ in range(12)]
    cfg = small_model().config
    cfg.dropout = 0.5
    params = ModelParams.initialize(cfg)
    a = tk.train(params, samples, TrainConfig(batch_size=4, max_epochs=3, seed=11))
    b = tk.train(params, samples, TrainConfig(batch_size=4, max_epochs=3, seed=11))
    assert a.losses() == b.losses()
    for k in a.params.arrays:
        assert np.array_equal(a.params.arrays[k], b.params.arrays[k])
    assert all(np.array_equal(params.arrays[k], ModelParams.initialize(cfg).arrays[k]) for k in params.arrays)


def test_train_rejects_empty_and_bad_config():
    with pytest.raises(ValueError):
        tk.train(small_model(), [], TrainConfig())
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_loss_aborts(rng):
    params = small_model()
    params.arrays["head.W"][:] = 1e308
    params.arrays["emb.char"][:] = 1e308
    with pytest.raises(tk.NumericError):
        tk.train(params, [random_sample(rng)], TrainConfig(max_epochs=1))


def test_dev_records_and_log_line(rng):
    samples = [random_sample(rng) for _ in range(6)]
    res = tk.train(small_model(), samples, TrainConfig(batch_size=4, max_epochs=2), dev=samples[:3])
    assert [(r.epoch, r.split) for r in res.history] == [(1, "train"), (1, "dev"), (2, "train"), (2, "dev")]
    fields = res.history[0].tsv().split("\t")
    assert len(fields) == len(tk.LOG_HEADER.split("\t")) == 7
    assert math.isfinite(float(fields[2]))


def test_evaluate_matches_predictions(rng):
    params = small_model()
    samples = [random_sample(rng) for _ in range(20)]
    m = tk.evaluate(params, samples)
    pred = [mo.forward(s, params).class_id for s in samples]
    want = Metrics.from_labels([s.class_id for s in samples], pred, 3)
    assert np.array_equal(m.confusion, want.confusion)
    with pytest.raises(ValueError):
        tk.evaluate(params, [])
