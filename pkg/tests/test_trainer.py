import numpy as np
import pytest

import oracles
from conftest import toy_instance
from scmc import diffcore as dc
from scmc.losses import Hyperparams
from scmc.model import init_model
from scmc.trainer import AdamState, TrainingError, adam_step, fit, pretrain, stream, train


def test_adam_zero_gradient_keeps_params():
    p = {"w": np.array([[1.0, -2.0]])}
    s = AdamState()
    adam_step(p, {"w": np.zeros((1, 2))}, s, 1e-2)
    np.testing.assert_array_equal(p["w"], [[1.0, -2.0]])
    assert s.t == 1


def test_adam_first_step_is_lr_times_sign():
    p = {"w": np.array([[0.0]])}
    adam_step(p, {"w": np.array([[0.3]])}, AdamState(), 1e-2)
    assert p["w"][0, 0] == pytest.approx(-0.01, rel=1e-2)


def test_adam_matches_reference_recurrence(rng):
    x0 = rng.normal(size=(2, 3))
    grads = [rng.normal(size=(2, 3)) for _ in range(5)]
    expected = oracles.adam(x0, grads, 1e-3)
    p, s = {"w": x0.copy()}, AdamState()
    for g, ref in zip(grads, expected):
        adam_step(p, {"w": g}, s, 1e-3)
        np.testing.assert_allclose(p["w"], ref, rtol=0, atol=1e-12)


def test_adam_rejects_nonfinite_gradient():
    with pytest.raises(TrainingError, match="w"):
        adam_step({"w": np.zeros((1, 1))}, {"w": np.array([[np.nan]])}, AdamState(), 1e-3)


def test_adam_state_round_trip():
    s = AdamState()
    p = {"a": np.ones((2, 2))}
    adam_step(p, {"a": np.full((2, 2), 0.5)}, s, 1e-3)
    back = AdamState.from_arrays(s.to_arrays())
    assert back.t == 1
    np.testing.assert_array_equal(back.m["a"], s.m["a"])
    np.testing.assert_array_equal(back.v["a"], s.v["a"])


def test_streams_are_independent():
    a = stream(3, 0).random(4)
    b = stream(3, 1).random(4)
    assert not np.allclose(a, b)
    np.testing.assert_array_equal(a, stream(3, 0).random(4))


def test_pretrain_leaves_z_and_omega_untouched():
    model, views = toy_instance()
    before = {k: model.params[k].copy() for k in ("Z0", "Z1", "Z2", "omega")}
    hist = pretrain(model, views, Hyperparams(pretrain_epochs=5))
    assert len(hist) == 5
    for k, v in before.items():
        np.testing.assert_array_equal(model.params[k], v)


def test_pretrain_deterministic():
    a, views = toy_instance(seed=4)
    b, _ = toy_instance(seed=4)
    h = Hyperparams(pretrain_epochs=10)
    pretrain(a, views, h)
    pretrain(b, views, h)
    for k in a.params:
        np.testing.assert_array_equal(a.params[k], b.params[k])


def test_pretrain_monotone_on_linear_toy():
    # rank-2 linear data, small step: reconstruction should decrease every epoch
    good = 0
    for seed in range(20):
        r = np.random.default_rng(seed)
        latent = r.normal(size=(12, 2))
        views = [latent @ r.normal(size=(2, 6)) * 0.3, latent @ r.normal(size=(2, 5)) * 0.3]
        model = init_model((6, 5), 12, 2, r, hidden=(8, 6))
        hist = pretrain(model, views, Hyperparams(pretrain_epochs=40, pretrain_learning_rate=1e-3))
        good += all(b <= a for a, b in zip(hist, hist[1:]))
    assert good >= 19


def test_train_history_and_invariants():
    model, views = toy_instance()
    seen = []

    def cb(epoch, m, br):
        A = __import__("scmc.model", fromlist=["affinity"]).affinity(m)
        seen.append((A.min() >= 0, np.all(np.diag(A) == 0),
                     np.max(np.abs(A.sum(axis=1) - 1)) <= 1e-9))

    rep = train(model, views, Hyperparams(train_epochs=6), callback=cb)
    assert len(rep.history) == 6 and len(rep.epoch_seconds) == 6
    assert all(all(x) for x in seen)
    assert rep.A.shape == (8, 8)
    assert rep.weights.sum() == pytest.approx(1.0, abs=1e-12)


def test_train_deterministic():
    h = Hyperparams(pretrain_epochs=3, train_epochs=4, seed=9)
    views = toy_instance()[1]
    _, r1 = fit(views, 3, h, hidden=(6, 5))
    _, r2 = fit(views, 3, h, hidden=(6, 5))
    assert r1.A.tobytes() == r2.A.tobytes()


def test_full_mask_equals_default():
    h = Hyperparams(pretrain_epochs=2, train_epochs=3)
    views = toy_instance()[1]
    _, a = fit(views, 3, h, hidden=(6, 5))
    _, b = fit(views, 3, h, hidden=(6, 5), mask={"Re", "Sub", "Con", "Fu"})
    assert a.A.tobytes() == b.A.tobytes()
    assert [x.as_row() for x in a.history] == [x.as_row() for x in b.history]


def test_reconstruction_only_mask_is_embedding_only():
    h = Hyperparams(pretrain_epochs=2, train_epochs=3)
    _, rep = fit(toy_instance()[1], 3, h, hidden=(6, 5), mask={"Re"})
    assert rep.embedding_only and rep.A is None
    assert rep.embedding.shape == (8, 3)
    assert all(b.L_Sub == b.L_Con == b.L_Fu == 0.0 for b in rep.history)


def test_resume_matches_uninterrupted():
    h = Hyperparams(train_epochs=6)
    a, views = toy_instance(seed=2)
    full = train(a, views, h)
    b, _ = toy_instance(seed=2)
    first = train(b, views, h, epochs=3)
    rest = train(b, views, h, epochs=3, state=AdamState.from_arrays(first.adam_state.to_arrays()))
    for k in a.params:
        np.testing.assert_array_equal(a.params[k], b.params[k])
    assert [x.L_total for x in full.history] == [x.L_total for x in first.history + rest.history]


def test_nonfinite_loss_aborts_with_dump(tmp_path):
    model, views = toy_instance()
    model.params["Z0"] = np.full((8, 8), 1e200)
    with pytest.raises(TrainingError, match="epoch 0"):
        train(model, views, Hyperparams(train_epochs=2), dump_path=tmp_path / "bad.npz")
    assert (tmp_path / "bad.npz").exists()
