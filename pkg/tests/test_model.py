import math

import numpy as np
import pytest

from scmc import diffcore as dc
from scmc.model import (ModelInputError, affinity, build_forward, decode, encode,
                        fuse_affinity, init_model, load_checkpoint, project_affinity,
                        save_checkpoint, self_express)


def zero_model(dims=(4, 5), n=3, c=2, hidden=(3, 3)):
    m = init_model(dims, n, c, np.random.default_rng(0), hidden=hidden)
    for k in m.params:
        m.params[k] = np.zeros_like(m.params[k])
    return m


def test_init_shapes_and_ranges():
    m = init_model((10, 12), 7, 3, np.random.default_rng(1), arch="narrow")
    assert m.hidden == (200, 100) and m.arch == "narrow"
    W = m.params["enc0.W1"]
    assert W.shape == (10, 200) and np.all(np.abs(W) <= 1 / math.sqrt(10))
    assert m.params["dec1.W3"].shape == (200, 12)
    assert np.all(m.params["enc1.b2"] == 0)
    assert np.all(np.abs(m.params["Z0"]) <= 1e-4) and m.params["Z0"].shape == (7, 7)
    np.testing.assert_allclose(m.weights, [0.5, 0.5])


def test_unknown_arch_rejected():
    with pytest.raises(ModelInputError):
        init_model((3, 3), 4, 2, np.random.default_rng(0), arch="huge")


def test_encode_zero_params_gives_zero():
    m = zero_model()
    assert np.all(encode(m, 0, np.random.default_rng(0).normal(size=(3, 4))) == 0)


def test_encode_identity_chain():
    m = zero_model(dims=(1, 1), n=2, c=1, hidden=(1, 1))
    for l in (1, 2, 3):
        m.params[f"enc0.W{l}"] = np.eye(1)
    # tanh(tanh(tanh(0.5))) = 0.406831...
    assert encode(m, 0, np.array([[0.5]]))[0, 0] == pytest.approx(0.4068313, abs=1e-7)
    assert encode(m, 0, np.array([[0.5]]))[0, 0] == pytest.approx(math.tanh(math.tanh(math.tanh(0.5))))


def test_encode_output_in_open_interval(toy):
    model, views = toy
    C = encode(model, 1, views[1])
    assert np.all(np.abs(C) < 1)


def test_encode_rejects_wrong_width(toy):
    model, views = toy
    with pytest.raises(ModelInputError):
        encode(model, 0, views[1])


def test_self_express_identity_and_zero(toy, rng):
    model, _ = toy
    C = rng.normal(size=(8, 3))
    model.params["Z0"] = np.eye(8)
    np.testing.assert_array_equal(self_express(model, 0, C), C)
    model.params["Z0"] = np.zeros((8, 8))
    assert np.all(self_express(model, 0, C) == 0)


def test_self_express_matches_direct_product(rng):
    m = init_model((3, 3), 4, 2, rng, hidden=(2, 2))
    Z, C = rng.normal(size=(4, 4)), rng.normal(size=(4, 2))
    m.params["Z1"] = Z
    expected = [[sum(Z[i, j] * C[i, a] for i in range(4)) for a in range(2)] for j in range(4)]
    np.testing.assert_allclose(self_express(m, 1, C), expected, atol=1e-14)


def test_decode_zero_and_shape(toy):
    assert np.all(decode(zero_model(), 1, np.ones((3, 2))) == 0)
    model, views = toy
    out = decode(model, 2, encode(model, 2, views[2]))
    assert out.shape == views[2].shape


def test_decode_layerwise_oracle(toy, rng):
    model, _ = toy
    H = rng.normal(size=(8, 3))
    p = model.params
    h1 = np.tanh(H @ p["dec0.W1"] + p["dec0.b1"])
    h2 = np.tanh(h1 @ p["dec0.W2"] + p["dec0.b2"])
    np.testing.assert_allclose(decode(model, 0, H), h2 @ p["dec0.W3"] + p["dec0.b3"], atol=1e-13)


def test_fuse_one_hot_weights(toy):
    model, _ = toy
    model.params["omega"] = np.array([[60.0, 0.0, 0.0]])
    np.testing.assert_allclose(fuse_affinity(model), model.Z(0), atol=1e-12)


def test_fuse_identical_z_any_omega(toy, rng):
    model, _ = toy
    Z = rng.normal(size=(8, 8))
    for v in range(3):
        model.params[f"Z{v}"] = Z
    model.params["omega"] = rng.normal(size=(1, 3))
    np.testing.assert_allclose(fuse_affinity(model), Z, atol=1e-14)


def test_fuse_half_identity():
    m = init_model((2, 2), 3, 1, np.random.default_rng(0), hidden=(2, 2))
    m.params["Z0"], m.params["Z1"] = np.eye(3), np.zeros((3, 3))
    np.testing.assert_allclose(fuse_affinity(m), 0.5 * np.eye(3))


def test_project_examples():
    np.testing.assert_array_equal(project_affinity(np.array([[-1.0, 2.0], [3.0, 0.0]])),
                                  [[0.0, 1.0], [1.0, 0.0]])
    out = project_affinity(np.array([[0.0, -1.0, -2.0], [1.0, 0.0, 1.0], [1.0, 1.0, 0.0]]))
    np.testing.assert_allclose(out[0], [0.0, 0.5, 0.5])


def test_project_invariants(rng):
    A = project_affinity(rng.normal(size=(12, 12)))
    assert np.all(A >= 0) and np.all(np.diag(A) == 0)
    np.testing.assert_allclose(A.sum(axis=1), 1.0, atol=1e-12)


def test_graph_matches_numpy_forward(toy):
    model, views = toy
    g = build_forward(model, views)
    g.tape.set_root(dc.total(g.A))
    g.tape.forward()
    for v in range(3):
        C = encode(model, v, views[v])
        np.testing.assert_allclose(g.C[v].value, C, atol=1e-13)
        np.testing.assert_allclose(g.X_hat[v].value, decode(model, v, self_express(model, v, C)),
                                   atol=1e-12)
    np.testing.assert_allclose(g.A.value, affinity(model), atol=1e-13)


def test_checkpoint_round_trip(tmp_path, toy):
    model, _ = toy
    path = save_checkpoint(model, tmp_path / "m.npz", extra={"adam/t": np.array([3])},
                           meta={"seed": 7})
    loaded, extra, meta = load_checkpoint(path)
    assert loaded.dims == model.dims and loaded.hidden == model.hidden
    for k, v in model.params.items():
        np.testing.assert_array_equal(loaded.params[k], v)
    assert int(extra["adam/t"][0]) == 3 and meta == {"seed": 7}


def test_checkpoint_rejects_foreign_file(tmp_path):
    path = tmp_path / "x.npz"
    np.savez(path, __meta__=np.frombuffer(b'{"format": "other"}', dtype=np.uint8))
    with pytest.raises(ValueError):
        load_checkpoint(path)
