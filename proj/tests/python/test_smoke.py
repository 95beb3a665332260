import numpy as np
import pytest

import marginlab as ml


def test_norms():
    a = np.array([[3.0, 0.0], [0.0, 1.0]])
    assert ml.spectral_norm(a) == pytest.approx(3.0, rel=1e-6)
    assert ml.frobenius_norm(a) == pytest.approx(np.sqrt(10.0))


def test_network_roundtrip_and_jacobian(tmp_path):
    net = ml.mlp(4, [8, 8], 3, activation="tanh", head="softmax", seed=3)
    assert net.input_dim == 4 and net.num_classes == 3
    x = np.linspace(-1.0, 1.0, 4)
    J = net.jacobian(x)
    h = 1e-6
    fd = np.column_stack([(net.evaluate(x + h * e) - net.evaluate(x - h * e)) / (2 * h) for e in np.eye(4)])
    assert np.max(np.abs(J - fd)) < 1e-6
    path = tmp_path / "net.json"
    net.save(path)
    back = ml.Network.load(path)
    assert np.array_equal(back.evaluate(x), net.evaluate(x))
    assert np.array_equal(ml.Network.from_json(net.to_json()).evaluate(x), net.evaluate(x))


def test_margin_bounds_ordering():
    net = ml.mlp(2, [16], 2, activation="relu", head="linear", seed=5)
    x = np.array([0.3, -0.7])
    label = net.classify(x)
    r = ml.margin_bounds(net, x, label)
    assert r["score"] >= 0
    assert r["gamma4"] <= r["gamma3"] + 1e-12


def test_train_and_analyze():
    means = [np.array([2.0, 0.0]), np.array([-2.0, 0.0])]
    factors = [0.5 * np.eye(2), 0.5 * np.eye(2)]
    X, y = ml.sample_gmm(means, factors, 200, seed=1)
    assert X.shape == (200, 2) and len(y) == 200
    net = ml.mlp(2, [8], 2, seed=2)
    trained, hist = ml.train(net, X, y, epochs=5, lr=0.05, seed=2)
    assert len(hist) == 5
    assert hist[-1]["train_acc"] > 0.9
    a = ml.analyze_margins(trained, X, y)
    assert len(a["reports"]) == 200
    assert a["spectral_product"] <= a["frobenius_product"] + 1e-12


def test_bounds_and_errors():
    assert ml.covering_number("manifold", 2, 0.5, c_m=2.0) > 0
    assert ml.ge_bound_manifold(10000, 10, 0.5, 1.0, 2, 0.05) > 0
    with pytest.raises(ValueError):
        ml.ge_bound_manifold(10000, 10, 0.5, 1.0, 2, 0.0)
    with pytest.raises(ValueError):
        ml.mlp(2, [4], 2, activation="nope")


def test_verify_subset():
    res = ml.verify("spectral", trials=3)
    assert res and all(r["passed"] for r in res)
