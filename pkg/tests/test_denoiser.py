import numpy as np
import pytest

from bcdiff.denoiser import SGD, DenoiserNet, NumericalError, time_embedding, zero_tape
from bcdiff.discrete_space import random_embedding
from bcdiff.training import loss_and_grads


def _net(seed=0, m=3, pool=True, zero_output=False):
    return DenoiserNet.init(m, np.random.default_rng(seed), hidden=8, time_dim=4, ctx=3, pool=pool,
                            zero_output=zero_output)


def test_zero_output_layer_predicts_zero():
    net = DenoiserNet.init(4, np.random.default_rng(0))
    x = np.random.default_rng(1).standard_normal((2, 5, 4))
    assert np.all(net.forward(x, np.array([3.0, 700.0])) == 0)


def test_position_independence_without_pool():
    net = DenoiserNet.init(3, np.random.default_rng(0), ctx=1, pool=False, zero_output=False)
    x = np.random.default_rng(1).standard_normal((1, 4, 3))
    x[0, 2] = x[0, 0]
    out = net.forward(x, 10.0)
    assert np.array_equal(out[0, 0], out[0, 2])


def test_bad_inputs():
    net = _net()
    with pytest.raises(ValueError):
        net.forward(np.zeros((1, 2, 5)), 1.0)
    with pytest.raises(ValueError):
        DenoiserNet.init(3, np.random.default_rng(0), ctx=2)
    net.params["b3"] = np.full(3, np.inf)
    with pytest.raises(NumericalError):
        net.forward(np.zeros((1, 2, 3)), 1.0)


def test_time_embedding_shape():
    e = time_embedding(np.array([0.0, 5.0]), 6)
    assert e.shape == (2, 6)
    assert np.array_equal(e[0], [0, 0, 0, 1, 1, 1])


def _loss(net, table, x, t, x0, labels, use_round):
    pred = net.forward(x, t)
    return loss_and_grads(x0, labels, pred, table, 1.0, 1.0, use_round)[0]


@pytest.mark.parametrize("use_round", [False, True])
def test_gradients_match_finite_differences(use_round):
    rng = np.random.default_rng(5)
    net = _net(1)
    table = random_embedding(5, 3, rng)
    labels = rng.integers(0, 5, size=(2, 4))
    x0 = table.embed(labels)
    x = rng.standard_normal((2, 4, 3))
    t = np.array([10.0, 300.0])

    pred, cache = net.forward(x, t, cache=True)
    _, _, _, g_pred, g_emb = loss_and_grads(x0, labels, pred, table, 1.0, 1.0, use_round)
    tape = net.backward(cache, g_pred)
    h = 1e-6
    for _ in range(20):
        name = rng.choice(list(tape))
        idx = tuple(rng.integers(0, s) for s in net.params[name].shape)
        old = net.params[name][idx]
        net.params[name][idx] = old + h
        up = _loss(net, table, x, t, x0, labels, use_round)
        net.params[name][idx] = old - h
        down = _loss(net, table, x, t, x0, labels, use_round)
        net.params[name][idx] = old
        fd = (up - down) / (2 * h)
        assert abs(fd - tape[name][idx]) <= 1e-4 * max(abs(fd), 1e-3)

    # the table gets gradient through the target and through the rounding logits
    for _ in range(10):
        idx = tuple(rng.integers(0, s) for s in table.weights.shape)
        old = table.weights[idx]
        vals = []
        for d in (h, -h):
            table.weights[idx] = old + d
            vals.append(_loss(net, table, x, t, table.embed(labels), labels, use_round))
        table.weights[idx] = old
        fd = (vals[0] - vals[1]) / (2 * h)
        assert abs(fd - g_emb[idx]) <= 1e-4 * max(abs(fd), 1e-3)


def test_lr_zero_leaves_parameters():
    net = _net()
    before = {k: v.copy() for k, v in net.params.items()}
    tape = {k: np.ones_like(v) for k, v in net.params.items()}
    SGD(lr=0.0).step(net.params, tape)
    assert all(np.array_equal(before[k], net.params[k]) for k in before)
    assert all(np.all(g == 0) for g in tape.values())


def test_nonfinite_gradient_aborts():
    params = {"w": np.zeros(2)}
    with pytest.raises(NumericalError):
        SGD().step(params, {"w": np.array([np.nan, 0.0])})


def test_clip_limits_update():
    params = {"w": np.zeros(2)}
    norm = SGD(lr=1.0, momentum=0.0, clip=1.0).step(params, {"w": np.array([30.0, 40.0])})
    assert norm == 50.0
    np.testing.assert_allclose(params["w"], [-0.6, -0.8])


def test_linear_fit_converges_to_least_squares():
    rng = np.random.default_rng(0)
    x = rng.uniform(-1, 1, size=64)
    y = 2.0 * x
    params = {"w": np.zeros(1)}
    opt = SGD(lr=1e-2, momentum=0.9, clip=1.0)
    for _ in range(5000):
        g = np.array([np.mean(2 * (params["w"][0] * x - y) * x)])
        opt.step(params, {"w": g})
    closed = np.sum(x * y) / np.sum(x * x)
    assert abs(params["w"][0] - closed) < 1e-3 and abs(closed - 2.0) < 1e-12


def test_backward_accumulates_into_tape():
    net = _net()
    x = np.random.default_rng(2).standard_normal((1, 3, 3))
    out, cache = net.forward(x, 5.0, cache=True)
    g = np.ones_like(out)
    once = net.backward(cache, g)
    twice = net.backward(cache, g, net.backward(cache, g))
    assert all(np.allclose(2 * once[k], twice[k]) for k in once)
    assert set(zero_tape(net.params)) == set(net.params)
