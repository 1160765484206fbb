# -*- coding: utf-8 -*-

import numpy as np
import pytest

from lowprec_distill import logger
from lowprec_distill.exceptions import ShapeError, UsageError
from lowprec_distill.lowprec import (
    StudentGrads,
    StudentNetwork,
    binary_step,
    load_student,
    save_student,
    sparsity_penalty,
    step_relaxation,
    step_surrogate_grad,
    ternarize,
)
from lowprec_distill.netspec import LayerSpec, NetworkSpec, desk_spec


def _small_spec(layers: int = 2) -> NetworkSpec:
    _rows = [LayerSpec(features=8, kernel=3, pad=1), LayerSpec(features=8, kernel=3, stride=2, pad=1, groups=2)]
    return NetworkSpec(tier="test", input_shape=(2, 6, 6), actions=3, layers=_rows[:layers])


def test_ternarize(rng):
    logger.info("Testing 'ternarize'...")

    np.testing.assert_array_equal(ternarize([0.0, 0.7, -0.7, 0.4, 0.5, -0.5, 3.0, -2.0]), [0, 1, -1, 0, 1, -1, 1, -1])

    _x = rng.normal(scale=2.0, size=100_000)
    _t = ternarize(_x)
    np.testing.assert_array_equal(ternarize(_t), _t)
    assert set(np.unique(_t)) <= {-1.0, 0.0, 1.0}

    logger.success("Done: 'ternarize'.\n")


def test_binary_step_and_surrogate(rng):
    logger.info("Testing 'binary_step' and 'step_surrogate_grad'...")

    assert binary_step(0.0, 0.0) == 1.0
    assert binary_step(-0.5, 0.0) == 0.0
    assert binary_step(2.0, 2.5) == 0.0
    assert set(np.unique(binary_step(rng.normal(size=1000)))) <= {0.0, 1.0}

    np.testing.assert_array_equal(step_surrogate_grad([0.0, 1.0, -1.0, 2.0, -2.0, 0.5]), [1.0, 0.0, 0.0, 0.0, 0.0, 0.5])

    _r = rng.uniform(-1.5, 1.5, size=200)
    _h = 1e-6
    np.testing.assert_allclose(
        (step_relaxation(_r + _h) - step_relaxation(_r - _h)) / (2 * _h), step_surrogate_grad(_r), atol=1e-6
    )
    np.testing.assert_array_equal(step_relaxation([-3.0, 0.0, 3.0]), [0.0, 0.5, 1.0])

    logger.success("Done: step functions.\n")


def test_sparsity_penalty_examples():
    logger.info("Testing 'sparsity_penalty' examples...")

    _zero, _grads = sparsity_penalty([np.zeros((4, 3, 2, 2))], eta=0.1)
    assert _zero == 0.0
    assert not np.any(_grads[0])

    _none, _ = sparsity_penalty([np.ones((4, 3))], eta=0.0)
    assert _none == 0.0

    _penalty, _grads = sparsity_penalty([np.array([[1.0], [1.0]])], eta=0.0001)
    assert _penalty == pytest.approx(0.00005, abs=1e-15)
    np.testing.assert_allclose(_grads[0], [[0.00005], [0.00005]])

    with pytest.raises(UsageError):
        sparsity_penalty([np.ones((2, 1))], eta=-1.0)

    logger.success("Done: 'sparsity_penalty' examples.\n")


def test_sparsity_penalty_finite_differences():
    logger.info("Testing 'sparsity_penalty' gradient through the surrogate...")

    _eta = 0.0001
    _r = np.array([[0.3], [-0.2]])

    def _penalty(r):
        return sparsity_penalty([step_relaxation(r)], _eta)[0]

    _, _grads = sparsity_penalty([step_relaxation(_r)], _eta)
    _analytic = _grads[0] * step_surrogate_grad(_r)
    _h = 1e-5
    for _i in range(2):
        _plus, _minus = _r.copy(), _r.copy()
        _plus[_i, 0] += _h
        _minus[_i, 0] -= _h
        assert _analytic[_i, 0] == pytest.approx((_penalty(_plus) - _penalty(_minus)) / (2 * _h), abs=1e-6)

    logger.success("Done: 'sparsity_penalty' gradient.\n")


def test_network_construction():
    logger.info("Testing 'StudentNetwork' construction...")

    _net = StudentNetwork(desk_spec("desk-1"), seed=3)
    for _layer in _net.layers:
        assert np.all(np.abs(_layer.proxy) <= 1.0)
        np.testing.assert_array_equal(_layer.weights, ternarize(_layer.proxy))
    assert _net.readout_w.shape == (_net.spec.readout_features, 3)

    _bad = NetworkSpec(
        input_shape=(4, 8, 8),
        layers=[LayerSpec(features=512, kernel=1), LayerSpec(features=8, kernel=3, pad=1)],
    )
    with pytest.raises(UsageError):
        StudentNetwork(_bad)

    logger.success("Done: 'StudentNetwork' construction.\n")


def test_forward_train_examples(rng):
    logger.info("Testing 'forward_train' examples...")

    _net = StudentNetwork(_small_spec(), seed=1)
    for _layer in _net.layers:
        _layer.proxy = np.zeros_like(_layer.proxy)
        _layer.sync_ternary()
        _layer.bn.beta = np.full(_layer.spec.features, -1.0)
    _, _cache = _net.forward_train(np.zeros((3, 2, 6, 6)))
    for _y in _cache.activations:
        assert not np.any(_y)

    _net = StudentNetwork(_small_spec(), seed=1)
    _x = (rng.random((5, 2, 6, 6)) < 0.5).astype(np.uint8)
    _q, _cache = _net.forward_train(_x)
    assert _q.shape == (5, 3)
    for _y in _cache.activations:
        assert set(np.unique(_y)) <= {0.0, 1.0}

    _again = StudentNetwork(_small_spec(), seed=1)
    np.testing.assert_array_equal(_again.forward_train(_x)[0], _q)

    _q_inf, _hidden = _net.forward_inference(_x)
    assert _q_inf.shape == (5, 3)
    for _h in _hidden:
        assert set(np.unique(_h)) <= {0, 1}
    assert _net.predict(_x[0]).shape == (3,)

    with pytest.raises(ShapeError):
        _net.forward_train(np.zeros((2, 3, 6, 6)))

    logger.success("Done: 'forward_train' examples.\n")


def _relaxed_loss(net: StudentNetwork, x: np.ndarray, dq: np.ndarray) -> float:
    _q, _cache = net.forward_train(x, relaxed=True, update_running=False)
    return float(np.sum(_q * dq)) + _cache.penalty


@pytest.mark.parametrize("n_layers", [1, 2])
def test_backward_matches_relaxed_finite_differences(rng, n_layers: int):
    logger.info(f"Testing 'backward_train' against finite differences ({n_layers} layer(s))...")

    _net = StudentNetwork(_small_spec(n_layers), eta=0.05, seed=7)
    for _layer in _net.layers:
        _layer.bn.gamma = rng.uniform(0.3, 0.8, size=_layer.spec.features)
        _layer.bn.beta = rng.uniform(-0.3, 0.3, size=_layer.spec.features)
    _x = rng.normal(size=(4, 2, 6, 6))
    _dq = rng.normal(size=(4, 3))

    _, _cache = _net.forward_train(_x, relaxed=True, update_running=False)
    _grads = _net.backward_train(_cache, _dq)
    _h = 1e-6

    def _check(analytic: float, array: np.ndarray, idx):
        _old = array[idx]
        array[idx] = _old + _h
        _plus = _relaxed_loss(_net, _x, _dq)
        array[idx] = _old - _h
        _minus = _relaxed_loss(_net, _x, _dq)
        array[idx] = _old
        assert analytic == pytest.approx((_plus - _minus) / (2 * _h), rel=1e-4, abs=1e-7)

    for _li, _layer in enumerate(_net.layers):
        for _ in range(6):
            _idx = tuple(int(rng.integers(_d)) for _d in _layer.weights.shape)
            _check(_grads.layers[_li]["proxy"][_idx], _layer.weights, _idx)
        for _c in range(0, _layer.spec.features, 3):
            _check(_grads.layers[_li]["gamma"][_c], _layer.bn.gamma, _c)
            _check(_grads.layers[_li]["beta"][_c], _layer.bn.beta, _c)

    for _ in range(6):
        _idx = tuple(int(rng.integers(_d)) for _d in _net.readout_w.shape)
        _check(_grads.readout_w[_idx], _net.readout_w, _idx)
    _check(_grads.readout_b[1], _net.readout_b, 1)

    logger.success("Done: 'backward_train' finite differences.\n")


def test_backward_examples(rng):
    logger.info("Testing 'backward_train' examples...")

    _net = StudentNetwork(_small_spec(), eta=0.0, seed=2)
    _x = rng.normal(size=(3, 2, 6, 6))
    _, _cache = _net.forward_train(_x)
    _grads = _net.backward_train(_cache, np.zeros((3, 3)))
    for _layer_grads in _grads.layers:
        for _g in _layer_grads.values():
            assert not np.any(_g)
    assert not np.any(_grads.readout_w)

    _net = StudentNetwork(_small_spec(1), eta=0.0, seed=2)
    _net.layers[0].bn.gamma = np.full(8, 0.001)
    _net.layers[0].bn.beta = np.full(8, 5.0)
    _, _cache = _net.forward_train(_x)
    assert np.all(np.abs(_cache.responses[0]) >= 1.0)
    _grads = _net.backward_train(_cache, rng.normal(size=(3, 3)))
    for _g in _grads.layers[0].values():
        assert not np.any(_g)
    assert np.any(_grads.readout_w)

    with pytest.raises(ShapeError):
        _net.backward_train(_cache, np.zeros((2, 3)))

    logger.success("Done: 'backward_train' examples.\n")


def test_stale_cache_rejected(rng):
    logger.info("Testing stale cache detection...")

    _net = StudentNetwork(_small_spec(), seed=4)
    _x = rng.normal(size=(2, 2, 6, 6))
    _, _cache = _net.forward_train(_x)
    _grads = _net.backward_train(_cache, np.ones((2, 3)))
    _net.sgd_momentum_step(_grads, lr=0.1, momentum=0.9)

    with pytest.raises(UsageError):
        _net.backward_train(_cache, np.ones((2, 3)))

    logger.success("Done: stale cache detection.\n")


def _grads_like(net: StudentNetwork, fill) -> StudentGrads:
    return StudentGrads(
        layers=[
            {
                "proxy": fill(_layer.proxy.shape),
                "gamma": fill(_layer.bn.gamma.shape),
                "beta": fill(_layer.bn.beta.shape),
            }
            for _layer in net.layers
        ],
        readout_w=fill(net.readout_w.shape),
        readout_b=fill(net.readout_b.shape),
    )


def test_sgd_momentum_step(rng):
    logger.info("Testing 'sgd_momentum_step'...")

    _net = StudentNetwork(_small_spec(), seed=5, debug=True)
    _before = {_k: _v.copy() for _k, _v in _net.state_arrays().items()}
    _net.sgd_momentum_step(_grads_like(_net, np.zeros), lr=20.0, momentum=0.9)
    for _key, _value in _net.state_arrays().items():
        np.testing.assert_array_equal(_value, _before[_key])

    _net = StudentNetwork(_small_spec(), seed=5, debug=True)
    _w0 = _net.layers[0].proxy.copy()
    _g = _grads_like(_net, lambda _s: rng.normal(scale=0.01, size=_s))
    _net.sgd_momentum_step(_g, lr=2.0, momentum=0.0)
    np.testing.assert_array_equal(_net.layers[0].proxy, np.clip(_w0 - 2.0 * _g.layers[0]["proxy"], -1.0, 1.0))
    np.testing.assert_array_equal(_net.layers[0].weights, ternarize(_net.layers[0].proxy))

    _net = StudentNetwork(_small_spec(), seed=5, debug=True)
    _w0 = _net.layers[1].proxy.copy()
    _b0 = _net.readout_b.copy()
    _g1 = _grads_like(_net, lambda _s: rng.normal(scale=0.001, size=_s))
    _g2 = _grads_like(_net, lambda _s: rng.normal(scale=0.001, size=_s))
    _net.sgd_momentum_step(_g1, lr=0.5, momentum=0.9, float_lr=0.1)
    _net.sgd_momentum_step(_g2, lr=0.5, momentum=0.9, float_lr=0.1)

    _v1 = _g1.layers[1]["proxy"]
    _w1 = np.clip(_w0 - 0.5 * _v1, -1.0, 1.0)
    _v2 = 0.9 * _v1 + _g2.layers[1]["proxy"]
    _w2 = np.clip(_w1 - 0.5 * _v2, -1.0, 1.0)
    np.testing.assert_allclose(_net.layers[1].proxy, _w2, rtol=0, atol=1e-12)

    _vb1 = _g1.readout_b
    _vb2 = 0.9 * _vb1 + _g2.readout_b
    np.testing.assert_allclose(_net.readout_b, _b0 - 0.1 * _vb1 - 0.1 * _vb2, rtol=0, atol=1e-12)

    with pytest.raises(UsageError):
        _net.sgd_momentum_step(_g1, lr=0.0, momentum=0.9)
    with pytest.raises(UsageError):
        _net.sgd_momentum_step(_g1, lr=1.0, momentum=1.0)

    logger.success("Done: 'sgd_momentum_step'.\n")


def test_proxies_stay_clipped(rng):
    logger.info("Testing proxy clipping under large steps...")

    _net = StudentNetwork(_small_spec(), seed=6, debug=True)
    _x = rng.normal(size=(4, 2, 6, 6))
    for _ in range(5):
        _, _cache = _net.forward_train(_x)
        _net.sgd_momentum_step(_net.backward_train(_cache, rng.normal(size=(4, 3))), lr=20.0, momentum=0.9)
        for _layer in _net.layers:
            assert np.all(np.abs(_layer.proxy) <= 1.0)
            np.testing.assert_array_equal(_layer.weights, ternarize(_layer.proxy))
    _net.check_invariants()

    logger.success("Done: proxy clipping.\n")


def test_student_checkpoint(tmp_path, rng):
    logger.info("Testing student checkpoint save/load...")

    _net = StudentNetwork(desk_spec("desk-1"), eta=0.001, seed=8)
    _x = (rng.random((4, 16, 24, 24)) < 0.3).astype(np.uint8)
    _, _cache = _net.forward_train(_x)
    _net.sgd_momentum_step(_net.backward_train(_cache, rng.normal(size=(4, 3))), lr=1.0, momentum=0.9)

    _path = save_student(_net, str(tmp_path / "student.ckpt"))
    _loaded = load_student(_path)
    assert _loaded.spec == _net.spec
    assert _loaded.eta == _net.eta
    np.testing.assert_array_equal(_loaded.predict(_x), _net.predict(_x))
    for _a, _b in zip(_loaded.forward_inference(_x)[1], _net.forward_inference(_x)[1]):
        np.testing.assert_array_equal(_a, _b)

    logger.success("Done: student checkpoint.\n")


@pytest.mark.slow
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_training_reduces_loss(rng, seed: int):
    logger.info(f"Testing student loss decreases on a frozen batch (seed {seed})...")

    _net = StudentNetwork(desk_spec("desk-1"), eta=1e-4, seed=seed)
    _rng = np.random.default_rng(seed)
    _x = (_rng.random((32, 16, 24, 24)) < 0.2).astype(np.uint8)
    _target = _rng.normal(size=(32, 3))
    _losses = []
    for _ in range(50):
        _q, _cache = _net.forward_train(_x)
        _diff = _q - _target
        _losses.append(float(np.mean(np.sum(_diff * _diff, axis=1))))
        _grads = _net.backward_train(_cache, 2.0 * _diff / 32)
        _net.sgd_momentum_step(_grads, lr=0.05, momentum=0.9, float_lr=0.01)

    assert _losses[-1] < _losses[0]

    logger.success("Done: loss decrease.\n")
