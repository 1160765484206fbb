# -*- coding: utf-8 -*-

import dataclasses
import time

import numpy as np
import pytest

from lowprec_distill import logger
from lowprec_distill._consts import INT32_MAX, INT32_MIN, DirectionEnum
from lowprec_distill.deploy import (
    DeployedLayer,
    DeployedNetwork,
    deploy,
    deployed_from_bytes,
    deployed_to_bytes,
    equivalence_check,
    fires,
    fold_thresholds,
    integer_forward,
    load_deployed,
    pack_ternary,
    random_binary_inputs,
    save_deployed,
    unpack_ternary,
)
from lowprec_distill.exceptions import CorruptFileError, FoldError, MissingInputError, ShapeError, UsageError
from lowprec_distill.lowprec import StudentNetwork
from lowprec_distill.netspec import DESK_TIERS, LayerSpec, NetworkSpec, desk_spec
from lowprec_distill.tensor_core import batchnorm


def _warmed_student(spec: NetworkSpec, seed: int = 0, passes: int = 3) -> StudentNetwork:
    """Student with mixed-sign batch-norm scales and running statistics from a few training passes."""

    _net = StudentNetwork(spec, seed=seed)
    _rng = np.random.default_rng(seed + 1)
    for _layer in _net.layers:
        _n = _layer.spec.features
        _layer.bn.gamma = _rng.uniform(0.2, 1.5, size=_n) * _rng.choice([-1.0, 1.0], size=_n)
        _layer.bn.beta = _rng.normal(0.0, 0.5, size=_n)

    for _pass in range(passes):
        _net.forward_train(random_binary_inputs(spec.input_shape, 32, seed=seed + 10 + _pass))
    return _net


def _tiny_network() -> DeployedNetwork:
    _spec = NetworkSpec(tier="tiny", input_shape=(1, 2, 2), actions=3, layers=[LayerSpec(features=1, kernel=2)])
    _layer = DeployedLayer(
        spec=_spec.layers[0],
        in_channels=1,
        packed_weights=pack_ternary(np.array([1, 1, -1, 0]).reshape(1, 1, 2, 2)),
        thresholds=np.array([1]),
        directions=np.array([DirectionEnum.GE]),
    )
    return DeployedNetwork(
        spec=_spec,
        layers=(_layer,),
        readout_weights=np.array([[5, -5, 0]]),
        readout_bias=np.array([0, 0, 1]),
        readout_scale=1,
        levels=1,
        game="catch",
    )


def _first_blob_offset(dn: DeployedNetwork) -> int:
    _spec = dn.spec
    return (
        4 + 2
        + 2 + len(_spec.tier.encode("utf-8"))
        + 8
        + 2 + 10 * len(_spec.layers)
        + 2
        + 2 + len(dn.game.encode("utf-8"))
        + 4
    )


def test_pack_ternary_examples():
    logger.info("Testing 'pack_ternary' and 'unpack_ternary' examples...")

    assert pack_ternary([1, -1, 0, 1]) == bytes([0b01_00_10_01])
    assert pack_ternary([0, 0, 0, 0, -1]) == bytes([0, 0b10])
    assert pack_ternary([]) == b""

    np.testing.assert_array_equal(unpack_ternary(bytes([0b01_00_10_01]), 4), [1, -1, 0, 1])
    np.testing.assert_array_equal(unpack_ternary(bytes([0, 0b10]), 5), [0, 0, 0, 0, -1])

    with pytest.raises(UsageError):
        pack_ternary([0, 2, 1])

    logger.success("Done: packing examples.\n")


@pytest.mark.parametrize("count", [1, 3, 4, 7, 1024, 1031])
def test_pack_ternary_round_trip(rng, count: int):
    logger.info(f"Testing packing {count} ternary weights...")

    _w = rng.integers(-1, 2, size=count)
    _packed = pack_ternary(_w)
    assert len(_packed) == -(-count // 4)
    np.testing.assert_array_equal(unpack_ternary(_packed, count), _w)

    logger.success(f"Done: packing {count} weights.\n")


def test_unpack_ternary_corrupt():
    logger.info("Testing 'unpack_ternary' on corrupt blobs...")

    with pytest.raises(CorruptFileError):
        unpack_ternary(bytes([0b11]), 1)
    with pytest.raises(CorruptFileError):
        unpack_ternary(bytes([0b11_00_00_00]), 4)
    ## weight 1 lives in the padding when count is 1
    with pytest.raises(CorruptFileError):
        unpack_ternary(bytes([0b00_00_01_00]), 1)
    with pytest.raises(CorruptFileError):
        unpack_ternary(bytes([0, 0]), 4)

    logger.success("Done: corrupt blobs.\n")


def test_fold_thresholds_examples():
    logger.info("Testing 'fold_thresholds' examples...")

    ## fires iff r >= 2.5, r <= 2.5, r >= 3
    _theta, _dir = fold_thresholds(
        mean=[2.5, 2.5, 3.0], var=[1.0, 1.0, 1.0], gamma=[1.0, -1.0, 1.0], beta=[0.0, 0.0, 0.0], eps=0.0, fan_in=8
    )
    assert _theta.dtype == np.int32
    assert _theta.tolist() == [3, 3, 3]
    assert _dir.tolist() == [DirectionEnum.GE, DirectionEnum.LT, DirectionEnum.GE]

    ## constant neurons and thresholds outside [-fan_in, fan_in]
    _theta, _dir = fold_thresholds(
        mean=[0.0, 0.0, -100.0, 100.0, 100.0, -100.0],
        var=[1.0] * 6,
        gamma=[0.0, 0.0, 1.0, 1.0, -1.0, -1.0],
        beta=[1.0, -1.0, 0.0, 0.0, 0.0, 0.0],
        eps=1e-5,
        fan_in=4,
    )
    assert _theta.tolist() == [INT32_MIN, INT32_MAX, INT32_MIN, INT32_MAX, INT32_MAX, INT32_MIN]
    assert _dir.tolist() == [0, 0, 0, 0, 1, 1]

    _r = np.arange(-4, 5).reshape(1, 1, -1).repeat(6, axis=1)
    _expected = np.array([1, 0, 1, 0, 1, 0])[:, np.newaxis].repeat(9, axis=1)
    np.testing.assert_array_equal(fires(_r, _theta, _dir)[0], _expected)

    logger.success("Done: 'fold_thresholds' examples.\n")


@pytest.mark.parametrize("fan_in", range(1, 17))
def test_fold_thresholds_exhaustive(rng, fan_in: int):
    logger.info(f"Testing folded thresholds against the float decision for fan-in {fan_in}...")

    _n = 500
    _mean = rng.uniform(-fan_in - 2, fan_in + 2, size=_n)
    _var = rng.uniform(0.0, 3.0 * fan_in, size=_n)
    _gamma = rng.normal(size=_n)
    _gamma[::25] = 0.0
    _beta = rng.normal(scale=2.0, size=_n)
    ## land some boundaries exactly on integers
    _mean[1::7] = np.round(_mean[1::7])
    _beta[1::7] = 0.0

    _theta, _dir = fold_thresholds(_mean, _var, _gamma, _beta, 1e-5, fan_in)

    _r = np.broadcast_to(np.arange(-fan_in, fan_in + 1, dtype=np.float64), (1, _n, 2 * fan_in + 1))
    _float = (batchnorm(_r, _mean, _var, _gamma, _beta, 1e-5, axis=1) >= 0.0).astype(np.uint8)
    _int = fires(_r.astype(np.int64), _theta, _dir)
    np.testing.assert_array_equal(_int, _float)

    logger.success(f"Done: exhaustive fold for fan-in {fan_in}.\n")


def test_fold_thresholds_errors():
    logger.info("Testing 'fold_thresholds' errors...")

    with pytest.raises(FoldError):
        fold_thresholds([np.nan], [1.0], [1.0], [0.0], 1e-5, 4)
    with pytest.raises(FoldError):
        fold_thresholds([0.0], [1.0], [np.inf], [0.0], 1e-5, 4)
    with pytest.raises(FoldError):
        fold_thresholds([0.0], [-1.0], [1.0], [0.0], 1e-5, 4)
    with pytest.raises(FoldError):
        fold_thresholds([0.0], [1.0], [1.0], [0.0], 1e-5, 0)

    logger.success("Done: 'fold_thresholds' errors.\n")


def test_integer_forward_examples():
    logger.info("Testing 'integer_forward' on a hand-built network...")

    _dn = _tiny_network()

    _scores, _report = integer_forward(_dn, np.array([[[1, 1], [0, 0]]]))
    assert _scores.dtype == np.int64
    assert _scores.tolist() == [5, -5, 1]
    assert _report.spikes_per_inference == 1.0
    assert _report.n_inferences == 1

    _batch = np.array([[[[1, 1], [0, 0]]], [[[0, 0], [1, 0]]]])
    _scores, _report = integer_forward(_dn, _batch)
    assert _scores.tolist() == [[5, -5, 1], [0, 0, 1]]
    assert _report.layer_rates == (0.5,)
    assert _report.spikes_per_inference == 0.5
    assert _report.inferences_per_second > 0

    with pytest.raises(ShapeError):
        integer_forward(_dn, np.zeros((1, 3, 3)))
    with pytest.raises(UsageError):
        integer_forward(_dn, np.full((1, 2, 2), 2))

    logger.success("Done: 'integer_forward' examples.\n")


def test_deployed_network_is_immutable():
    logger.info("Testing deployed network arrays are read-only...")

    _dn = _tiny_network()
    with pytest.raises(ValueError):
        _dn.readout_weights[0, 0] = 1
    with pytest.raises(ValueError):
        _dn.layers[0].thresholds[0] = 0
    with pytest.raises(dataclasses.FrozenInstanceError):
        _dn.readout_scale = 2

    with pytest.raises(ShapeError):
        DeployedNetwork(
            spec=_dn.spec,
            layers=_dn.layers,
            readout_weights=np.zeros((2, 3)),
            readout_bias=np.zeros(3),
            readout_scale=1,
        )

    logger.success("Done: read-only deployed network.\n")


@pytest.mark.parametrize("tier", DESK_TIERS)
def test_deploy_bitexact(tier: str):
    logger.info(f"Testing deployed '{tier}' student against float inference...")

    _net = _warmed_student(desk_spec(tier))
    _dn = deploy(_net, n_calibration=256, seed=3)
    assert _dn.readout_scale >= 2**12
    assert _dn.readout_scale & (_dn.readout_scale - 1) == 0

    _inputs = random_binary_inputs(_net.spec.input_shape, 300, seed=7)
    _report = equivalence_check(_net, _dn, inputs=_inputs)
    assert _report.hidden_bitexact
    assert _report.mismatched_neurons == 0
    assert _report.n_samples == 300
    assert _report.argmax_agreement >= 0.99

    _, _float_hidden = _net.forward_inference(_inputs[:4])
    _scores, _spikes = integer_forward(_dn, _inputs[:4])
    assert _scores.shape == (4, 3)
    assert _spikes.spikes_per_inference == pytest.approx(sum(int(_h.sum()) for _h in _float_hidden) / 4)

    logger.success(f"Done: '{tier}' is bit-exact.\n")


@pytest.mark.slow
@pytest.mark.parametrize("tier", DESK_TIERS)
def test_deploy_bitexact_large_sample(tier: str):
    logger.info(f"Testing deployed '{tier}' student on 10^4 inputs...")

    _net = _warmed_student(desk_spec(tier), seed=11)
    _dn = deploy(_net, seed=5)
    _report = equivalence_check(_net, _dn, n_samples=10_000, seed=9)
    assert _report.hidden_bitexact
    assert _report.n_samples == 10_000
    assert _report.argmax_agreement >= 0.99

    logger.success(f"Done: '{tier}' on 10^4 inputs.\n")


def test_deploy_escalates_readout_scale():
    logger.info("Testing readout scale escalation...")

    _net = _warmed_student(desk_spec("desk-1"))
    _net.readout_w = np.zeros_like(_net.readout_w)
    ## a bias gap of 3e-6 rounds to zero below 2^18
    _net.readout_b = np.array([0.0, 3e-6, 0.0])

    _dn = deploy(_net, n_calibration=64)
    assert _dn.readout_scale == 2**18
    assert _dn.readout_bias.tolist() == [0, 1, 0]

    logger.success("Done: readout scale escalation.\n")


def test_deploy_errors():
    logger.info("Testing 'deploy' errors...")

    _net = _warmed_student(desk_spec("desk-1"))
    _net.readout_w = np.full_like(_net.readout_w, 1e6)
    with pytest.raises(FoldError):
        deploy(_net, n_calibration=16)

    _net = _warmed_student(desk_spec("desk-1"))
    _net.layers[1].bn.running_mean[0] = np.nan
    with pytest.raises(FoldError):
        deploy(_net, n_calibration=16)

    logger.success("Done: 'deploy' errors.\n")


def test_equivalence_check_detects_mismatch():
    logger.info("Testing 'equivalence_check' on tampered and mismatched models...")

    _net = _warmed_student(desk_spec("desk-1"))
    _dn = deploy(_net, n_calibration=64)

    _first = _dn.layers[0]
    _flipped = dataclasses.replace(_first, directions=1 - _first.directions)
    _tampered = dataclasses.replace(_dn, layers=(_flipped,) + _dn.layers[1:])
    _report = equivalence_check(_net, _tampered, n_samples=32)
    assert not _report.hidden_bitexact
    assert 0 in _report.mismatched_layers
    assert _report.mismatched_neurons > 0

    _other = _warmed_student(desk_spec("desk-2"))
    _report = equivalence_check(_other, _dn, n_samples=32)
    assert not _report.hidden_bitexact
    assert _report.n_samples == 0

    logger.success("Done: 'equivalence_check' mismatches.\n")


def test_model_file_round_trip(tmp_path):
    logger.info("Testing TNF1 model file round trip...")

    _net = _warmed_student(desk_spec("desk-2"))
    _dn = deploy(_net, n_calibration=64, levels=4, game="minipong")
    _data = deployed_to_bytes(_dn)
    assert _data[:4] == b"TNF1"

    _loaded = deployed_from_bytes(_data)
    assert _loaded.spec == _dn.spec
    assert (_loaded.levels, _loaded.game, _loaded.readout_scale) == (4, "minipong", _dn.readout_scale)
    for _a, _b in zip(_loaded.layers, _dn.layers):
        assert _a.packed_weights == _b.packed_weights
        np.testing.assert_array_equal(_a.thresholds, _b.thresholds)
        np.testing.assert_array_equal(_a.directions, _b.directions)
    assert deployed_to_bytes(_loaded) == _data

    _path = save_deployed(_dn, str(tmp_path / "models" / "student.tnf"))
    _inputs = random_binary_inputs(_net.spec.input_shape, 16, seed=2)
    np.testing.assert_array_equal(integer_forward(load_deployed(_path), _inputs)[0], integer_forward(_dn, _inputs)[0])

    with pytest.raises(MissingInputError):
        load_deployed(str(tmp_path / "missing.tnf"))

    logger.success("Done: TNF1 round trip.\n")


def test_model_file_corrupt(tmp_path):
    logger.info("Testing corrupt TNF1 model files...")

    _dn = _tiny_network()
    _data = deployed_to_bytes(_dn)
    _offset = _first_blob_offset(_dn)
    assert _data[_offset : _offset + 1] == _dn.layers[0].packed_weights

    _bad_magic = b"XXXX" + _data[4:]
    _bad_version = _data[:4] + b"\x09\x00" + _data[6:]
    _reserved = _data[:_offset] + b"\xff" + _data[_offset + 1 :]
    for _corrupt in (_bad_magic, _bad_version, _reserved, _data[:-3], _data + b"\x00", b""):
        with pytest.raises(CorruptFileError):
            deployed_from_bytes(_corrupt)

    _path = tmp_path / "corrupt.tnf"
    _path.write_bytes(_reserved)
    with pytest.raises(CorruptFileError):
        load_deployed(str(_path))

    logger.success("Done: corrupt TNF1 files.\n")


def test_integer_forward_throughput(benchmark):
    logger.info("Testing deployed inference throughput...")

    _net = _warmed_student(desk_spec(DESK_TIERS[-1]))
    _dn = deploy(_net, n_calibration=64)
    _x = random_binary_inputs(_net.spec.input_shape, 1, seed=4)[0]

    _scores, _ = benchmark(integer_forward, _dn, _x)
    assert _scores.shape == (3,)

    _start = time.perf_counter()
    for _ in range(30):
        integer_forward(_dn, _x)
    assert time.perf_counter() - _start < 1.0

    logger.success("Done: deployed inference throughput.\n")
