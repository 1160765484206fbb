# -*- coding: utf-8 -*-

import numpy as np
import pytest

from lowprec_distill import logger
from lowprec_distill.exceptions import ShapeError, UsageError
from lowprec_distill.observation import (
    FrameStack,
    bilinear_resize,
    bilinear_resize_reference,
    pack_bits,
    preprocess,
    preprocess_stack,
    stack,
    transduce,
    unpack_bits,
)


def test_transduce_examples():
    logger.info("Testing 'transduce' examples...")

    _zeros = transduce(np.zeros((4, 3, 3)), levels=4)
    assert _zeros.shape == (16, 3, 3)
    assert _zeros.dtype == np.uint8
    assert not np.any(_zeros)

    assert np.all(transduce(np.ones((4, 3, 3)), levels=4) == 1)

    _bits = transduce(np.full((4, 1, 1), 0.6), levels=4)
    assert _bits[:4, 0, 0].tolist() == [1, 1, 0, 0]
    assert _bits[:, 0, 0].tolist() == [1, 1, 0, 0] * 4

    ## exactly on a level boundary fires
    assert transduce(np.full((4, 1, 1), 0.5), levels=2)[:2, 0, 0].tolist() == [1, 0]
    assert transduce(np.full((4, 1, 1), 0.99), levels=1)[:, 0, 0].tolist() == [0, 0, 0, 0]

    logger.success("Done: 'transduce' examples.\n")


def test_transduce_channel_order(rng):
    logger.info("Testing 'transduce' frame-major channel order...")

    _obs = rng.random((2, 4, 5, 6))
    _bits = transduce(_obs, levels=3)
    assert _bits.shape == (2, 12, 5, 6)
    for _f in range(4):
        for _k in range(3):
            np.testing.assert_array_equal(_bits[:, _f * 3 + _k], (_obs[:, _f] >= (_k + 1) / 3).astype(np.uint8))

    ## thermometer code: a higher bit never fires without the lower ones
    _levels = _bits.reshape(2, 4, 3, 5, 6)
    assert np.all(_levels[:, :, 1:] <= _levels[:, :, :-1])

    logger.success("Done: 'transduce' channel order.\n")


def test_transduce_errors():
    logger.info("Testing 'transduce' errors...")

    with pytest.raises(UsageError):
        transduce(np.zeros((4, 2, 2)), levels=0)
    with pytest.raises(ShapeError):
        transduce(np.zeros((2, 2)))

    logger.success("Done: 'transduce' errors.\n")


@pytest.mark.parametrize("shape_in, shape_out", [((24, 24), (12, 12)), ((7, 5), (11, 13)), ((12, 12), (24, 24)), ((10, 8), (3, 4))])
def test_bilinear_resize_reference(rng, shape_in, shape_out):
    logger.info(f"Testing 'bilinear_resize' {shape_in} -> {shape_out} against the pixel loop...")

    _img = rng.random(shape_in)
    _fast = bilinear_resize(_img, shape_out)
    assert _fast.shape == shape_out
    np.testing.assert_allclose(_fast, bilinear_resize_reference(_img, shape_out), rtol=0, atol=1e-12)

    logger.success(f"Done: resize {shape_in} -> {shape_out}.\n")


def test_bilinear_resize_properties(rng):
    logger.info("Testing 'bilinear_resize' properties...")

    _img = rng.random((24, 24))
    np.testing.assert_array_equal(bilinear_resize(_img, (24, 24)), _img)

    ## halving samples the midpoint of every 2x2 block
    np.testing.assert_allclose(bilinear_resize(_img, (12, 12)), _img.reshape(12, 2, 12, 2).mean(axis=(1, 3)), atol=1e-12)

    np.testing.assert_allclose(bilinear_resize(np.full((5, 7), 0.3), (9, 4)), 0.3, atol=1e-15)

    _up = bilinear_resize(_img, (48, 48))
    assert _up[0, 0] == _img[0, 0]
    assert _up[-1, -1] == _img[-1, -1]

    with pytest.raises(UsageError):
        bilinear_resize(_img, (0, 4))

    logger.success("Done: 'bilinear_resize' properties.\n")


def test_preprocess():
    logger.info("Testing 'preprocess'...")

    _frame = np.array([[0, 255], [51, 255]], dtype=np.uint8)
    np.testing.assert_allclose(preprocess(_frame), [[0.0, 1.0], [0.2, 1.0]])

    _scaled = preprocess(np.full((24, 24), 255, dtype=np.uint8), target_shape=(12, 12))
    assert _scaled.shape == (12, 12)
    assert np.all((0.0 <= _scaled) & (_scaled <= 1.0))

    _stack = np.zeros((3, 4, 24, 24), dtype=np.uint8)
    assert preprocess_stack(_stack, (12, 12)).shape == (3, 4, 12, 12)

    with pytest.raises(ShapeError):
        preprocess(np.zeros((2, 2, 2)))

    logger.success("Done: 'preprocess'.\n")


def test_frame_stack():
    logger.info("Testing frame history stacking...")

    _frames = [np.full((2, 2), _i, dtype=np.uint8) for _i in range(6)]

    _history = stack(None, _frames[0])
    assert _history.shape == (4, 2, 2)
    assert _history[:, 0, 0].tolist() == [0, 0, 0, 0]

    _history = stack(_history, _frames[1])
    assert _history[:, 0, 0].tolist() == [0, 0, 0, 1]

    _fifo = FrameStack()
    with pytest.raises(UsageError):
        _fifo.push(_frames[0])
    _fifo.reset(_frames[0])
    for _frame in _frames[1:]:
        _fifo.push(_frame)
    assert _fifo.frames[:, 0, 0].tolist() == [2, 3, 4, 5]

    with pytest.raises(ShapeError):
        stack(np.zeros((4, 3, 3)), _frames[0])

    logger.success("Done: frame history stacking.\n")


def test_pack_bits(rng):
    logger.info("Testing 'pack_bits' and 'unpack_bits'...")

    _bits = (rng.random((5, 16, 3, 3)) < 0.4).astype(np.uint8)
    _packed = pack_bits(_bits)
    assert _packed.shape == (5, 18)
    np.testing.assert_array_equal(unpack_bits(_packed, (16, 3, 3)), _bits)

    _one = np.zeros((1, 9), dtype=np.uint8)
    _one[0, 0] = 1
    _one[0, 8] = 1
    assert pack_bits(_one).tolist() == [[1, 1]]

    logger.success("Done: 'pack_bits'.\n")
