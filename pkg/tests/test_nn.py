import numpy as np
import pytest

from gradcheck import check_gradients, numeric_grad
from speech2sing import tensor as T
from speech2sing.errors import ShapeError
from speech2sing.nn import FREQ, TIME, DownBlock, NormGRUBlock, UpBlock, apply_along, fold, unfold
from speech2sing.tensor import Tensor, default_dtype


def _rng(seed=0):
    return np.random.default_rng(seed)


def _param_gradcheck(module, forward, x, eps=1e-6):
    """Max relative error of parameter gradients of ``sum(forward(x) * R)``."""
    proj = Tensor(_rng(9).standard_normal(forward(Tensor(x)).shape))
    loss = lambda: T.tsum(T.mul(forward(Tensor(x)), proj))
    module.zero_grad()
    loss().backward()
    worst = 0.0
    for p in module.parameters():
        def value(raw, p=p):
            old = p.data
            p.data = raw
            out = float(loss().data)
            p.data = old
            return out
        num = numeric_grad(value, [p.data], 0, eps)
        worst = max(worst, float(np.abs(p.grad - num).max() / max(1.0, np.abs(num).max())))
    return worst


def test_fold_unfold_round_trip():
    x = Tensor(_rng().standard_normal((2, 3, 5, 7)))
    for axis, other in ((TIME, 5), (FREQ, 7)):
        np.testing.assert_array_equal(unfold(fold(x, axis), axis, 2, other).data, x.data)


def test_fold_places_axis_last():
    x = Tensor(_rng().standard_normal((2, 3, 5, 7)))
    assert fold(x, TIME).shape == (10, 3, 7)
    assert fold(x, FREQ).shape == (14, 3, 5)
    np.testing.assert_array_equal(fold(x, TIME).data[1], x.data[0, :, 1, :])


def test_down_block_halves_frequency():
    block = DownBlock(FREQ, 1, 2, rng=_rng())
    assert block(Tensor(np.zeros((1, 1, 512, 4)))).shape == (1, 2, 256, 4)


def test_three_time_down_blocks_reduce_by_eight():
    x = Tensor(_rng().standard_normal((1, 1, 3, 64)))
    for c_in, c_out in ((1, 2), (2, 2), (2, 3)):
        x = DownBlock(TIME, c_in, c_out, rng=_rng())(x)
    assert x.shape == (1, 3, 3, 8)


def test_down_block_gradients():
    with default_dtype(np.float64):
        block = DownBlock(TIME, 2, 3, pre_norm=True, rng=_rng())
        x = _rng(1).standard_normal((1, 2, 2, 8))
        assert check_gradients(lambda t: T.tsum(T.square(block(t))), [x]) < 1e-4
        assert _param_gradcheck(block, block, x) < 1e-4


def test_up_block_without_skip_doubles():
    block = UpBlock(TIME, 2, 3, rng=_rng())
    assert block(Tensor(np.zeros((1, 2, 5, 4)))).shape == (1, 3, 5, 8)


def test_up_block_skip_concatenates_channels():
    block = UpBlock(FREQ, 4, 3, rng=_rng())
    skip = Tensor(np.ones((2, 5, 8, 6)))
    out = block(Tensor(np.zeros((2, 4, 4, 6))), skip)
    assert out.shape == (2, 3 + 5, 8, 6)
    np.testing.assert_array_equal(out.data[:, 3:], skip.data)


def test_up_block_crops_one_and_rejects_more():
    block = UpBlock(FREQ, 2, 2, rng=_rng())
    x = Tensor(np.zeros((1, 2, 4, 3)))
    assert block(x, Tensor(np.zeros((1, 1, 7, 3)))).shape == (1, 3, 7, 3)
    with pytest.raises(ShapeError):
        block(x, Tensor(np.zeros((1, 1, 6, 3))))


def test_down_then_up_restores_extent():
    x = Tensor(_rng().standard_normal((1, 1, 6, 10)))
    down = DownBlock(TIME, 1, 2, rng=_rng())
    up = UpBlock(TIME, 2, 1, rng=_rng())
    assert up(down(x)).shape == x.shape


def test_up_block_gradients():
    with default_dtype(np.float64):
        block = UpBlock(FREQ, 2, 2, rng=_rng())
        x = _rng(2).standard_normal((1, 2, 3, 2))
        assert _param_gradcheck(block, block, x) < 1e-4


def test_norm_gru_constant_input_gives_zero():
    block = NormGRUBlock(3, rng=_rng())
    out = block(Tensor(np.full((1, 3, 2, 6), 0.7)))
    assert out.shape == (1, 3, 2, 6)
    np.testing.assert_allclose(out.data, 0.0, atol=1e-6)


def test_norm_gru_gradients_float32():
    block = NormGRUBlock(2, rng=_rng())
    x = _rng(3).standard_normal((1, 2, 2, 4)).astype(np.float32)
    xt = Tensor(x, requires_grad=True)
    T.tsum(T.square(block(xt))).backward()
    with default_dtype(np.float64):
        ref_block = NormGRUBlock(2, rng=_rng())
        ref = check_gradients(lambda t: T.tsum(T.square(ref_block(t))), [x.astype(np.float64)])
        assert ref < 1e-4
        xr = Tensor(x.astype(np.float64), requires_grad=True)
        T.tsum(T.square(ref_block(xr))).backward()
    assert np.abs(xt.grad - xr.grad).max() / max(1.0, np.abs(xr.grad).max()) < 1e-3


def test_blocks_are_deterministic():
    block = DownBlock(FREQ, 1, 4, pre_norm=True, rng=_rng())
    x = Tensor(_rng(4).standard_normal((2, 1, 16, 5)).astype(np.float32))
    assert block(x).data.tobytes() == block(x).data.tobytes()


def test_apply_along_identity():
    x = Tensor(_rng().standard_normal((2, 3, 4, 5)))
    for axis in (TIME, FREQ):
        np.testing.assert_array_equal(apply_along(x, axis, lambda y: y).data, x.data)
