import numpy as np
import pytest

from speech2sing import tensor as T
from speech2sing.data import FeatureItem, generate_samples, load_corpus, make_batch
from speech2sing.errors import ContractError, TrainingDivergedError
from speech2sing.model import build_variant
from speech2sing.tensor import Tensor, default_dtype
from speech2sing.train import (LOG_HEADER, Adam, TrainConfig, adam_step, cached_features, loss_terms,
                               mtl_loss, train_loop, train_step)


def _batch_arrays(b=2, f=5, t=6, k=41, seed=0):
    rng = np.random.default_rng(seed)
    y = rng.uniform(0, 1, (b, f, t))
    mask = np.ones((b, t))
    mask[1, 4:] = 0
    phones = np.where(mask > 0, rng.integers(0, k, (b, t)), -1)
    return y, mask, phones


# -- config ------------------------------------------------------------------

def test_defaults():
    cfg = TrainConfig()
    assert (cfg.lam, cfg.lr0, cfg.lr_decay, cfg.epochs, cfg.iters_per_epoch, cfg.batch) == (
        0.015, 0.002, 0.92, 14, 1000, 16)
    assert (cfg.beta1, cfg.beta2, cfg.eps) == (0.9, 0.999, 1e-8)


def test_schedule():
    assert TrainConfig().lr(13) == pytest.approx(0.002 * 0.92**13)
    assert TrainConfig().lr(13) == pytest.approx(0.000679, rel=5e-3)


@pytest.mark.parametrize("field", ["lr0", "epochs", "batch", "lr_decay"])
def test_config_rejects_non_positive(field):
    with pytest.raises(ValueError):
        TrainConfig(**{field: 0})


def test_config_rejects_negative_lambda():
    with pytest.raises(ValueError):
        TrainConfig(lam=-0.1)


# -- objective -----------------------------------------------------------------

def test_perfect_prediction_uniform_logits():
    y, mask, phones = _batch_arrays()
    logits = Tensor(np.zeros((2, 6, 41)))
    loss = mtl_loss(Tensor(y), y, logits, phones, mask, lam=0.015)
    assert float(loss.data) == pytest.approx(0.015 * np.log(41), rel=1e-6)


def test_lambda_zero_is_pure_mse():
    y, mask, phones = _batch_arrays()
    y_hat = y + 0.5
    logits = Tensor(np.random.default_rng(1).standard_normal((2, 6, 41)))
    total, mse, _ = loss_terms(Tensor(y_hat), y, logits, phones, mask, lam=0.0)
    assert float(total.data) == float(mse.data)
    # per-sample mean over valid F x T entries, then batch mean
    assert float(mse.data) == pytest.approx(0.25, rel=1e-6)


def test_masked_frames_are_ignored():
    y, mask, phones = _batch_arrays()
    y_hat = y.copy()
    y_hat[1, :, 4:] += 100.0
    logits = np.zeros((2, 6, 41))
    logits[1, 4:] = 50.0
    total, mse, ce = loss_terms(Tensor(y_hat), y, Tensor(logits), phones, mask, lam=1.0)
    assert float(mse.data) == 0.0
    assert float(ce.data) == pytest.approx(np.log(41), rel=1e-6)


def test_decomposition_identity():
    y, mask, phones = _batch_arrays(seed=3)
    rng = np.random.default_rng(4)
    total, mse, ce = loss_terms(Tensor(rng.uniform(0, 1, y.shape)), y, Tensor(rng.standard_normal((2, 6, 41))),
                                phones, mask, lam=0.015)
    assert abs(float(total.data) - (float(mse.data) + 0.015 * float(ce.data))) < 1e-6


def test_sum_mse():
    y, mask, phones = _batch_arrays()
    _, mse, _ = loss_terms(Tensor(y + 1.0), y, None, phones, mask, lam=0.0, sum_sq=True)
    assert float(mse.data) == pytest.approx(mask.sum() * 5 / 2, rel=1e-6)


def test_no_valid_frames():
    y, mask, phones = _batch_arrays()
    with pytest.raises(ContractError):
        mtl_loss(Tensor(y), y, None, phones, np.zeros_like(mask), lam=0.0)


# -- Adam ---------------------------------------------------------------------------

def test_adam_zero_gradient_keeps_params():
    p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    before = p.data.copy()
    adam_step([p], [np.zeros(2)], {}, lr=0.1)
    np.testing.assert_array_equal(p.data, before)


def test_adam_first_step_is_signed_lr():
    with default_dtype(np.float64):
        p = Tensor(np.zeros(3), requires_grad=True)
        adam_step([p], [np.array([0.3, -4.0, 1e-3])], {}, lr=0.01)
    np.testing.assert_allclose(p.data, [-0.01, 0.01, -0.01], rtol=1e-4)


def test_adam_constant_gradient_step_tends_to_lr():
    with default_dtype(np.float64):
        p = Tensor(np.zeros(1), requires_grad=True)
        state = {}
        for _ in range(500):
            prev = p.data.copy()
            adam_step([p], [np.array([2.5])], state, lr=0.001)
    assert abs(abs(p.data[0] - prev[0]) - 0.001) < 1e-6


def test_small_step_decreases_frozen_batch_loss():
    with default_dtype(np.float64):
        m = build_variant("P-MTL", base_channels=4, seed=0)
        rng = np.random.default_rng(0)
        item = FeatureItem("a", rng.uniform(0, 2, (513, 16)), np.zeros((513, 16)), rng.uniform(0, 2, (513, 16)),
                           rng.integers(0, 41, 16))
        item.c[30] = 1.0
        batch = make_batch([item])
        opt = Adam(m.parameters())
        first = train_step(m, opt, batch, 0.015, 1e-5)
        y_hat, logits = m(batch.x, batch.c)
        after = float(loss_terms(y_hat, batch.y, logits, batch.phones, batch.mask, 0.015)[0].data)
    assert after < first.total


# -- loop -------------------------------------------------------------------------

@pytest.fixture(scope="module")
def toy_train(toy_root):
    return generate_samples(load_corpus(toy_root), "train", test_song="c")


def test_loop_writes_log_and_checkpoints(toy_train, tmp_path):
    m = build_variant("P-MTL", base_channels=4)
    cfg = TrainConfig(epochs=2, iters_per_epoch=2, batch=2, augment=False)
    res = train_loop(m, toy_train, cfg, out_dir=tmp_path, features=cached_features(toy_train))
    lines = (tmp_path / "train_log.csv").read_text().splitlines()
    assert lines[0] == LOG_HEADER and len(lines) == 5
    assert [p.name for p in res.checkpoints] == ["epoch_0.ckpt", "epoch_1.ckpt"]
    assert res.reports[-1].lr == pytest.approx(0.002 * 0.92)
    assert all(r.ce > 0 for r in res.reports)


def test_loop_bit_identical_with_seed(toy_train):
    curves = []
    for _ in range(2):
        m = build_variant("P-MSE", base_channels=4, seed=7)
        cfg = TrainConfig(epochs=1, iters_per_epoch=3, batch=2, seed=11)
        curves.append(train_loop(m, toy_train, cfg).losses)
    assert curves[0] == curves[1]


def test_baselines_train_with_zero_lambda(toy_train):
    m = build_variant("B1", base_channels=4)
    res = train_loop(m, toy_train, TrainConfig(epochs=1, iters_per_epoch=1, batch=1, augment=False))
    assert res.reports[0].ce == 0.0 and res.reports[0].total == res.reports[0].mse


def test_empty_training_set():
    with pytest.raises(ContractError):
        train_loop(build_variant("B1", base_channels=4), [], TrainConfig(epochs=1, iters_per_epoch=1))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_loss_aborts(toy_train):
    m = build_variant("P-MSE", base_channels=4)
    m.d.out.bias.data[:] = np.inf
    with pytest.raises(TrainingDivergedError) as err:
        train_loop(m, toy_train, TrainConfig(epochs=1, iters_per_epoch=1, batch=2, augment=False))
    assert err.value.iteration == 0 and len(err.value.batch_ids) == 2
