"""Multi-task objective, Adam, learning-rate schedule and the training loop."""
from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .data import FeatureItem, make_batch, sample_features
from .errors import ContractError, TrainingDivergedError
from .tensor import Tensor

log = logging.getLogger(__name__)

LOG_HEADER = "iter,epoch,lr,total,mse,ce"


@dataclass
class TrainConfig:
    lam: float = 0.015
    lr0: float = 0.002
    lr_decay: float = 0.92
    epochs: int = 14
    iters_per_epoch: int = 1000
    batch: int = 16
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    augment: bool = True
    max_shift: float = 1.0
    sum_mse: bool = False
    phsync: bool = False

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        for name in ("lr0", "lr_decay", "epochs", "iters_per_epoch", "batch"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    def lr(self, epoch: int) -> float:
        """Exponentially decayed learning rate for a zero-based epoch."""
        return self.lr0 * self.lr_decay**epoch

    def to_dict(self):
        return dataclasses.asdict(self)


@dataclass
class LossReport:
    iteration: int
    epoch: int
    lr: float
    total: float
    mse: float
    ce: float
    frames: int

    def csv(self) -> str:
        return f"{self.iteration},{self.epoch},{self.lr:.10g},{self.total:.10g},{self.mse:.10g},{self.ce:.10g}"


# --------------------------------------------------------------------------
# Objective
# --------------------------------------------------------------------------

def loss_terms(y_hat: Tensor, y, logits: Tensor | None, phones, mask, lam: float, sum_sq=False):
    """Return ``(total, mse, ce)`` tensors of the batch-averaged multi-task loss.

    The spectrogram term averages the squared error over each sample's valid
    F x T entries (or sums it with ``sum_sq``); the phoneme term averages
    the frame cross-entropy over each sample's valid frames.  Both are then
    averaged over the batch and combined as ``mse + lam * ce``.
    """
    y = np.asarray(y)
    mask = np.asarray(mask, dtype=np.float64)
    b, f, t = y.shape
    if y_hat.shape != y.shape or mask.shape != (b, t):
        raise ContractError(f"loss shapes: y_hat {y_hat.shape}, y {y.shape}, mask {mask.shape}")
    lengths = mask.sum(axis=1)
    if not np.all(lengths > 0):
        raise ContractError("every sample needs at least one valid frame")

    per_sample = 1.0 / b if sum_sq else 1.0 / (b * f * lengths)
    weight = np.broadcast_to((mask * np.reshape(per_sample, (-1, 1)))[:, None, :], y.shape)
    dtype = y_hat.dtype
    mse = T.tsum(T.mul(T.square(T.sub(y_hat, Tensor(y, dtype=dtype))), Tensor(weight, dtype=dtype)))

    if logits is None:
        ce = Tensor(0.0, dtype=dtype)
    else:
        phones = np.asarray(phones).reshape(-1)
        flat_mask = mask.reshape(-1) > 0
        if logits.shape[:2] != (b, t):
            raise ContractError(f"logits {logits.shape} do not cover {b} x {t} frames")
        rows = np.flatnonzero(flat_mask & (phones >= 0))
        flat = logits.reshape(b * t, logits.shape[2])
        per_frame = T.cross_entropy(flat[rows], phones[rows])
        row_weight = 1.0 / (b * lengths[rows // t])
        ce = T.tsum(T.mul(per_frame, Tensor(row_weight, dtype=dtype)))
    total = T.add(mse, T.mul(ce, float(lam))) if lam else mse
    return total, mse, ce


def mtl_loss(y_hat, y, logits, phones, mask, lam, sum_sq=False) -> Tensor:
    return loss_terms(y_hat, y, logits, phones, mask, lam, sum_sq)[0]


# --------------------------------------------------------------------------
# Adam
# --------------------------------------------------------------------------

def adam_step(params, grads, state, lr, betas=(0.9, 0.999), eps=1e-8) -> None:
    """One bias-corrected Adam update, in place.

    ``state`` holds ``t`` and per-parameter first/second moment lists
    ``m`` and ``v``; it is created on first use.
    """
    if "t" not in state:
        state["t"] = 0
        state["m"] = [np.zeros_like(p.data) for p in params]
        state["v"] = [np.zeros_like(p.data) for p in params]
    state["t"] += 1
    b1, b2 = betas
    c1 = 1.0 - b1 ** state["t"]
    c2 = 1.0 - b2 ** state["t"]
    for p, g, m, v in zip(params, grads, state["m"], state["v"]):
        if g is None:
            continue
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        step = lr * (m / c1) / (np.sqrt(v / c2) + eps)
        p.data -= step.astype(p.data.dtype)


class Adam:
    def __init__(self, params, betas=(0.9, 0.999), eps=1e-8):
        self.params = list(params)
        self.betas, self.eps = betas, eps
        self.state = {}

    def step(self, lr):
        adam_step(self.params, [p.grad for p in self.params], self.state, lr, self.betas, self.eps)


# --------------------------------------------------------------------------
# Loop
# --------------------------------------------------------------------------

@dataclass
class TrainResult:
    reports: list = field(default_factory=list)
    checkpoints: list = field(default_factory=list)

    @property
    def losses(self):
        return [r.total for r in self.reports]


def _draw(rng, n, size):
    if size <= n:
        return rng.choice(n, size=size, replace=False)
    return rng.choice(n, size=size, replace=True)


def train_loop(model, samples, cfg: TrainConfig, out_dir=None, features=None) -> TrainResult:
    """Train ``model`` on ``samples``; checkpoints and a CSV log go to ``out_dir``.

    Each iteration draws a batch, transposes each speech input by a random
    amount in ``[-max_shift, max_shift]`` semitones (targets untouched),
    runs forward/backward and takes an Adam step at the epoch's rate.
    ``features`` can supply a callable ``(sample, shift) -> FeatureItem``.
    """
    if not samples:
        raise ContractError("training set is empty")
    featurize = features or (lambda s, shift: sample_features(s, shift, phsync=cfg.phsync))
    lam = cfg.lam if model.dp is not None else 0.0
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(model.parameters(), (cfg.beta1, cfg.beta2), cfg.eps)
    result = TrainResult()

    log_fh = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        log_fh = open(out_dir / "train_log.csv", "w")
        log_fh.write(LOG_HEADER + "\n")
    try:
        it = 0
        for epoch in range(cfg.epochs):
            lr = cfg.lr(epoch)
            for _ in range(cfg.iters_per_epoch):
                idx = _draw(rng, len(samples), cfg.batch)
                shifts = (rng.uniform(-cfg.max_shift, cfg.max_shift, size=len(idx))
                          if cfg.augment else np.zeros(len(idx)))
                items = [featurize(samples[i], float(s)) for i, s in zip(idx, shifts)]
                report = train_step(model, opt, make_batch(items), lam, lr, cfg.sum_mse, it, epoch)
                result.reports.append(report)
                if log_fh:
                    log_fh.write(report.csv() + "\n")
                it += 1
            log.info("epoch %d: loss %.5f", epoch, result.reports[-1].total)
            if out_dir is not None:
                path = out_dir / f"epoch_{epoch}.ckpt"
                model.save(path, {"epoch": epoch, "train": cfg.to_dict()})
                result.checkpoints.append(path)
    finally:
        if log_fh:
            log_fh.close()
    return result


def train_step(model, opt, batch, lam, lr, sum_sq=False, iteration=0, epoch=0) -> LossReport:
    c = batch.c if model.cfg.use_contour else None
    y_hat, logits = model(batch.x, c)
    total, mse, ce = loss_terms(y_hat, batch.y, logits, batch.phones, batch.mask, lam, sum_sq)
    value = float(total.data)
    if not math.isfinite(value):
        raise TrainingDivergedError(iteration, batch.ids, value)
    model.zero_grad()
    total.backward()
    opt.step(lr)
    return LossReport(iteration, epoch, lr, value, float(mse.data), float(ce.data), int(batch.mask.sum()))


def cached_features(samples, phsync=False):
    """Feature function that memoises unshifted items (for runs without augmentation)."""
    memo: dict[str, FeatureItem] = {}

    def get(sample, shift):
        if shift:
            return sample_features(sample, shift, phsync=phsync)
        if sample.sample_id not in memo:
            memo[sample.sample_id] = sample_features(sample, 0.0, phsync=phsync)
        return memo[sample.sample_id]

    return get
