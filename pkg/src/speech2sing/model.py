"""Speech encoder, contour encoder, decoder with skips and the phoneme decoder."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError, ShapeError
from .nn import FREQ, TIME, Conv1d, ConvTranspose1d, DownBlock, GRU, Module, NormGRUBlock, UpBlock, apply_along
from .tensor import Tensor

N_PHONES = 41
VARIANTS = ("B1", "B2", "AllNorm", "P-MSE", "P-MTL")


@dataclass(frozen=True)
class ModelConfig:
    variant: str = "P-MSE"
    use_contour: bool = True
    use_in: bool = True
    use_skips: bool = True
    use_dp: bool = False
    all_norm: bool = False
    base_channels: int = 32
    dp_hidden: int = 64
    n_phones: int = N_PHONES
    n_bins: int = 513
    seed: int = 0

    @property
    def widths(self):
        c = self.base_channels
        return (c, 2 * c, 4 * c)

    def to_dict(self):
        return dataclasses.asdict(self)


def variant_config(name: str, **overrides) -> ModelConfig:
    """Flags for one of the evaluated systems.

    B1 drops the contour encoder, B2 drops instance norm and skips, AllNorm
    adds instance norm before every resampling block, P-MTL adds the
    phoneme decoder.
    """
    flags = {
        "B1": dict(use_contour=False),
        "B2": dict(use_in=False, use_skips=False),
        "AllNorm": dict(all_norm=True),
        "P-MSE": {},
        "P-MTL": dict(use_dp=True),
    }
    if name not in flags:
        raise ConfigError(f"unknown variant {name!r}; choose from {', '.join(VARIANTS)}")
    return ModelConfig(variant=name, **{**flags[name], **overrides})


def _round_up(n, m):
    return -(-n // m) * m


class Encoder(Module):
    """Three (frequency-down, time-down) stages; each halves one axis."""

    def __init__(self, cfg: ModelConfig, rng):
        blocks = []
        c_in = 1
        for width in cfg.widths:
            blocks.append(DownBlock(FREQ, c_in, width, cfg.all_norm, rng))
            blocks.append(DownBlock(TIME, width, width, cfg.all_norm, rng))
            c_in = width
        self.blocks = blocks

    def __call__(self, x):
        acts = []
        for block in self.blocks:
            x = block(x)
            acts.append(x)
        return x, acts


class Decoder(Module):
    """Mirror of the encoder with a GRU block at the bottleneck and one mid-way.

    Up blocks run (time, freq) x 3.  Skips come from the speech encoder at
    matching resolution except for the last frequency block, whose output
    is mapped to one channel by a 1x1 convolution and a ReLU.
    """

    def __init__(self, cfg: ModelConfig, rng):
        c1, c2, c3 = cfg.widths
        latent = c3 * (2 if cfg.use_contour else 1)
        skip = cfg.use_skips
        norm = cfg.all_norm
        self.use_skips = skip
        self.bottleneck = NormGRUBlock(latent, cfg.use_in, rng)
        self.up = [
            UpBlock(TIME, latent, c3, norm, rng),
            UpBlock(FREQ, c3 * (2 if skip else 1), c2, norm, rng),
            UpBlock(TIME, c2 * (2 if skip else 1), c2, norm, rng),
            UpBlock(FREQ, c2 * (2 if skip else 1), c1, norm, rng),
            UpBlock(TIME, c1 * (2 if skip else 1), c1, norm, rng),
            UpBlock(FREQ, c1 * (2 if skip else 1), max(1, c1 // 2), norm, rng),
        ]
        self.mid = NormGRUBlock(c2 * (2 if skip else 1), cfg.use_in, rng)
        self.out = Conv1d(max(1, c1 // 2), 1, 1, rng=rng)
        self.tap_channels = c1 * (2 if skip else 1)

    def __call__(self, z, skips):
        """Returns the prediction and the penultimate frequency-block activation."""
        # encoder activations in reverse order, minus the latent itself
        skip_in = list(reversed(skips[:-1])) if self.use_skips else [None] * 5
        h = self.bottleneck(z)
        tap = None
        for i, block in enumerate(self.up):
            h = block(h, skip_in[i] if i < 5 else None)
            if i == 1:
                h = self.mid(h)
            if i == 3:
                tap = h
        y = T.relu(apply_along(h, FREQ, self.out))
        return y, tap


class PhonemeDecoder(Module):
    """Transposed conv (time x2) -> GRU -> conv, giving per-frame phoneme logits."""

    def __init__(self, in_features, hidden, n_phones, rng):
        self.tconv = ConvTranspose1d(in_features, hidden, 4, stride=2, padding=1, rng=rng)
        self.gru = GRU(hidden, hidden, rng)
        self.conv = Conv1d(hidden, n_phones, 3, padding=1, rng=rng)

    def __call__(self, h):
        b, c, f, t = h.shape
        x = T.relu(self.tconv(h.reshape(b, c * f, t)))
        x = self.gru(x.transpose(0, 2, 1)).transpose(0, 2, 1)
        return self.conv(x).transpose(0, 2, 1)  # (B, T, n_phones)


class StsModel(Module):
    """Two encoders (speech, contour), a decoder with speech skips and an optional phoneme head."""

    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        self.e1 = Encoder(cfg, rng)
        self.e2 = Encoder(cfg, rng) if cfg.use_contour else None
        self.d = Decoder(cfg, rng)
        f_tap = _round_up(cfg.n_bins, 8) // 2
        self.dp = PhonemeDecoder(self.d.tap_channels * f_tap, cfg.dp_hidden, cfg.n_phones, rng) if cfg.use_dp else None

    def forward(self, x, c=None):
        """Predict the singing log-magnitude spectrogram (and phoneme logits).

        ``x`` and ``c`` are (B, F, T) or (F, T).  Both axes are zero-padded to
        multiples of 8 (time to at least 16) and the outputs cropped back.
        Returns ``(y_hat, logits)`` where ``logits`` is (B, T, n_phones) or None.
        """
        x = x if isinstance(x, Tensor) else Tensor(x)
        squeeze = x.ndim == 2
        if squeeze:
            x = x.reshape(1, *x.shape)
        if not self.cfg.use_contour and c is not None:
            raise ContractError(f"{self.cfg.variant} takes no contour input")
        if self.cfg.use_contour and c is None:
            raise ContractError(f"{self.cfg.variant} needs a contour input")
        b, f, t = x.shape
        if f != self.cfg.n_bins:
            raise ShapeError(f"expected {self.cfg.n_bins} frequency bins, got {f}")
        fp, tp = _round_up(f, 8), max(16, _round_up(t, 8))
        widths = [(0, 0), (0, fp - f), (0, tp - t)]

        z, acts = self.e1(T.pad(x, widths).reshape(b, 1, fp, tp))
        if self.cfg.use_contour:
            c = c if isinstance(c, Tensor) else Tensor(c)
            if squeeze:
                c = c.reshape(1, *c.shape)
            if c.shape != x.shape:
                raise ShapeError(f"contour image {c.shape} does not match spectrogram {x.shape}")
            zc, _ = self.e2(T.pad(c, widths).reshape(b, 1, fp, tp))
            z = T.concat([z, zc], axis=1)
        y, tap = self.d(z, acts)
        y = y.reshape(b, fp, tp)[:, :f, :t]
        logits = self.dp(tap)[:, :t, :] if self.dp is not None else None
        if squeeze:
            y = y.reshape(f, t)
            logits = logits.reshape(t, self.cfg.n_phones) if logits is not None else None
        return y, logits

    __call__ = forward

    # -- persistence -------------------------------------------------------------
    def header(self) -> dict:
        return {"model": self.cfg.to_dict(), "phoneme_tap_channels": self.d.tap_channels}

    def save(self, path, extra: dict | None = None) -> None:
        T.save_tensors(path, self.state_dict(), {**self.header(), **(extra or {})})

    @classmethod
    def load(cls, path):
        header, arrays = T.load_tensors(path)
        model = cls(ModelConfig(**header["model"]))
        model.load_state_dict(arrays)
        return model, header


def build_variant(name: str, **overrides) -> StsModel:
    return StsModel(variant_config(name, **overrides))
