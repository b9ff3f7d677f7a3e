"""From predicted log-magnitudes back to audio."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import tensor as T
from .prep import MelodyContour, rasterize_contour, speech_features
from .signal import DEFAULT_STFT, StftConfig, Waveform, istft, stft

GL_ITERS = 60
GL_POWER = 1.2


def inv_log_mag(logmag: np.ndarray) -> np.ndarray:
    """``exp(x) - 1`` element-wise."""
    return np.expm1(np.asarray(logmag, dtype=np.float64))


def griffin_lim(mag: np.ndarray, cfg: StftConfig = DEFAULT_STFT, iters=GL_ITERS, power=GL_POWER,
                seed=0, length=None, errors: list | None = None) -> Waveform:
    """Recover a waveform whose STFT magnitude approximates ``mag ** power``.

    Starts from uniformly random phases drawn from ``seed`` and alternates
    inverse STFT / STFT, keeping the estimated phase and imposing the target
    magnitude.  ``iters=0`` returns the inverse STFT of the initial guess.
    If ``errors`` is a list, ``|| |STFT(x_k)| - target ||`` is appended per
    iteration.

    Framing uses zero padding at the edges so that each inverse STFT is the
    exact least-squares projection.
    """
    cfg = replace(cfg, pad_mode="constant")
    target = np.asarray(mag, dtype=np.float64) ** power
    rng = np.random.default_rng(seed)
    phase = np.exp(2j * np.pi * rng.random(target.shape))
    x = istft(target * phase, cfg, length=length)
    for _ in range(iters):
        spec = stft(x, cfg)[:, : target.shape[1]]
        if errors is not None:
            errors.append(float(np.linalg.norm(np.abs(spec) - target)))
        x = istft(target * np.exp(1j * np.angle(spec)), cfg, length=length)
    return Waveform(np.clip(x, -1.0, 1.0) if np.abs(x).max(initial=0) > 1.0 else x)


@dataclass
class Prediction:
    waveform: Waveform
    logmag: np.ndarray
    logits: np.ndarray | None


def predict_full(model, speech: Waveform, contour: MelodyContour, gl_iters=GL_ITERS, power=GL_POWER,
                 seed=0, remove_silence=True) -> Prediction:
    """Silence removal, stretch to the contour, network forward pass and Griffin-Lim."""
    x = speech_features(speech, contour, remove_silence=remove_silence)
    c = rasterize_contour(contour) if model.cfg.use_contour else None
    with T.no_grad():
        y_hat, logits = model(x, c)
    logmag = np.maximum(y_hat.data, 0.0)
    wave = griffin_lim(inv_log_mag(logmag), iters=gl_iters, power=power, seed=seed)
    return Prediction(wave, logmag, None if logits is None else logits.data)


def predict(model, speech: Waveform, contour: MelodyContour, **kwargs) -> Waveform:
    return predict_full(model, speech, contour, **kwargs).waveform
