"""Input preparation: silence removal, phase-vocoder stretching, log-magnitude
features, melody rasterisation and pitch-shift augmentation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ParameterError, SilentInputError
from .signal import DEFAULT_STFT, SAMPLE_RATE, StftConfig, Waveform, _as_samples, istft, resample_ratio, stft

FRAME_HOP_SEC = DEFAULT_STFT.hop / SAMPLE_RATE
F0_MIN, F0_MAX = 50.0, 1500.0


@dataclass(frozen=True)
class MelodyContour:
    """Per-frame fundamental frequency in Hz; 0 marks an unvoiced frame."""

    f0: np.ndarray
    frame_hop: float = FRAME_HOP_SEC

    def __post_init__(self):
        f0 = np.asarray(self.f0, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(f0)) or np.any(f0 < 0):
            raise ParameterError("contour values must be finite and non-negative")
        voiced = f0[f0 > 0]
        if voiced.size and (voiced.min() < F0_MIN - 1e-9 or voiced.max() > F0_MAX + 1e-9):
            raise ParameterError(f"voiced f0 must lie in [{F0_MIN}, {F0_MAX}] Hz")
        object.__setattr__(self, "f0", f0)

    def __len__(self):
        return self.f0.shape[0]

    @property
    def voiced(self) -> np.ndarray:
        return self.f0 > 0

    @property
    def times(self) -> np.ndarray:
        return np.arange(len(self)) * self.frame_hop

    @property
    def duration(self) -> float:
        return (len(self) - 1) * self.frame_hop


def read_contour(path) -> MelodyContour:
    """Parse a ``time_sec<TAB>f0_hz`` file sampled every 16 ms."""
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ParameterError(f"{path}:{lineno}: expected 'time<TAB>f0'")
            rows.append((float(parts[0]), float(parts[1])))
    if not rows:
        raise ParameterError(f"{path}: empty contour")
    times = np.array([r[0] for r in rows])
    if len(times) > 1 and not np.allclose(np.diff(times), FRAME_HOP_SEC, atol=1e-4):
        raise ParameterError(f"{path}: frame period must be {FRAME_HOP_SEC * 1000:g} ms")
    return MelodyContour(np.array([r[1] for r in rows]))


def write_contour(c: MelodyContour, path) -> None:
    with open(Path(path), "w") as fh:
        for t, f in zip(c.times, c.f0):
            fh.write(f"{t:.3f}\t{f:.3f}\n")


# --------------------------------------------------------------------------
# Silence removal
# --------------------------------------------------------------------------

def silent_frame_mask(x, frame_len=1024, hop=256, threshold_db=-40.0) -> np.ndarray:
    """Flag frames whose energy is not above ``threshold_db`` relative to the loudest.

    Frame ``t`` starts at sample ``t * hop``; the tail is zero-padded so the
    hop spans tile the signal exactly.
    """
    x = _as_samples(x)
    n = math.ceil(len(x) / hop)
    padded = np.pad(x, (0, n * hop + frame_len - len(x)))
    frames = np.lib.stride_tricks.sliding_window_view(padded, frame_len)[::hop][:n]
    energy = np.einsum("ij,ij->i", frames, frames)
    emax = energy.max() if n else 0.0
    if emax <= 0:
        return np.ones(n, dtype=bool)
    return energy <= emax * 10.0 ** (threshold_db / 10.0)


def _runs(mask):
    """Yield (start, stop) of maximal True runs."""
    edges = np.diff(np.concatenate([[0], mask.astype(np.int8), [0]]))
    return zip(np.flatnonzero(edges == 1), np.flatnonzero(edges == -1))


def remove_silent_frames(w: Waveform, frame_len=1024, hop=256, threshold_db=-40.0, min_run=3) -> Waveform:
    """Excise runs of at least ``min_run`` consecutive silent frames.

    A frame is silent when its short-time energy (sum of squares over
    ``frame_len`` samples) is 40 dB or more below the loudest frame.  Each
    removed frame takes its ``hop``-sample span with it; shorter runs stay.
    """
    x = w.samples
    if len(x) < frame_len:
        raise ParameterError(f"need at least {frame_len} samples, got {len(x)}")
    silent = silent_frame_mask(x, frame_len, hop, threshold_db)
    if silent.all():
        raise SilentInputError("input is entirely silent")
    keep = np.ones(len(x), dtype=bool)
    for a, b in _runs(silent):
        if b - a >= min_run:
            keep[a * hop : b * hop] = False
    return Waveform(x[keep], w.sample_rate)


# --------------------------------------------------------------------------
# Phase vocoder
# --------------------------------------------------------------------------

def vocode(x, positions, length: int, cfg: StftConfig = DEFAULT_STFT) -> np.ndarray:
    """Resynthesise ``x`` with output frame ``t`` read from analysis frame ``positions[t]``.

    ``positions`` are fractional analysis-frame indices.  Magnitudes are
    linearly interpolated between neighbouring frames; phases are
    propagated bin by bin using the instantaneous frequency measured
    between those frames.  The output is trimmed/padded to ``length``.
    """
    spec = stft(x, cfg)
    n_bins, n_in = spec.shape
    spec = np.concatenate([spec, np.zeros((n_bins, 2), spec.dtype)], axis=1)
    positions = np.clip(np.asarray(positions, dtype=np.float64), 0, n_in - 1)
    expected = 2 * np.pi * cfg.hop * np.arange(n_bins) / cfg.fft_size

    out = np.empty((n_bins, len(positions)), dtype=np.complex128)
    phase = np.angle(spec[:, 0])
    for t, pos in enumerate(positions):
        i = int(pos)
        alpha = pos - i
        left, right = spec[:, i], spec[:, i + 1]
        mag = (1.0 - alpha) * np.abs(left) + alpha * np.abs(right)
        out[:, t] = mag * np.exp(1j * phase)
        dphase = np.angle(right) - np.angle(left) - expected
        dphase -= 2 * np.pi * np.round(dphase / (2 * np.pi))
        phase = phase + expected + dphase
    return istft(out, cfg, length=length)


def time_stretch(w: Waveform, rate: float, length: int | None = None, cfg: StftConfig = DEFAULT_STFT) -> Waveform:
    """Phase-vocoder time scaling; ``rate > 1`` speeds up, pitch is kept.

    Output length is ``round(len(w) / rate)`` unless ``length`` is given.
    """
    if not 0.1 <= rate <= 10.0:
        raise ParameterError(f"stretch rate {rate:.4g} outside [0.1, 10]")
    if length is None:
        length = int(round(len(w) / rate))
    n_out = cfg.n_frames(length)
    y = vocode(w.samples, np.arange(n_out) * rate, length, cfg)
    return Waveform(y, w.sample_rate)


def stretch_to_contour(w: Waveform, c: MelodyContour, cfg: StftConfig = DEFAULT_STFT) -> Waveform:
    """Uniformly stretch ``w`` so its STFT has exactly ``len(c)`` frames."""
    if len(c) == 0:
        raise ParameterError("empty contour")
    if cfg.n_frames(len(w)) == len(c):
        return w
    target = max(1, (len(c) - 1) * cfg.hop)
    return time_stretch(w, len(w) / target, length=target, cfg=cfg)


def pitch_shift(w: Waveform, semitones: float, cfg: StftConfig = DEFAULT_STFT) -> Waveform:
    """Transpose by ``semitones`` keeping the duration.

    Resamples by ``2**(-s/12)`` (which transposes and changes length) and
    then stretches back to the original length.
    """
    if abs(semitones) > 12:
        raise ParameterError(f"pitch shift of {semitones} semitones exceeds 12")
    if semitones == 0:
        return Waveform(w.samples.copy(), w.sample_rate)
    factor = 2.0 ** (semitones / 12.0)
    squeezed = resample_ratio(w.samples, 1.0 / factor)
    y = time_stretch(Waveform(squeezed, w.sample_rate), 1.0 / factor, length=len(w), cfg=cfg)
    return y


# --------------------------------------------------------------------------
# Features
# --------------------------------------------------------------------------

def log_mag(spec: np.ndarray) -> np.ndarray:
    """``log(1 + |S|)`` element-wise, as float32."""
    return np.log1p(np.abs(spec)).astype(np.float32)


def rasterize_contour(c: MelodyContour, n_bins: int = 513, fft_size: int = 1024,
                      sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    """Binary F x T image with a single 1 per voiced frame at the nearest bin.

    Ties between two bins round up.  Unvoiced frames give all-zero columns.
    """
    f0 = c.f0
    if np.any(f0 >= sample_rate / 2):
        raise ParameterError("contour reaches the Nyquist frequency")
    image = np.zeros((n_bins, len(f0)), dtype=np.float32)
    voiced = np.flatnonzero(f0 > 0)
    bins = np.floor(f0[voiced] * fft_size / sample_rate + 0.5).astype(np.int64)
    if np.any(bins >= n_bins):
        raise ParameterError("contour bin beyond the spectrogram")
    image[bins, voiced] = 1.0
    return image


def speech_features(speech: Waveform, contour: MelodyContour, cfg: StftConfig = DEFAULT_STFT,
                    remove_silence: bool = True) -> np.ndarray:
    """Network input for ``speech`` aligned to ``contour``: exactly ``len(contour)`` frames."""
    if remove_silence:
        speech = remove_silent_frames(speech)
    stretched = stretch_to_contour(speech, contour, cfg)
    x = log_mag(stft(stretched, cfg))
    return _fit_frames(x, len(contour))


def _fit_frames(x, n):
    if x.shape[1] >= n:
        return x[:, :n]
    return np.pad(x, ((0, 0), (0, n - x.shape[1])))
