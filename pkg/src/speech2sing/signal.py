"""Waveform I/O, band-limited resampling and STFT analysis/synthesis.

Everything here is a pure function of its inputs.  Internally the
arithmetic runs in float64; waveforms are handed back as float32.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.io import wavfile
from scipy.signal import get_window

from .errors import ParameterError, UnsupportedEncodingError, WavFormatError

SAMPLE_RATE = 16000
PCM16_SCALE = 32768.0


@dataclass(frozen=True)
class Waveform:
    """Mono audio samples with their sample rate."""

    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        samples = np.ascontiguousarray(self.samples, dtype=np.float32).reshape(-1)
        if not np.all(np.isfinite(samples)):
            raise ParameterError("waveform contains non-finite samples")
        if int(self.sample_rate) <= 0:
            raise ParameterError(f"sample_rate must be positive, got {self.sample_rate}")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate


def _as_samples(w) -> np.ndarray:
    if isinstance(w, Waveform):
        return w.samples.astype(np.float64)
    return np.asarray(w, dtype=np.float64).reshape(-1)


# --------------------------------------------------------------------------
# WAV I/O
# --------------------------------------------------------------------------

def read_wav(path) -> Waveform:
    """Read a PCM16 or float32 WAV file as a mono :class:`Waveform`.

    Stereo (or wider) files are averaged across channels.  PCM16 values
    are divided by 2**15.
    """
    path = Path(path)
    try:
        rate, data = wavfile.read(path)
    except FileNotFoundError:
        raise
    except ValueError as exc:
        msg = str(exc)
        if "format" in msg.lower() and "riff" not in msg.lower():
            raise UnsupportedEncodingError(f"{path}: {msg}") from exc
        raise WavFormatError(f"{path}: {msg}") from exc
    except EOFError as exc:
        raise WavFormatError(f"{path}: truncated file") from exc

    if data.dtype == np.int16:
        samples = data.astype(np.float64) / PCM16_SCALE
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    else:
        raise UnsupportedEncodingError(f"{path}: unsupported sample type {data.dtype}")
    if samples.ndim == 2:
        samples = samples.mean(axis=1)
    return Waveform(samples, rate)


def write_wav(w: Waveform, path) -> None:
    """Write ``w`` as 16-bit PCM mono; samples beyond full scale are clipped."""
    pcm = np.clip(np.round(w.samples.astype(np.float64) * PCM16_SCALE), -32768, 32767)
    wavfile.write(Path(path), w.sample_rate, pcm.astype("<i2"))


# --------------------------------------------------------------------------
# Resampling
# --------------------------------------------------------------------------

RESAMPLE_TAPS = 64
KAISER_BETA = 8.0
RESAMPLE_ROLLOFF = 0.95
_CHUNK = 1 << 15


def resample_ratio(x, ratio: float, length: int | None = None) -> np.ndarray:
    """Windowed-sinc interpolation of ``x`` onto a grid ``ratio`` times denser.

    Output sample ``n`` sits at input position ``n / ratio``.  The kernel is
    a 64-tap Kaiser-windowed sinc whose cutoff follows ``min(1, ratio)`` so
    downsampling is band-limited.  Taps are renormalised to unit DC gain.
    """
    x = _as_samples(x)
    if ratio <= 0:
        raise ParameterError(f"resampling ratio must be positive, got {ratio}")
    if length is None:
        length = int(round(len(x) * ratio))
    if length == 0 or len(x) == 0:
        return np.zeros(length)

    half = RESAMPLE_TAPS // 2
    cutoff = RESAMPLE_ROLLOFF * min(1.0, ratio)
    padded = np.concatenate([np.zeros(half), x, np.zeros(half + 1)])
    offsets = np.arange(-half + 1, half + 1)
    out = np.empty(length)
    for start in range(0, length, _CHUNK):
        n = np.arange(start, min(start + _CHUNK, length))
        pos = n / ratio
        base = np.floor(pos).astype(np.int64)
        taps = base[:, None] + offsets[None, :]
        dist = pos[:, None] - taps
        kernel = np.sinc(cutoff * dist) * _kaiser(dist, half)
        kernel /= kernel.sum(axis=1, keepdims=True)
        idx = np.clip(taps + half, 0, len(padded) - 1)
        out[n] = np.einsum("ij,ij->i", kernel, padded[idx])
    return out


def _kaiser(dist, half):
    # Kaiser window evaluated at fractional tap offsets
    arg = 1.0 - (dist / half) ** 2
    win = np.i0(KAISER_BETA * np.sqrt(np.clip(arg, 0.0, None))) / np.i0(KAISER_BETA)
    return np.where(arg > 0, win, 0.0)


def resample(w: Waveform, target_rate: int) -> Waveform:
    """Resample ``w`` to ``target_rate`` Hz; identity if the rates agree."""
    if target_rate <= 0:
        raise ParameterError(f"target_rate must be positive, got {target_rate}")
    if target_rate == w.sample_rate:
        return Waveform(w.samples.copy(), w.sample_rate)
    ratio = target_rate / w.sample_rate
    length = int(round(len(w) * ratio))
    return Waveform(resample_ratio(w.samples, ratio, length), target_rate)


# --------------------------------------------------------------------------
# STFT
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class StftConfig:
    """STFT framing.  Defaults: 1024-point FFT, 64 ms Hann window, 16 ms hop at 16 kHz."""

    fft_size: int = 1024
    window_len: int = 1024
    hop: int = 256
    window: str = "hann"
    center: bool = True
    pad_mode: str = "reflect"
    _win: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.window_len > self.fft_size:
            raise ParameterError("window_len must not exceed fft_size")
        if self.hop <= 0 or self.window_len % self.hop:
            raise ParameterError("hop must divide window_len")
        if self.pad_mode not in ("reflect", "constant"):
            raise ParameterError(f"unknown pad_mode {self.pad_mode!r}")
        win = get_window(self.window, self.window_len, fftbins=True).astype(np.float64)
        lpad = (self.fft_size - self.window_len) // 2
        win = np.pad(win, (lpad, self.fft_size - self.window_len - lpad))
        # constant-overlap-add check on the squared window used by istft
        ola = np.zeros(self.hop)
        for k in range(0, self.fft_size, self.hop):
            seg = win[k : k + self.hop] ** 2
            ola[: len(seg)] += seg
        if ola.max() <= 0 or np.ptp(ola) > 1e-6 * ola.max():
            raise ParameterError(f"{self.window} window is not COLA at hop {self.hop}")
        object.__setattr__(self, "_win", win)

    @property
    def n_bins(self) -> int:
        return self.fft_size // 2 + 1

    @property
    def analysis_window(self) -> np.ndarray:
        return self._win

    def n_frames(self, n_samples: int) -> int:
        if self.center:
            return 1 + n_samples // self.hop
        return 1 + max(0, n_samples - self.fft_size) // self.hop


DEFAULT_STFT = StftConfig()


def stft(w, cfg: StftConfig = DEFAULT_STFT) -> np.ndarray:
    """Complex half-spectrum of shape ``(fft_size // 2 + 1, T)``.

    With ``cfg.center`` the signal is padded by ``fft_size // 2`` on both
    sides so frame ``t`` is centred on sample ``t * hop``.
    """
    x = _as_samples(w)
    if len(x) < 1:
        raise ParameterError("stft needs at least one sample")
    n_fft = cfg.fft_size
    if cfg.center:
        mode = cfg.pad_mode if len(x) > n_fft // 2 else "constant"
        x = np.pad(x, n_fft // 2, mode=mode)
    elif len(x) < n_fft:
        x = np.pad(x, (0, n_fft - len(x)))
    frames = np.lib.stride_tricks.sliding_window_view(x, n_fft)[:: cfg.hop]
    return np.fft.rfft(frames * cfg.analysis_window, axis=1).T


def istft(spec: np.ndarray, cfg: StftConfig = DEFAULT_STFT, length: int | None = None) -> np.ndarray:
    """Least-squares inverse of :func:`stft` (window-square normalised overlap-add).

    The default output length is ``hop * (T - 1)`` for centred framing and
    ``fft_size + hop * (T - 1)`` otherwise.
    """
    spec = np.asarray(spec)
    n_fft, hop = cfg.fft_size, cfg.hop
    n_frames = spec.shape[1]
    win = cfg.analysis_window
    frames = np.fft.irfft(spec.T, n=n_fft, axis=1) * win
    total = n_fft + hop * (n_frames - 1)
    out = np.zeros(total)
    norm = np.zeros(total)
    wsq = win**2
    for t in range(n_frames):
        out[t * hop : t * hop + n_fft] += frames[t]
        norm[t * hop : t * hop + n_fft] += wsq
    nz = norm > 1e-10
    out[nz] /= norm[nz]
    if cfg.center:
        out = out[n_fft // 2 :]
        if length is None:
            length = hop * (n_frames - 1)
    if length is not None:
        out = out[:length] if len(out) >= length else np.pad(out, (0, length - len(out)))
    return out
