"""Objective metrics: log-spectral distance, raw chroma accuracy and a YIN
pitch tracker on the STFT frame grid.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, ShapeError
from .prep import F0_MAX, F0_MIN, MelodyContour
from .signal import DEFAULT_STFT, SAMPLE_RATE, StftConfig, _as_samples

log = logging.getLogger(__name__)

DB_FLOOR = -80.0
LSD_BAND = (100.0, 3500.0)


# --------------------------------------------------------------------------
# Log-spectral distance
# --------------------------------------------------------------------------

def to_db(logmag: np.ndarray) -> np.ndarray:
    """Convert a ``log(1+|S|)`` spectrogram to ``20 log10 |S|`` floored at -80 dB."""
    mag = np.expm1(np.asarray(logmag, dtype=np.float64))
    floor = 10.0 ** (DB_FLOOR / 20.0)
    return 20.0 * np.log10(np.maximum(mag, floor))


def band_bins(n_bins=513, fft_size=1024, sample_rate=SAMPLE_RATE, band=LSD_BAND) -> np.ndarray:
    """Indices of bins whose centre frequency lies in ``band`` (inclusive)."""
    freqs = np.arange(n_bins) * sample_rate / fft_size
    return np.flatnonzero((freqs >= band[0]) & (freqs <= band[1]))


def lsd(ref_db: np.ndarray, est_db: np.ndarray, fft_size=1024, sample_rate=SAMPLE_RATE) -> float:
    """Mean over frames of the Euclidean distance between dB spectra in 100 Hz-3.5 kHz.

    Both inputs are already in dB (see :func:`to_db`).
    """
    ref_db = np.asarray(ref_db, dtype=np.float64)
    est_db = np.asarray(est_db, dtype=np.float64)
    if ref_db.shape != est_db.shape:
        raise ShapeError(f"lsd shapes differ: {ref_db.shape} vs {est_db.shape}")
    rows = band_bins(ref_db.shape[0], fft_size, sample_rate)
    diff = ref_db[rows] - est_db[rows]
    return float(np.mean(np.sqrt(np.sum(diff**2, axis=0))))


# --------------------------------------------------------------------------
# YIN
# --------------------------------------------------------------------------

def yin_f0(w, cfg: StftConfig = DEFAULT_STFT, sample_rate=SAMPLE_RATE, fmin=F0_MIN, fmax=F0_MAX,
           threshold=0.1, silence_rms=1e-4) -> MelodyContour:
    """Frame-wise YIN f0 on the STFT grid (frame ``t`` centred on ``t * hop``).

    Uses the cumulative-mean-normalised difference function: the first lag
    whose value dips below ``threshold`` is followed down to its local
    minimum and refined by parabolic interpolation.  Frames with no dip, or
    quieter than ``silence_rms``, are unvoiced.
    """
    x = _as_samples(w)
    n_frames = cfg.n_frames(len(x))
    frame_len = cfg.fft_size
    tau_max = int(np.ceil(sample_rate / fmin))
    tau_min = max(2, int(np.floor(sample_rate / fmax)))
    win = frame_len - tau_max
    if win <= 0:
        raise ContractError("frame too short for the lowest f0")

    padded = np.pad(x, frame_len // 2) if cfg.center else x
    need = (n_frames - 1) * cfg.hop + frame_len
    padded = np.pad(padded, (0, max(0, need - len(padded))))
    frames = np.lib.stride_tricks.sliding_window_view(padded, frame_len)[:: cfg.hop][:n_frames]

    nfft = 1 << int(np.ceil(np.log2(frame_len + win)))
    head = np.zeros_like(frames)
    head[:, :win] = frames[:, :win]
    corr = np.fft.irfft(np.conj(np.fft.rfft(head, nfft)) * np.fft.rfft(frames, nfft), nfft)[:, : tau_max + 1]
    csum = np.concatenate([np.zeros((n_frames, 1)), np.cumsum(frames**2, axis=1)], axis=1)
    lags = np.arange(tau_max + 1)
    energy_lag = csum[:, lags + win] - csum[:, lags]
    diff = np.maximum(energy_lag[:, :1] + energy_lag - 2.0 * corr, 0.0)

    running = np.cumsum(diff[:, 1:], axis=1)
    cmnd = np.ones_like(diff)
    with np.errstate(divide="ignore", invalid="ignore"):
        cmnd[:, 1:] = np.where(running > 0, diff[:, 1:] * lags[1:] / running, 1.0)

    rms = np.sqrt(energy_lag[:, 0] / win)
    f0 = np.zeros(n_frames)
    below = cmnd[:, tau_min:tau_max] < threshold
    for t in np.flatnonzero(below.any(axis=1) & (rms > silence_rms)):
        tau = tau_min + int(np.argmax(below[t]))
        while tau + 1 < tau_max and cmnd[t, tau + 1] < cmnd[t, tau]:
            tau += 1
        a, b, c = cmnd[t, tau - 1], cmnd[t, tau], cmnd[t, tau + 1]
        denom = a - 2 * b + c
        shift = 0.5 * (a - c) / denom if denom > 0 else 0.0
        freq = sample_rate / (tau + float(np.clip(shift, -1, 1)))
        if fmin <= freq <= fmax:
            f0[t] = freq
    return MelodyContour(f0, cfg.hop / sample_rate)


# --------------------------------------------------------------------------
# Raw chroma accuracy
# --------------------------------------------------------------------------

def _on_grid(est: MelodyContour, n: int, hop: float) -> np.ndarray:
    if len(est) == n and np.isclose(est.frame_hop, hop):
        return est.f0
    idx = np.clip(np.round(np.arange(n) * hop / est.frame_hop).astype(int), 0, len(est) - 1)
    return est.f0[idx]


def chroma_error_cents(ref_hz, est_hz) -> np.ndarray:
    """Distance in cents after folding octaves, in [0, 600]."""
    cents = 1200.0 * np.log2(np.asarray(est_hz) / np.asarray(ref_hz))
    return np.abs(cents - 1200.0 * np.round(cents / 1200.0))


def rca(reference: MelodyContour, estimate: MelodyContour, tolerance_cents=50.0) -> float:
    """Fraction of reference-voiced frames whose estimate is within 50 cents modulo octaves.

    Unvoiced estimates count as misses.  The estimate is sampled onto the
    reference frame grid by nearest frame when the grids differ.
    """
    voiced = reference.voiced
    if not voiced.any():
        raise ContractError("reference contour has no voiced frames")
    est = _on_grid(estimate, len(reference), reference.frame_hop)[voiced]
    ref = reference.f0[voiced]
    hit = np.zeros(len(ref), dtype=bool)
    ok = est > 0
    hit[ok] = chroma_error_cents(ref[ok], est[ok]) <= tolerance_cents
    return float(hit.mean())


# --------------------------------------------------------------------------
# Corpus evaluation
# --------------------------------------------------------------------------

@dataclass
class MetricReport:
    rows: list = field(default_factory=list)

    @property
    def lsd_db(self) -> float:
        return float(np.mean([r["lsd_db"] for r in self.rows])) if self.rows else float("nan")

    @property
    def rca(self) -> float:
        return float(np.mean([r["rca"] for r in self.rows])) if self.rows else float("nan")

    def to_csv(self, fh) -> None:
        fh.write("sample_id,lsd_db,rca\n")
        for r in self.rows:
            fh.write(f"{r['sample_id']},{r['lsd_db']:.6f},{r['rca']:.6f}\n")
        fh.write(f"MEAN,{self.lsd_db:.6f},{self.rca:.6f}\n")


def select_eval_samples(samples, n=100, seed=0, min_speech_sec=1.0):
    """Seeded random choice of up to ``n`` samples with at least 1 s of speech."""
    eligible = [s for s in samples if s.speech.duration >= min_speech_sec]
    if len(eligible) < n:
        log.warning("only %d eligible samples (asked for %d); using all", len(eligible), n)
        n = len(eligible)
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(eligible))[:n]
    return [eligible[i] for i in sorted(order)]


def evaluate_system(model, samples, n=100, seed=0, oracle_passthrough=False, gl_iters=None) -> MetricReport:
    """LSD against the true singing spectrogram and RCA of the prediction vs the input contour."""
    from . import synth
    from .prep import log_mag
    from .signal import stft

    report = MetricReport()
    for sample in select_eval_samples(samples, n, seed):
        true_lm = log_mag(stft(sample.singing))
        if oracle_passthrough:
            pred_lm, pred_wave = true_lm, sample.singing
        else:
            kwargs = {} if gl_iters is None else {"gl_iters": gl_iters}
            pred = synth.predict_full(model, sample.speech, sample.contour, seed=seed, **kwargs)
            pred_lm, pred_wave = pred.logmag, pred.waveform
        n_t = min(true_lm.shape[1], pred_lm.shape[1])
        row = {
            "sample_id": sample.sample_id,
            "lsd_db": lsd(to_db(true_lm[:, :n_t]), to_db(pred_lm[:, :n_t])),
            "rca": rca(sample.contour, yin_f0(pred_wave)),
        }
        report.rows.append(row)
    return report
