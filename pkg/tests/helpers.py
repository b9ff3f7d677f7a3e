"""Signal fixtures shared by the test modules."""
import numpy as np

from speech2sing.metrics import yin_f0
from speech2sing.signal import SAMPLE_RATE, Waveform


def tone(freq, dur=1.0, sr=SAMPLE_RATE, amp=0.5, harmonics=1):
    t = np.arange(int(round(dur * sr))) / sr
    x = sum(amp / k * np.sin(2 * np.pi * k * freq * t) for k in range(1, harmonics + 1))
    return Waveform(x.astype(np.float32), sr)


def median_f0(w, trim=4):
    """Median YIN estimate over voiced frames, ignoring a few frames at each edge."""
    f0 = yin_f0(w).f0
    f0 = f0[trim : len(f0) - trim] if len(f0) > 2 * trim + 1 else f0
    voiced = f0[f0 > 0]
    assert voiced.size, "no voiced frames"
    return float(np.median(voiced))


def snr_db(ref, est):
    ref = np.asarray(ref, dtype=np.float64)
    err = ref - np.asarray(est, dtype=np.float64)
    return 10 * np.log10(np.sum(ref**2) / max(np.sum(err**2), 1e-300))
