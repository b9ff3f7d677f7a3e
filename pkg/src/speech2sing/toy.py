"""Synthetic paired corpus for smoke tests and demos.

Consonants are band-passed noise bursts, vowels are harmonic tones shaped
by two formant resonances.  Speech vowels sit at a flat speaking pitch per
speaker; sung vowels follow a per-song note sequence.  Songs ``a`` and
``b`` share their lyrics and therefore their read recordings, so only the
melody tells their targets apart.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np
from scipy.signal import butter, sosfilt

from .data import PHONES, SIL, PhoneInterval, write_annotation
from .signal import SAMPLE_RATE, Waveform, write_wav

CONSONANT_BANDS = {"S": (4000, 6500), "K": (1500, 2600), "T": (2800, 4200), "F": (5000, 7000)}
VOWEL_FORMANTS = {"AA": (700, 1100), "IY": (300, 2300), "UW": (320, 900), "EH": (550, 1800)}

LYRICS = {"a": [("S", "AA"), ("K", "IY"), ("T", "UW")],
          "b": [("S", "AA"), ("K", "IY"), ("T", "UW")],
          "c": [("F", "EH"), ("K", "AA"), ("S", "IY")],
          "d": [("T", "AA"), ("S", "EH"), ("K", "UW"), ("F", "IY")]}
MELODIES = {"a": (262.0, 330.0, 392.0), "b": (294.0, 370.0, 440.0), "c": (220.0, 349.0, 311.0),
            "d": (196.0, 262.0, 233.0, 294.0)}
SPEAKERS = {"s1": 120.0, "s2": 190.0}

SPEECH_DUR = ((0.08, 0.30), (0.07, 0.22), (0.09, 0.27))
SING_DUR = ((0.06, 0.34), (0.06, 0.30), (0.05, 0.19))
# song "d" has four slower words, so every three-word run holds over a second of speech
LONG_SPEECH_DUR = ((0.08, 0.30), (0.07, 0.30), (0.09, 0.28), (0.08, 0.30))
LONG_SING_DUR = ((0.06, 0.30), (0.06, 0.28), (0.05, 0.30), (0.06, 0.26))
EDGE_SIL = 0.2


def _noise(rng, dur, band, amp=0.08):
    n = int(round(dur * SAMPLE_RATE))
    sos = butter(4, band, btype="bandpass", fs=SAMPLE_RATE, output="sos")
    x = sosfilt(sos, rng.standard_normal(n))
    return amp * x / (np.abs(x).max() + 1e-12)


def _vowel(dur, f0, formants, amp=0.3):
    n = int(round(dur * SAMPLE_RATE))
    t = np.arange(n) / SAMPLE_RATE
    out = np.zeros(n)
    k = 1
    while k * f0 < 4000:
        f = k * f0
        gain = sum(1.0 / (1.0 + ((f - fc) / 120.0) ** 2) for fc in formants) + 0.05
        out += gain / k**0.5 * np.sin(2 * np.pi * f * t)
        k += 1
    ramp = min(n // 2, int(0.01 * SAMPLE_RATE))
    env = np.ones(n)
    env[:ramp] = np.linspace(0, 1, ramp)
    env[n - ramp :] = np.linspace(1, 0, ramp)
    return amp * env * out / (np.abs(out).max() + 1e-12)


def render(words, durations, pitches, rng):
    """Waveform samples and phone annotation for a list of (consonant, vowel) words."""
    pieces = [np.zeros(int(round(EDGE_SIL * SAMPLE_RATE)))]
    ann = [PhoneInterval(0.0, EDGE_SIL, PHONES.index(SIL))]
    t = EDGE_SIL
    for i, ((cons, vow), (dc, dv), f0) in enumerate(zip(words, durations, pitches)):
        pieces.append(_noise(rng, dc, CONSONANT_BANDS[cons]))
        pieces.append(_vowel(dv, f0, VOWEL_FORMANTS[vow]))
        ann.append(PhoneInterval(t, t + dc, PHONES.index(cons), f"w{i}"))
        ann.append(PhoneInterval(t + dc, t + dc + dv, PHONES.index(vow), f"w{i}"))
        t += dc + dv
    pieces.append(np.zeros(int(round(EDGE_SIL * SAMPLE_RATE))))
    ann.append(PhoneInterval(t, t + EDGE_SIL, PHONES.index(SIL)))
    return np.concatenate(pieces), ann


def make_toy_corpus(root, songs=("a", "b", "c"), speakers=tuple(SPEAKERS), seed=0) -> Path:
    """Write a small read/sing corpus under ``root``; returns ``root``."""
    root = Path(root)
    for si, spk in enumerate(speakers):
        for kind in ("read", "sing"):
            (root / spk / kind).mkdir(parents=True, exist_ok=True)
        for song in songs:
            lyrics = LYRICS[song]
            # same lyrics and speaker -> same noise draw -> identical read audio
            lyric_key = sum(ord(ch) for cv in lyrics for ch in "".join(cv))
            rng = np.random.default_rng([seed, si, lyric_key])
            long = len(lyrics) > 3
            speech_dur, sing_dur = (LONG_SPEECH_DUR, LONG_SING_DUR) if long else (SPEECH_DUR, SING_DUR)
            speech, speech_ann = render(lyrics, speech_dur, [SPEAKERS[spk]] * len(lyrics), rng)
            rng = np.random.default_rng([seed, si, lyric_key, ord(song)])
            scale = 2 ** (-3 * si / 12)
            singing, sing_ann = render(lyrics, sing_dur, [f * scale for f in MELODIES[song]], rng)
            write_wav(Waveform(speech), root / spk / "read" / f"{song}.wav")
            write_annotation(speech_ann, root / spk / "read" / f"{song}.txt")
            write_wav(Waveform(singing), root / spk / "sing" / f"{song}.wav")
            write_annotation(sing_ann, root / spk / "sing" / f"{song}.txt")
    return root
