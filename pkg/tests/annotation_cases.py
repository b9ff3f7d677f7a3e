"""Random word/segment structures rendered as phone annotations."""
import numpy as np

from speech2sing.data import PHONES, SIL, PhoneInterval

_NON_SIL = [p for p in ("AA", "B", "K", "IY", "S", "T", "UW", "M", "N", "EH")]


def random_structure(rng, max_segments=4, max_words=7):
    return [int(rng.integers(1, max_words + 1)) for _ in range(int(rng.integers(1, max_segments + 1)))]


def render_annotation(rng, structure, segment_gap=0.1):
    """Phone intervals for segments of the given word counts.

    Segments are separated by long silences; words inside a segment are
    either abutting (distinguished by word labels) or split by a short pause.
    """
    t = 0.0
    ann = []
    sil = PHONES.index(SIL)
    w = 0
    for s, n_words in enumerate(structure):
        gap = float(rng.uniform(segment_gap, 0.5))
        ann.append(PhoneInterval(t, t + gap, sil))
        t += gap
        for k in range(n_words):
            if k and rng.random() < 0.5:
                pause = float(rng.uniform(0.01, segment_gap * 0.9))
                ann.append(PhoneInterval(t, t + pause, sil))
                t += pause
            for _ in range(int(rng.integers(1, 4))):
                d = float(rng.uniform(0.03, 0.2))
                ann.append(PhoneInterval(t, t + d, PHONES.index(_NON_SIL[int(rng.integers(len(_NON_SIL)))]), f"w{w}"))
                t += d
            w += 1
    gap = float(rng.uniform(segment_gap, 0.5))
    ann.append(PhoneInterval(t, t + gap, sil))
    return ann


def brute_force_count(structure, min_words=3):
    """Count word index ranges of length >= min_words that stay inside one segment."""
    seg_of = [s for s, n in enumerate(structure) for _ in range(n)]
    total = 0
    for i in range(len(seg_of)):
        for j in range(i, len(seg_of)):
            if j - i + 1 >= min_words and seg_of[i] == seg_of[j]:
                total += 1
    return total
