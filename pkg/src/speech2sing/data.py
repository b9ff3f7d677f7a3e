"""Paired read/sung corpus loading, training-sample generation, PhSync
alignment and batching.

Corpus layout::

    root/<speaker>/read/<song>.wav   root/<speaker>/read/<song>.txt
    root/<speaker>/sing/<song>.wav   root/<speaker>/sing/<song>.txt

Annotation lines are ``start end phone [word]`` with times in seconds.
Without the optional word column, words are the runs of phones between
silence/inhalation intervals.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import AlignmentError, AnnotationParseError, PairingError
from .prep import MelodyContour, log_mag, pitch_shift, rasterize_contour, read_contour, speech_features, vocode, write_contour
from .signal import DEFAULT_STFT, SAMPLE_RATE, Waveform, read_wav, resample, stft, write_wav

log = logging.getLogger(__name__)

CMU_PHONES = (
    "AA AE AH AO AW AY B CH D DH EH ER EY F G HH IH IY JH K L M N NG "
    "OW OY P R S SH T TH UH UW V W Y Z ZH"
).split()
SIL, INH = "SIL", "INH"
_ALIASES = {"SP": SIL, "BR": INH, "BREATH": INH}


class PhonemeDict:
    """39 CMU phones plus silence and inhalation, indexed 0..40 in a fixed order."""

    def __init__(self):
        self.names = tuple(CMU_PHONES) + (SIL, INH)
        self._index = {name: i for i, name in enumerate(self.names)}

    def __len__(self):
        return len(self.names)

    def index(self, name: str) -> int:
        key = name.strip().upper()
        key = _ALIASES.get(key, key)
        # CMU phones may carry stress digits (AH0, IY1)
        if key not in self._index and key[-1:].isdigit():
            key = key[:-1]
        return self._index[key]

    def name(self, index: int) -> str:
        return self.names[index]

    def is_silence(self, index: int) -> bool:
        return index >= len(CMU_PHONES)


PHONES = PhonemeDict()
SIL_INDEX = PHONES.index(SIL)


class PhoneInterval(NamedTuple):
    start: float
    end: float
    phone: int
    word: str | None = None


def parse_annotation(path) -> list[PhoneInterval]:
    """Read a phone annotation file, validating ordering and phone names."""
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if len(parts) not in (3, 4):
                raise AnnotationParseError(path, lineno, "expected 'start end phone [word]'")
            try:
                start, end = float(parts[0]), float(parts[1])
            except ValueError:
                raise AnnotationParseError(path, lineno, "times must be numbers") from None
            try:
                phone = PHONES.index(parts[2])
            except KeyError:
                raise AnnotationParseError(path, lineno, f"unknown phone {parts[2]!r}") from None
            if end <= start:
                raise AnnotationParseError(path, lineno, "end must exceed start")
            if out and start < out[-1].end - 1e-9:
                raise AnnotationParseError(path, lineno, "interval overlaps the previous one")
            out.append(PhoneInterval(start, end, phone, parts[3] if len(parts) == 4 else None))
    return out


def write_annotation(intervals, path) -> None:
    with open(path, "w") as fh:
        for iv in intervals:
            word = f" {iv.word}" if iv.word is not None else ""
            fh.write(f"{iv.start:.4f} {iv.end:.4f} {PHONES.name(iv.phone)}{word}\n")


# --------------------------------------------------------------------------
# Corpus
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class CorpusEntry:
    speaker: str
    song: str
    read_wav: Path
    sing_wav: Path
    read_ann: list
    sing_ann: list


def load_corpus(root) -> list[CorpusEntry]:
    """Index every (speaker, song) that has both a read and a sung recording."""
    root = Path(root)
    entries = []
    for spk in sorted(p for p in root.iterdir() if p.is_dir()) if root.is_dir() else []:
        songs = {}
        for kind in ("read", "sing"):
            for wav in sorted((spk / kind).glob("*.wav")):
                songs.setdefault(wav.stem, {})[kind] = wav
        for song, files in sorted(songs.items()):
            if set(files) != {"read", "sing"}:
                have = next(iter(files))
                raise PairingError(f"{spk.name}/{song}: {have} recording has no counterpart")
            anns = {}
            for kind, wav in files.items():
                txt = wav.with_suffix(".txt")
                if not txt.exists():
                    raise PairingError(f"{wav}: missing annotation {txt.name}")
                anns[kind] = parse_annotation(txt)
            entries.append(CorpusEntry(spk.name, song, files["read"], files["sing"], anns["read"], anns["sing"]))
    return entries


def split_words(intervals, segment_gap=0.1):
    """Group phones into words and words into silence-delimited segments.

    Silence/inhalation intervals of at least ``segment_gap`` seconds end a
    segment; shorter ones only separate words.  Returns a list of segments,
    each a list of words, each a list of :class:`PhoneInterval`.
    """
    segments, words, word = [], [], []

    def close_word():
        nonlocal word
        if word:
            words.append(word)
            word = []

    def close_segment():
        nonlocal words
        close_word()
        if words:
            segments.append(words)
            words = []

    for iv in intervals:
        if PHONES.is_silence(iv.phone):
            if iv.end - iv.start >= segment_gap:
                close_segment()
            else:
                close_word()
            continue
        if word and iv.word is not None and iv.word != word[-1].word:
            close_word()
        word.append(iv)
    close_segment()
    return segments


def word_runs(n_words, min_words=3):
    """All (first, last) index pairs of consecutive runs with at least ``min_words`` words."""
    return [(a, a + k - 1) for k in range(min_words, n_words + 1) for a in range(n_words - k + 1)]


def enumerate_sample_spans(sing_ann, segment_gap=0.1, min_words=3):
    """Global (first_word, last_word) spans for every run inside a sung segment."""
    spans, offset = [], 0
    for seg in split_words(sing_ann, segment_gap):
        spans.extend((offset + a, offset + b) for a, b in word_runs(len(seg), min_words))
        offset += len(seg)
    return spans


@dataclass
class TrainSample:
    sample_id: str
    speaker_id: str
    song_id: str
    speech: Waveform
    singing: Waveform
    contour: MelodyContour
    frame_phones: np.ndarray
    speech_phones: list = field(default_factory=list)
    sing_phones: list = field(default_factory=list)
    split: str = "train"

    @property
    def n_frames(self) -> int:
        return len(self.contour)


def _slice_ann(ann, start, end):
    out = []
    for iv in ann:
        if iv.end <= start or iv.start >= end:
            continue
        out.append(PhoneInterval(max(iv.start, start) - start, min(iv.end, end) - start, iv.phone, iv.word))
    return out


def frame_labels(ann, n_frames, hop_sec=DEFAULT_STFT.hop / SAMPLE_RATE) -> np.ndarray:
    """Phone index at each frame centre; frames outside every interval are silence."""
    labels = np.full(n_frames, SIL_INDEX, dtype=np.int64)
    times = np.arange(n_frames) * hop_sec
    for iv in ann:
        labels[(times >= iv.start) & (times < iv.end)] = iv.phone
    return labels


def _load16k(path):
    return resample(read_wav(path), SAMPLE_RATE)


def pick_test_song(corpus, test_song=None):
    songs = sorted({e.song for e in corpus})
    if test_song is None:
        return songs[0] if songs else None
    return test_song


def generate_samples(corpus, split="train", test_song=None, segment_gap=0.1, min_words=3) -> list[TrainSample]:
    """Cut paired speech/singing samples of at least ``min_words`` consecutive words.

    Sung segments are found between silences; every run of consecutive
    words within a segment becomes one sample, and the read recording is
    cut at the same word indices.  One song is held out for ``split="test"``.
    The target contour is tracked from the sung slice with YIN.
    """
    from .metrics import yin_f0

    if split not in ("train", "test"):
        raise ValueError(f"split must be 'train' or 'test', got {split!r}")
    held_out = pick_test_song(corpus, test_song)
    samples = []
    for entry in corpus:
        if (entry.song == held_out) != (split == "test"):
            continue
        read_words = [w for seg in split_words(entry.read_ann, segment_gap) for w in seg]
        sing_words = [w for seg in split_words(entry.sing_ann, segment_gap) for w in seg]
        if len(read_words) != len(sing_words):
            log.warning("%s/%s: %d read words vs %d sung words; skipped",
                        entry.speaker, entry.song, len(read_words), len(sing_words))
            continue
        speech_full = _load16k(entry.read_wav)
        sing_full = _load16k(entry.sing_wav)
        for a, b in enumerate_sample_spans(entry.sing_ann, segment_gap, min_words):
            s0, s1 = sing_words[a][0].start, sing_words[b][-1].end
            r0, r1 = read_words[a][0].start, read_words[b][-1].end
            singing = Waveform(sing_full.samples[int(round(s0 * SAMPLE_RATE)) : int(round(s1 * SAMPLE_RATE))])
            speech = Waveform(speech_full.samples[int(round(r0 * SAMPLE_RATE)) : int(round(r1 * SAMPLE_RATE))])
            contour = yin_f0(singing)
            sing_phones = _slice_ann(entry.sing_ann, s0, s1)
            samples.append(TrainSample(
                sample_id=f"{entry.speaker}_{entry.song}_w{a}-{b}",
                speaker_id=entry.speaker,
                song_id=entry.song,
                speech=speech,
                singing=singing,
                contour=contour,
                frame_phones=frame_labels(sing_phones, len(contour)),
                speech_phones=_slice_ann(entry.read_ann, r0, r1),
                sing_phones=sing_phones,
                split=split,
            ))
    return samples


# --------------------------------------------------------------------------
# PhSync
# --------------------------------------------------------------------------

def _voiced_phones(ann):
    return [iv for iv in ann if not PHONES.is_silence(iv.phone)]


def phsync_stretch(speech: Waveform, speech_ann, sing_ann, length: int | None = None) -> Waveform:
    """Stretch each speech phone to the duration of the same phone in the singing.

    Phone boundaries become anchors of a piecewise-linear time map; the
    phase vocoder reads speech frames along that map.  Speech pauses with
    no sung counterpart collapse to (near) zero length.
    """
    sp, sg = _voiced_phones(speech_ann), _voiced_phones(sing_ann)
    if [iv.phone for iv in sp] != [iv.phone for iv in sg]:
        raise AlignmentError(
            f"phone sequences differ: {[PHONES.name(i.phone) for i in sp]} vs {[PHONES.name(i.phone) for i in sg]}"
        )
    hop = DEFAULT_STFT.hop
    sing_end = max((iv.end for iv in sing_ann), default=0.0)
    if length is None:
        length = int(round(sing_end * SAMPLE_RATE))
    src = [0.0]
    dst = [0.0]
    for a, b in zip(sp, sg):
        src += [a.start, a.end]
        dst += [b.start, b.end]
    src.append(len(speech) / SAMPLE_RATE)
    dst.append(max(length / SAMPLE_RATE, dst[-1]))
    n_out = DEFAULT_STFT.n_frames(length)
    out_times = np.arange(n_out) * hop / SAMPLE_RATE
    in_times = np.interp(out_times, dst, src)
    return Waveform(vocode(speech.samples, in_times * SAMPLE_RATE / hop, length))


# --------------------------------------------------------------------------
# Features and batching
# --------------------------------------------------------------------------

@dataclass
class FeatureItem:
    sample_id: str
    x: np.ndarray
    c: np.ndarray
    y: np.ndarray
    phones: np.ndarray


def sample_features(sample: TrainSample, shift_semitones=0.0, phsync=False) -> FeatureItem:
    """Network input/target for one sample; ``shift_semitones`` transposes the speech only."""
    speech = pitch_shift(sample.speech, shift_semitones) if shift_semitones else sample.speech
    n = sample.n_frames
    if phsync:
        stretched = phsync_stretch(speech, sample.speech_phones, sample.sing_phones, length=len(sample.singing))
        x = log_mag(stft(stretched))[:, :n]
    else:
        x = speech_features(speech, sample.contour)
    return FeatureItem(
        sample.sample_id,
        x,
        rasterize_contour(sample.contour),
        log_mag(stft(sample.singing))[:, :n],
        np.asarray(sample.frame_phones[:n], dtype=np.int64),
    )


@dataclass
class Batch:
    ids: list
    x: np.ndarray        # (B, F, T)
    c: np.ndarray        # (B, F, T)
    y: np.ndarray        # (B, F, T)
    mask: np.ndarray     # (B, T) 1 on real frames
    phones: np.ndarray   # (B, T), -1 on padding
    lengths: np.ndarray


def make_batch(items, max_t: int | None = None) -> Batch:
    """Zero-pad items to the longest length rounded up to a multiple of 8."""
    if not items:
        raise ValueError("make_batch needs at least one item")
    lengths = np.array([min(it.x.shape[1], max_t or it.x.shape[1]) for it in items])
    t = -(-int(lengths.max()) // 8) * 8
    f = items[0].x.shape[0]
    b = len(items)
    x = np.zeros((b, f, t), np.float32)
    c = np.zeros((b, f, t), np.float32)
    y = np.zeros((b, f, t), np.float32)
    mask = np.zeros((b, t), np.float32)
    phones = np.full((b, t), -1, np.int64)
    for i, (it, n) in enumerate(zip(items, lengths)):
        x[i, :, :n] = it.x[:, :n]
        c[i, :, :n] = it.c[:, :n]
        y[i, :, :n] = it.y[:, :n]
        mask[i, :n] = 1.0
        phones[i, :n] = it.phones[:n]
    return Batch([it.sample_id for it in items], x, c, y, mask, phones, lengths)


# --------------------------------------------------------------------------
# Sample cache
# --------------------------------------------------------------------------

MANIFEST = "manifest.jsonl"


def _ann_to_json(ann):
    return [[iv.start, iv.end, iv.phone, iv.word] for iv in ann]


def _ann_from_json(rows):
    return [PhoneInterval(r[0], r[1], int(r[2]), r[3]) for r in rows]


def write_cache(samples, out_dir) -> Path:
    """Store waveform slices, contour files and phone labels plus a JSON-lines manifest."""
    out_dir = Path(out_dir)
    (out_dir / "samples").mkdir(parents=True, exist_ok=True)
    lines = []
    for s in samples:
        stem = out_dir / "samples" / s.sample_id
        write_wav(s.speech, f"{stem}.speech.wav")
        write_wav(s.singing, f"{stem}.sing.wav")
        write_contour(s.contour, f"{stem}.f0.txt")
        np.savetxt(f"{stem}.phones.txt", s.frame_phones, fmt="%d")
        lines.append(json.dumps({
            "sample_id": s.sample_id,
            "speaker_id": s.speaker_id,
            "song_id": s.song_id,
            "split": s.split,
            "speech": f"samples/{s.sample_id}.speech.wav",
            "singing": f"samples/{s.sample_id}.sing.wav",
            "contour": f"samples/{s.sample_id}.f0.txt",
            "phones": f"samples/{s.sample_id}.phones.txt",
            "n_frames": s.n_frames,
            "speech_samples": len(s.speech),
            "speech_phones": _ann_to_json(s.speech_phones),
            "sing_phones": _ann_to_json(s.sing_phones),
        }, sort_keys=True))
    manifest = out_dir / MANIFEST
    manifest.write_text("".join(line + "\n" for line in lines))
    return manifest


def load_cache(cache_dir, split=None) -> list[TrainSample]:
    cache_dir = Path(cache_dir)
    samples = []
    with open(cache_dir / MANIFEST) as fh:
        for line in fh:
            if not line.strip():
                continue
            row = json.loads(line)
            if split is not None and row["split"] != split:
                continue
            samples.append(TrainSample(
                sample_id=row["sample_id"],
                speaker_id=row["speaker_id"],
                song_id=row["song_id"],
                speech=read_wav(cache_dir / row["speech"]),
                singing=read_wav(cache_dir / row["singing"]),
                contour=read_contour(cache_dir / row["contour"]),
                frame_phones=np.atleast_1d(np.loadtxt(cache_dir / row["phones"], dtype=np.int64)),
                speech_phones=_ann_from_json(row["speech_phones"]),
                sing_phones=_ann_from_json(row["sing_phones"]),
                split=row["split"],
            ))
    return samples
