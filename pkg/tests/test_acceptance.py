"""Primary acceptance criteria, one test each, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v``.  The training
criteria share a session-scoped toy corpus and take a few minutes in total.
"""
import time

import numpy as np
import pytest

from annotation_cases import brute_force_count, random_structure, render_annotation
from gradcheck import check_gradients
from helpers import median_f0, snr_db, tone
from op_cases import OP_CASES
from speech2sing.cli import main
from speech2sing.data import (PHONES, PhoneInterval, enumerate_sample_spans, generate_samples, load_corpus,
                              phsync_stretch)
from speech2sing.metrics import band_bins, lsd, rca, yin_f0
from speech2sing.model import build_variant
from speech2sing.prep import MelodyContour, pitch_shift, time_stretch
from speech2sing.signal import DEFAULT_STFT, SAMPLE_RATE, Waveform, istft, resample, stft
from speech2sing.synth import griffin_lim, predict_full
from speech2sing.train import TrainConfig, cached_features, train_loop

HOP = DEFAULT_STFT.hop

# toy-scale training setup shared by the overfit and ablation criteria
TOY_WIDTH = 8
TOY_ITERS = 300
TOY_BATCH = 4


def report(capsys, name, ok, detail):
    with capsys.disabled():
        print(f"\n[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    assert ok, detail


def _train(variant, samples, seed=0):
    model = build_variant(variant, base_channels=TOY_WIDTH, seed=seed)
    cfg = TrainConfig(epochs=1, iters_per_epoch=TOY_ITERS, batch=TOY_BATCH, augment=False, seed=seed)
    result = train_loop(model, samples, cfg, features=cached_features(samples))
    return model, result


def _mean_rca(model, samples):
    return float(np.mean([rca(s.contour, yin_f0(predict_full(model, s.speech, s.contour).waveform))
                          for s in samples]))


@pytest.fixture(scope="module")
def corpus(toy_root):
    return load_corpus(toy_root)


# -- 1. autodiff -------------------------------------------------------------------

def test_autodiff_suite(capsys):
    start = time.perf_counter()
    worst = {}
    for name, make in sorted(OP_CASES.items()):
        rng = np.random.default_rng(1000 + sum(map(ord, name)))
        worst[name] = max(check_gradients(*make(rng)) for _ in range(20))
    elapsed = time.perf_counter() - start
    top = max(worst, key=worst.get)
    ok = worst[top] < 1e-4 and elapsed < 120
    report(capsys, "autodiff finite differences", ok,
           f"{len(worst)} ops x 20 shapes, worst rel err {worst[top]:.2e} ({top}), {elapsed:.1f} s")


# -- 2. signal ---------------------------------------------------------------------

def test_signal_suite(capsys):
    start = time.perf_counter()
    rng = np.random.default_rng(0)
    snrs = []
    for _ in range(100):
        n = int(rng.integers(SAMPLE_RATE // 2, 3 * SAMPLE_RATE + 1))
        x = rng.uniform(-1, 1, n)
        snrs.append(snr_db(x, istft(stft(x), length=n)))
    f0 = median_f0(resample(tone(440.0, 1.0, sr=44100), 16000))
    elapsed = time.perf_counter() - start
    err = abs(f0 - 440.0) / 440.0
    ok = min(snrs) > 60 and err < 0.005 and elapsed < 60
    report(capsys, "signal round trip and resampler", ok,
           f"min SNR {min(snrs):.1f} dB over 100 signals; resampled 440 Hz -> {f0:.2f} Hz; {elapsed:.1f} s")


# -- 3. vocoder --------------------------------------------------------------------

def test_vocoder_oracles(capsys):
    w = tone(300.0, 1.3)
    length_err = {r: abs(len(time_stretch(w, r)) - len(w) / r) for r in (0.5, 0.8, 1.0, 1.25, 2.0)}
    shift_err = {}
    for base, s in ((440.0, 1), (440.0, -1), (220.0, 12), (440.0, -12)):
        target = base * 2 ** (s / 12)
        shift_err[s] = abs(median_f0(pitch_shift(tone(base, 1.0), s)) - target) / target
    ok = max(length_err.values()) <= HOP and max(shift_err.values()) < 0.01
    report(capsys, "vocoder stretch and shift", ok,
           f"max length error {max(length_err.values()):.1f} samples (limit {HOP}); "
           f"max f0 error {100 * max(shift_err.values()):.3f}%")


# -- 4. Griffin-Lim ------------------------------------------------------------------

def test_griffin_lim(capsys):
    tone_mag = np.abs(stft(tone(440.0, 1.0).samples))
    noise_mag = np.abs(stft(np.random.default_rng(0).standard_normal(16000) * 0.1))
    monotone = []
    for mag in (tone_mag, noise_mag):
        errors = []
        griffin_lim(mag, iters=60, power=1.0, errors=errors)
        e = np.array(errors)
        monotone.append(bool(np.all(np.diff(e) <= 1e-9 * e[:-1])))
    f0 = median_f0(griffin_lim(tone_mag, iters=60, power=1.0))
    cents = abs(1200 * np.log2(f0 / 440.0))
    ok = all(monotone) and cents < 25
    report(capsys, "Griffin-Lim", ok, f"non-increasing error (tone, noise) = {monotone}; "
                                      f"tone f0 {f0:.2f} Hz ({cents:.1f} cents)")


# -- 5. metrics ------------------------------------------------------------------

def test_metric_identities(capsys):
    rng = np.random.default_rng(0)
    a = rng.uniform(-80, 20, (513, 40))
    c = 3.7
    offset_err = abs(lsd(a, a + c) - c * np.sqrt(len(band_bins())))
    ref = MelodyContour(rng.uniform(150, 300, 80))
    est = ref.f0 * 2 ** (rng.uniform(-0.1, 0.1, 80))
    folded = [rca(ref, MelodyContour(est * 2.0**k)) for k in (-1, 0, 1, 2)]
    ok = lsd(a, a) == 0 and offset_err < 1e-4 and len(set(folded)) == 1 and rca(ref, ref) == 1.0
    report(capsys, "metric identities", ok,
           f"lsd(A,A)={lsd(a, a)}; offset error {offset_err:.1e}; octave-folded rca {folded}; rca(ref,ref)={rca(ref, ref)}")


# -- 6. combinatorics ---------------------------------------------------------------

def test_sample_combinatorics(capsys):
    rng = np.random.default_rng(42)
    mismatches = 0
    for _ in range(50):
        structure = random_structure(rng)
        ann = render_annotation(rng, structure)
        mismatches += len(enumerate_sample_spans(ann)) != brute_force_count(structure)
    report(capsys, "sample-generation combinatorics", mismatches == 0, f"{mismatches}/50 segment sets disagree")


# -- 7. overfit ---------------------------------------------------------------------

@pytest.mark.slow
def test_overfit_smoke(corpus, capsys):
    start = time.perf_counter()
    samples = generate_samples(corpus, "train")
    assert len(samples) == 4
    model, res = _train("P-MSE", samples)
    ratio = res.reports[-1].total / res.reports[0].total
    sample = samples[0]
    end_to_end = rca(sample.contour, yin_f0(predict_full(model, sample.speech, sample.contour).waveform))
    _, mtl = _train("P-MTL", samples)
    ce = mtl.reports[-1].ce
    elapsed = time.perf_counter() - start
    ok = ratio < 0.1 and ce < np.log(41) / 2 and end_to_end > 0.8
    report(capsys, "overfit smoke training", ok,
           f"P-MSE loss ratio {ratio:.3f} (< 0.1); P-MTL CE {ce:.4f} (< {np.log(41) / 2:.3f}); "
           f"RCA on {sample.sample_id} {end_to_end:.3f} (> 0.8); {elapsed:.0f} s")


# -- 8. ablation ------------------------------------------------------------------

@pytest.mark.slow
def test_ablation_ordering(corpus, capsys):
    # songs a and b share lyrics and read audio; only the melody separates their targets
    samples = generate_samples(corpus, "train", test_song="c")
    assert sorted({s.song_id for s in samples}) == ["a", "b"]
    proposed, _ = _train("P-MSE", samples)
    baseline, _ = _train("B1", samples)
    r_p, r_b = _mean_rca(proposed, samples), _mean_rca(baseline, samples)
    report(capsys, "ablation ordering", r_b < r_p, f"B1 RCA {r_b:.3f} < P-MSE RCA {r_p:.3f}")


# -- 9. PhSync ---------------------------------------------------------------------

def test_phsync_boundaries(capsys):
    f1, f2 = 300.0, 1200.0
    d1, d2 = 0.1, 0.3
    t = np.arange(int((d1 + d2) * SAMPLE_RATE)) / SAMPLE_RATE
    x = np.where(t < d1, 0.5 * np.sin(2 * np.pi * f1 * t), 0.5 * np.sin(2 * np.pi * f2 * t))
    aa, iy = PHONES.index("AA"), PHONES.index("IY")
    speech_ann = [PhoneInterval(0.0, d1, aa), PhoneInterval(d1, d1 + d2, iy)]
    sing_ann = [PhoneInterval(0.0, 0.25, aa), PhoneInterval(0.25, 0.35, iy)]
    out = phsync_stretch(Waveform(x), speech_ann, sing_ann)
    mag = np.abs(stft(out))
    b1, b2 = round(f1 * 1024 / SAMPLE_RATE), round(f2 * 1024 / SAMPLE_RATE)
    switch = int(np.argmax(mag[b2] > mag[b1]))
    frame_errors = [abs(switch - 0.25 * SAMPLE_RATE / HOP), abs(len(out) - 0.35 * SAMPLE_RATE) / HOP]
    report(capsys, "PhSync boundaries", max(frame_errors) <= 1,
           f"boundary errors in frames: {[round(e, 2) for e in frame_errors]}")


# -- 10. determinism ----------------------------------------------------------------

def test_train_determinism(toy_root, tmp_path, capsys):
    cache = tmp_path / "cache"
    assert main(["prep", str(toy_root), str(cache)]) == 0
    blobs = []
    for run in ("r1", "r2"):
        assert main(["train", str(cache), "--epochs", "1", "--iters", "10", "--seed", "3",
                     "--width", str(TOY_WIDTH), "--batch", str(TOY_BATCH), "--out", str(tmp_path / run)]) == 0
        blobs.append((tmp_path / run / "epoch_0.ckpt").read_bytes())
    report(capsys, "training determinism", blobs[0] == blobs[1],
           f"checkpoints {'identical' if blobs[0] == blobs[1] else 'differ'} ({len(blobs[0])} bytes)")
