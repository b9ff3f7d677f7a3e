"""Command-line entry point: ``speech2sing {prep,train,convert,eval,make-toy}``."""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import sys
from pathlib import Path

from .config import build_configs, dump_config, read_config
from .data import MANIFEST, generate_samples, load_cache, load_corpus, write_cache
from .errors import (ConfigError, CorpusError, ParameterError, SilentInputError,
                     Speech2SingError, UnsupportedEncodingError, WavFormatError)
from .metrics import evaluate_system, rca, yin_f0
from .model import VARIANTS, StsModel, build_variant
from .prep import read_contour
from .signal import read_wav, write_wav
from .synth import predict_full
from .train import train_loop

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2
PREP_STAMP = "prep.json"

log = logging.getLogger("speech2sing")

_INPUT_ERRORS = (ConfigError, CorpusError, ParameterError, SilentInputError,
                 WavFormatError, UnsupportedEncodingError, FileNotFoundError)


class UsageError(Exception):
    pass


def _configs(args, **overrides):
    values = read_config(args.config) if getattr(args, "config", None) else {}
    return build_configs(values, overrides)


# -- prep ---------------------------------------------------------------------

def _corpus_digest(root: Path, pipe) -> str:
    h = hashlib.sha256()
    for path in sorted(p for p in root.rglob("*") if p.is_file()):
        h.update(str(path.relative_to(root)).encode())
        h.update(hashlib.sha256(path.read_bytes()).digest())
    for key in ("segment_gap", "min_words", "test_song"):
        h.update(f"{key}={getattr(pipe, key)}".encode())
    return h.hexdigest()


def cmd_prep(args) -> int:
    corpus_dir, out_dir = Path(args.corpus), Path(args.out)
    _, pipe = _configs(args, test_song=args.test_song)
    if not corpus_dir.is_dir():
        raise UsageError(f"corpus directory {corpus_dir} does not exist")
    digest = _corpus_digest(corpus_dir, pipe)
    stamp = out_dir / PREP_STAMP
    if not args.force and (out_dir / MANIFEST).exists() and stamp.exists():
        if json.loads(stamp.read_text()).get("digest") == digest:
            print("cache up to date")
            return EXIT_OK

    corpus = load_corpus(corpus_dir)
    if not corpus:
        raise UsageError(f"no paired recordings under {corpus_dir}")
    kw = dict(test_song=pipe.test_song or None, segment_gap=pipe.segment_gap, min_words=pipe.min_words)
    counts = {}
    samples = []
    for split in ("train", "test"):
        part = generate_samples(corpus, split, **kw)
        counts[split] = len(part)
        samples += part
    write_cache(samples, out_dir)
    stamp.write_text(json.dumps({"digest": digest, "counts": counts}, sort_keys=True) + "\n")
    for split, n in counts.items():
        print(f"{split}: {n} samples")
    return EXIT_OK


# -- train --------------------------------------------------------------------

def resolve_train(args):
    """Training and pipeline configs for ``args`` with the variant's effective loss weight."""
    train, pipe = _configs(
        args, variant=args.variant, epochs=args.epochs, iters_per_epoch=args.iters,
        batch=args.batch, seed=args.seed, base_channels=args.width,
        sum_mse=args.sum_mse or None, phsync=args.phsync or None,
        augment=False if args.no_augment else None,
    )
    if pipe.variant not in VARIANTS:
        raise ConfigError(f"unknown variant {pipe.variant!r}; choose from {', '.join(VARIANTS)}")
    if pipe.variant != "P-MTL":
        train = dataclasses.replace(train, lam=0.0)
    return train, pipe


def cmd_train(args) -> int:
    cache = Path(args.cache)
    if not (cache / MANIFEST).exists():
        raise UsageError(f"no sample cache at {cache}; run `speech2sing prep` first")
    train, pipe = resolve_train(args)
    samples = load_cache(cache, split="train")
    if not samples:
        raise UsageError(f"cache {cache} has no training samples")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(dump_config(train, pipe))
    model = build_variant(pipe.variant, base_channels=pipe.base_channels, seed=train.seed)
    print(f"variant {pipe.variant}: {model.num_parameters()} parameters, lambda = {train.lam}")
    result = train_loop(model, samples, train, out_dir=out)
    print(f"final loss {result.reports[-1].total:.6f}; checkpoints in {out}")
    return EXIT_OK


# -- convert ------------------------------------------------------------------

def cmd_convert(args) -> int:
    for label, path in (("checkpoint", args.ckpt), ("speech", args.speech), ("contour", args.contour)):
        if not Path(path).is_file():
            raise UsageError(f"{label} file {path} not found")
    _, pipe = _configs(args)
    model, _ = StsModel.load(args.ckpt)
    speech = read_wav(args.speech)
    contour = read_contour(args.contour)
    iters = args.gl_iters if args.gl_iters is not None else pipe.gl_iters
    pred = predict_full(model, speech, contour, gl_iters=iters, power=pipe.gl_power, seed=args.seed)
    write_wav(pred.waveform, args.out)
    score = rca(contour, yin_f0(pred.waveform))
    print(f"duration {pred.waveform.duration:.3f} s; RCA {score:.4f}")
    return EXIT_OK


# -- eval ---------------------------------------------------------------------

def cmd_eval(args) -> int:
    cache = Path(args.cache)
    if not (cache / MANIFEST).exists():
        raise UsageError(f"no sample cache at {cache}")
    samples = load_cache(cache, split="test")
    if not samples:
        raise UsageError(f"cache {cache} has no test samples")
    model = None
    if not args.oracle_passthrough:
        if not args.ckpt or not Path(args.ckpt).is_file():
            raise UsageError("a checkpoint is required unless --oracle-passthrough is given")
        model, _ = StsModel.load(args.ckpt)
    report = evaluate_system(model, samples, n=args.n, seed=args.seed,
                             oracle_passthrough=args.oracle_passthrough, gl_iters=args.gl_iters)
    if args.out:
        with open(args.out, "w") as fh:
            report.to_csv(fh)
    else:
        report.to_csv(sys.stdout)
    print(f"{len(report.rows)} samples: LSD {report.lsd_db:.3f} dB, RCA {report.rca:.4f}")
    return EXIT_OK


def cmd_make_toy(args) -> int:
    from .toy import make_toy_corpus

    root = make_toy_corpus(args.out, songs=tuple(args.songs.split(",")), seed=args.seed)
    print(f"toy corpus written to {root}")
    return EXIT_OK


# -- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="speech2sing", description="Convert read speech to singing.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("prep", help="slice a paired corpus into cached training samples")
    s.add_argument("corpus")
    s.add_argument("out")
    s.add_argument("--config")
    s.add_argument("--test-song")
    s.add_argument("--force", action="store_true")
    s.set_defaults(func=cmd_prep)

    s = sub.add_parser("train", help="train a model variant on a sample cache")
    s.add_argument("cache")
    s.add_argument("--variant", choices=VARIANTS)
    s.add_argument("--out", default="runs")
    s.add_argument("--config")
    s.add_argument("--epochs", type=int)
    s.add_argument("--iters", type=int, help="iterations per epoch")
    s.add_argument("--batch", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--width", type=int, help="base channel count")
    s.add_argument("--phsync", action="store_true", help="phone-synchronous stretching of the input")
    s.add_argument("--sum-mse", action="store_true", help="sum the squared error instead of averaging")
    s.add_argument("--no-augment", action="store_true")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("convert", help="sing a speech recording along a melody contour")
    s.add_argument("ckpt")
    s.add_argument("speech")
    s.add_argument("contour")
    s.add_argument("out")
    s.add_argument("--config")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--gl-iters", type=int)
    s.set_defaults(func=cmd_convert)

    s = sub.add_parser("eval", help="LSD and RCA on the test split")
    s.add_argument("ckpt", nargs="?")
    s.add_argument("cache")
    s.add_argument("--n", type=int, default=100)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    s.add_argument("--gl-iters", type=int)
    s.add_argument("--oracle-passthrough", action="store_true")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("make-toy", help="write a small synthetic corpus")
    s.add_argument("out")
    s.add_argument("--songs", default="a,b,c", help="comma-separated subset of a,b,c,d")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_make_toy)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except _INPUT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Speech2SingError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
