"""Command-line entry point.

    phode run --config exp.json [--seed N] [--condition NH CI] [--noise quiet low]
              [--out DIR] [--jobs N]
    phode <stage> --config exp.json ...        one pipeline stage
    phode vocode --wav in.wav --out DIR        single-file implant simulation
    phode toy --out DIR [--n 20]               write a synthetic corpus
    phode train --manifest M --out W.phw       train a small recognizer
    phode benchmark [--out report.json]        toy end-to-end experiment

Exit codes: 0 success, 2 configuration or stale-artifact error, 3 some
sentences failed. The log level comes from ``PHODE_LOG``.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from phode import pipeline
from phode.pipeline import ConfigError, StaleArtifactError

log = logging.getLogger("phode")

EXIT_OK, EXIT_CONFIG, EXIT_PARTIAL = 0, 2, 3


def _experiment_args(p: argparse.ArgumentParser, config_required: bool = True) -> None:
    p.add_argument("--config", required=config_required, help="experiment config (JSON)")
    p.add_argument("--seed", type=int, help="master seed (overrides the config)")
    p.add_argument("--condition", nargs="+", choices=pipeline.CONDITIONS, help="NH and/or CI")
    p.add_argument("--noise", nargs="+", choices=pipeline.LEVELS, help="noise levels")
    p.add_argument("--out", help="output directory")
    p.add_argument("--jobs", type=int, help="worker processes for per-sentence stages")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="phode", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)
    _experiment_args(sub.add_parser("run", help="all stages in order"))
    for stage in pipeline.STAGES:
        sp = sub.add_parser(stage, help=f"pipeline stage {stage!r}")
        _experiment_args(sp, config_required=stage != "vocode")
        if stage == "vocode":
            sp.add_argument("--wav", help="vocode one WAV file instead of a whole experiment")
        if stage == "confuse":
            sp.add_argument("--human", action="append", default=[], metavar="CSV",
                            help="human confusion matrix to compare against (repeatable)")
    t = sub.add_parser("toy", help="write a synthetic toy corpus with a manifest")
    t.add_argument("--out", required=True)
    t.add_argument("--n", type=int, default=20)
    t.add_argument("--seed", type=int, default=0)
    tr = sub.add_parser("train", help="train a small recognizer on a manifest")
    tr.add_argument("--manifest", required=True)
    tr.add_argument("--out", required=True, help="weight file to write")
    tr.add_argument("--hidden", type=int, default=32)
    tr.add_argument("--steps", type=int, default=800)
    tr.add_argument("--batch-size", type=int, default=32)
    tr.add_argument("--lr", type=float, default=3e-3)
    tr.add_argument("--weight-decay", type=float, default=1e-5)
    tr.add_argument("--clip-norm", type=float, default=5.0)
    tr.add_argument("--seed", type=int, default=0)
    b = sub.add_parser("benchmark", help="toy end-to-end experiment")
    b.add_argument("--out", help="write the JSON report here")
    b.add_argument("--seed", type=int)
    b.add_argument("--weights", help="also save the trained weights here")
    return parser


def _config(args) -> pipeline.ExperimentConfig:
    overrides = {"seed": args.seed, "conditions": args.condition, "noise_levels": args.noise,
                 "out": args.out, "jobs": args.jobs}
    return pipeline.load_config(args.config, **overrides)


def _vocode_file(args) -> int:
    from phode.audio import read_wav, write_wav
    from phode.vocoder import vocode, write_electrodogram_csv

    if not args.out:
        print("vocode --wav needs --out", file=sys.stderr)
        return EXIT_CONFIG
    src = Path(args.wav)
    if not src.is_file():
        print(f"no such file: {src}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    e, w = vocode(read_wav(src), args.seed or 0, src.stem)
    write_electrodogram_csv(e, out / f"{src.stem}_electrodogram.csv")
    write_wav(out / f"{src.stem}_ci.wav", w)
    return EXIT_OK


def _toy(args) -> int:
    from phode.toy import toy_corpus, write_corpus

    manifest = write_corpus(toy_corpus(args.n, args.seed), args.out)
    print(manifest)
    return EXIT_OK


def _train(args) -> int:
    from phode.audio import compute_spectrogram, read_wav
    from phode.model import save_weights
    from phode.phonemes import load_manifest, load_segmentation
    from phode.training import Example, train

    examples = []
    for e in load_manifest(args.manifest):
        utt = load_segmentation(e.seg_path, e.sentence_id)
        x = compute_spectrogram(read_wav(e.wav_path)).astype(np.float32)
        examples.append(Example(x, utt.target_tokens(with_spaces=True)))
    w, losses = train(examples, hidden_size=args.hidden, steps=args.steps,
                      batch_size=args.batch_size, lr=args.lr, weight_decay=args.weight_decay,
                      seed=args.seed, clip_norm=args.clip_norm)
    save_weights(w, args.out)
    print(f"final loss {np.mean(losses[-20:]):.4f}")
    return EXIT_OK


def _benchmark(args) -> int:
    from phode.benchmark import BenchmarkConfig, run_benchmark
    from phode.model import save_weights

    cfg = BenchmarkConfig() if args.seed is None else BenchmarkConfig(seed=args.seed)
    report, w = run_benchmark(cfg)
    text = json.dumps(dataclasses.asdict(report), indent=1, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n")
    else:
        print(text)
    if args.weights:
        save_weights(w, args.weights)
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=pipeline.log_level(), format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    cmd = args.command
    try:
        if cmd == "toy":
            return _toy(args)
        if cmd == "train":
            return _train(args)
        if cmd == "benchmark":
            return _benchmark(args)
        if cmd == "vocode" and args.wav:
            return _vocode_file(args)
        if not args.config:
            print(f"{cmd} needs --config", file=sys.stderr)
            return EXIT_CONFIG
        cfg = _config(args)
        if cmd == "run":
            ledger = pipeline.run(cfg)
        else:
            kwargs = {}
            if cmd == "confuse" and args.human:
                kwargs["human"] = {Path(h).stem: str(Path(h).resolve()) for h in args.human}
            pipeline.run_stage(cfg, cmd, **kwargs)
            ledger = pipeline.write_ledger(cfg)
    except (ConfigError, StaleArtifactError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    failed = sorted(s for s, v in ledger["sentences"].items() if v["status"] == "failed")
    if failed:
        log.warning("%d sentence(s) failed: %s", len(failed), ", ".join(failed))
        return EXIT_PARTIAL
    return EXIT_OK
