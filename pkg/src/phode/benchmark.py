"""Scaled-down end-to-end experiment on the synthetic toy language.

A small recognizer is trained on clean and low-noise toy speech and then evaluated on
held-out toy speech at every noise level and through the implant
simulation. The report holds token error rates, reaction-time medians and
the per-condition confusion matrices.
"""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from phode.alignment import extract_windows, process_sentence
from phode.audio import compute_spectrogram
from phode.augment import LEVELS, AugmentationConfig, apply_augmentation
from phode.ctc import ctc_greedy_decode
from phode.error_analysis import RTRecord, build_confusion, reaction_time
from phode.model import ModelWeights, forward
from phode.phonemes import class_mean_durations
from phode.toy import TOY_PHONEMES, ToyUtterance, toy_corpus
from phode.training import Example, train
from phode.vocoder import vocode

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class BenchmarkConfig:
    n_train: int = 400
    n_test: int = 60
    hidden_size: int = 32
    steps: int = 800
    batch_size: int = 32
    lr: float = 3e-3
    clip_norm: float = 5.0
    seed: int = 0
    train_levels: tuple[str, ...] = ("quiet", "low")


@dataclass
class BenchmarkReport:
    config: dict
    error_rate: dict[str, float]            # condition/level -> token error rate
    rt_median_confused: float
    rt_median_nonconfused: float
    n_confused: int
    n_nonconfused: int
    confusion: dict[str, list[list[float]]] = field(default_factory=dict)
    final_loss: float = float("nan")
    seconds: float = 0.0


def edit_distance(ref, hyp) -> int:
    prev = list(range(len(hyp) + 1))
    for i, r in enumerate(ref, 1):
        cur = [i] + [0] * len(hyp)
        for j, h in enumerate(hyp, 1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (r != h))
        prev = cur
    return prev[-1]


def _examples(corpus: list[ToyUtterance], levels: tuple[str, ...] = ("quiet",),
              seed: int = 0) -> list[Example]:
    out = []
    for level in levels:
        cfg = AugmentationConfig.for_level(level, seed=seed)
        for u in corpus:
            wav = apply_augmentation(u.waveform, cfg, u.segmentation.sentence_id)[0]
            out.append(Example(compute_spectrogram(wav).astype(np.float32),
                               u.segmentation.target_tokens(with_spaces=True)))
    return out


def evaluate(weights: ModelWeights, corpus: list[ToyUtterance], condition: str, level: str,
             seed: int, class_means) -> tuple[float, list, list[RTRecord]]:
    """Token error rate, aligned sentences and RT records for one condition."""
    cfg = AugmentationConfig.for_level(level, seed=seed)
    errors = total = 0
    sentences, rts = [], []
    for u in corpus:
        seg = u.segmentation
        wav, rec = apply_augmentation(u.waveform, cfg, seg.sentence_id)
        seg = seg.scaled(rec.time_scale)
        if condition == "CI":
            wav = vocode(wav, seed, seg.sentence_id)[1]
        _, post = forward(compute_spectrogram(wav).astype(np.float32), weights)
        events = ctc_greedy_decode(post)
        ref = seg.target_tokens(with_spaces=False)
        errors += edit_distance(ref, [e.token for e in events])
        total += len(ref)
        a = process_sentence(seg, events)
        sentences.append(a)
        if not a.excluded:
            rts += [reaction_time(w, class_means, condition, level) for w in extract_windows(a)]
    return errors / max(total, 1), sentences, rts


def run_benchmark(cfg: BenchmarkConfig = BenchmarkConfig()) -> tuple[BenchmarkReport, ModelWeights]:
    t0 = time.perf_counter()
    train_set = toy_corpus(cfg.n_train, cfg.seed, prefix="train")
    test_set = toy_corpus(cfg.n_test, cfg.seed + 1, prefix="test")
    weights, losses = train(_examples(train_set, cfg.train_levels, cfg.seed), hidden_size=cfg.hidden_size, steps=cfg.steps,
                            batch_size=cfg.batch_size, lr=cfg.lr, seed=cfg.seed,
                            clip_norm=cfg.clip_norm)
    class_means = class_mean_durations(u.segmentation for u in train_set)
    rates, confusion, records = {}, {}, []
    for condition, level in [("NH", lv) for lv in LEVELS] + [("CI", "quiet")]:
        key = f"{condition}-{level}"
        rate, sentences, rts = evaluate(weights, test_set, condition, level, cfg.seed, class_means)
        rates[key] = rate
        confusion[key] = build_confusion(sentences, TOY_PHONEMES).counts.tolist()
        records += rts
        log.info("%s token error rate %.3f", key, rate)
    conf = [r.adjusted_rt for r in records if r.confused]
    nonconf = [r.adjusted_rt for r in records if not r.confused]
    report = BenchmarkReport(
        config=asdict(cfg), error_rate=rates,
        rt_median_confused=float(np.median(conf)) if conf else float("nan"),
        rt_median_nonconfused=float(np.median(nonconf)) if nonconf else float("nan"),
        n_confused=len(conf), n_nonconfused=len(nonconf), confusion=confusion,
        final_loss=float(np.mean(losses[-20:])), seconds=time.perf_counter() - t0)
    return report, weights
