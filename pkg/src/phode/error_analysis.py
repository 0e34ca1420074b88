"""Confusion matrices, comparison with human confusions, word-level error
categories and reaction times."""

from __future__ import annotations

import csv
import json
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from phode.alignment import FRAME_MS, AlignedSentence, PairKind, UtteranceWindow
from phode.phonemes import PHONEMES, PhonemeClass, SegmentedUtterance, classify
from phode.rng import derive_rng

log = logging.getLogger(__name__)

KL_SMOOTHING = 1e-6
N_SHUFFLES = 1000
MIN_SHUFFLES = 100


@dataclass
class ConfusionMatrix:
    phonemes: tuple[str, ...]
    counts: np.ndarray       # (P, P) spoken x predicted
    omissions: np.ndarray    # (P,) per spoken phoneme
    additions: np.ndarray    # (P,) per predicted phoneme

    def __post_init__(self):
        P = len(self.phonemes)
        if P == 0:
            raise ValueError("empty phoneme subset")
        if len(set(self.phonemes)) != P:
            raise ValueError("duplicate phonemes in subset")
        self.counts = np.asarray(self.counts, dtype=np.float64)
        self.omissions = np.asarray(self.omissions, dtype=np.float64)
        self.additions = np.asarray(self.additions, dtype=np.float64)
        if self.counts.shape != (P, P) or self.omissions.shape != (P,) or self.additions.shape != (P,):
            raise ValueError("confusion matrix shapes do not match the phoneme subset")
        if (self.counts < 0).any() or (self.omissions < 0).any() or (self.additions < 0).any():
            raise ValueError("confusion counts must be nonnegative")

    @classmethod
    def zeros(cls, phonemes: Sequence[str] = PHONEMES) -> "ConfusionMatrix":
        P = len(phonemes)
        return cls(tuple(phonemes), np.zeros((P, P)), np.zeros(P), np.zeros(P))

    @property
    def empty_rows(self) -> np.ndarray:
        return self.counts.sum(1) == 0

    @property
    def normalized(self) -> np.ndarray:
        """Row-stochastic core; rows without any count stay all-zero."""
        tot = self.counts.sum(1, keepdims=True)
        return np.divide(self.counts, tot, out=np.zeros_like(self.counts), where=tot > 0)

    def restrict(self, subset: Sequence[str]) -> "ConfusionMatrix":
        missing = [p for p in subset if p not in self.phonemes]
        if missing:
            raise ValueError(f"phonemes not in matrix: {missing}")
        idx = [self.phonemes.index(p) for p in subset]
        return ConfusionMatrix(tuple(subset), self.counts[np.ix_(idx, idx)],
                               self.omissions[idx], self.additions[idx])

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if self.phonemes != other.phonemes:
            raise ValueError("cannot add matrices over different phoneme subsets")
        return ConfusionMatrix(self.phonemes, self.counts + other.counts,
                               self.omissions + other.omissions, self.additions + other.additions)


def build_confusion(sentences: Iterable[AlignedSentence],
                    subset: Sequence[str] = PHONEMES) -> ConfusionMatrix:
    """Count matches/substitutions, omissions and additions of retained sentences."""
    if not subset:
        raise ValueError("empty phoneme subset")
    cm = ConfusionMatrix.zeros(subset)
    index = {p: i for i, p in enumerate(subset)}
    for a in sentences:
        if a.excluded:
            continue
        for p in a.pairs:
            tgt = a.targets[p.target] if p.target is not None else None
            pred = a.events[p.predicted].symbol if p.predicted is not None else None
            if tgt is not None and pred is not None:
                if tgt in index and pred in index:
                    cm.counts[index[tgt], index[pred]] += 1
            elif tgt is not None:
                if tgt in index:
                    cm.omissions[index[tgt]] += 1
            elif pred in index:
                cm.additions[index[pred]] += 1
    return cm


def write_confusion_csv(cm: ConfusionMatrix, path: str | Path, normalized: bool = False) -> None:
    """Phoneme-labelled square matrix; counts also carry omission/addition margins."""
    m = cm.normalized if normalized else cm.counts
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["spoken"] + list(cm.phonemes) + ([] if normalized else ["omission"]))
        for i, p in enumerate(cm.phonemes):
            row = [_num(v) for v in m[i]]
            w.writerow([p] + row + ([] if normalized else [_num(cm.omissions[i])]))
        if not normalized:
            w.writerow(["addition"] + [_num(v) for v in cm.additions] + [""])


def _num(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else repr(float(v))


def read_confusion_csv(path: str | Path) -> ConfusionMatrix:
    """Read a labelled square matrix (counts or proportions); margins optional."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    header = rows[0][1:]
    has_om = bool(header) and header[-1] == "omission"
    labels = tuple(header[:-1] if has_om else header)
    P = len(labels)
    counts, om, add = np.zeros((P, P)), np.zeros(P), np.zeros(P)
    seen = 0
    for r in rows[1:]:
        if r[0] == "addition":
            add = np.array([float(v) for v in r[1:P + 1]])
            continue
        if r[0] not in labels:
            raise ValueError(f"{path}: row label {r[0]!r} not in header")
        i = labels.index(r[0])
        counts[i] = [float(v) for v in r[1:P + 1]]
        if has_om:
            om[i] = float(r[P + 1] or 0)
        seen += 1
    if seen != P:
        raise ValueError(f"{path}: expected {P} rows, found {seen}")
    return ConfusionMatrix(labels, counts, om, add)


# -- similarity to human confusions ------------------------------------------

def pearson(a: np.ndarray, b: np.ndarray) -> float:
    a, b = np.asarray(a, np.float64).ravel(), np.asarray(b, np.float64).ravel()
    if np.array_equal(a, b):
        return 1.0
    da, db = a - a.mean(), b - b.mean()
    denom = math.sqrt(float(da @ da) * float(db @ db))
    if denom == 0.0:
        return float("nan")
    return float(np.clip((da @ db) / denom, -1.0, 1.0))


def row_kl(human: np.ndarray, sim: np.ndarray, eps: float = KL_SMOOTHING) -> np.ndarray:
    """KL(human row || simulation row) after additive smoothing of both rows."""
    h = human + eps
    s = sim + eps
    h = h / h.sum(1, keepdims=True)
    s = s / s.sum(1, keepdims=True)
    return np.maximum((h * (np.log(h) - np.log(s))).sum(1), 0.0)


def _offdiag(m: np.ndarray) -> np.ndarray:
    return m[~np.eye(m.shape[0], dtype=bool)]


METRICS: dict[str, tuple[Callable[[np.ndarray, np.ndarray], float], bool]] = {
    # name: (function of (sim, human) normalized matrices, higher is better)
    "diag_corr": (lambda s, h: pearson(np.diag(s), np.diag(h)), True),
    "offdiag_corr": (lambda s, h: pearson(_offdiag(s), _offdiag(h)), True),
    "overall_corr": (lambda s, h: pearson(s, h), True),
    "row_kl": (lambda s, h: float(row_kl(h, s).mean()), False),
    "manhattan": (lambda s, h: float(np.abs(s - h).sum()), False),
}


@dataclass
class SimilarityReport:
    phonemes: tuple[str, ...]
    diag_corr: float
    offdiag_corr: float
    overall_corr: float
    row_kl: float
    row_kl_per_phoneme: dict[str, float]
    manhattan: float
    shuffle_p: dict[str, float] = field(default_factory=dict)
    n_shuffles: int = 0
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in (
            "phonemes", "diag_corr", "offdiag_corr", "overall_corr", "row_kl",
            "row_kl_per_phoneme", "manhattan", "shuffle_p", "n_shuffles", "warnings")}


def _matrices(sim, human) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(sim, ConfusionMatrix) and isinstance(human, ConfusionMatrix):
        if sim.phonemes != human.phonemes:
            raise ValueError("simulation and human matrices cover different phoneme subsets")
        return sim.normalized, human.normalized
    s, h = np.asarray(sim, np.float64), np.asarray(human, np.float64)
    if s.shape != h.shape or s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise ValueError("matrices must be square and of equal size")
    return s, h


def similarity_metrics(sim: ConfusionMatrix, human: ConfusionMatrix, n_shuffles: int = 0,
                       seed: int = 0) -> SimilarityReport:
    """All five metrics on the row-normalized cores, optionally with shuffle p-values."""
    s, h = _matrices(sim, human)
    kl = row_kl(h, s)
    rep = SimilarityReport(
        phonemes=tuple(sim.phonemes), diag_corr=METRICS["diag_corr"][0](s, h),
        offdiag_corr=METRICS["offdiag_corr"][0](s, h),
        overall_corr=METRICS["overall_corr"][0](s, h), row_kl=float(kl.mean()),
        row_kl_per_phoneme={p: float(v) for p, v in zip(sim.phonemes, kl)},
        manhattan=METRICS["manhattan"][0](s, h))
    if n_shuffles:
        rep.n_shuffles = n_shuffles
        if n_shuffles < MIN_SHUFFLES:
            rep.warnings.append(f"only {n_shuffles} shuffles; p-values are coarse")
        for name in METRICS:
            rep.shuffle_p[name] = shuffle_test(s, h, name, n_shuffles, seed)
    return rep


def shuffle_test(sim, human, metric: str | Callable = "diag_corr", n: int = N_SHUFFLES,
                 seed: int = 0, higher_is_better: bool = True) -> float:
    """Fraction of label-shuffled simulation matrices scoring at least as well.

    Each shuffle relabels the simulation's phonemes with one permutation
    applied to rows and columns together, so every row moves with its own
    confusions. A callable ``metric`` takes (sim, human) normalized matrices.
    """
    if n < MIN_SHUFFLES:
        log.warning("shuffle_test with n=%d < %d; p-value resolution is poor", n, MIN_SHUFFLES)
    s, h = _matrices(sim, human)
    if isinstance(metric, str):
        fn, higher_is_better = METRICS[metric]
    else:
        fn = metric
    observed = fn(s, h)
    rng = derive_rng(seed, "shuffle", metric if isinstance(metric, str) else "custom")
    hits = 0
    for _ in range(n):
        perm = rng.permutation(s.shape[0])
        v = fn(s[np.ix_(perm, perm)], h)
        if higher_is_better:
            hits += v >= observed
        else:
            hits += v <= observed
    return hits / n


def write_similarity_json(rep: SimilarityReport, path: str | Path) -> None:
    Path(path).write_text(json.dumps(_jsonable(rep.to_dict()), indent=2, sort_keys=True) + "\n")


def _jsonable(x):
    if isinstance(x, float) and not math.isfinite(x):
        return None
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    return x


# -- word errors ---------------------------------------------------------------

WORD_CATEGORIES = ("Correct", "Sub", "Add", "Om", "Failed", "Sub-Om", "Sub-Add", "Om-Add", "S-O-A")
_CATEGORY = {
    frozenset(): "Correct", frozenset("S"): "Sub", frozenset("A"): "Add", frozenset("O"): "Om",
    frozenset("SO"): "Sub-Om", frozenset("SA"): "Sub-Add", frozenset("OA"): "Om-Add",
    frozenset("SOA"): "S-O-A",
}


@dataclass(frozen=True)
class WordErrorRecord:
    sentence_id: str
    word_index: int
    word: str
    category: str
    substitutions: int = 0
    omissions: int = 0
    additions: int = 0


def word_category(n_sub: int, n_om: int, n_add: int, n_phonemes: int = 3) -> str:
    if n_sub + n_om >= n_phonemes:
        return "Failed"
    kinds = frozenset(k for k, n in (("S", n_sub), ("O", n_om), ("A", n_add)) if n)
    return _CATEGORY[kinds]


def classify_word_errors(a: AlignedSentence, utt: SegmentedUtterance) -> list[WordErrorRecord]:
    """Categorize every three-phoneme word of a retained sentence.

    Substitutions and omissions belong to the word of their spoken phoneme.
    An addition belongs to the last word whose first onset lies strictly
    before the prediction time (so a tie goes to the earlier word); additions
    before the first word go to the first word.
    """
    if a.excluded:
        return []
    spans = utt.word_spans()
    word_of = {}
    for wi, (s, e) in enumerate(spans):
        for k in range(s, e):
            word_of[k] = wi
    starts = [utt.segments[s].onset for s, e in spans if e > s]
    sub, om, add = Counter(), Counter(), Counter()
    for p in a.pairs:
        kind = a.kind(p)
        if kind is PairKind.SUB:
            sub[word_of[p.target]] += 1
        elif kind is PairKind.OM:
            om[word_of[p.target]] += 1
        elif kind is PairKind.ADD and starts:
            t = a.events[p.predicted].time_ms
            wi = max(0, int(np.searchsorted(starts, t, side="left")) - 1)
            add[wi] += 1
    out = []
    for wi, ((name, n), (s, e)) in enumerate(zip(utt.words, spans)):
        if n != 3:
            continue
        out.append(WordErrorRecord(a.sentence_id, wi, name,
                                   word_category(sub[wi], om[wi], add[wi], n),
                                   sub[wi], om[wi], add[wi]))
    return out


def word_error_counts(records: Iterable[WordErrorRecord]) -> dict[str, int]:
    c = Counter(r.category for r in records)
    return {k: c.get(k, 0) for k in WORD_CATEGORIES}


# -- reaction times ------------------------------------------------------------

@dataclass(frozen=True)
class RTRecord:
    phoneme: str
    phoneme_class: str
    condition: str
    noise: str
    confused: bool
    raw_rt: float
    adjusted_rt: float
    sentence_id: str = ""


def reaction_time(w: UtteranceWindow, class_means: Mapping[PhonemeClass, float],
                  condition: str = "NH", noise: str = "quiet") -> RTRecord:
    raw = (w.prediction_frame - w.onset_frame) * FRAME_MS
    cls = classify(w.phoneme)
    return RTRecord(w.phoneme, cls.value, condition, noise, w.confused, raw,
                    raw - class_means[cls], w.sentence_id)


def rt_cdf(records: Iterable[RTRecord], grouping: Sequence[str] = ("condition", "confused", "noise"),
           value: str = "adjusted_rt") -> dict[tuple, np.ndarray]:
    """Empirical CDF per group: rows of (rt, cumulative fraction), one per distinct rt."""
    groups: dict[tuple, list[float]] = {}
    for r in records:
        groups.setdefault(tuple(getattr(r, g) for g in grouping), []).append(getattr(r, value))
    out = {}
    for key in sorted(groups, key=str):
        v = np.sort(np.asarray(groups[key], np.float64))
        uniq, last = np.unique(v, return_counts=True)
        out[key] = np.column_stack([uniq, np.cumsum(last) / v.size])
    return out


RT_HEADER = ("sentence_id", "phoneme", "class", "condition", "noise", "confused", "raw_rt_ms",
             "adjusted_rt_ms")


def write_rt_csv(records: Iterable[RTRecord], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RT_HEADER)
        for r in records:
            w.writerow((r.sentence_id, r.phoneme, r.phoneme_class, r.condition, r.noise,
                        int(r.confused), _num(r.raw_rt), _num(r.adjusted_rt)))
