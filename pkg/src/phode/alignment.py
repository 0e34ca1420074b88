"""Alignment of spoken and predicted phoneme sequences.

Pairs are built with unit-cost Levenshtein alignment. A matched pair whose
prediction does not come after the spoken onset is repaired by moving a
neighbouring gap; sentences that still contain such a pair are excluded.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from phode.ctc import PredictionEvent
from phode.phonemes import BLANK, SPACE, SegmentedUtterance, is_phoneme, token_id

FRAME_MS = 10.0
INVERSION_REASON = "prediction precedes target"


class PairKind(str, Enum):
    MATCH = "match"
    SUB = "sub"
    OM = "om"
    ADD = "add"


@dataclass(frozen=True)
class AlignmentPair:
    """One column of the alignment; ``target``/``predicted`` index into the
    sentence's target list and event list, ``None`` marks a gap."""

    target: int | None
    predicted: int | None

    def __post_init__(self):
        if self.target is None and self.predicted is None:
            raise ValueError("an alignment pair cannot be gap-gap")


@dataclass(frozen=True)
class AlignedSentence:
    targets: tuple[str, ...]
    events: tuple[PredictionEvent, ...]
    pairs: tuple[AlignmentPair, ...]
    sentence_id: str = ""
    onsets_ms: tuple[float, ...] | None = None
    excluded: bool = False
    reason: str = ""

    def kind(self, p: AlignmentPair) -> PairKind:
        if p.target is None:
            return PairKind.ADD
        if p.predicted is None:
            return PairKind.OM
        same = self.targets[p.target] == self.events[p.predicted].symbol
        return PairKind.MATCH if same else PairKind.SUB

    def target_column(self) -> list[str]:
        return [self.targets[p.target] for p in self.pairs if p.target is not None]

    def predicted_column(self) -> list[PredictionEvent]:
        return [self.events[p.predicted] for p in self.pairs if p.predicted is not None]

    @property
    def edit_distance(self) -> int:
        return sum(self.kind(p) is not PairKind.MATCH for p in self.pairs)

    def inverted(self, p: AlignmentPair) -> bool:
        """True for a matched pair whose prediction is not after the onset."""
        if p.target is None or p.predicted is None or self.onsets_ms is None:
            return False
        return self.events[p.predicted].time_ms <= self.onsets_ms[p.target]


@dataclass
class UtteranceWindow:
    phoneme: str
    onset_frame: int
    prediction_frame: int
    confused: bool
    partner: str
    probable: bool | None = None
    previous: str | None = None
    sentence_id: str = ""
    target_index: int = 0

    @property
    def length(self) -> int:
        return self.prediction_frame - self.onset_frame

    @property
    def category(self) -> str:
        if self.probable is None:
            raise ValueError("window has no bigram label yet")
        return ("C" if self.confused else "NC") + "-" + ("P" if self.probable else "NP")


def clean_predictions(events: Iterable[PredictionEvent]) -> list[PredictionEvent]:
    return [e for e in events if e.token not in (BLANK, SPACE)]


def levenshtein_align(target: Sequence[str], predicted: Sequence[PredictionEvent],
                      sentence_id: str = "", onsets_ms: Sequence[float] | None = None
                      ) -> AlignedSentence:
    """Minimal unit-cost alignment; traceback prefers match, substitution,
    omission (target against gap), then addition."""
    tgt = [t for t in target if is_phoneme(t)]
    if len(tgt) != len(target):
        raise ValueError("target must contain phonemes only (remove spaces first)")
    events = clean_predictions(predicted)
    sym = [e.symbol for e in events]
    n, m = len(tgt), len(sym)
    D = np.zeros((n + 1, m + 1), dtype=np.int64)
    D[:, 0] = np.arange(n + 1)
    D[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            D[i, j] = min(D[i - 1, j - 1] + (tgt[i - 1] != sym[j - 1]),
                          D[i - 1, j] + 1, D[i, j - 1] + 1)
    pairs = []
    i, j = n, m
    while i or j:
        if i and j and tgt[i - 1] == sym[j - 1] and D[i, j] == D[i - 1, j - 1]:
            pairs.append(AlignmentPair(i - 1, j - 1)); i -= 1; j -= 1
        elif i and j and D[i, j] == D[i - 1, j - 1] + 1:
            pairs.append(AlignmentPair(i - 1, j - 1)); i -= 1; j -= 1
        elif i and D[i, j] == D[i - 1, j] + 1:
            pairs.append(AlignmentPair(i - 1, None)); i -= 1
        else:
            pairs.append(AlignmentPair(None, j - 1)); j -= 1
    return AlignedSentence(tuple(tgt), tuple(events), tuple(reversed(pairs)), sentence_id,
                           None if onsets_ms is None else tuple(float(x) for x in onsets_ms))


def align_utterance(utt: SegmentedUtterance, events: Sequence[PredictionEvent]) -> AlignedSentence:
    return levenshtein_align(utt.phonemes, events, utt.sentence_id,
                             [s.onset for s in utt.segments])


def _repair_at(a: AlignedSentence, pairs: list[AlignmentPair], i: int) -> bool:
    p = pairs[i]
    onset = a.onsets_ms
    left = pairs[i - 1] if i > 0 else None
    right = pairs[i + 1] if i + 1 < len(pairs) else None
    # an omission on the left takes this prediction
    if left is not None and left.predicted is None:
        if a.events[p.predicted].time_ms > onset[left.target]:
            pairs[i - 1:i + 1] = [AlignmentPair(left.target, p.predicted),
                                  AlignmentPair(p.target, None)]
            return True
    # an addition on the right supplies a later prediction for this target
    if right is not None and right.target is None:
        if a.events[right.predicted].time_ms > onset[p.target]:
            pairs[i:i + 2] = [AlignmentPair(None, p.predicted),
                              AlignmentPair(p.target, right.predicted)]
            return True
    if (left is not None and (left.target is None or left.predicted is None)) or \
            (right is not None and (right.target is None or right.predicted is None)):
        pairs[i:i + 1] = [AlignmentPair(None, p.predicted), AlignmentPair(p.target, None)]
        return True
    return False


def correct_alignment(a: AlignedSentence, segments: SegmentedUtterance | Sequence[float] | None = None,
                      events: Sequence[PredictionEvent] | None = None) -> AlignedSentence:
    """Move gaps so every matched pair has its prediction after the spoken onset.

    A violating pair is repaired only through an adjacent gap: an omission to
    its left is paired with the prediction, an addition to its right is paired
    with the target, or the pair is split into an addition and an omission.
    Violations with no adjacent gap are left for :func:`exclude_if_inverted`.
    Each repair removes one violating pair, so the loop terminates.
    """
    if segments is not None:
        onsets = ([s.onset for s in segments.segments] if isinstance(segments, SegmentedUtterance)
                  else list(segments))
        a = replace(a, onsets_ms=tuple(float(x) for x in onsets))
    if events is not None:
        a = replace(a, events=tuple(clean_predictions(events)))
    if a.onsets_ms is None:
        raise ValueError("correct_alignment needs target onset times")
    pairs = list(a.pairs)
    changed = True
    while changed:
        changed = False
        for i, p in enumerate(pairs):
            if a.inverted(p) and _repair_at(a, pairs, i):
                changed = True
                break
    return replace(a, pairs=tuple(pairs))


def exclude_if_inverted(a: AlignedSentence) -> AlignedSentence:
    if any(a.inverted(p) for p in a.pairs):
        return replace(a, excluded=True, reason=INVERSION_REASON)
    return a


def exclude_twins(*conditions: AlignedSentence) -> list[AlignedSentence]:
    """Exclude every condition of a sentence when any one of them is excluded."""
    bad = next((c for c in conditions if c.excluded), None)
    if bad is None:
        return list(conditions)
    return [c if c.excluded else replace(c, excluded=True, reason=bad.reason) for c in conditions]


def onset_frame(onset_ms: float) -> int:
    return int(np.floor(onset_ms / FRAME_MS))


def extract_windows(a: AlignedSentence) -> list[UtteranceWindow]:
    """One window per matched or substituted pair of a retained sentence."""
    if a.excluded:
        raise ValueError(f"{a.sentence_id}: sentence is excluded ({a.reason})")
    if a.onsets_ms is None:
        raise ValueError("extract_windows needs target onset times")
    out = []
    for p in a.pairs:
        if p.target is None or p.predicted is None:
            continue
        ev = a.events[p.predicted]
        phon = a.targets[p.target]
        out.append(UtteranceWindow(
            phoneme=phon, onset_frame=onset_frame(a.onsets_ms[p.target]),
            prediction_frame=ev.frame, confused=ev.symbol != phon, partner=ev.symbol,
            previous=a.targets[p.target - 1] if p.target > 0 else None,
            sentence_id=a.sentence_id, target_index=p.target))
    return out


ALIGNMENT_HEADER = ("sentence_id", "pair_index", "target", "predicted", "target_onset_ms",
                    "pred_time_ms", "kind")


def alignment_rows(a: AlignedSentence) -> list[tuple]:
    rows = []
    for k, p in enumerate(a.pairs):
        tgt = a.targets[p.target] if p.target is not None else ""
        onset = a.onsets_ms[p.target] if p.target is not None and a.onsets_ms else ""
        pred = a.events[p.predicted].symbol if p.predicted is not None else ""
        t = a.events[p.predicted].time_ms if p.predicted is not None else ""
        rows.append((a.sentence_id, k, tgt, pred, onset, t, a.kind(p).value))
    return rows


def write_alignments(sentences: Iterable[AlignedSentence], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ALIGNMENT_HEADER)
        for a in sentences:
            w.writerows(alignment_rows(a))


def read_alignments(path: str | Path, excluded: dict[str, str] | None = None) -> list[AlignedSentence]:
    """Rebuild aligned sentences from the CSV export (sentence order preserved).

    ``excluded`` maps sentence ids to exclusion reasons, which the CSV does
    not carry. Prediction frames are recovered from their times.
    """
    rows: dict[str, list[dict]] = {}
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            rows.setdefault(r["sentence_id"], []).append(r)
    out = []
    excluded = excluded or {}
    for sid, rs in rows.items():
        targets, onsets, events, pairs = [], [], [], []
        for r in sorted(rs, key=lambda r: int(r["pair_index"])):
            ti = pi = None
            if r["target"]:
                ti = len(targets)
                targets.append(r["target"])
                onsets.append(float(r["target_onset_ms"]))
            if r["predicted"]:
                pi = len(events)
                events.append(PredictionEvent(token_id(r["predicted"]),
                                              int(round(float(r["pred_time_ms"]) / FRAME_MS))))
            pairs.append(AlignmentPair(ti, pi))
        out.append(AlignedSentence(tuple(targets), tuple(events), tuple(pairs), sid,
                                   tuple(onsets), sid in excluded, excluded.get(sid, "")))
    return out


def process_sentence(utt: SegmentedUtterance, events: Sequence[PredictionEvent]) -> AlignedSentence:
    """Align, repair and apply the exclusion rule."""
    return exclude_if_inverted(correct_alignment(align_utterance(utt, events)))
