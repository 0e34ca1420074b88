"""Phoneme inventory, token ids and the segmentation file format.

Segmentation files are UTF-8 CSV with the header
``phoneme,onset_ms,offset_ms,word_index`` and one row per spoken phoneme.
An optional fifth ``word`` column carries the orthographic word.
"""

from __future__ import annotations

import csv
import enum
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence


class PhonemeClass(str, enum.Enum):
    VOWEL = "vowel"
    CONSONANT = "consonant"


VOWELS = ("AA", "AE", "AH", "AO", "AW", "AY", "EH", "ER", "EY",
          "IH", "IY", "OW", "OY", "UH", "UW")
CONSONANTS = ("B", "CH", "D", "DH", "F", "G", "HH", "JH", "K", "L", "M", "N",
              "NG", "P", "R", "S", "SH", "T", "TH", "V", "W", "Y", "Z", "ZH")

PHONEMES: tuple[str, ...] = tuple(sorted(VOWELS + CONSONANTS))

BLANK = 0
SPACE = len(PHONEMES) + 1
N_TOKENS = len(PHONEMES) + 2
BLANK_SYMBOL = "<b>"
SPACE_SYMBOL = "<sp>"

_CLASS = {p: PhonemeClass.VOWEL for p in VOWELS}
_CLASS.update({p: PhonemeClass.CONSONANT for p in CONSONANTS})
_TOKEN_ID = {p: i + 1 for i, p in enumerate(PHONEMES)}
_TOKEN_ID[BLANK_SYMBOL] = BLANK
_TOKEN_ID[SPACE_SYMBOL] = SPACE
_TOKEN_SYMBOL = {i: s for s, i in _TOKEN_ID.items()}

SEGMENTATION_HEADER = ("phoneme", "onset_ms", "offset_ms", "word_index")


class SegmentationError(ValueError):
    """Raised for malformed or inconsistent segmentation files."""


def is_phoneme(symbol: str) -> bool:
    return symbol in _CLASS


def classify(phoneme: str) -> PhonemeClass:
    try:
        return _CLASS[phoneme]
    except KeyError:
        raise ValueError(f"unknown phoneme {phoneme!r}") from None


def token_id(symbol: str) -> int:
    """Map a phoneme (or the blank/space symbol) to its output unit index."""
    try:
        return _TOKEN_ID[symbol]
    except KeyError:
        raise ValueError(f"unknown token {symbol!r}") from None


def token_symbol(index: int) -> str:
    try:
        return _TOKEN_SYMBOL[int(index)]
    except KeyError:
        raise ValueError(f"token id {index} outside 0..{N_TOKENS - 1}") from None


def is_phoneme_token(index: int) -> bool:
    return 0 < index < SPACE


@dataclass(frozen=True)
class PhonemeSegment:
    phoneme: str
    onset: float
    offset: float
    word_index: int

    @property
    def duration(self) -> float:
        return self.offset - self.onset


@dataclass(frozen=True)
class SegmentedUtterance:
    sentence_id: str
    segments: tuple[PhonemeSegment, ...] = ()
    words: tuple[tuple[str, int], ...] = ()
    waveform_path: Path | None = None

    def __post_init__(self):
        _validate(self.segments)
        if sum(n for _, n in self.words) != len(self.segments):
            raise SegmentationError(
                f"{self.sentence_id}: word phoneme counts do not sum to "
                f"{len(self.segments)} segments")

    @property
    def phonemes(self) -> list[str]:
        return [s.phoneme for s in self.segments]

    def word_spans(self) -> list[tuple[int, int]]:
        """Half-open segment index range of every word, in word order."""
        spans, start = [], 0
        for _, n in self.words:
            spans.append((start, start + n))
            start += n
        return spans

    def target_tokens(self, with_spaces: bool = True) -> list[int]:
        """Token ids of the spoken sequence, with a space between words."""
        out: list[int] = []
        for k, (a, b) in enumerate(self.word_spans()):
            if with_spaces and k > 0:
                out.append(SPACE)
            out.extend(token_id(s.phoneme) for s in self.segments[a:b])
        return out

    def scaled(self, factor: float) -> "SegmentedUtterance":
        """Return a copy with all times multiplied by ``factor``."""
        segs = tuple(PhonemeSegment(s.phoneme, s.onset * factor, s.offset * factor,
                                    s.word_index) for s in self.segments)
        return SegmentedUtterance(self.sentence_id, segs, self.words, self.waveform_path)


def _validate(segments: Sequence[PhonemeSegment], lines: Sequence[int] | None = None):
    prev = None
    for k, seg in enumerate(segments):
        where = f"line {lines[k]}" if lines else f"segment {k}"
        if not is_phoneme(seg.phoneme):
            raise SegmentationError(f"{where}: unknown phoneme {seg.phoneme!r}")
        if not seg.onset < seg.offset:
            raise SegmentationError(f"{where}: onset {seg.onset} >= offset {seg.offset}")
        if prev is not None:
            if seg.onset < prev.offset:
                raise SegmentationError(
                    f"{where}: segment overlaps previous ({seg.onset} < {prev.offset})")
            if seg.word_index < prev.word_index:
                raise SegmentationError(f"{where}: word_index decreases")
        prev = seg


def _number(text: str) -> float:
    value = float(text)
    if value != value or value in (float("inf"), float("-inf")):
        raise ValueError(f"non-finite time {text!r}")
    return value


def _fmt(value: float) -> str:
    return str(int(value)) if float(value).is_integer() else repr(float(value))


def parse_segmentation(text: str, sentence_id: str = "") -> SegmentedUtterance:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        return SegmentedUtterance(sentence_id)
    header = tuple(c.strip() for c in rows[0])
    has_word = header == SEGMENTATION_HEADER + ("word",)
    if header != SEGMENTATION_HEADER and not has_word:
        raise SegmentationError(f"line 1: unexpected header {','.join(header)!r}")
    ncol = len(header)
    segments, lines, names = [], [], {}
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != ncol:
            raise SegmentationError(f"line {lineno}: expected {ncol} fields, got {len(row)}")
        try:
            seg = PhonemeSegment(row[0].strip(), _number(row[1]), _number(row[2]),
                                 int(row[3]))
        except ValueError as exc:
            raise SegmentationError(f"line {lineno}: {exc}") from None
        if has_word:
            names.setdefault(seg.word_index, row[4])
        segments.append(seg)
        lines.append(lineno)
    _validate(segments, lines)
    counts: dict[int, int] = {}
    for seg in segments:
        counts[seg.word_index] = counts.get(seg.word_index, 0) + 1
    words = tuple((names.get(i, ""), n) for i, n in counts.items())
    return SegmentedUtterance(sentence_id, tuple(segments), words)


def load_segmentation(path: str | Path, sentence_id: str | None = None) -> SegmentedUtterance:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    utt = parse_segmentation(text, sentence_id if sentence_id is not None else path.stem)
    return utt


def format_segmentation(utt: SegmentedUtterance) -> str:
    with_words = any(name for name, _ in utt.words)
    header = SEGMENTATION_HEADER + (("word",) if with_words else ())
    lines = [",".join(header)]
    names = {}
    for (name, _), (a, b) in zip(utt.words, utt.word_spans()):
        for s in utt.segments[a:b]:
            names[s.word_index] = name
    for s in utt.segments:
        row = [s.phoneme, _fmt(s.onset), _fmt(s.offset), str(s.word_index)]
        if with_words:
            row.append(names[s.word_index])
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def save_segmentation(utt: SegmentedUtterance, path: str | Path) -> None:
    Path(path).write_text(format_segmentation(utt), encoding="utf-8")


def class_mean_durations(utterances: Iterable[SegmentedUtterance]) -> dict[PhonemeClass, float]:
    """Mean segment duration (ms) per phoneme class over a corpus."""
    total = {c: 0.0 for c in PhonemeClass}
    count = {c: 0 for c in PhonemeClass}
    for utt in utterances:
        for s in utt.segments:
            c = classify(s.phoneme)
            total[c] += s.duration
            count[c] += 1
    return {c: (total[c] / count[c] if count[c] else 0.0) for c in PhonemeClass}


@dataclass(frozen=True)
class ManifestEntry:
    sentence_id: str
    wav_path: Path
    seg_path: Path


def load_manifest(path: str | Path) -> list[ManifestEntry]:
    """Read a ``sentence_id,wav_path,seg_path`` manifest.

    Relative paths are resolved against the manifest's directory.
    """
    path = Path(path)
    base = path.parent
    entries = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = {"sentence_id", "wav_path", "seg_path"} - set(reader.fieldnames or ())
        if missing:
            raise SegmentationError(f"{path}: manifest lacks columns {sorted(missing)}")
        seen = set()
        for row in reader:
            sid = row["sentence_id"].strip()
            if sid in seen:
                raise SegmentationError(f"{path}: duplicate sentence_id {sid!r}")
            seen.add(sid)
            entries.append(ManifestEntry(sid, base / row["wav_path"].strip(),
                                         base / row["seg_path"].strip()))
    return entries


def write_manifest(entries: Iterable[ManifestEntry], path: str | Path) -> None:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sentence_id", "wav_path", "seg_path"])
        for e in entries:
            w.writerow([e.sentence_id, _rel(e.wav_path, path.parent), _rel(e.seg_path, path.parent)])


def _rel(p: Path, base: Path) -> str:
    try:
        return str(Path(p).relative_to(base))
    except ValueError:
        return str(p)
