"""Population dynamics around phoneme predictions.

Utterance windows are stretched to a fixed number of steps, z-scored,
grouped by confusion and bigram context, projected onto principal
components, and compared through distance-over-time curves. A linear
read-out measures how decodable the spoken phoneme is from each layer.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from phode.alignment import FRAME_MS, UtteranceWindow
from phode.phonemes import N_TOKENS, SegmentedUtterance, token_id
from phode.rng import derive_rng

log = logging.getLogger(__name__)

N_STEPS = 40
PRE_FRACTION = 0.2
POST_FRACTION = 0.25
MAX_EXEMPLARS = 50
MIN_EXEMPLARS = 2
PCA_VARIANCE = 0.90
BASELINE_STEPS = 3
RIDGE = 1e-6
N_FOLDS = 10
TRAIN_FRACTION = 0.8
CATEGORIES = ("C-P", "C-NP", "NC-P", "NC-NP")
NC_CATEGORIES = ("NC-P", "NC-NP")


# -- bigram context --------------------------------------------------------------

@dataclass
class BigramModel:
    counts: np.ndarray                      # (41, 41) predecessor x successor token counts
    probable_sets: dict[int, frozenset[int]]

    def is_probable(self, previous: str | None, phoneme: str) -> bool:
        """Sentence-initial phonemes and unseen predecessors count as not probable."""
        if previous is None:
            return False
        return token_id(phoneme) in self.probable_sets.get(token_id(previous), frozenset())


def probable_set(row: np.ndarray, fraction: float = 0.1) -> frozenset[int]:
    nz = np.flatnonzero(row)
    if nz.size == 0:
        return frozenset()
    k = max(1, math.ceil(fraction * nz.size))
    order = sorted(nz, key=lambda j: (-row[j], j))
    return frozenset(int(j) for j in order[:k])


def fit_bigram(corpus: Iterable[Sequence[str]], fraction: float = 0.1) -> BigramModel:
    """Successor counts over phoneme sequences; probable = top ``fraction`` of
    distinct successors (ties broken by token id)."""
    counts = np.zeros((N_TOKENS, N_TOKENS), dtype=np.int64)
    n = 0
    for seq in corpus:
        ids = [token_id(p) for p in seq]
        for a, b in zip(ids, ids[1:]):
            counts[a, b] += 1
        n += 1
    if n == 0:
        raise ValueError("bigram corpus is empty")
    sets = {a: probable_set(counts[a], fraction) for a in range(N_TOKENS) if counts[a].any()}
    return BigramModel(counts, sets)


def label_windows(windows: Iterable[UtteranceWindow], bigram: BigramModel) -> list[UtteranceWindow]:
    out = []
    for w in windows:
        w.probable = bigram.is_probable(w.previous, w.phoneme)
        out.append(w)
    return out


# -- windows -----------------------------------------------------------------------

@dataclass
class InterpolatedWindow:
    values: np.ndarray          # (N_STEPS, width)
    phoneme: str
    category: str
    layer_index: int
    clamped: bool = False
    sentence_id: str = ""


def resample_span(trace: np.ndarray, start: float, end: float, steps: int = N_STEPS) -> np.ndarray:
    """Linear interpolation of every unit at ``steps`` points from ``start`` to ``end`` (frames)."""
    trace = np.asarray(trace, dtype=np.float64)
    T = trace.shape[0]
    grid = np.linspace(start, end, steps)
    lo = np.clip(np.floor(grid).astype(np.int64), 0, T - 1)
    hi = np.minimum(lo + 1, T - 1)
    frac = (grid - lo)[:, None]
    return trace[lo] * (1.0 - frac) + trace[hi] * frac


def zscore_units(values: np.ndarray) -> np.ndarray:
    mu = values.mean(0)
    sd = values.std(0)
    return np.divide(values - mu, sd, out=np.zeros_like(values), where=sd > 0)


def expanded_span(w: UtteranceWindow, pre: float = PRE_FRACTION,
                  post: float = POST_FRACTION) -> tuple[float, float]:
    L = w.prediction_frame - w.onset_frame
    return w.onset_frame - pre * L, w.prediction_frame + post * L


def interpolate_window(trace: np.ndarray, w: UtteranceWindow, layer_index: int = 0,
                       pre: float = PRE_FRACTION, post: float = POST_FRACTION,
                       steps: int = N_STEPS, zscore: bool = True) -> InterpolatedWindow:
    """Resample the expanded window to ``steps`` steps and z-score each unit.

    A span reaching outside the sentence is clamped to it and flagged.
    """
    T = np.asarray(trace).shape[0]
    start, end = expanded_span(w, pre, post)
    clamped = start < 0 or end > T - 1
    start, end = max(start, 0.0), min(end, float(T - 1))
    values = resample_span(trace, start, end, steps)
    if zscore:
        values = zscore_units(values)
    category = w.category if w.probable is not None else ("C" if w.confused else "NC")
    return InterpolatedWindow(values, w.phoneme, category, layer_index, clamped, w.sentence_id)


# -- exemplars -------------------------------------------------------------------

@dataclass
class ExemplarSet:
    by_phoneme: dict[str, dict[str, list[InterpolatedWindow]]]
    excluded: list[str] = field(default_factory=list)


def collect_exemplars(windows: Iterable[InterpolatedWindow], max_per: int = MAX_EXEMPLARS,
                      min_per: int = MIN_EXEMPLARS,
                      categories: Sequence[str] = CATEGORIES) -> ExemplarSet:
    """First ``max_per`` windows per (phoneme, category) in input order; phonemes
    short of ``min_per`` in any category are dropped."""
    groups: dict[str, dict[str, list[InterpolatedWindow]]] = {}
    for w in windows:
        cats = groups.setdefault(w.phoneme, {c: [] for c in categories})
        if w.category in cats and len(cats[w.category]) < max_per:
            cats[w.category].append(w)
    kept, dropped = {}, []
    for ph in sorted(groups):
        if all(len(groups[ph][c]) >= min_per for c in categories):
            kept[ph] = groups[ph]
        else:
            dropped.append(ph)
    return ExemplarSet(kept, dropped)


# -- principal components ----------------------------------------------------------

@dataclass
class PCSpace:
    mean: np.ndarray
    components: np.ndarray      # (k, width), orthonormal rows
    explained: np.ndarray       # variance fraction of every component
    n_retained: int

    def project(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, np.float64) - self.mean) @ self.components[:self.n_retained].T

    def reconstruct(self, z: np.ndarray) -> np.ndarray:
        return z @ self.components[:self.n_retained] + self.mean


def fit_pca(data: Sequence[InterpolatedWindow] | np.ndarray,
            threshold: float = PCA_VARIANCE) -> PCSpace:
    """PCA over every (window, step) row; keeps the fewest components whose
    cumulative explained variance reaches ``threshold``."""
    if isinstance(data, np.ndarray):
        X = np.asarray(data, np.float64)
    else:
        if len(data) < 2:
            raise ValueError("PCA needs at least two windows")
        X = np.concatenate([w.values for w in data])
    if X.shape[0] < 2:
        raise ValueError("PCA needs at least two samples")
    mean = X.mean(0)
    _, s, vt = np.linalg.svd(X - mean, full_matrices=False)
    var = s ** 2
    total = var.sum()
    explained = var / total if total > 0 else np.zeros_like(var)
    if total > 0:
        k = int(np.searchsorted(np.cumsum(explained), threshold - 1e-12) + 1)
    else:
        k = 1
    return PCSpace(mean, vt, explained, min(k, vt.shape[0]))


# -- distances ----------------------------------------------------------------------

@dataclass
class DistanceCurve:
    values: np.ndarray
    zscored: np.ndarray
    n_phonemes: int
    degenerate: bool = False


def _mean_pairwise(a: np.ndarray, b: np.ndarray | None = None) -> np.ndarray:
    """Mean Euclidean distance per step; ``a``/``b`` are (n, steps, dims)."""
    if b is None:
        n = a.shape[0]
        if n < 2:
            return np.zeros(a.shape[1])
        i, j = np.triu_indices(n, 1)
        return np.linalg.norm(a[i] - a[j], axis=-1).mean(0)
    return np.linalg.norm(a[:, None] - b[None, :], axis=-1).mean((0, 1))


def _zscore_curve(c: np.ndarray) -> np.ndarray:
    sd = c.std()
    return (c - c.mean()) / sd if sd > 0 else np.zeros_like(c)


def distance_curves(exemplars: ExemplarSet, space: PCSpace, mode: str = "within",
                    ) -> dict[str, DistanceCurve]:
    """Distance-over-time curves averaged across phonemes.

    ``mode="within"`` gives one curve per category (mean pairwise distance
    inside the category); ``mode="between"`` gives a single ``"NC-C"`` curve of
    mean distance between non-confused and confused trajectories;
    ``mode="nc"`` gives a single ``"NC"`` curve of mean pairwise distance among
    all non-confused trajectories, context pooled.
    """
    proj = {ph: {c: np.stack([space.project(w.values) for w in ws]) if ws else None
                 for c, ws in cats.items()}
            for ph, cats in exemplars.by_phoneme.items()}
    out = {}
    if mode == "within":
        cats = sorted({c for cats in proj.values() for c in cats}, key=CATEGORIES.index)
        for c in cats:
            curves, degenerate = [], False
            for ph in proj:
                a = proj[ph].get(c)
                if a is None:
                    continue
                degenerate |= a.shape[0] < 2
                curves.append(_mean_pairwise(a))
            if curves:
                v = np.mean(curves, 0)
                out[c] = DistanceCurve(v, _zscore_curve(v), len(curves), degenerate)
    elif mode == "between":
        curves = []
        for ph, cats in proj.items():
            nc = [a for c, a in cats.items() if c.startswith("NC") and a is not None]
            cc = [a for c, a in cats.items() if c.startswith("C-") and a is not None]
            if nc and cc:
                curves.append(_mean_pairwise(np.concatenate(nc), np.concatenate(cc)))
        if curves:
            v = np.mean(curves, 0)
            out["NC-C"] = DistanceCurve(v, _zscore_curve(v), len(curves))
    elif mode == "nc":
        curves, degenerate = [], False
        for cats in proj.values():
            nc = [a for c, a in cats.items() if c.startswith("NC") and a is not None]
            if nc:
                a = np.concatenate(nc)
                degenerate |= a.shape[0] < 2
                curves.append(_mean_pairwise(a))
        if curves:
            v = np.mean(curves, 0)
            out["NC"] = DistanceCurve(v, _zscore_curve(v), len(curves), degenerate)
    else:
        raise ValueError(f"unknown distance mode {mode!r}")
    return out


def find_t_peak(curve: np.ndarray) -> int:
    """Step of minimal distance; the earliest step wins ties."""
    return int(np.argmin(np.asarray(curve)))


def mean_activation(windows: Sequence[InterpolatedWindow]) -> np.ndarray:
    """Per-step activation averaged over units and windows; an alternative
    signal for :func:`latency_amplitude`."""
    if not windows:
        raise ValueError("no windows")
    return np.mean([w.values.mean(1) for w in windows], 0)


def latency_amplitude(signal: np.ndarray, baseline_steps: int = BASELINE_STEPS,
                      step_ms: float = FRAME_MS) -> tuple[float, float]:
    """Latency (ms) and size of the largest deviation from the baseline mean."""
    x = np.asarray(signal, dtype=np.float64)
    dev = np.abs(x[baseline_steps:] - x[:baseline_steps].mean())
    k = int(np.argmax(dev))
    return (k + baseline_steps) * step_ms, float(dev[k])


# -- linear decoding ----------------------------------------------------------------

def frame_labels(n_frames: int, utt: SegmentedUtterance) -> np.ndarray:
    """Token id of the phoneme sounding at each frame, -1 outside phonemes."""
    labels = np.full(n_frames, -1, dtype=np.int64)
    t = np.arange(n_frames) * FRAME_MS
    for s in utt.segments:
        labels[(t >= s.onset) & (t < s.offset)] = token_id(s.phoneme)
    return labels


def ridge_fit(X: np.ndarray, Y: np.ndarray, ridge: float = RIDGE) -> np.ndarray:
    """Least squares with a bias column, solved through the SVD."""
    Xb = np.hstack([X, np.ones((X.shape[0], 1))])
    u, s, vt = np.linalg.svd(Xb, full_matrices=False)
    return vt.T @ ((s / (s ** 2 + ridge))[:, None] * (u.T @ Y))


def ridge_predict(W: np.ndarray, X: np.ndarray) -> np.ndarray:
    return np.hstack([X, np.ones((X.shape[0], 1))]) @ W


@dataclass
class DecodeResult:
    accuracies: list[float]
    mean: float
    sd: float
    flagged_folds: list[int] = field(default_factory=list)


def linear_decode(X: np.ndarray, labels: np.ndarray, folds: int = N_FOLDS,
                  train_fraction: float = TRAIN_FRACTION, seed: int = 0,
                  ridge: float = RIDGE, tag: str = "") -> DecodeResult:
    """One-vs-all least-squares classifier over random train/test splits.

    Test frames whose class never appears in the training split are not
    scored and the fold is flagged.
    """
    X = np.asarray(X, np.float64)
    labels = np.asarray(labels)
    n = X.shape[0]
    if n < 2:
        raise ValueError("need at least two frames to decode")
    rng = derive_rng(seed, "decode", tag)
    accs, flagged = [], []
    n_train = max(1, min(n - 1, int(round(train_fraction * n))))
    for f in range(folds):
        perm = rng.permutation(n)
        tr, te = perm[:n_train], perm[n_train:]
        classes = np.unique(labels[tr])
        Y = (labels[tr][:, None] == classes[None, :]).astype(np.float64)
        W = ridge_fit(X[tr], Y, ridge)
        keep = np.isin(labels[te], classes)
        if not keep.all():
            flagged.append(f)
        te = te[keep]
        if te.size == 0:
            accs.append(float("nan"))
            continue
        pred = classes[np.argmax(ridge_predict(W, X[te]), axis=1)]
        accs.append(float(np.mean(pred == labels[te])))
    a = np.asarray(accs)
    return DecodeResult(accs, float(np.nanmean(a)), float(np.nanstd(a)), flagged)


def decode_layers(traces: Sequence[Sequence[np.ndarray]], utterances: Sequence[SegmentedUtterance],
                  layers: Iterable[int] | None = None, folds: int = N_FOLDS,
                  seed: int = 0, tag: str = "") -> dict[int, DecodeResult]:
    """Decode the sounding phoneme from every frame of concatenated sentences."""
    labels = [frame_labels(tr[0].shape[0], u) for tr, u in zip(traces, utterances)]
    y = np.concatenate(labels)
    mask = y >= 0
    out = {}
    for layer in (range(len(traces[0])) if layers is None else layers):
        X = np.concatenate([tr[layer] for tr in traces])[mask]
        out[layer] = linear_decode(X, y[mask], folds, seed=seed, tag=f"{tag}/{layer}")
    return out


# -- reports --------------------------------------------------------------------------

@dataclass
class LayerDynamics:
    layer: int
    condition: str
    noise: str
    category: str
    curve: np.ndarray
    zscored: np.ndarray
    t_peak: int
    latency_ms: float
    amplitude: float
    n_phonemes: int


def analyze_layer(windows: Mapping[tuple[str, str], list[InterpolatedWindow]], layer: int,
                  threshold: float = PCA_VARIANCE, max_per: int = MAX_EXEMPLARS,
                  min_per: int = MIN_EXEMPLARS) -> tuple[PCSpace | None, list[LayerDynamics]]:
    """Distance curves of one layer for every (condition, noise) group.

    All groups share one PC space fitted on the pooled windows.
    """
    pooled = [w for ws in windows.values() for w in ws]
    if len(pooled) < 2:
        return None, []
    space = fit_pca(pooled, threshold)
    out = []
    for (condition, noise), ws in sorted(windows.items()):
        ex = collect_exemplars(ws, max_per, min_per)
        curves = dict(distance_curves(ex, space, "within"))
        curves.update(distance_curves(ex, space, "between"))
        # a condition without confusions still has non-confused trajectories
        nc_ex = collect_exemplars(ws, max_per, min_per, NC_CATEGORIES)
        curves.update(distance_curves(nc_ex, space, "nc"))
        for cat, dc in curves.items():
            lat, amp = latency_amplitude(dc.values)
            out.append(LayerDynamics(layer, condition, noise, cat, dc.values, dc.zscored,
                                     find_t_peak(dc.values), lat, amp, dc.n_phonemes))
    return space, out


DYNAMICS_HEADER = ("layer", "condition", "noise", "category", "t_peak", "latency_ms", "amplitude")


def write_dynamics(results: Sequence[LayerDynamics], directory: str | Path,
                   extra: Mapping | None = None) -> None:
    """``dynamics.json`` (full curves), ``dynamics.csv`` summary and ``distance_curves.csv``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    doc = dict(extra or {})
    doc["results"] = [{
        "layer": r.layer, "condition": r.condition, "noise": r.noise, "category": r.category,
        "t_peak": r.t_peak, "latency_ms": r.latency_ms, "amplitude": r.amplitude,
        "n_phonemes": r.n_phonemes, "curve": [float(v) for v in r.curve],
        "zscored": [float(v) for v in r.zscored]} for r in results]
    (d / "dynamics.json").write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    with open(d / "dynamics.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DYNAMICS_HEADER)
        for r in results:
            w.writerow((r.layer, r.condition, r.noise, r.category, r.t_peak,
                        repr(r.latency_ms), repr(r.amplitude)))
    with open(d / "distance_curves.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("layer", "condition", "noise", "category", "step", "distance", "zscored"))
        for r in results:
            for k, (v, z) in enumerate(zip(r.curve, r.zscored)):
                w.writerow((r.layer, r.condition, r.noise, r.category, k, repr(float(v)),
                            repr(float(z))))
