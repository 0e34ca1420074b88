"""The eight acceptance criteria, each at its stated tolerance and time budget."""

import math
import time

import numpy as np
import pytest
from scipy import stats

from phode.alignment import correct_alignment, exclude_if_inverted, levenshtein_align
from phode.audio import Waveform
from phode.ctc import PredictionEvent, ctc_loss
from phode.dynamics import (ExemplarSet, InterpolatedWindow, distance_curves, find_t_peak,
                            fit_pca, latency_amplitude, linear_decode, resample_span)
from phode.error_analysis import ConfusionMatrix, shuffle_test, similarity_metrics
from phode.model import log_softmax
from phode.phonemes import PHONEMES, token_id
from phode.toy import synthetic_speech
from phode.vocoder import FilterbankSpec, band_envelopes, encode, resynthesize

from oracles import central_difference, ctc_brute_force, edit_distance

FS = 16000


def test_1_ctc_matches_brute_force(criterion):
    rng = np.random.default_rng(100)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        T = int(rng.integers(1, 7))
        target = list(rng.integers(1, 5, size=int(rng.integers(0, 4))))
        lp = log_softmax(rng.standard_normal((T, 5)) * 2.0)
        loss, _ = ctc_loss(lp, target)
        ref = ctc_brute_force(lp, target)
        if math.isinf(ref) or math.isinf(loss):
            worst = max(worst, 0.0 if math.isinf(ref) and math.isinf(loss) else math.inf)
        else:
            worst = max(worst, abs(loss - ref))
    dt = time.perf_counter() - t0
    ok = worst <= 1e-8 and dt < 5
    criterion(1, ok, f"CTC vs brute force: max |diff| {worst:.2e}, {dt:.2f} s")
    assert ok


def test_2_ctc_gradient_check(criterion):
    rng = np.random.default_rng(200)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(20):
        T = int(rng.integers(2, 9))
        V = int(rng.integers(3, 8))
        L = int(rng.integers(1, max(2, T // 2) + 1))
        target = list(rng.integers(1, V, size=L))
        lp = log_softmax(rng.standard_normal((T, V)))
        loss, grad = ctc_loss(lp, target)
        if math.isinf(loss):
            continue
        num = central_difference(lambda x: ctc_loss(x, target)[0], lp)
        worst = max(worst, np.max(np.abs(grad - num)) / np.max(np.abs(num)))
    dt = time.perf_counter() - t0
    ok = worst < 1e-4 and dt < 10
    criterion(2, ok, f"CTC gradient: max relative error {worst:.2e}, {dt:.2f} s")
    assert ok


SMALL = ["AA", "B", "K", "S", "T"]


def test_3_alignment_oracle_and_ordering(criterion):
    rng = np.random.default_rng(300)
    agree = 0
    for _ in range(200):
        t = list(rng.choice(SMALL, size=int(rng.integers(0, 9))))
        p = list(rng.choice(SMALL, size=int(rng.integers(0, 9))))
        evs = [PredictionEvent(token_id(s), 5 * k) for k, s in enumerate(p)]
        agree += levenshtein_align(t, evs).edit_distance == edit_distance(t, p)
    retained = ordered = 0
    for _ in range(1000):
        n, m = int(rng.integers(0, 9)), int(rng.integers(0, 9))
        onsets = list(np.cumsum(rng.integers(1, 31, size=n)) * 10.0)
        frames = np.sort(rng.choice(301, size=m, replace=False))
        t = list(rng.choice(SMALL, size=n))
        evs = [PredictionEvent(token_id(s), int(f)) for s, f in zip(rng.choice(SMALL, size=m), frames)]
        a = exclude_if_inverted(correct_alignment(levenshtein_align(t, evs, onsets_ms=onsets)))
        if a.excluded:
            continue
        for pr in a.pairs:
            if pr.target is not None and pr.predicted is not None:
                retained += 1
                ordered += onsets[pr.target] < a.events[pr.predicted].time_ms
    ok = agree == 200 and ordered == retained
    criterion(3, ok, f"alignment: {agree}/200 distances agree, "
                     f"{ordered}/{retained} retained pairs ordered")
    assert ok


def as_cm(m):
    P = m.shape[0]
    return ConfusionMatrix(tuple(PHONEMES[:P]), m, np.zeros(P), np.zeros(P))


def test_4_confusion_metrics(criterion):
    rng = np.random.default_rng(400)
    t0 = time.perf_counter()
    m = rng.dirichlet(np.ones(12), size=12) + 2 * np.eye(12)
    r = similarity_metrics(as_cm(m), as_cm(m))
    self_ok = (max(abs(r.diag_corr - 1), abs(r.offdiag_corr - 1), abs(r.overall_corr - 1)) <= 1e-12
               and r.row_kl <= 1e-9 and r.manhattan <= 1e-12)
    # null: simulation and human drawn independently
    ps = [shuffle_test(rng.dirichlet(np.ones(10), size=10), rng.dirichlet(np.ones(10), size=10),
                       "overall_corr", n=200, seed=k) for k in range(200)]
    ks = stats.kstest(ps, "uniform")
    dt = time.perf_counter() - t0
    ok = self_ok and ks.pvalue > 0.01 and dt < 60
    criterion(4, ok, f"confusion metrics: self-similarity {'exact' if self_ok else 'off'}, "
                     f"null KS p {ks.pvalue:.3f}, {dt:.1f} s")
    assert ok


def test_5_vocoder_energy_placement(criterion):
    fb = FilterbankSpec()
    t0 = time.perf_counter()
    t = np.arange(FS // 2) / FS
    fractions = []
    for k, fc in enumerate(fb.centers):
        E = (encode(Waveform(0.3 * np.sin(2 * np.pi * fc * t)), fb).pulses ** 2).sum(1)
        fractions.append(E[k] / E.sum())
    w = synthetic_speech(3.0)
    y = resynthesize(encode(w, fb), fb)
    a, b = band_envelopes(w.samples, fb), band_envelopes(y.samples, fb)
    corr = [np.corrcoef(a[k], b[k])[0, 1] for k in range(len(fb.centers))]
    dt = time.perf_counter() - t0
    ok = min(fractions) >= 0.8 and min(corr) >= 0.9 and dt < 30
    criterion(5, ok, f"vocoder: min in-channel energy {min(fractions):.3f}, "
                     f"min envelope correlation {min(corr):.3f}, {dt:.1f} s")
    assert ok


def test_6_interpolation_and_dynamics(criterion):
    trace = np.random.default_rng(600).standard_normal((100, 7))
    ident = np.max(np.abs(resample_span(trace, 30, 69) - trace[30:70]))
    s = np.arange(40.0)
    a, b = np.zeros((40, 3)), np.zeros((40, 3))
    a[:, 0] = s
    b[:, 0] = s + np.abs(s - 25)
    space = fit_pca(np.vstack([a, b]), 1.0)
    ex = ExemplarSet({"K": {"NC-P": [InterpolatedWindow(x, "K", "NC-P", 0) for x in (a, b)]}})
    t_peak = find_t_peak(distance_curves(ex, space)["NC-P"].values)
    h = 2.5
    lat = latency_amplitude(np.where(np.arange(40) >= 20, h, 0.0))
    ok = ident <= 1e-9 and t_peak == 25 and lat == (200.0, h)
    criterion(6, ok, f"dynamics: identity error {ident:.1e}, t_peak {t_peak}, "
                     f"step latency/amplitude {lat}")
    assert ok


@pytest.mark.slow
def test_7_toy_end_to_end(benchmark_run, criterion):
    rep, _ = benchmark_run
    er = rep.error_rate
    a = er["NH-quiet"] < 0.20
    b = er["NH-quiet"] < er["NH-low"] < er["NH-mid"] < er["NH-high"]
    c = er["CI-quiet"] > er["NH-quiet"]
    d = rep.rt_median_confused >= rep.rt_median_nonconfused
    ok = a and b and c and d and rep.seconds < 900
    rates = ", ".join(f"{k} {v:.3f}" for k, v in er.items())
    criterion(7, ok, f"toy benchmark: (a) {a} (b) {b} (c) {c} (d) {d}; {rates}; "
                     f"median RT confused {rep.rt_median_confused:.1f} ms vs "
                     f"{rep.rt_median_nonconfused:.1f} ms; {rep.seconds:.0f} s")
    assert ok


def test_8_decoder_sanity(criterion):
    rng = np.random.default_rng(800)
    t0 = time.perf_counter()
    k, n_per = 5, 60
    centers = rng.standard_normal((k, 10)) * 5
    y = np.repeat(np.arange(k), n_per)
    X = centers[y] + 0.05 * rng.standard_normal((y.size, 10))
    sep = linear_decode(X, y, folds=10, seed=1)
    shuf = linear_decode(X, rng.permutation(y), folds=10, seed=1)
    n_test = y.size - round(0.8 * y.size)
    sd = math.sqrt((1 / k) * (1 - 1 / k) / n_test)
    dt = time.perf_counter() - t0
    ok = (len(sep.accuracies) == len(shuf.accuracies) == 10 and sep.mean == 1.0
          and abs(shuf.mean - 1 / k) <= 3 * sd and dt < 30)
    criterion(8, ok, f"decoder: separable {sep.mean:.3f}, shuffled {shuf.mean:.3f} "
                     f"(chance {1 / k:.2f} +/- {3 * sd:.3f}), {dt:.2f} s")
    assert ok
