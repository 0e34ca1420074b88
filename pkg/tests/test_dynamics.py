import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from phode.alignment import UtteranceWindow
from phode.dynamics import (CATEGORIES, N_STEPS, InterpolatedWindow, analyze_layer,
                            collect_exemplars, decode_layers, distance_curves, expanded_span,
                            find_t_peak, fit_bigram, fit_pca, frame_labels, interpolate_window,
                            label_windows, latency_amplitude, linear_decode, mean_activation, probable_set,
                            resample_span, write_dynamics)
from phode.phonemes import PHONEMES, PhonemeSegment, SegmentedUtterance, token_id


def test_bigram_single_successor():
    bg = fit_bigram([["AA", "B", "AA", "B"]])
    assert bg.is_probable("AA", "B")
    assert not bg.is_probable("K", "B")      # unseen predecessor
    assert not bg.is_probable(None, "B")     # sentence start


def test_bigram_top_decile():
    succ = PHONEMES[1:21]
    seq = []
    for k, s in enumerate(succ):
        seq += [["AA", s]] * (k + 1)
    bg = fit_bigram(seq)
    assert bg.probable_sets[token_id("AA")] == {token_id(succ[-1]), token_id(succ[-2])}
    assert probable_set(np.zeros(41)) == frozenset()
    with pytest.raises(ValueError):
        fit_bigram([])


def test_label_windows_sets_category():
    bg = fit_bigram([["AA", "B"]])
    w = [UtteranceWindow("B", 0, 5, True, "D", previous="AA"),
         UtteranceWindow("B", 0, 5, False, "B", previous="K")]
    assert [x.category for x in label_windows(w, bg)] == ["C-P", "NC-NP"]


def test_length_forty_identity():
    trace = np.random.default_rng(0).standard_normal((100, 7))
    out = resample_span(trace, 30, 69)
    assert np.max(np.abs(out - trace[30:70])) < 1e-9


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 20), st.floats(1, 60), st.floats(-3, 3), st.floats(-3, 3))
def test_affine_exact_and_endpoints(start, length, slope, icept):
    t = np.arange(100.0)
    trace = np.stack([slope * t + icept, np.sin(t)], 1)
    out = resample_span(trace, start, start + length)
    grid = np.linspace(start, start + length, N_STEPS)
    assert np.allclose(out[:, 0], slope * grid + icept, atol=1e-9)
    assert np.allclose(out[[0, -1], 1], np.interp([start, start + length], t, trace[:, 1]))


def test_window_span_and_zscore():
    trace = np.random.default_rng(1).standard_normal((200, 5))
    trace[:, 2] = 4.0
    w = UtteranceWindow("K", 50, 90, False, "K")
    assert expanded_span(w) == (42.0, 100.0)
    iw = interpolate_window(trace, w, layer_index=3)
    assert iw.values.shape == (40, 5) and iw.layer_index == 3 and not iw.clamped
    assert np.allclose(iw.values.mean(0), 0, atol=1e-12)
    assert np.allclose(iw.values[:, [0, 1, 3, 4]].std(0), 1)
    assert not iw.values[:, 2].any()
    assert iw.category == "NC"


def test_window_clamped_at_sentence_edges():
    trace = np.arange(30.0)[:, None]
    iw = interpolate_window(trace, UtteranceWindow("K", 2, 28, False, "K"), zscore=False)
    assert iw.clamped
    assert iw.values[0, 0] == 0.0 and iw.values[-1, 0] == 29.0


def make_windows(phoneme, category, n, rng, width=4):
    return [InterpolatedWindow(rng.standard_normal((40, width)), phoneme, category, 0)
            for _ in range(n)]


def test_exemplar_caps_and_exclusion():
    rng = np.random.default_rng(2)
    ws = make_windows("K", "NC-P", 100, rng)
    for c in CATEGORIES:
        ws += make_windows("K", c, 3, rng)
    ws += make_windows("S", "C-NP", 1, rng)
    for c in ("C-P", "NC-P", "NC-NP"):
        ws += make_windows("S", c, 5, rng)
    ex = collect_exemplars(ws)
    assert len(ex.by_phoneme["K"]["NC-P"]) == 50
    assert ex.by_phoneme["K"]["NC-P"][0] is ws[0]
    assert "S" not in ex.by_phoneme and ex.excluded == ["S"]
    again = collect_exemplars(ws)
    assert all(a is b for a, b in zip(again.by_phoneme["K"]["C-P"], ex.by_phoneme["K"]["C-P"]))


def test_pca_plane():
    rng = np.random.default_rng(3)
    basis = np.linalg.qr(rng.standard_normal((6, 2)))[0].T
    X = rng.standard_normal((300, 2)) * [3.0, 1.0] @ basis + 5.0
    sp = fit_pca(X, threshold=0.999999)
    assert sp.n_retained == 2
    resid = X - sp.reconstruct(sp.project(X))
    assert np.sum(resid ** 2) / np.sum((X - X.mean(0)) ** 2) < 1e-9
    G = sp.components
    assert np.max(np.abs(G @ G.T - np.eye(G.shape[0]))) < 1e-8
    assert np.all(np.diff(sp.explained) <= 1e-15)


def test_pca_variance_accounting_and_duplicates():
    X = np.random.default_rng(4).standard_normal((200, 10)) * np.arange(1, 11)
    sp = fit_pca(X, 0.9)
    Xc = X - X.mean(0)
    kept = np.sum(sp.project(X) ** 2) / np.sum(Xc ** 2)
    assert kept >= 0.9 and np.sum(sp.explained[:sp.n_retained - 1]) < 0.9
    sp2 = fit_pca(np.vstack([X, X]), 0.9)
    assert sp2.n_retained == sp.n_retained
    assert np.allclose(np.abs(np.sum(sp.components * sp2.components, 1)), 1.0)
    with pytest.raises(ValueError):
        fit_pca(X[:1])
    with pytest.raises(ValueError):
        fit_pca([InterpolatedWindow(X[:40], "K", "NC-P", 0)])


def single_set(trajs, cat="NC-P"):
    from phode.dynamics import ExemplarSet
    ws = [InterpolatedWindow(t, "K", cat, 0) for t in trajs]
    return ExemplarSet({"K": {cat: ws}})


def test_identical_trajectories_zero_distance():
    t = np.random.default_rng(5).standard_normal((40, 3))
    sp = fit_pca(np.vstack([t, t + 1]), 0.99)
    c = distance_curves(single_set([t, t.copy(), t.copy()]), sp)["NC-P"]
    assert np.allclose(c.values, 0)


def coinciding_at(step, width=3):
    s = np.arange(40.0)
    a = np.zeros((40, width))
    b = np.zeros((40, width))
    a[:, 0] = s
    b[:, 0] = s + np.abs(s - step)
    return a, b


def test_minimum_at_constructed_step():
    a, b = coinciding_at(25)
    sp = fit_pca(np.vstack([a, b]), 1.0)
    c = distance_curves(single_set([a, b]), sp)["NC-P"]
    assert find_t_peak(c.values) == 25


def test_single_trajectory_flagged():
    a, b = coinciding_at(10)
    sp = fit_pca(np.vstack([a, b]), 1.0)
    c = distance_curves(single_set([a]), sp)["NC-P"]
    assert c.degenerate and not c.values.any()


def test_distance_in_pc_space_matches_original_up_to_residual():
    rng = np.random.default_rng(6)
    trajs = [rng.standard_normal((40, 8)) * np.linspace(3, 0.1, 8) for _ in range(6)]
    full = fit_pca(np.vstack(trajs), 1.0)
    c = distance_curves(single_set(trajs), full)["NC-P"]
    i, j = np.triu_indices(6, 1)
    T = np.stack(trajs)
    direct = np.linalg.norm(T[i] - T[j], axis=-1).mean(0)
    assert np.allclose(c.values, direct, atol=1e-9)
    part = fit_pca(np.vstack(trajs), 0.9)
    c9 = distance_curves(single_set(trajs), part)["NC-P"]
    assert np.all(c9.values <= direct + 1e-9)


def test_distance_permutation_invariant_and_between_mode():
    rng = np.random.default_rng(7)
    from phode.dynamics import ExemplarSet
    cats = {c: [InterpolatedWindow(rng.standard_normal((40, 4)), "K", c, 0) for _ in range(3)]
            for c in CATEGORIES}
    rev = {c: ws[::-1] for c, ws in cats.items()}
    sp = fit_pca([w for ws in cats.values() for w in ws], 0.9)
    a = distance_curves(ExemplarSet({"K": cats}), sp)
    b = distance_curves(ExemplarSet({"K": rev}), sp)
    assert all(np.allclose(a[c].values, b[c].values) for c in CATEGORIES)
    bt = distance_curves(ExemplarSet({"K": cats}), sp, "between")
    assert list(bt) == ["NC-C"] and bt["NC-C"].values.shape == (40,)
    assert np.isclose(bt["NC-C"].zscored.mean(), 0) and np.isclose(bt["NC-C"].zscored.std(), 1)
    with pytest.raises(ValueError):
        distance_curves(ExemplarSet({"K": cats}), sp, "sideways")


def test_t_peak_examples():
    assert find_t_peak(np.linspace(1, 0, 40)) == 39
    assert find_t_peak(np.ones(40)) == 0


def test_latency_amplitude_examples():
    assert latency_amplitude(np.zeros(40)) == (30.0, 0.0)
    step = np.where(np.arange(40) >= 20, 2.5, 0.0)
    assert latency_amplitude(step) == (200.0, 2.5)


def test_mean_activation_step_latency():
    step = np.zeros((40, 3))
    step[20:] = [1.0, 2.0, 3.0]
    ws = [InterpolatedWindow(step * g, "K", "NC-P", 0) for g in (1.0, 3.0)]
    assert latency_amplitude(mean_activation(ws)) == (200.0, 4.0)
    with pytest.raises(ValueError):
        mean_activation([])


def test_latency_robust_to_small_noise():
    base = np.zeros(40)
    base[20] = 1.0
    for seed in range(100):
        x = base + 0.01 * np.random.default_rng(seed).standard_normal(40)
        lat, _ = latency_amplitude(x)
        assert abs(lat - 200.0) <= 10.0


def clusters(n_per, k, dim, rng, spread=0.05):
    centers = rng.standard_normal((k, dim)) * 5
    y = np.repeat(np.arange(k), n_per)
    return centers[y] + spread * rng.standard_normal((y.size, dim)), y


def test_decoder_separable_and_shuffled():
    rng = np.random.default_rng(8)
    X, y = clusters(60, 5, 10, rng)
    r = linear_decode(X, y, seed=1)
    assert len(r.accuracies) == 10 and r.mean == 1.0 and r.sd == 0.0
    ys = rng.permutation(y)
    r = linear_decode(X, ys, seed=1)
    n_test = X.shape[0] - round(0.8 * X.shape[0])
    sd = np.sqrt(0.2 * 0.8 / n_test)
    assert abs(r.mean - 0.2) < 3 * sd


def test_decoder_duplicate_frames():
    rng = np.random.default_rng(9)
    X, y = clusters(30, 3, 4, rng, spread=2.0)
    a = linear_decode(X, y, seed=2)
    b = linear_decode(np.vstack([X, X]), np.concatenate([y, y]), seed=2)
    assert abs(a.mean - b.mean) < 0.15


def test_decoder_flags_missing_class():
    X = np.vstack([np.zeros((20, 2)), np.ones((1, 2))])
    y = np.array([0] * 20 + [1])
    r = linear_decode(X, y, folds=10, seed=0)
    assert r.flagged_folds and all(0 <= a <= 1 for a in r.accuracies if a == a)


def test_frame_labels_and_decode_layers():
    segs = (PhonemeSegment("K", 0, 50, 0), PhonemeSegment("AE", 50, 120, 0))
    utt = SegmentedUtterance("u", segs, (("ka", 2),))
    lab = frame_labels(15, utt)
    assert list(lab[:5]) == [token_id("K")] * 5 and lab[5] == token_id("AE") and lab[12] == -1
    rng = np.random.default_rng(10)
    trace = [np.where(lab[:, None] == token_id("K"), 1.0, -1.0) + 0.01 * rng.standard_normal((15, 3)),
             rng.standard_normal((15, 3))]
    res = decode_layers([trace] * 4, [utt] * 4, folds=3)
    assert set(res) == {0, 1} and res[0].mean == 1.0


def test_nc_mode_pools_contexts():
    rng = np.random.default_rng(8)
    from phode.dynamics import ExemplarSet
    p = [rng.standard_normal((40, 4)) for _ in range(2)]
    n = [rng.standard_normal((40, 4)) for _ in range(2)]
    ex = ExemplarSet({"K": {"NC-P": [InterpolatedWindow(t, "K", "NC-P", 0) for t in p],
                            "NC-NP": [InterpolatedWindow(t, "K", "NC-NP", 0) for t in n]}})
    sp = fit_pca(np.vstack(p + n), 1.0)
    c = distance_curves(ex, sp, "nc")["NC"]
    T = np.stack(p + n)
    i, j = np.triu_indices(4, 1)
    assert np.allclose(c.values, np.linalg.norm(T[i] - T[j], axis=-1).mean(0), atol=1e-9)


def test_condition_without_confusions_keeps_nc_curve():
    rng = np.random.default_rng(12)
    ws = {("NH", "quiet"): [InterpolatedWindow(rng.standard_normal((40, 4)), "K", c, 0)
                            for c in ("NC-P", "NC-NP") for _ in range(3)],
          ("CI", "quiet"): [InterpolatedWindow(rng.standard_normal((40, 4)), "K", c, 0)
                            for c in CATEGORIES for _ in range(3)]}
    _, res = analyze_layer(ws, 0)
    assert {r.category for r in res if r.condition == "NH"} == {"NC"}
    assert "NC" in {r.category for r in res if r.condition == "CI"}


def test_analyze_and_write(tmp_path):
    rng = np.random.default_rng(11)
    ws = {("NH", "quiet"): [InterpolatedWindow(rng.standard_normal((40, 4)), ph, c, 2)
                            for ph in ("K", "S") for c in CATEGORIES for _ in range(3)]}
    space, res = analyze_layer(ws, 2)
    assert {r.category for r in res} == set(CATEGORIES) | {"NC-C", "NC"}
    assert all(0 <= r.t_peak < 40 for r in res)
    write_dynamics(res, tmp_path, {"layer_spaces": {}})
    assert (tmp_path / "dynamics.json").exists()
    lines = (tmp_path / "dynamics.csv").read_text().splitlines()
    assert lines[0] == "layer,condition,noise,category,t_peak,latency_ms,amplitude"
    assert len((tmp_path / "distance_curves.csv").read_text().splitlines()) == 1 + 40 * len(res)
