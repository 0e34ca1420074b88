import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from phode.ctc import PredictionEvent, collapse, ctc_greedy_decode, ctc_loss, min_frames
from phode.model import log_softmax
from phode.phonemes import BLANK, SPACE, token_id

from oracles import central_difference, ctc_brute_force


def random_log_probs(rng, T, V):
    return log_softmax(rng.standard_normal((T, V)) * 2.0)


def test_certain_single_path_has_zero_loss():
    lp = np.full((1, 41), -np.inf)
    lp[0, 5] = 0.0
    loss, _ = ctc_loss(lp, [5])
    assert loss == 0.0


def test_uniform_two_frames_one_label():
    # paths tok.tok, blank.tok, tok.blank out of 41**2
    lp = np.full((2, 41), -math.log(41))
    loss, _ = ctc_loss(lp, [7])
    assert loss == pytest.approx(-math.log(3 / 41 ** 2), abs=1e-12)


def test_infeasible_target_gives_inf_and_zero_grad():
    lp = random_log_probs(np.random.default_rng(0), 2, 5)
    loss, grad = ctc_loss(lp, [1, 1])  # repeat needs a blank in between: 3 frames
    assert math.isinf(loss)
    assert not grad.any()
    assert min_frames([1, 1]) == 3


def test_empty_target_is_all_blank():
    lp = random_log_probs(np.random.default_rng(1), 4, 5)
    loss, _ = ctc_loss(lp, [])
    assert loss == pytest.approx(-lp[:, 0].sum(), abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), T=st.integers(1, 5),
       target=st.lists(st.integers(1, 4), max_size=3))
def test_matches_brute_force(seed, T, target):
    lp = random_log_probs(np.random.default_rng(seed), T, 5)
    loss, _ = ctc_loss(lp, target)
    ref = ctc_brute_force(lp, target)
    if math.isinf(ref):
        assert math.isinf(loss)
    else:
        assert loss == pytest.approx(ref, abs=1e-8)


def test_gradient_is_minus_occupancy():
    rng = np.random.default_rng(3)
    lp = random_log_probs(rng, 6, 5)
    loss, grad = ctc_loss(lp, [1, 2])
    # every frame is occupied by exactly one extended label, so rows sum to -1
    assert np.allclose(grad.sum(1), -1.0)
    num = central_difference(lambda x: ctc_loss(x, [1, 2])[0], lp)
    assert np.max(np.abs(num - grad)) < 1e-6


def test_greedy_decode_examples():
    AH, B = token_id("AH"), token_id("B")
    p = np.full((5, 41), 0.01)
    for t, tok, v in [(0, BLANK, 0.9), (1, AH, 0.6), (2, AH, 0.8), (3, BLANK, 0.9), (4, B, 0.9)]:
        p[t, tok] = v
    assert ctc_greedy_decode(p) == [PredictionEvent(AH, 2), PredictionEvent(B, 4)]


def test_greedy_decode_blank_separates_repeats_and_drops_space():
    K = token_id("K")
    seq = [K, K, BLANK, K, SPACE]
    p = np.full((5, 41), 0.01)
    for t, tok in enumerate(seq):
        p[t, tok] = 0.9
    ev = ctc_greedy_decode(p)
    assert [e.token for e in ev] == [K, K]
    assert [e.time_ms for e in ev] == [0.0, 30.0]


def test_greedy_decode_all_blank_is_empty():
    p = np.zeros((7, 41))
    p[:, BLANK] = 1.0
    assert ctc_greedy_decode(p) == []


def test_event_frames_strictly_increase():
    rng = np.random.default_rng(5)
    p = rng.dirichlet(np.ones(41) * 0.1, size=200)
    frames = [e.frame for e in ctc_greedy_decode(p)]
    assert all(a < b for a, b in zip(frames, frames[1:]))


def test_collapse():
    assert collapse([0, 3, 3, 0, 3, 4, 4]) == [3, 3, 4]
