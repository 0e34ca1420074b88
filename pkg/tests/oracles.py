"""Independent reference implementations used only by the tests.

These are deliberately naive (enumeration, recursion, textbook formulas) so
they share no code paths with the package.
"""

from __future__ import annotations

import itertools
import math
from functools import lru_cache

import numpy as np


def ctc_brute_force(log_probs: np.ndarray, target, blank: int = 0) -> float:
    """-log P(target) by summing over every length-T path."""
    T, V = log_probs.shape
    target = tuple(int(t) for t in target)
    terms = []
    for path in itertools.product(range(V), repeat=T):
        out, prev = [], None
        for tok in path:
            if tok != prev and tok != blank:
                out.append(tok)
            prev = tok
        if tuple(out) == target:
            terms.append(sum(log_probs[t, k] for t, k in enumerate(path)))
    if not terms:
        return math.inf
    m = max(terms)
    return -(m + math.log(sum(math.exp(x - m) for x in terms)))


def central_difference(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[idx] += h
        xm[idx] -= h
        g[idx] = (f(xp) - f(xm)) / (2 * h)
    return g


def edit_distance(a, b) -> int:
    """Memoized recursion over suffixes."""
    a, b = tuple(a), tuple(b)

    @lru_cache(maxsize=None)
    def d(i: int, j: int) -> int:
        if i == len(a):
            return len(b) - j
        if j == len(b):
            return len(a) - i
        return min(d(i + 1, j + 1) + (a[i] != b[j]), d(i + 1, j) + 1, d(i, j + 1) + 1)

    return d(0, 0)


def lstm_cell(x, h, c, w_ih, w_hh, b):
    """One step of the textbook LSTM equations (gates i, f, g, o)."""
    z = w_ih @ x + w_hh @ h + b
    H = h.size
    sig = lambda v: 1.0 / (1.0 + np.exp(-v))
    i, f, g, o = sig(z[:H]), sig(z[H:2 * H]), np.tanh(z[2 * H:3 * H]), sig(z[3 * H:])
    c = f * c + i * g
    return o * np.tanh(c), c


def pearson(a, b) -> float:
    a, b = list(map(float, a)), list(map(float, b))
    n = len(a)
    ma, mb = sum(a) / n, sum(b) / n
    cov = sum((x - ma) * (y - mb) for x, y in zip(a, b))
    va = sum((x - ma) ** 2 for x in a)
    vb = sum((y - mb) ** 2 for y in b)
    return cov / math.sqrt(va * vb)


def kl(p, q) -> float:
    return sum(x * math.log(x / y) for x, y in zip(p, q) if x > 0)


def hz_to_mel(f: float) -> float:
    return 2595.0 * math.log10(1.0 + f / 700.0)
