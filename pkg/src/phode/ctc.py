"""Connectionist temporal classification loss and greedy decoding."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from phode.phonemes import BLANK, SPACE, token_symbol

_NEG_INF = -np.inf


def _extend(target: Sequence[int], blank: int) -> np.ndarray:
    ext = np.full(2 * len(target) + 1, blank, dtype=np.int64)
    ext[1::2] = target
    return ext


def min_frames(target: Sequence[int]) -> int:
    """Shortest input that can emit ``target`` (repeats need a blank between)."""
    repeats = sum(1 for a, b in zip(target, target[1:]) if a == b)
    return len(target) + repeats


def ctc_loss(log_probs: np.ndarray, target: Sequence[int], blank: int = BLANK) -> tuple[float, np.ndarray]:
    """Negative log-likelihood of ``target`` and its gradient w.r.t. ``log_probs``.

    ``log_probs`` is (T, V); entries are treated as free variables, so the
    gradient is minus the posterior occupancy of each (frame, token). An
    infeasible target returns ``inf`` and a zero gradient.
    """
    lp = np.asarray(log_probs, dtype=np.float64)
    T = lp.shape[0]
    target = [int(t) for t in target]
    grad = np.zeros_like(lp)
    if T == 0 or T < min_frames(target):
        return float("inf"), grad
    ext = _extend(target, blank)
    S = ext.size
    # s-2 transition allowed into non-blank labels that differ from the label two back
    skip = np.zeros(S, dtype=bool)
    skip[2:] = (ext[2:] != blank) & (ext[2:] != ext[:-2])
    emit = lp[:, ext]  # (T, S)

    alpha = np.full((T, S), _NEG_INF)
    alpha[0, 0] = emit[0, 0]
    if S > 1:
        alpha[0, 1] = emit[0, 1]
    for t in range(1, T):
        prev = alpha[t - 1]
        a = prev.copy()
        a[1:] = np.logaddexp(a[1:], prev[:-1])
        a[2:] = np.where(skip[2:], np.logaddexp(a[2:], prev[:-2]), a[2:])
        alpha[t] = a + emit[t]

    beta = np.full((T, S), _NEG_INF)
    beta[T - 1, S - 1] = emit[T - 1, S - 1]
    if S > 1:
        beta[T - 1, S - 2] = emit[T - 1, S - 2]
    for t in range(T - 2, -1, -1):
        nxt = beta[t + 1]
        b = nxt.copy()
        b[:-1] = np.logaddexp(b[:-1], nxt[1:])
        b[:-2] = np.where(skip[2:], np.logaddexp(b[:-2], nxt[2:]), b[:-2])
        beta[t] = b + emit[t]

    log_p = alpha[T - 1, S - 1] if S == 1 else np.logaddexp(alpha[T - 1, S - 1], alpha[T - 1, S - 2])
    if np.isnan(log_p):
        return float("nan"), grad
    if not np.isfinite(log_p):
        return float("inf"), grad
    with np.errstate(invalid="ignore"):
        # zero-probability emissions give -inf - -inf; their occupancy is zero
        occupancy = np.nan_to_num(np.exp(alpha + beta - emit - log_p), nan=0.0)
    for s in range(S):
        grad[:, ext[s]] -= occupancy[:, s]
    return float(-log_p), grad


@dataclass(frozen=True)
class PredictionEvent:
    token: int
    frame: int

    @property
    def time_ms(self) -> float:
        return 10.0 * self.frame

    @property
    def symbol(self) -> str:
        return token_symbol(self.token)


def ctc_greedy_decode(posterior: np.ndarray, blank: int = BLANK,
                      drop: Sequence[int] = (SPACE,)) -> list[PredictionEvent]:
    """Best-path decoding; each event sits at the peak-probability frame of its run."""
    p = np.asarray(posterior)
    if p.shape[0] == 0:
        return []
    best = p.argmax(axis=1)
    events = []
    start = 0
    for t in range(1, best.size + 1):
        if t == best.size or best[t] != best[start]:
            tok = int(best[start])
            if tok != blank and tok not in drop:
                peak = start + int(np.argmax(p[start:t, tok]))
                events.append(PredictionEvent(tok, peak))
            start = t
    return events


def collapse(tokens: Sequence[int], blank: int = BLANK) -> list[int]:
    out = []
    prev = None
    for tok in tokens:
        if tok != prev and tok != blank:
            out.append(int(tok))
        prev = tok
    return out
