"""Noise-level augmentation of waveforms.

Each level draws every effect parameter uniformly from a range; the ranges
below are the low/mid/high settings of the original augmentation table.
Effects are SoX-style delay lines and filters re-implemented on numpy/scipy.
Filter widths are in octaves.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping

import numpy as np
from scipy import signal

from phode.audio import Waveform, AudioError, WINDOW_MS
from phode.rng import derive_rng

LEVELS = ("quiet", "low", "mid", "high")

# applied in this order; a range of None disables the effect
EFFECTS = ("speed_rate", "tempo_rate", "pitch_shift", "lowpass_f", "highpass_f",
           "bandpass_f", "bandstop_f", "chorus_n", "echo_n", "reverb", "background_snr")

TABLE: dict[str, dict[str, tuple[float, float]]] = {
    "low": {
        "background_snr": (10, 15), "pitch_shift": (-2, 2), "speed_rate": (0.9, 1.1),
        "tempo_rate": (0.9, 1.2), "chorus_n": (1, 3), "echo_n": (1, 3), "reverb": (10, 40),
        "lowpass_f": (6000, 7500), "highpass_f": (100, 500), "bandpass_f": (100, 500),
        "bandpass_w": (12, 16), "bandstop_f": (300, 4000), "bandstop_w": (1, 2),
    },
    "mid": {
        "background_snr": (0, 15), "pitch_shift": (-4, 4), "speed_rate": (0.7, 1.3),
        "tempo_rate": (0.8, 1.4), "chorus_n": (1, 4), "echo_n": (1, 4), "reverb": (20, 70),
        "lowpass_f": (4000, 7000), "highpass_f": (300, 1000), "bandpass_f": (200, 1000),
        "bandpass_w": (6, 8), "bandstop_f": (300, 2500), "bandstop_w": (2, 3),
    },
    "high": {
        "background_snr": (-10, 15), "pitch_shift": (-6, 6), "speed_rate": (0.5, 1.5),
        "tempo_rate": (0.7, 1.6), "chorus_n": (1, 6), "echo_n": (1, 5), "reverb": (30, 100),
        "lowpass_f": (2000, 6000), "highpass_f": (500, 2000), "bandpass_f": (300, 1500),
        "bandpass_w": (3, 5), "bandstop_f": (300, 1500), "bandstop_w": (3, 5),
    },
}
_INTEGER = {"chorus_n", "echo_n"}

# fixed internal constants of the delay-line effects
CHORUS_DELAYS_MS = (22.0, 28.0, 34.0, 40.0, 46.0, 52.0)
CHORUS_DEPTH_MS = 2.0
CHORUS_LFO_HZ = 0.4
CHORUS_GAIN = 0.5
ECHO_DELAY_MS = 60.0
ECHO_DECAY = 0.5
REVERB_WET = 0.4


@dataclass(frozen=True)
class AugmentationConfig:
    level: str = "quiet"
    ranges: Mapping[str, tuple[float, float] | None] = field(default_factory=dict)
    probability: float = 0.5
    seed: int = 0
    noise_path: str | None = None

    def __post_init__(self):
        if self.level not in LEVELS:
            raise ValueError(f"unknown noise level {self.level!r}")
        if not 0.0 <= self.probability <= 1.0:
            raise ValueError("probability must lie in [0, 1]")
        for name, rng in self.ranges.items():
            if rng is None:
                continue
            if name not in TABLE["low"]:
                raise ValueError(f"unknown augmentation parameter {name!r}")
            if len(rng) != 2 or rng[0] > rng[1]:
                raise ValueError(f"{name}: range must be (a, b) with a <= b, got {rng}")
        if self.level == "quiet" and any(r is not None for r in self.ranges.values()):
            raise ValueError("quiet level cannot enable effects")

    @classmethod
    def for_level(cls, level: str, seed: int = 0, probability: float = 0.5,
                  **overrides) -> "AugmentationConfig":
        ranges = dict(TABLE.get(level, {}))
        ranges.update(overrides)
        return cls(level, ranges, probability, seed)

    def only(self, **ranges) -> "AugmentationConfig":
        """Copy with just the given effects enabled, always applied."""
        return replace(self, ranges=ranges, probability=1.0)


def load_augmentation_configs(path: str | Path, seed: int = 0) -> dict[str, AugmentationConfig]:
    """Read a JSON file keyed by level, each mapping parameter -> [a, b] or null."""
    raw = json.loads(Path(path).read_text())
    out = {"quiet": AugmentationConfig("quiet", {}, seed=seed)}
    for level, params in raw.items():
        if level == "quiet":
            continue
        prob = params.pop("probability", 0.5)
        ranges = {k: (None if v is None else tuple(v)) for k, v in params.items()}
        out[level] = AugmentationConfig(level, ranges, prob, seed)
    return out


@dataclass
class AugmentationRecord:
    applied: dict[str, float] = field(default_factory=dict)
    time_scale: float = 1.0


def augment(w: Waveform, cfg: AugmentationConfig, sentence_id: str = "") -> Waveform:
    return apply_augmentation(w, cfg, sentence_id)[0]


def apply_augmentation(w: Waveform, cfg: AugmentationConfig, sentence_id: str = "",
                       masker: Waveform | None = None) -> tuple[Waveform, AugmentationRecord]:
    """Augment ``w``; the record lists drawn parameters and the duration scale.

    The random stream is derived from ``(cfg.seed, level, sentence_id)``.
    """
    win = int(WINDOW_MS * w.sample_rate / 1000)
    if len(w) < win:
        raise AudioError("waveform shorter than one analysis window")
    record = AugmentationRecord()
    if cfg.level == "quiet":
        return w, record
    rng = derive_rng(cfg.seed, "augment", cfg.level, sentence_id)
    x = w.samples.copy()
    fs = w.sample_rate
    n_in = x.size
    if masker is None and cfg.noise_path:
        from phode.audio import read_wav
        masker = read_wav(cfg.noise_path)
    for name in EFFECTS:
        rng_ab = cfg.ranges.get(name)
        # one uniform for the coin and one per parameter, drawn even when skipped
        coin = rng.random()
        value = _draw(rng, name, rng_ab)
        width = None
        if name in ("bandpass_f", "bandstop_f"):
            width = _draw(rng, name[:-1] + "w", cfg.ranges.get(name[:-1] + "w"))
        if rng_ab is None or coin >= cfg.probability:
            continue
        x = _apply(name, x, fs, value, width, rng, masker)
        record.applied[name] = value
        if width is not None:
            record.applied[name[:-1] + "w"] = width
    peak = np.max(np.abs(x)) if x.size else 0.0
    if peak > 1.0:
        x = x / peak
    record.time_scale = x.size / n_in
    return Waveform(x, fs), record


def _draw(rng: np.random.Generator, name: str, ab) -> float:
    u = rng.random()
    if ab is None:
        return math.nan
    a, b = ab
    if name in _INTEGER:
        return float(int(a) + min(int(u * (int(b) - int(a) + 1)), int(b) - int(a)))
    return a + u * (b - a)


def _apply(name, x, fs, value, width, rng, masker):
    if name == "speed_rate":
        return change_speed(x, value)
    if name == "tempo_rate":
        return time_stretch(x, value)
    if name == "pitch_shift":
        return pitch_shift(x, value)
    if name == "lowpass_f":
        return _sos(x, signal.butter(2, min(value, 0.99 * fs / 2), "lowpass", fs=fs, output="sos"))
    if name == "highpass_f":
        return _sos(x, signal.butter(2, min(value, 0.99 * fs / 2), "highpass", fs=fs, output="sos"))
    if name == "bandpass_f":
        return band_filter(x, fs, value, width, "bandpass")
    if name == "bandstop_f":
        return band_filter(x, fs, value, width, "bandstop")
    if name == "chorus_n":
        return chorus(x, fs, int(value))
    if name == "echo_n":
        return echo(x, fs, int(value))
    if name == "reverb":
        return reverb(x, fs, value, rng)
    if name == "background_snr":
        return add_background_noise(x, value, rng, None if masker is None else masker.samples)
    raise ValueError(name)


def _sos(x, sos):
    return signal.sosfilt(sos, x)


def band_filter(x: np.ndarray, fs: int, center: float, width_oct: float, kind: str) -> np.ndarray:
    """Second-order band-pass/band-stop around ``center`` spanning ``width_oct`` octaves."""
    nyq = fs / 2
    lo = center * 2.0 ** (-width_oct / 2)
    hi = center * 2.0 ** (width_oct / 2)
    lo_ok, hi_ok = lo > 1.0, hi < 0.99 * nyq
    if kind == "bandpass":
        if lo_ok and hi_ok:
            sos = signal.butter(2, [lo, hi], "bandpass", fs=fs, output="sos")
        elif lo_ok:
            sos = signal.butter(2, lo, "highpass", fs=fs, output="sos")
        elif hi_ok:
            sos = signal.butter(2, hi, "lowpass", fs=fs, output="sos")
        else:
            return x
    else:
        if lo_ok and hi_ok:
            sos = signal.butter(2, [lo, hi], "bandstop", fs=fs, output="sos")
        elif lo_ok:
            sos = signal.butter(2, lo, "lowpass", fs=fs, output="sos")
        elif hi_ok:
            sos = signal.butter(2, hi, "highpass", fs=fs, output="sos")
        else:
            return np.zeros_like(x)
    return signal.sosfilt(sos, x)


def add_background_noise(x: np.ndarray, snr_db: float, rng: np.random.Generator,
                         masker: np.ndarray | None = None) -> np.ndarray:
    """Mix in white noise (or a looped masker) at ``snr_db`` relative to ``x``."""
    if masker is None:
        noise = rng.standard_normal(x.size)
    else:
        start = int(rng.integers(0, max(1, masker.size)))
        noise = np.resize(np.roll(masker, -start), x.size).astype(np.float64)
    p_sig = np.mean(x ** 2)
    p_noise = np.mean(noise ** 2)
    if p_sig == 0.0 or p_noise == 0.0:
        return x
    return x + noise * math.sqrt(p_sig / (p_noise * 10.0 ** (snr_db / 10.0)))


def change_speed(x: np.ndarray, rate: float) -> np.ndarray:
    """Play faster by ``rate``: duration and pitch both scale."""
    n_out = max(1, int(round(x.size / rate)))
    return _resample(x, n_out)


def _resample(x: np.ndarray, n_out: int) -> np.ndarray:
    if n_out == x.size:
        return x.copy()
    return signal.resample(x, n_out)


def time_stretch(x: np.ndarray, rate: float, n_fft: int = 512, hop: int = 128) -> np.ndarray:
    """Phase-vocoder tempo change; ``rate > 1`` shortens without changing pitch."""
    if rate == 1.0:
        return x.copy()
    win = signal.get_window("hann", n_fft)
    pad = np.pad(x, (n_fft // 2, n_fft // 2 + n_fft))
    n_frames = 1 + (pad.size - n_fft) // hop
    frames = np.lib.stride_tricks.sliding_window_view(pad, n_fft)[::hop][:n_frames]
    stft = np.fft.rfft(frames * win, axis=1)
    steps = np.arange(0, n_frames - 1, rate)
    omega = 2 * np.pi * hop * np.arange(n_fft // 2 + 1) / n_fft
    phase = np.angle(stft[0])
    out_frames = np.empty((steps.size, stft.shape[1]), dtype=complex)
    for k, t in enumerate(steps):
        i = int(t)
        frac = t - i
        a, b = stft[i], stft[i + 1]
        mag = (1 - frac) * np.abs(a) + frac * np.abs(b)
        out_frames[k] = mag * np.exp(1j * phase)
        dphi = np.angle(b) - np.angle(a) - omega
        dphi -= 2 * np.pi * np.round(dphi / (2 * np.pi))
        phase = phase + omega + dphi
    y = np.fft.irfft(out_frames, n=n_fft, axis=1) * win
    n_y = n_fft + hop * (steps.size - 1)
    out = np.zeros(n_y)
    norm = np.zeros(n_y)
    for k in range(steps.size):
        out[k * hop:k * hop + n_fft] += y[k]
        norm[k * hop:k * hop + n_fft] += win ** 2
    out = out / np.maximum(norm, 1e-8)
    n_target = max(1, int(round(x.size / rate)))
    out = out[n_fft // 2:n_fft // 2 + n_target]
    if out.size < n_target:
        out = np.pad(out, (0, n_target - out.size))
    return out


def pitch_shift(x: np.ndarray, semitones: float) -> np.ndarray:
    """Shift pitch by ``semitones`` keeping the duration."""
    if semitones == 0:
        return x.copy()
    factor = 2.0 ** (semitones / 12.0)
    stretched = time_stretch(x, 1.0 / factor)
    return _resample(stretched, x.size)


def chorus(x: np.ndarray, fs: int, voices: int) -> np.ndarray:
    t = np.arange(x.size) / fs
    out = x.copy()
    for k in range(voices):
        base = CHORUS_DELAYS_MS[k % len(CHORUS_DELAYS_MS)]
        delay = (base + CHORUS_DEPTH_MS * np.sin(2 * np.pi * CHORUS_LFO_HZ * t + k)) * fs / 1000
        out += CHORUS_GAIN / voices * np.interp(np.arange(x.size) - delay, np.arange(x.size), x,
                                                left=0.0, right=0.0)
    return out / (1.0 + CHORUS_GAIN)


def echo(x: np.ndarray, fs: int, count: int) -> np.ndarray:
    out = x.copy()
    step = int(ECHO_DELAY_MS * fs / 1000)
    for k in range(1, count + 1):
        d = k * step
        if d >= x.size:
            break
        out[d:] += ECHO_DECAY ** k * x[:-d]
    return out


def reverb(x: np.ndarray, fs: int, reverberance: float, rng: np.random.Generator) -> np.ndarray:
    """Exponentially decaying noise impulse response; reverberance 0-100 sets RT60 0.1-1 s."""
    rt60 = 0.1 + 0.9 * reverberance / 100.0
    n = int(rt60 * fs)
    t = np.arange(n) / fs
    ir = rng.standard_normal(n) * 10.0 ** (-3.0 * t / rt60)
    ir /= math.sqrt(np.sum(ir ** 2))
    wet = signal.fftconvolve(x, ir)[:x.size]
    return (1 - REVERB_WET) * x + REVERB_WET * wet
