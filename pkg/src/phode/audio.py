"""Waveforms, WAV IO and the 64-channel log-mel spectrogram fed to the model."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.io import wavfile
from scipy.signal import get_window

SAMPLE_RATE = 16000
N_CHANNELS = 64
WINDOW_MS = 25.0
HOP_MS = 10.0
N_FFT = 512
F_MIN = 50.0
F_MAX = 8000.0
LOG_FLOOR = 1e-10


class AudioError(ValueError):
    pass


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise AudioError("sample_rate must be positive")
        x = np.asarray(self.samples, dtype=np.float64)
        if x.ndim != 1:
            raise AudioError("only mono waveforms are supported")
        if not np.all(np.isfinite(x)):
            raise AudioError("waveform contains non-finite samples")
        object.__setattr__(self, "samples", x)

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration_ms(self) -> float:
        return 1000.0 * self.samples.size / self.sample_rate


def read_wav(path: str | Path) -> Waveform:
    rate, data = wavfile.read(str(path))
    if data.ndim != 1:
        raise AudioError(f"{path}: expected mono audio, got {data.shape[1]} channels")
    if data.dtype == np.int16:
        x = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        x = data.astype(np.float64) / 2147483648.0
    elif data.dtype in (np.float32, np.float64):
        x = data.astype(np.float64)
    else:
        raise AudioError(f"{path}: unsupported sample format {data.dtype}")
    return Waveform(x, int(rate))


def write_wav(path: str | Path, w: Waveform, float32: bool = True) -> None:
    x = np.clip(w.samples, -1.0, 1.0)
    if float32:
        wavfile.write(str(path), w.sample_rate, x.astype(np.float32))
    else:
        wavfile.write(str(path), w.sample_rate, np.round(x * 32767).astype(np.int16))


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_band_edges(n_bands: int = N_CHANNELS, fmin: float = F_MIN, fmax: float = F_MAX) -> np.ndarray:
    """n_bands + 2 frequencies (Hz); band k spans edges[k]..edges[k+2], peak at edges[k+1]."""
    return mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_bands + 2))


@lru_cache(maxsize=8)
def mel_filterbank(sample_rate: int = SAMPLE_RATE, n_fft: int = N_FFT,
                   n_bands: int = N_CHANNELS) -> np.ndarray:
    """Triangular mel weights, shape (n_bands, n_fft // 2 + 1), unit peak."""
    edges = mel_band_edges(n_bands, F_MIN, min(F_MAX, sample_rate / 2))
    freqs = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rise = (freqs - lo) / (mid - lo)
    fall = (hi - freqs) / (hi - mid)
    fb = np.maximum(0.0, np.minimum(rise, fall))
    fb.setflags(write=False)
    return fb


def frame_count(n_samples: int, sample_rate: int = SAMPLE_RATE) -> int:
    win = int(round(WINDOW_MS * sample_rate / 1000))
    hop = int(round(HOP_MS * sample_rate / 1000))
    if n_samples < win:
        return 0
    return (n_samples - win) // hop + 1


def compute_spectrogram(w: Waveform) -> np.ndarray:
    """Log mel power, shape (T, 64), natural log with a 1e-10 floor.

    Frames are 25 ms Hann windows every 10 ms with no padding, so
    ``T = (N - 400) // 160 + 1`` at 16 kHz.
    """
    if w.sample_rate != SAMPLE_RATE:
        raise AudioError(
            f"spectrogram needs {SAMPLE_RATE} Hz input, got {w.sample_rate} Hz; resample first")
    win = int(WINDOW_MS * SAMPLE_RATE / 1000)
    hop = int(HOP_MS * SAMPLE_RATE / 1000)
    n = frame_count(len(w))
    if n == 0:
        raise AudioError(f"waveform shorter than one {WINDOW_MS:g} ms analysis window")
    frames = np.lib.stride_tricks.sliding_window_view(w.samples, win)[::hop][:n]
    spec = np.fft.rfft(frames * get_window("hann", win), n=N_FFT, axis=1)
    power = spec.real ** 2 + spec.imag ** 2
    mel = power @ mel_filterbank().T
    return np.log(np.maximum(mel, LOG_FLOOR))
