"""Synthetic speech for tests and the scaled-down end-to-end experiment.

The toy language has five phonemes built from steady tone pairs (IH, IY, M,
N) or a high noise band (S). IH/IY and M/N differ only by tone positions that
fall inside the same implant band, so vocoding merges them while the 64-band
mel spectrogram keeps them apart. Words are three phonemes long and are
separated by short pauses.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import signal

from phode.audio import SAMPLE_RATE, Waveform, write_wav
from phode.phonemes import (ManifestEntry, PhonemeSegment, SegmentedUtterance,
                            save_segmentation, write_manifest)
from phode.rng import derive_rng

TOY_PHONEMES = ("IH", "IY", "M", "N", "S")

# (tone frequencies Hz, tone amplitudes); S is a 4.5-7 kHz noise band
TOY_SPECTRA = {
    "IH": ((400.0, 1800.0), (0.30, 0.20)),
    "IY": ((460.0, 2120.0), (0.30, 0.20)),
    "M": ((265.0, 1200.0), (0.30, 0.12)),
    "N": ((295.0, 1370.0), (0.30, 0.12)),
}
NOISE_BAND = (4500.0, 7000.0)
FREQ_JITTER = 0.012
DITHER = 1e-4


@dataclass(frozen=True)
class ToyUtterance:
    waveform: Waveform
    segmentation: SegmentedUtterance


def _tone_phoneme(phoneme: str, n: int, fs: int, rng: np.random.Generator) -> np.ndarray:
    freqs, amps = TOY_SPECTRA[phoneme]
    t = np.arange(n) / fs
    x = np.zeros(n)
    for f, a in zip(freqs, amps):
        f = f * (1.0 + FREQ_JITTER * rng.uniform(-1, 1))
        x += a * rng.uniform(0.8, 1.2) * np.sin(2 * np.pi * f * t + rng.uniform(0, 2 * np.pi))
    return x


def _noise_phoneme(n: int, fs: int, rng: np.random.Generator) -> np.ndarray:
    sos = signal.butter(4, NOISE_BAND, "bandpass", fs=fs, output="sos")
    x = signal.sosfilt(sos, rng.standard_normal(n + 256))[256:]
    return 0.25 * rng.uniform(0.8, 1.2) * x / (np.sqrt(np.mean(x ** 2)) or 1.0)


def _ramp(x: np.ndarray, fs: int, ms: float = 5.0) -> np.ndarray:
    k = min(int(ms * fs / 1000), x.size // 2)
    if k:
        r = np.linspace(0.0, 1.0, k)
        x[:k] *= r
        x[-k:] *= r[::-1]
    return x


def random_words(rng: np.random.Generator, n_words: int,
                 inventory: tuple[str, ...] = TOY_PHONEMES) -> list[list[str]]:
    """Three-phoneme words with no phoneme repeated back to back."""
    words = []
    prev = None
    for _ in range(n_words):
        word = []
        for _ in range(3):
            choices = [p for p in inventory if p != prev]
            prev = choices[int(rng.integers(len(choices)))]
            word.append(prev)
        words.append(word)
    return words


def synthesize(words: list[list[str]], rng: np.random.Generator, sentence_id: str = "",
               fs: int = SAMPLE_RATE, phone_ms: tuple[float, float] = (70.0, 140.0),
               pause_ms: tuple[float, float] = (60.0, 110.0),
               lead_ms: float = 100.0, tail_ms: float = 200.0) -> ToyUtterance:
    pieces = [np.zeros(int(lead_ms * fs / 1000))]
    cursor = pieces[0].size
    segments, names = [], []
    for wi, word in enumerate(words):
        if wi:
            gap = np.zeros(int(rng.uniform(*pause_ms) * fs / 1000))
            pieces.append(gap)
            cursor += gap.size
        for ph in word:
            n = int(rng.uniform(*phone_ms) * fs / 1000)
            x = _noise_phoneme(n, fs, rng) if ph == "S" else _tone_phoneme(ph, n, fs, rng)
            pieces.append(_ramp(x, fs))
            segments.append(PhonemeSegment(ph, 1000.0 * cursor / fs, 1000.0 * (cursor + n) / fs, wi))
            cursor += n
        names.append(("".join(word).lower(), len(word)))
    pieces.append(np.zeros(int(tail_ms * fs / 1000)))
    x = np.concatenate(pieces)
    x = x + DITHER * rng.standard_normal(x.size)
    seg = SegmentedUtterance(sentence_id, tuple(segments), tuple(names))
    return ToyUtterance(Waveform(x, fs), seg)


def toy_corpus(n: int, seed: int, prefix: str = "toy", words: tuple[int, int] = (2, 4)) -> list[ToyUtterance]:
    out = []
    for i in range(n):
        sid = f"{prefix}{i:04d}"
        rng = derive_rng(seed, "toy", sid)
        n_words = int(rng.integers(words[0], words[1] + 1))
        out.append(synthesize(random_words(rng, n_words), rng, sid))
    return out


def write_corpus(corpus: list[ToyUtterance], directory: str | Path) -> Path:
    """Write WAVs, segmentation CSVs and ``manifest.csv``; returns the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for utt in corpus:
        sid = utt.segmentation.sentence_id
        wav, seg = directory / f"{sid}.wav", directory / f"{sid}.csv"
        write_wav(wav, utt.waveform)
        save_segmentation(utt.segmentation, seg)
        entries.append(ManifestEntry(sid, wav, seg))
    manifest = directory / "manifest.csv"
    write_manifest(entries, manifest)
    return manifest


def synthetic_speech(duration_s: float = 3.0, seed: int = 0, fs: int = SAMPLE_RATE) -> Waveform:
    """Speech-like test signal: gliding voiced source through moving formants,
    syllable-rate amplitude modulation, and intermittent fricative noise."""
    rng = np.random.default_rng(seed)
    n = int(duration_s * fs)
    t = np.arange(n) / fs
    f0 = 120.0 + 20.0 * np.sin(2 * np.pi * 0.7 * t)
    phase = 2 * np.pi * np.cumsum(f0) / fs
    source = signal.sawtooth(phase)
    # piecewise-constant syllables with their own formant targets
    n_syl = max(1, int(duration_s * 4))
    bounds = np.linspace(0, n, n_syl + 1).astype(int)
    out = np.zeros(n)
    for k in range(n_syl):
        a, b = bounds[k], bounds[k + 1]
        seg = np.zeros(n)
        if rng.random() < 0.3:
            sos = signal.butter(4, [3000.0, 7000.0], "bandpass", fs=fs, output="sos")
            seg[a:b] = 0.3 * signal.sosfilt(sos, rng.standard_normal(b - a))
        else:
            f1, f2 = rng.uniform(300, 900), rng.uniform(900, 2600)
            for fc, bw in ((f1, 80.0), (f2, 120.0), (2800.0, 200.0)):
                sos = signal.butter(2, [fc - bw, fc + bw], "bandpass", fs=fs, output="sos")
                seg[a:b] += signal.sosfilt(sos, source[a:b])
        env = np.sin(np.pi * np.linspace(0, 1, b - a)) ** 2 * rng.uniform(0.3, 1.0)
        out[a:b] = seg[a:b] * env
    out += 1e-4 * rng.standard_normal(n)
    return Waveform(0.8 * out / np.max(np.abs(out)), fs)
