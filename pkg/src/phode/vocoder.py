"""Cochlear-implant simulation: CIS-style electrodogram, current spread, and a
noise-band vocoder that turns the electrodogram back into audio.

Defaults are a generic 16-channel continuous-interleaved-sampling processor:
log-spaced bands 250-8000 Hz, 200 Hz envelope smoothing, 60 dB input dynamic
range mapped logarithmically onto [0, 1], 1000 pulses/s per channel, and
exponential current decay of 1.0 /mm between electrodes 1.1 mm apart.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import signal

from phode.audio import SAMPLE_RATE, Waveform, AudioError, compute_spectrogram
from phode.rng import derive_rng

N_ELECTRODES = 16
ELECTRODOGRAM_MAGIC = b"EDGM"


def default_edges(n: int = N_ELECTRODES, fmin: float = 250.0, fmax: float = 8000.0) -> np.ndarray:
    return fmin * (fmax / fmin) ** (np.arange(n + 1) / n)


@dataclass(frozen=True)
class FilterbankSpec:
    channel_edges: np.ndarray = field(default_factory=default_edges)
    envelope_cutoff: float = 200.0
    compression: str = "log"
    exponent: float = 0.3
    dynamic_range_db: float = 60.0
    filter_order: int = 6
    carrier: str = "low-noise"
    flatten_iterations: int = 3

    def __post_init__(self):
        edges = np.asarray(self.channel_edges, dtype=np.float64)
        if edges.shape != (N_ELECTRODES + 1,):
            raise ValueError(f"need {N_ELECTRODES + 1} band edges, got {edges.size}")
        if np.any(np.diff(edges) <= 0):
            raise ValueError("band edges must be strictly ascending")
        if self.compression not in ("log", "power"):
            raise ValueError(f"unknown compression {self.compression!r}")
        if self.carrier not in ("noise", "low-noise"):
            raise ValueError(f"unknown carrier {self.carrier!r}")
        object.__setattr__(self, "channel_edges", edges)

    @property
    def centers(self) -> np.ndarray:
        e = self.channel_edges
        return np.sqrt(e[:-1] * e[1:])

    def band_filters(self, fs: int = SAMPLE_RATE) -> list[np.ndarray]:
        out = []
        for lo, hi in zip(self.channel_edges[:-1], self.channel_edges[1:]):
            if hi >= 0.99 * fs / 2:
                out.append(signal.butter(self.filter_order, lo, "highpass", fs=fs, output="sos"))
            else:
                out.append(signal.butter(self.filter_order, [lo, hi], "bandpass", fs=fs,
                                         output="sos"))
        return out

    def compress(self, env: np.ndarray) -> np.ndarray:
        """Map envelopes onto [0, 1] relative to their overall maximum."""
        peak = env.max() if env.size else 0.0
        if peak <= 0.0:
            return np.zeros_like(env)
        rel = env / peak
        if self.compression == "power":
            return rel ** self.exponent
        with np.errstate(divide="ignore"):
            db = 20.0 * np.log10(rel)
        return np.clip(1.0 + db / self.dynamic_range_db, 0.0, 1.0)

    def expand(self, amp: np.ndarray) -> np.ndarray:
        """Inverse of :meth:`compress` (zero stays zero)."""
        amp = np.clip(amp, 0.0, 1.0)
        if self.compression == "power":
            return amp ** (1.0 / self.exponent)
        out = 10.0 ** ((amp - 1.0) * self.dynamic_range_db / 20.0)
        return np.where(amp > 0.0, out, 0.0)


@dataclass(frozen=True)
class Electrodogram:
    pulses: np.ndarray  # (16, P)
    pulse_rate: float
    n_samples: int = 0
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        p = np.asarray(self.pulses, dtype=np.float64)
        if p.ndim != 2 or p.shape[0] != N_ELECTRODES:
            raise ValueError(f"electrodogram must have {N_ELECTRODES} channels")
        if p.size and (p.min() < 0.0 or p.max() > 1.0 + 1e-12):
            raise ValueError("electrodogram amplitudes must lie in [0, 1]")
        object.__setattr__(self, "pulses", p)

    @property
    def n_frames(self) -> int:
        return self.pulses.shape[1]


@dataclass(frozen=True)
class SpreadModel:
    electrode_positions: np.ndarray = field(
        default_factory=lambda: 1.1 * np.arange(N_ELECTRODES, dtype=np.float64))
    decay_constant: float = 1.0

    def __post_init__(self):
        pos = np.asarray(self.electrode_positions, dtype=np.float64)
        if pos.shape != (N_ELECTRODES,) or np.any(np.diff(pos) <= 0):
            raise ValueError("need 16 strictly increasing electrode positions")
        if not self.decay_constant > 0:
            raise ValueError("decay_constant must be positive")
        object.__setattr__(self, "electrode_positions", pos)

    def weights(self) -> np.ndarray:
        pos = self.electrode_positions
        return np.exp(-self.decay_constant * np.abs(pos[:, None] - pos[None, :]))


def band_envelopes(x: np.ndarray, fb: FilterbankSpec, fs: int = SAMPLE_RATE) -> np.ndarray:
    """Band-pass, full-wave rectify and low-pass each channel; (16, N) at audio rate."""
    lp = signal.butter(2, fb.envelope_cutoff, "lowpass", fs=fs, output="sos")
    env = np.empty((N_ELECTRODES, x.size))
    for k, sos in enumerate(fb.band_filters(fs)):
        band = signal.sosfiltfilt(sos, x)
        env[k] = signal.sosfiltfilt(lp, np.abs(band))
    return np.maximum(env, 0.0)


def encode(w: Waveform, fb: FilterbankSpec | None = None, rate: float = 1000.0) -> Electrodogram:
    fb = fb or FilterbankSpec()
    if w.sample_rate != SAMPLE_RATE:
        raise AudioError(f"encoder expects {SAMPLE_RATE} Hz audio")
    if len(w) < 32:
        raise AudioError("waveform too short to encode")
    env = band_envelopes(w.samples, fb, w.sample_rate)
    step = w.sample_rate / rate
    idx = np.floor(np.arange(0, len(w), step)).astype(int)
    amp = fb.compress(env[:, idx])
    return Electrodogram(amp, float(rate), len(w), w.sample_rate)


def apply_spread(e: Electrodogram, s: SpreadModel | None = None) -> Electrodogram:
    s = s or SpreadModel()
    mixed = s.weights() @ e.pulses
    peak = mixed.max() if mixed.size else 0.0
    if peak > 0:
        mixed = mixed / peak
    return Electrodogram(mixed, e.pulse_rate, e.n_samples, e.sample_rate)


def noise_carrier(sos: np.ndarray, n: int, rng: np.random.Generator,
                  flatten_iterations: int = 0) -> np.ndarray:
    """Unit-RMS band-limited Gaussian noise.

    With ``flatten_iterations > 0`` the noise is repeatedly divided by its
    Hilbert envelope and refiltered ("low-noise noise"), which removes most of
    the intrinsic envelope fluctuation of narrow noise bands.
    """
    c = signal.sosfiltfilt(sos, rng.standard_normal(n))
    for _ in range(flatten_iterations):
        c = c / np.maximum(np.abs(signal.hilbert(c)), 1e-12)
        c = signal.sosfiltfilt(sos, c)
    rms = np.sqrt(np.mean(c ** 2))
    return c / rms if rms > 0 else c


def resynthesize(e: Electrodogram, fb: FilterbankSpec | None = None,
                 rng: np.random.Generator | None = None) -> Waveform:
    """Noise-band vocoder: each band-limited noise carrier follows its channel envelope."""
    fb = fb or FilterbankSpec()
    rng = rng if rng is not None else np.random.default_rng(0)
    fs = e.sample_rate
    n = e.n_samples or int(round(e.n_frames * fs / e.pulse_rate))
    frame_t = np.arange(e.n_frames) / e.pulse_rate
    t = np.arange(n) / fs
    out = np.zeros(n)
    lin = fb.expand(e.pulses)
    for k, sos in enumerate(fb.band_filters(fs)):
        if not lin[k].any():
            rng.standard_normal(n)
            continue
        iters = fb.flatten_iterations if fb.carrier == "low-noise" else 0
        out += np.interp(t, frame_t, lin[k]) * noise_carrier(sos, n, rng, iters)
    peak = np.max(np.abs(out)) if n else 0.0
    if peak > 0:
        out = out / peak
    return Waveform(out, fs)


def ci_transform(w: Waveform, seed: int = 0, sentence_id: str = "",
                 fb: FilterbankSpec | None = None, spread: SpreadModel | None = None,
                 rate: float = 1000.0) -> np.ndarray:
    """CI-condition spectrogram: encode, spread, vocode, then the usual spectrogram."""
    return compute_spectrogram(vocode(w, seed, sentence_id, fb, spread, rate)[1])


def vocode(w: Waveform, seed: int = 0, sentence_id: str = "",
           fb: FilterbankSpec | None = None, spread: SpreadModel | None = None,
           rate: float = 1000.0) -> tuple[Electrodogram, Waveform]:
    fb = fb or FilterbankSpec()
    e = apply_spread(encode(w, fb, rate), spread)
    return e, resynthesize(e, fb, derive_rng(seed, "carrier", sentence_id))


def write_electrodogram_csv(e: Electrodogram, path: str | Path) -> None:
    ch, fr = np.meshgrid(np.arange(N_ELECTRODES), np.arange(e.n_frames), indexing="ij")
    with open(path, "w") as fh:
        fh.write("channel,frame,amplitude\n")
        for c, f, a in zip(ch.ravel(), fr.ravel(), e.pulses.ravel()):
            fh.write(f"{c},{f},{a!r}\n")


def write_electrodogram(e: Electrodogram, path: str | Path) -> None:
    """Binary layout, little-endian: b"EDGM", uint32 channels, uint32 frames,
    float64 pulse rate, uint32 audio samples, uint32 sample rate, float32[ch, frames]."""
    with open(path, "wb") as fh:
        fh.write(ELECTRODOGRAM_MAGIC)
        fh.write(struct.pack("<IIdII", N_ELECTRODES, e.n_frames, e.pulse_rate, e.n_samples,
                             e.sample_rate))
        fh.write(e.pulses.astype("<f4").tobytes())


def read_electrodogram(path: str | Path) -> Electrodogram:
    data = Path(path).read_bytes()
    head = struct.calcsize("<IIdII")
    if data[:4] != ELECTRODOGRAM_MAGIC or len(data) < 4 + head:
        raise ValueError(f"{path}: not an electrodogram file")
    ch, frames, rate, n, fs = struct.unpack("<IIdII", data[4:4 + head])
    body = data[4 + head:]
    if len(body) != 4 * ch * frames:
        raise ValueError(f"{path}: expected {4 * ch * frames} payload bytes, got {len(body)}")
    pulses = np.frombuffer(body, dtype="<f4").reshape(ch, frames).astype(np.float64)
    return Electrodogram(pulses, rate, n, fs)
