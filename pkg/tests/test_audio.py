import numpy as np
import pytest

from phode.audio import (LOG_FLOOR, AudioError, Waveform, compute_spectrogram, frame_count,
                         mel_band_edges, read_wav, write_wav)

from oracles import hz_to_mel

FS = 16000


def tone(freq, seconds=1.0, fs=FS, amp=0.5):
    t = np.arange(int(seconds * fs)) / fs
    return Waveform(amp * np.sin(2 * np.pi * freq * t), fs)


def test_silence_shape_and_floor():
    s = compute_spectrogram(Waveform(np.zeros(FS)))
    assert s.shape == (98, 64)
    assert np.all(s == np.log(LOG_FLOOR))


def test_tone_lands_in_its_band():
    s = compute_spectrogram(tone(1000.0))
    k = int(np.argmax(s.mean(0)))
    # band k peaks at edges[k+1]; the oracle picks the band whose center is nearest in mel
    edges = mel_band_edges()
    centers_mel = np.array([hz_to_mel(f) for f in edges[1:-1]])
    assert k == int(np.argmin(np.abs(centers_mel - hz_to_mel(1000.0))))
    assert edges[k] < 1000.0 < edges[k + 2]


def test_concatenation_stacks_frames():
    rng = np.random.default_rng(0)
    a = rng.standard_normal(8000) * 0.1
    b = rng.standard_normal(9600) * 0.1
    sa, sb = compute_spectrogram(Waveform(a)), compute_spectrogram(Waveform(b))
    sab = compute_spectrogram(Waveform(np.concatenate([a, b])))
    assert abs(sab.shape[0] - (sa.shape[0] + sb.shape[0])) <= 2
    assert np.allclose(sab[:sa.shape[0]], sa)
    # 8000 samples is a whole number of hops, so the tail lines up too
    assert np.allclose(sab[-sb.shape[0]:], sb)


def test_doubling_duration_doubles_frames():
    x = np.random.default_rng(1).standard_normal(12345) * 0.1
    t1 = compute_spectrogram(Waveform(x)).shape[0]
    t2 = compute_spectrogram(Waveform(np.tile(x, 2))).shape[0]
    # without padding the doubled signal also gains the frames straddling the
    # seam, so the count exceeds 2 T by between 1 and ceil(window / hop)
    assert t2 == frame_count(2 * x.size)
    assert 1 <= t2 - 2 * t1 <= 3
    for n in range(400, 5000, 37):
        assert 1 <= frame_count(2 * n) - 2 * frame_count(n) <= 3


def test_frame_count_formula():
    for n in (400, 401, 559, 560, 16000, 31999):
        assert frame_count(n) == (n - 400) // 160 + 1
    assert frame_count(399) == 0


def test_wrong_rate_mentions_resampling():
    with pytest.raises(AudioError, match="resample"):
        compute_spectrogram(tone(440, fs=8000))


def test_too_short():
    with pytest.raises(AudioError):
        compute_spectrogram(Waveform(np.zeros(100)))


def test_waveform_validation():
    with pytest.raises(AudioError):
        Waveform(np.array([0.0, np.nan]))
    with pytest.raises(AudioError):
        Waveform(np.zeros(10), 0)
    with pytest.raises(AudioError):
        Waveform(np.zeros((2, 10)))


@pytest.mark.parametrize("float32", [True, False])
def test_wav_round_trip(tmp_path, float32):
    w = tone(300.0, 0.1)
    write_wav(tmp_path / "a.wav", w, float32=float32)
    r = read_wav(tmp_path / "a.wav")
    assert r.sample_rate == FS
    assert np.allclose(r.samples, w.samples, atol=1e-4 if not float32 else 1e-7)
