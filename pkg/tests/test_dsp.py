import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conesep.dsp import (
    ShiftError,
    Spectrogram,
    Waveform,
    energy,
    istft,
    read_wav,
    resample,
    shift_channel,
    stft,
    write_wav,
)


def test_shift_impulse_delay():
    x = np.zeros(16)
    x[5] = 1.0
    y = shift_channel(x, 3)
    assert np.flatnonzero(y).tolist() == [8]


def test_shift_zero_is_identity():
    x = np.arange(10.0)
    np.testing.assert_array_equal(shift_channel(x, 0), x)


def test_shift_negative_advances():
    np.testing.assert_array_equal(shift_channel(np.array([1, 2, 3, 4]), -2), [3, 4, 0, 0])


def test_shift_too_far_raises():
    with pytest.raises(ShiftError):
        shift_channel(np.ones(4), 5)


@given(arrays(np.float64, st.integers(4, 64), elements=st.floats(-1, 1)), st.data())
def test_shift_round_trip_interior(x, data):
    n = len(x)
    k = data.draw(st.integers(-(n // 2), n // 2))
    back = shift_channel(shift_channel(x, k), -k)
    if k >= 0:
        np.testing.assert_array_equal(back[: n - k], x[: n - k])
    else:
        np.testing.assert_array_equal(back[-k:], x[-k:])


def test_waveform_validation_and_immutability():
    with pytest.raises(ValueError):
        Waveform(np.zeros((2, 4)), 0)
    w = Waveform(np.ones((2, 4)), 100)
    assert w.data.dtype == np.float32
    assert (w.channels, w.samples) == (2, 4)
    with pytest.raises(ValueError):
        w.data[0, 0] = 3.0


def test_energy_examples():
    assert energy(Waveform.zeros(2, 8, 10)) == 0.0
    assert energy(Waveform(np.array([[3.0, 4.0]]), 10)) == 25.0
    x = Waveform(np.random.default_rng(0).standard_normal((3, 50)) * 0.1, 10)
    assert energy(x.with_data(2.5 * x.data)) == pytest.approx(6.25 * energy(x), rel=1e-6)


def test_energy_additive_over_disjoint_support():
    a = np.zeros((1, 10))
    b = np.zeros((1, 10))
    a[0, :5] = 0.3
    b[0, 5:] = -0.7
    assert energy(a + b) == pytest.approx(energy(a) + energy(b))


def test_stft_shape_and_frame_convention():
    x = Waveform(np.zeros((2, 5000)), 16000)
    s = stft(x, 1024, 256)
    assert s.bins == 513
    assert s.frames == -(-5000 // 256) + 1
    assert not np.any(s.values)


def test_stft_short_signal_needs_padding_flag():
    x = Waveform(np.zeros((1, 100)), 16000)
    with pytest.raises(ValueError):
        stft(x, 1024, 256)
    assert stft(x, 1024, 256, pad_short=True).frames == 2


def test_stft_rejects_bad_sizes():
    x = Waveform(np.zeros((1, 4096)), 16000)
    with pytest.raises(ValueError):
        stft(x, 1000, 256)
    with pytest.raises(ValueError):
        stft(x, 1024, 2048)


def test_bin_centered_sinusoid_concentrates_energy():
    sr, n, k0 = 16000.0, 1024, 40
    t = np.arange(8192) / sr
    x = Waveform(np.sin(2 * np.pi * k0 * sr / n * t), sr)
    # rectangular window: a bin-centered tone lands in a single bin
    rect = np.abs(stft(x, n, n, window="boxcar").values[0, :, 4]) ** 2
    assert rect[k0] / rect.sum() >= 0.9
    # Hann window: the tone's main lobe spans k0 +- 1
    hann = np.abs(stft(x, n, 256).values[0, :, 10]) ** 2
    assert hann[k0 - 1 : k0 + 2].sum() / hann.sum() >= 0.9
    assert np.argmax(hann) == k0


@pytest.mark.parametrize("kind", ["zeros", "sine", "noise"])
def test_stft_round_trip(kind):
    rng = np.random.default_rng(3)
    sr = 44100.0
    n = 20000
    if kind == "zeros":
        data = np.zeros((2, n))
    elif kind == "sine":
        data = 0.5 * np.sin(2 * np.pi * 440.0 * np.arange(n) / sr)[None].repeat(2, 0)
    else:
        data = rng.uniform(-1, 1, size=(3, n))
    x = Waveform(data, sr)
    y = istft(stft(x))
    assert y.data.shape == x.data.shape
    assert np.max(np.abs(y.data[:, 1024:-1024] - x.data[:, 1024:-1024])) < 1e-6


def test_istft_rejects_inconsistent_metadata():
    s = stft(Waveform(np.zeros((1, 4096)), 16000))
    bad = Spectrogram(s.values, 2048, s.hop_size, s.sample_rate, length=s.length)
    with pytest.raises(ValueError):
        istft(bad)
    bad_hop = Spectrogram(s.values, s.fft_size, 512, s.sample_rate, length=s.length)
    with pytest.raises(ValueError):
        istft(bad_hop)


def test_resample_identity():
    x = Waveform(np.random.default_rng(1).standard_normal((2, 1000)) * 0.1, 44100)
    y = resample(x, 44100)
    np.testing.assert_array_equal(y.data, x.data)


def test_resample_length():
    x = Waveform(np.zeros((1, 44100)), 44100)
    assert abs(resample(x, 16000).samples - 16000) <= 1


def test_resample_preserves_sinusoid():
    sr = 44100
    t = np.arange(sr) / sr
    x = Waveform(0.5 * np.sin(2 * np.pi * 1000 * t), sr)
    y = resample(x, 16000)
    ty = np.arange(y.samples) / 16000.0
    ref = 0.5 * np.sin(2 * np.pi * 1000 * ty)
    mid = slice(500, -500)
    # least-squares amplitude / phase fit against the analytic 1 kHz tone
    basis = np.stack([np.sin(2 * np.pi * 1000 * ty[mid]), np.cos(2 * np.pi * 1000 * ty[mid])], 1)
    coef, *_ = np.linalg.lstsq(basis, y.data[0, mid].astype(np.float64), rcond=None)
    assert np.hypot(*coef) == pytest.approx(0.5, rel=0.01)
    assert np.max(np.abs(y.data[0, mid] - ref[mid])) < 0.01


@pytest.mark.parametrize("fmt,tol", [("float32", 0.0), ("pcm16", 0.5 / 32768 + 1e-9)])
def test_wav_round_trip_preserves_channels(tmp_path, fmt, tol):
    rng = np.random.default_rng(2)
    data = rng.uniform(-0.9, 0.9, size=(6, 300))
    data[3] = 0.0
    w = Waveform(data, 16000)
    path = tmp_path / "x.wav"
    write_wav(path, w, fmt)
    r = read_wav(path)
    assert r.channels == 6 and r.sample_rate == 16000
    assert np.max(np.abs(r.data - w.data)) <= tol
    assert not np.any(r.data[3])


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 3), st.integers(1100, 3000), st.sampled_from([(512, 128), (1024, 256), (256, 64)]))
def test_stft_round_trip_property(channels, n, sizes):
    fft, hop = sizes
    x = Waveform(np.random.default_rng(n).uniform(-1, 1, (channels, n)), 16000)
    y = istft(stft(x, fft, hop, pad_short=True))
    assert np.max(np.abs(y.data - x.data)) < 1e-6
