import itertools

import numpy as np
import pytest
from scipy.signal import freqz

from src.audio import dsp
from src.audio.models import Rir, Waveform
from src.core.errors import GeometryError, SignalError

ROOM = (5.0, 4.0, 3.0)
SRC = (1.0, 1.0, 1.0)
MIC = (3.0, 2.0, 1.5)


# --- ADDITIVE ---

@pytest.mark.parametrize("target", [10.0, 15.0, 20.0])
def test_mix_hits_requested_snr(tone, rng, target):
    noise = dsp.gaussian_noise(3000, 0.3, rng, tone.sample_rate)
    mixed = dsp.mix_at_snr(tone, noise, target, offset=100)
    assert len(mixed) == len(tone)
    assert dsp.snr_db(tone.samples, mixed.samples - tone.samples) == pytest.approx(target, abs=1e-9)


def test_short_noise_is_tiled(tone, rng):
    noise = dsp.gaussian_noise(500, 1.0, rng, tone.sample_rate)
    mixed = dsp.mix_at_snr(tone, noise, 12.0, rng=rng)
    assert len(mixed) == len(tone)
    assert dsp.snr_db(tone.samples, mixed.samples - tone.samples) == pytest.approx(12.0, abs=1e-9)


def test_silent_noise_is_rejected(tone):
    with pytest.raises(SignalError):
        dsp.mix_at_snr(tone, Waveform(np.zeros(100), tone.sample_rate), 10.0)


def test_sample_rate_mismatch_is_rejected(tone, rng):
    with pytest.raises(SignalError, match="mismatch"):
        dsp.mix_at_snr(tone, dsp.gaussian_noise(100, 1.0, rng, 8000), 10.0)


def test_zero_std_gaussian_is_silent(rng):
    assert not np.any(dsp.gaussian_noise(10, 0.0, rng).samples)
    with pytest.raises(SignalError):
        dsp.gaussian_noise(0, 1.0, rng)


# --- ROOM ACOUSTICS ---

def test_direct_path_only():
    fs = 8000
    rir = dsp.image_method_rir(ROOM, SRC, MIC, 0.5, 0, fs)
    d = np.linalg.norm(np.subtract(MIC, SRC))
    delay = int(np.floor(d / 343.0 * fs + 0.5))
    assert rir.first_tap() == delay
    assert np.count_nonzero(rir.taps) == 1
    assert rir.taps[delay] == pytest.approx(1.0 / (4.0 * np.pi * d))


def test_full_absorption_equals_direct_path():
    fs = 8000
    anechoic = dsp.image_method_rir(ROOM, SRC, MIC, 1.0, 3, fs)
    direct = dsp.image_method_rir(ROOM, SRC, MIC, 1.0, 0, fs)
    np.testing.assert_allclose(anechoic.taps, direct.taps)


def _brute_force_rir(room, src, mic, absorption, max_order, fs):
    beta = np.sqrt(1.0 - absorption)
    taps = {}
    rng_n = range(-max_order - 1, max_order + 2)
    for nx, ny, nz in itertools.product(rng_n, rng_n, rng_n):
        for px, py, pz in itertools.product((0, 1), repeat=3):
            order = abs(2 * nx - px) + abs(2 * ny - py) + abs(2 * nz - pz)
            if order > max_order:
                continue
            image = [(1 - 2 * p) * s + 2 * n * length
                     for p, s, n, length in zip((px, py, pz), src, (nx, ny, nz), room)]
            d = float(np.linalg.norm(np.subtract(image, mic)))
            k = int(np.floor(d / 343.0 * fs + 0.5))
            taps[k] = taps.get(k, 0.0) + beta ** order / (4.0 * np.pi * d)
    out = np.zeros(max(taps) + 1)
    for k, v in taps.items():
        out[k] = v
    return out


def test_second_order_matches_brute_force():
    fs = 8000
    rir = dsp.image_method_rir(ROOM, SRC, MIC, 0.5, 2, fs)
    oracle = _brute_force_rir(ROOM, SRC, MIC, 0.5, 2, fs)
    n = len(rir.taps)
    np.testing.assert_allclose(rir.taps, oracle[:n], rtol=1e-12, atol=1e-15)
    assert np.sum(oracle[n:] ** 2) < 1e-6 * np.sum(oracle ** 2)
    assert rir.meta["n_images"] == 25


@pytest.mark.parametrize("room, src, mic, absorption", [
    (ROOM, (6.0, 1.0, 1.0), MIC, 0.5),
    (ROOM, SRC, SRC, 0.5),
    ((5.0, -4.0, 3.0), SRC, MIC, 0.5),
    (ROOM, SRC, MIC, 0.0),
])
def test_bad_geometry(room, src, mic, absorption):
    with pytest.raises(GeometryError):
        dsp.image_method_rir(room, src, mic, absorption, 1, 8000)


def test_convolution_is_truncated():
    out = dsp.convolve_trunc(Waveform(np.array([1.0, 2.0]), 8000), Rir(np.array([1.0, 1.0, 1.0]), 8000))
    np.testing.assert_allclose(out.samples, [1.0, 3.0])


# --- FILTERS AND PITCH ---

def test_notch_response():
    fs, fc = 8000, 1000.0
    b, a = dsp.notch_coefficients(fc, 100.0, fs)
    _, h = freqz(b, a, worN=[fc, fc / 4], fs=fs)
    gain_db = 20 * np.log10(np.abs(h) + 1e-300)
    assert gain_db[0] <= -20.0
    assert gain_db[1] >= -1.0


def test_band_reject_range_checks(tone):
    with pytest.raises(SignalError):
        dsp.band_reject(tone, tone.sample_rate / 2.0, 100.0)
    with pytest.raises(SignalError):
        dsp.band_reject(tone, 500.0, 0.0)
    assert len(dsp.band_reject(tone, 500.0, 100.0)) == len(tone)


def _dominant_frequency(x: np.ndarray, fs: int) -> float:
    spectrum = np.abs(np.fft.rfft(x * np.hanning(len(x))))
    return float(np.fft.rfftfreq(len(x), 1.0 / fs)[np.argmax(spectrum)])


def test_octave_up_doubles_pitch():
    fs = 8000
    t = np.arange(fs) / fs
    x = Waveform(0.5 * np.sin(2 * np.pi * 440.0 * t), fs)
    y = dsp.pitch_shift(x, 1200.0)
    assert len(y) == len(x)
    assert _dominant_frequency(y.samples[400:-400], fs) == pytest.approx(880.0, rel=0.03)


def test_pitch_shift_limits(tone):
    np.testing.assert_array_equal(dsp.pitch_shift(tone, 0.0).samples, tone.samples)
    with pytest.raises(SignalError):
        dsp.pitch_shift(tone, 1300.0)


def test_unit_gaussian_sample_statistics(rng):
    noise = dsp.gaussian_noise(20000, 1.0, rng, 8000).samples
    assert noise.std() == pytest.approx(1.0, abs=0.02)
    assert abs(noise.mean()) < 0.03
    assert dsp.gaussian_noise(20000, 0.3, rng, 8000).samples.std() == pytest.approx(0.3, abs=0.01)
