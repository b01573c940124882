"""
Signal-level distortion primitives.

All operations are length-preserving and, apart from the explicit rng
arguments, deterministic.
"""
import logging
from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.signal import lfilter

from ..core.errors import GeometryError, SignalError
from .models import Rir, Waveform

logger = logging.getLogger(__name__)

SPEED_OF_SOUND = 343.0
RIR_TAIL_ENERGY = 1e-6
PITCH_WINDOW_SECONDS = 0.025


def _check_rate(a: Waveform, b_rate: int, what: str):
    if a.sample_rate != b_rate:
        raise SignalError(f"Sample-rate mismatch in {what}: {a.sample_rate} vs {b_rate}",
                          {"left": a.sample_rate, "right": b_rate})


def snr_db(signal: np.ndarray, noise: np.ndarray) -> float:
    return float(10.0 * np.log10(np.mean(signal ** 2) / np.mean(noise ** 2)))


# --- ADDITIVE ---

def noise_segment(noise: Waveform, length: int, rng: Optional[np.random.Generator] = None,
                  offset: Optional[int] = None) -> np.ndarray:
    """Randomly cropped (or tiled, then cropped) noise of exactly `length` samples."""
    src = noise.samples
    if src.size < length:
        reps = int(np.ceil(length / src.size)) + 1
        src = np.tile(src, reps)
    span = src.size - length + 1
    if offset is None:
        offset = int(rng.integers(0, span)) if rng is not None else 0
    if not 0 <= offset < span:
        raise SignalError(f"Crop offset {offset} outside [0, {span})")
    return src[offset:offset + length]


def mix_at_snr(speech: Waveform, noise: Waveform, snr_db_target: float,
               rng: Optional[np.random.Generator] = None, offset: Optional[int] = None) -> Waveform:
    """speech + g*noise_segment with g chosen so the added component sits exactly at `snr_db_target`."""
    _check_rate(speech, noise.sample_rate, "mix_at_snr")
    if noise.power() == 0.0:
        raise SignalError("Noise has zero power; cannot mix at a finite SNR")

    segment = noise_segment(noise, len(speech), rng=rng, offset=offset)
    seg_rms = float(np.sqrt(np.mean(segment ** 2)))
    if seg_rms == 0.0:
        raise SignalError("Selected noise segment has zero power")

    gain = speech.rms() / seg_rms * 10.0 ** (-snr_db_target / 20.0)
    return speech.replace(speech.samples + gain * segment)


def gaussian_noise(length: int, std: float, rng: np.random.Generator, sample_rate: int = 8000) -> Waveform:
    if length <= 0:
        raise SignalError("gaussian_noise length must be > 0")
    if std < 0:
        raise SignalError("gaussian_noise std must be >= 0")
    if std == 0:
        return Waveform(np.zeros(length), sample_rate)
    return Waveform(rng.normal(0.0, std, size=length), sample_rate)


# --- ROOM ACOUSTICS ---

def _nearest_sample(x):
    return np.floor(np.asarray(x) + 0.5).astype(np.int64)


def _check_geometry(room: Sequence[float], src: Sequence[float], mic: Sequence[float]):
    room, src, mic = (np.asarray(v, dtype=np.float64) for v in (room, src, mic))
    if room.shape != (3,) or src.shape != (3,) or mic.shape != (3,):
        raise GeometryError("room, source and mic must all be 3-vectors")
    if np.any(room <= 0):
        raise GeometryError(f"Room dimensions must be positive: {room.tolist()}")
    for name, p in (("source", src), ("mic", mic)):
        if np.any(p <= 0) or np.any(p >= room):
            raise GeometryError(f"{name} {p.tolist()} is not strictly inside room {room.tolist()}")
    if np.allclose(src, mic):
        raise GeometryError("source and mic coincide")
    return room, src, mic


def _axis_images(s: float, length: float, max_order: int):
    """Image coordinates along one axis and their reflection counts |2n - p|."""
    coords, orders = [], []
    for n in range(-max_order - 1, max_order + 2):
        for p in (0, 1):
            order = abs(2 * n - p)
            if order <= max_order:
                coords.append((1 - 2 * p) * s + 2 * n * length)
                orders.append(order)
    return np.asarray(coords), np.asarray(orders)


def truncate_tail(taps: np.ndarray, rel_energy: float = RIR_TAIL_ENERGY) -> np.ndarray:
    """Drops trailing taps whose remaining energy is below rel_energy of the total."""
    energy = taps ** 2
    total = energy.sum()
    if total == 0:
        return taps
    remaining = np.cumsum(energy[::-1])[::-1]
    below = np.flatnonzero(remaining < rel_energy * total)
    return taps[:below[0]] if below.size else taps


def image_method_rir(room: Sequence[float], src: Sequence[float], mic: Sequence[float],
                     absorption: float, max_order: int, fs: int) -> Rir:
    """
    Shoebox image-source RIR with a frequency-flat reflection coefficient
    sqrt(1 - absorption) and nearest-sample delays.
    """
    if not 0.0 < absorption <= 1.0:
        raise GeometryError(f"absorption must be in (0, 1], got {absorption}")
    if max_order < 0:
        raise GeometryError("max_order must be >= 0")
    room, src, mic = _check_geometry(room, src, mic)
    beta = np.sqrt(1.0 - absorption)

    axes = [_axis_images(src[i], room[i], max_order) for i in range(3)]
    gx, gy, gz = np.meshgrid(axes[0][0], axes[1][0], axes[2][0], indexing="ij")
    ox, oy, oz = np.meshgrid(axes[0][1], axes[1][1], axes[2][1], indexing="ij")
    order = (ox + oy + oz).ravel()
    keep = order <= max_order
    pos = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)[keep]
    order = order[keep]

    dist = np.linalg.norm(pos - mic, axis=1)
    delays = _nearest_sample(dist / SPEED_OF_SOUND * fs)
    amps = np.power(beta, order) / (4.0 * np.pi * dist)

    taps = np.zeros(int(delays.max()) + 1)
    np.add.at(taps, delays, amps)
    taps = truncate_tail(taps)

    meta = {
        "room": room.tolist(), "source": src.tolist(), "mic": mic.tolist(),
        "absorption": float(absorption), "max_order": int(max_order),
        "n_images": int(order.size), "speed_of_sound": SPEED_OF_SOUND,
    }
    return Rir(taps=taps, sample_rate=fs, meta=meta)


def convolve_trunc(x: Waveform, h: Rir) -> Waveform:
    """Linear convolution truncated to len(x)."""
    _check_rate(x, h.sample_rate, "convolve_trunc")
    return x.replace(np.convolve(x.samples, h.taps)[:len(x)])


# --- FILTERS ---

def notch_coefficients(f_center: float, bandwidth: float, fs: int):
    """Audio-EQ-cookbook band-stop biquad, normalized so a[0] == 1."""
    w0 = 2.0 * np.pi * f_center / fs
    q = f_center / bandwidth
    alpha = np.sin(w0) / (2.0 * q)
    cos_w0 = np.cos(w0)
    b = np.array([1.0, -2.0 * cos_w0, 1.0])
    a = np.array([1.0 + alpha, -2.0 * cos_w0, 1.0 - alpha])
    return b / a[0], a / a[0]


def band_reject(x: Waveform, f_center: float, bandwidth: float) -> Waveform:
    nyquist = x.sample_rate / 2.0
    if not 0.0 < f_center < nyquist:
        raise SignalError(f"f_center {f_center} Hz outside (0, {nyquist}) Hz")
    if bandwidth <= 0:
        raise SignalError("bandwidth must be > 0")
    b, a = notch_coefficients(f_center, bandwidth, x.sample_rate)
    return x.replace(lfilter(b, a, x.samples))


# --- PITCH ---

def _linear_resample(y: np.ndarray, ratio: float) -> np.ndarray:
    """Reads y at positions m*ratio (ratio > 1 raises pitch and shortens)."""
    n_out = max(1, int(np.floor((y.size - 1) / ratio)) + 1)
    pos = np.arange(n_out) * ratio
    return np.interp(pos, np.arange(y.size), y)


def _wsola_stretch(y: np.ndarray, n_out: int, fs: int) -> np.ndarray:
    """Time-stretches y to exactly n_out samples with waveform-synchronized overlap-add."""
    win_len = max(8, int(round(PITCH_WINDOW_SECONDS * fs)))
    win_len += win_len % 2
    hop = win_len // 2
    tol = hop // 2
    window = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(win_len) / win_len)

    n_frames = int(np.ceil(n_out / hop)) + 1
    pad = win_len + 2 * tol + hop
    ypad = np.concatenate([y, np.zeros(pad + int(np.ceil(n_frames * hop * y.size / max(n_out, 1))))])
    out = np.zeros(n_frames * hop + win_len)
    norm = np.zeros_like(out)

    ratio = y.size / n_out
    prev = 0
    for k in range(n_frames):
        nominal = int(round(k * hop * ratio))
        if k == 0:
            start = 0
        else:
            target = ypad[prev + hop: prev + hop + win_len]
            lo = max(0, nominal - tol)
            cands = sliding_window_view(ypad[lo: nominal + tol + win_len], win_len)
            start = lo + int(np.argmax(cands @ target))
        s = k * hop
        out[s:s + win_len] += window * ypad[start:start + win_len]
        norm[s:s + win_len] += window
        prev = start

    result = np.divide(out, norm, out=np.zeros_like(out), where=norm > 1e-12)
    return result[:n_out]


def pitch_shift(x: Waveform, cents: float) -> Waveform:
    """Length-preserving pitch shift: linear resample by 2^(cents/1200), then WSOLA back."""
    if abs(cents) > 1200:
        raise SignalError(f"|cents| must be <= 1200, got {cents}")
    if cents == 0:
        return x.replace(x.samples.copy())
    ratio = 2.0 ** (cents / 1200.0)
    shifted = _linear_resample(x.samples, ratio)
    return x.replace(_wsola_stretch(shifted, len(x), x.sample_rate))
