"""
Frame-level log-mel features aligned with the encoder frame grid
(one frame per `hop` samples, `floor(len / hop)` frames).
"""
import logging

import librosa
import numpy as np

from ..core.errors import SignalError
from .models import Waveform

logger = logging.getLogger(__name__)

LOG_FLOOR = 1e-10


def n_frames(n_samples: int, hop: int) -> int:
    return n_samples // hop


def log_mel(wave: Waveform, n_mels: int, hop: int, n_fft: int = 256) -> np.ndarray:
    """(n_frames, n_mels) natural-log mel energies; frame t is centred on sample t*hop."""
    frames = n_frames(len(wave), hop)
    if frames < 1:
        raise SignalError(f"Input of {len(wave)} samples is shorter than one {hop}-sample frame",
                          {"n_samples": len(wave), "hop": hop})
    mel = librosa.feature.melspectrogram(
        y=wave.samples, sr=wave.sample_rate, n_fft=n_fft, hop_length=hop, win_length=n_fft,
        window="hann", center=True, pad_mode="constant", power=2.0, n_mels=n_mels,
        fmin=0.0, fmax=wave.sample_rate / 2.0,
    )
    return np.log(np.maximum(mel[:, :frames].T, LOG_FLOOR))


class FeatureNormalizer:
    """Per-dimension standardization fitted on training frames."""

    def __init__(self, mean: np.ndarray, std: np.ndarray):
        self.mean = np.asarray(mean, dtype=np.float64)
        self.std = np.maximum(np.asarray(std, dtype=np.float64), 1e-8)

    @classmethod
    def fit(cls, feats: np.ndarray) -> "FeatureNormalizer":
        return cls(feats.mean(axis=0), feats.std(axis=0))

    def __call__(self, feats: np.ndarray) -> np.ndarray:
        return (feats - self.mean) / self.std
