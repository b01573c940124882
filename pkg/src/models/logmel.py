from typing import List

import numpy as np

from ..audio.features import log_mel
from ..audio.models import Waveform
from .base import BaseEncoder


class LogMelEncoder(BaseEncoder):
    """Parameter-free reference: one 'layer' of raw log-mel frames."""

    def __init__(self, n_mels: int = 20, hop: int = 64):
        self.dim = n_mels
        self.hop = hop

    def hidden_states(self, wave: Waveform) -> List[np.ndarray]:
        return [log_mel(wave, self.dim, self.hop)]
