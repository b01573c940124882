from abc import ABC, abstractmethod
from typing import List

import numpy as np

from ..audio.models import Waveform


class BaseEncoder(ABC):
    """
    The interface every probed upstream model implements.

    - Frozen: calling it never changes parameters.
    - Deterministic: the same wave always yields the same states.
    """
    dim: int

    @abstractmethod
    def hidden_states(self, wave: Waveform) -> List[np.ndarray]:
        """
        Per-layer frame sequences for one utterance.

        Returns:
            list of (T_frames, dim) arrays, first layer first.
        """

    def last_hidden(self, wave: Waveform) -> np.ndarray:
        return self.hidden_states(wave)[-1]
