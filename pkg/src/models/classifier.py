import numpy as np

from ..audio.models import DISTORTION_CLASSES
from ..core.seeding import substream
from ..nn.layers import Linear, Module
from ..nn.tensor import Tensor


class DistortionClassifier(Module):
    """Mean pooling over time, then one linear layer to the 7 distortion logits."""

    def __init__(self, dim: int, seed: int, n_classes: int = len(DISTORTION_CLASSES)):
        super().__init__()
        self.proj = Linear(dim, n_classes, substream(seed, "classifier", "init"))

    def forward(self, z: Tensor) -> Tensor:
        """z: (B, T, D) -> (B, n_classes)."""
        return self.proj(z.mean(axis=1))


class LinearProbe(Module):
    """Linear layer on pooled, standardized utterance vectors."""

    def __init__(self, dim: int, n_out: int, rng: np.random.Generator):
        super().__init__()
        self.proj = Linear(dim, n_out, rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.proj(x)
