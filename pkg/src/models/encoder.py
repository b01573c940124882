import logging
from typing import Any, Dict, List, Optional

import numpy as np

from ..core.config_loader import TeacherConfig
from ..core.errors import ConfigError
from ..nn.layers import ConvFrontEnd, Module, TransformerBlock, sinusoidal_encoding
from ..nn.tensor import Parameter, Tensor

logger = logging.getLogger(__name__)


def architecture_of(cfg: TeacherConfig, n_layers: int) -> Dict[str, Any]:
    return {
        "dim": cfg.dim, "n_heads": cfg.n_heads, "ffn_dim": cfg.ffn_dim, "n_layers": n_layers,
        "conv_channels": list(cfg.conv_channels), "conv_kernels": list(cfg.conv_kernels),
        "conv_strides": list(cfg.conv_strides),
    }


class SpeechEncoder(Module):
    """
    Conv front-end + sinusoidal positions + pre-norm transformer stack.
    With `maskable`, masked frames are replaced by a learned embedding.
    """

    def __init__(self, cfg: TeacherConfig, n_layers: int, rng: np.random.Generator,
                 dropout_rng: Optional[np.random.Generator] = None, maskable: bool = True):
        super().__init__()
        self.dim = cfg.dim
        self.stride = cfg.total_stride
        self.frontend = ConvFrontEnd(cfg.conv_channels, cfg.conv_kernels, cfg.conv_strides, cfg.dim, rng)
        self.mask_embedding = Parameter(rng.normal(0.0, 0.1, size=cfg.dim)) if maskable else None
        self.blocks = [TransformerBlock(cfg.dim, cfg.n_heads, cfg.ffn_dim, rng, cfg.dropout, dropout_rng)
                       for _ in range(n_layers)]
        self.architecture = architecture_of(cfg, n_layers)

    @property
    def n_layers(self) -> int:
        return len(self.blocks)

    def n_frames(self, n_samples: int) -> int:
        return self.frontend.frames_for(n_samples)

    def forward(self, waves: np.ndarray, mask: Optional[np.ndarray] = None) -> List[Tensor]:
        """waves (B, T) -> hidden states of every block, each (B, T_frames, dim)."""
        x = self.frontend(waves)
        if mask is not None:
            if self.mask_embedding is None:
                raise ConfigError("This encoder has no mask embedding")
            m = np.asarray(mask, dtype=np.float64)[:, :, None]
            x = x * (1.0 - m) + self.mask_embedding * m
        x = x + sinusoidal_encoding(x.shape[1], self.dim)[None, :, :]
        states = []
        for block in self.blocks:
            x = block(x)
            states.append(x)
        return states
