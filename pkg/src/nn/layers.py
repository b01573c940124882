"""
Layers built on the autograd tensor: linear, strided conv front-end,
layer norm, multi-head self-attention and pre-norm transformer blocks.
"""
import logging
from collections import OrderedDict
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from ..core.errors import ConfigError, DimensionError
from .tensor import Parameter, Tensor, conv1d, dropout, layer_norm

logger = logging.getLogger(__name__)


class Module:
    """
    Base class: parameters are discovered from attributes (Parameter,
    Module, or lists of Modules) in assignment order, so names are stable.
    """

    def __init__(self):
        self.training = True

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def _children(self) -> Iterator[Tuple[str, object]]:
        for name, value in vars(self).items():
            if isinstance(value, (Parameter, Module)):
                yield name, value
            elif isinstance(value, (list, tuple)) and value and all(isinstance(v, Module) for v in value):
                for i, v in enumerate(value):
                    yield f"{name}.{i}", v

    def named_parameters(self, prefix: str = "") -> List[Tuple[str, Parameter]]:
        out = []
        for name, value in self._children():
            full = f"{prefix}{name}"
            if isinstance(value, Parameter):
                out.append((full, value))
            else:
                out.extend(value.named_parameters(prefix=f"{full}."))
        return out

    def parameters(self) -> List[Parameter]:
        return [p for _, p in self.named_parameters()]

    def modules(self) -> Iterator["Module"]:
        yield self
        for _, value in self._children():
            if isinstance(value, Module):
                yield from value.modules()

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((name, p.data.copy()) for name, p in self.named_parameters())

    def load_state_dict(self, state: Dict[str, np.ndarray], strict: bool = True):
        params = dict(self.named_parameters())
        missing = sorted(set(params) - set(state))
        unexpected = sorted(set(state) - set(params))
        if strict and (missing or unexpected):
            raise ConfigError("Architecture mismatch while loading parameters",
                              {"missing": missing, "unexpected": unexpected})
        for name, p in params.items():
            if name not in state:
                continue
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != p.shape:
                raise DimensionError(f"Parameter '{name}': checkpoint shape {value.shape} vs model {p.shape}",
                                     {"parameter": name, "left": list(value.shape), "right": list(p.shape)})
            p.data = value.copy()


# ==========================================
#               BASIC LAYERS
# ==========================================

class Linear(Module):
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator, bias: bool = True):
        super().__init__()
        bound = 1.0 / np.sqrt(in_dim)
        self.weight = Parameter(rng.uniform(-bound, bound, size=(in_dim, out_dim)))
        self.bias = Parameter(np.zeros(out_dim)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        y = x @ self.weight
        return y + self.bias if self.bias is not None else y


class Conv1d(Module):
    def __init__(self, in_ch: int, out_ch: int, kernel: int, stride: int, rng: np.random.Generator):
        super().__init__()
        bound = 1.0 / np.sqrt(in_ch * kernel)
        self.weight = Parameter(rng.uniform(-bound, bound, size=(out_ch, in_ch, kernel)))
        self.bias = Parameter(np.zeros(out_ch))
        self.stride = stride

    def forward(self, x: Tensor) -> Tensor:
        return conv1d(x, self.weight, self.bias, stride=self.stride)


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-12):
        super().__init__()
        self.gain = Parameter(np.ones(dim))
        self.shift = Parameter(np.zeros(dim))
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.eps) * self.gain + self.shift


class Dropout(Module):
    def __init__(self, p: float, rng: Optional[np.random.Generator] = None):
        super().__init__()
        self.p = p
        self.rng = rng

    def forward(self, x: Tensor) -> Tensor:
        return dropout(x, self.p, self.rng, self.training)


# ==========================================
#               TRANSFORMER
# ==========================================

def sinusoidal_encoding(n_positions: int, dim: int) -> np.ndarray:
    pos = np.arange(n_positions)[:, None]
    idx = np.arange(0, dim, 2)[None, :]
    angles = pos / np.power(10000.0, idx / dim)
    pe = np.zeros((n_positions, dim))
    pe[:, 0::2] = np.sin(angles)
    pe[:, 1::2] = np.cos(angles[:, :dim // 2])
    return pe


class MultiHeadSelfAttention(Module):
    def __init__(self, dim: int, n_heads: int, rng: np.random.Generator):
        super().__init__()
        if dim % n_heads:
            raise ConfigError(f"dim {dim} is not divisible by {n_heads} heads")
        self.n_heads = n_heads
        self.head_dim = dim // n_heads
        self.query = Linear(dim, dim, rng)
        self.key = Linear(dim, dim, rng)
        self.value = Linear(dim, dim, rng)
        self.out = Linear(dim, dim, rng)
        self.last_attention: Optional[np.ndarray] = None

    def _split(self, x: Tensor) -> Tensor:
        b, t, _ = x.shape
        return x.reshape(b, t, self.n_heads, self.head_dim).transpose(0, 2, 1, 3)

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 3:
            raise DimensionError(f"attention expects (batch, time, dim), got {x.shape}")
        b, t, d = x.shape
        q, k, v = self._split(self.query(x)), self._split(self.key(x)), self._split(self.value(x))
        scores = (q @ k.swapaxes(-1, -2)) * (1.0 / np.sqrt(self.head_dim))
        weights = scores.softmax(axis=-1)
        self.last_attention = weights.data
        ctx = (weights @ v).transpose(0, 2, 1, 3).reshape(b, t, d)
        return self.out(ctx)


class FeedForward(Module):
    def __init__(self, dim: int, hidden: int, rng: np.random.Generator, p_drop: float = 0.0,
                 dropout_rng: Optional[np.random.Generator] = None):
        super().__init__()
        self.up = Linear(dim, hidden, rng)
        self.down = Linear(hidden, dim, rng)
        self.drop = Dropout(p_drop, dropout_rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.down(self.drop(self.up(x).gelu()))


class TransformerBlock(Module):
    """Pre-norm: x + attn(ln(x)), then x + ffn(ln(x))."""

    def __init__(self, dim: int, n_heads: int, ffn_dim: int, rng: np.random.Generator, p_drop: float = 0.0,
                 dropout_rng: Optional[np.random.Generator] = None):
        super().__init__()
        self.norm_attn = LayerNorm(dim)
        self.attn = MultiHeadSelfAttention(dim, n_heads, rng)
        self.norm_ffn = LayerNorm(dim)
        self.ffn = FeedForward(dim, ffn_dim, rng, p_drop, dropout_rng)
        self.drop = Dropout(p_drop, dropout_rng)

    def forward(self, x: Tensor) -> Tensor:
        x = x + self.drop(self.attn(self.norm_attn(x)))
        return x + self.drop(self.ffn(self.norm_ffn(x)))


class ConvFrontEnd(Module):
    """
    Strided conv stack over the raw waveform: (B, T) -> (B, T_frames, dim).
    Each utterance is standardized to zero mean / unit variance first.
    """

    def __init__(self, channels: Sequence[int], kernels: Sequence[int], strides: Sequence[int],
                 dim: int, rng: np.random.Generator):
        super().__init__()
        layers, in_ch = [], 1
        for ch, k, s in zip(channels, kernels, strides):
            layers.append(Conv1d(in_ch, ch, k, s, rng))
            in_ch = ch
        self.convs = layers
        self.norm = LayerNorm(in_ch)
        self.proj = Linear(in_ch, dim, rng)
        self.kernels = tuple(kernels)
        self.strides = tuple(strides)

    def frames_for(self, n_samples: int) -> int:
        t = n_samples
        for k, s in zip(self.kernels, self.strides):
            if t < k:
                return 0
            t = (t - k) // s + 1
        return t

    def forward(self, wave: np.ndarray) -> Tensor:
        wave = np.atleast_2d(np.asarray(wave, dtype=np.float64))
        if self.frames_for(wave.shape[1]) < 1:
            raise DimensionError(f"Input of {wave.shape[1]} samples is shorter than one frame",
                                 {"n_samples": int(wave.shape[1])})
        mu = wave.mean(axis=1, keepdims=True)
        sd = np.sqrt(wave.var(axis=1, keepdims=True) + 1e-12)
        x = Tensor(((wave - mu) / sd)[:, None, :])
        for conv in self.convs:
            x = conv(x).gelu()
        return self.proj(self.norm(x.transpose(0, 2, 1)))
