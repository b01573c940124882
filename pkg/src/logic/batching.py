"""Frame-aligned random crops and span masks shared by the training loops."""
from typing import List, Sequence, Tuple

import numpy as np

from ..audio.models import Utterance
from ..core.errors import ConfigError


def crop_length(utterances: Sequence[Utterance], crop_seconds: float, stride: int) -> int:
    """Crop size in samples: a multiple of `stride`, no longer than the shortest utterance."""
    fs = utterances[0].wave.sample_rate
    shortest = min(len(u.wave) for u in utterances)
    n = min(int(round(crop_seconds * fs)), shortest) // stride * stride
    if n < stride:
        raise ConfigError(f"Crop of {crop_seconds}s leaves less than one {stride}-sample frame")
    return n


def random_crops(utterances: Sequence[Utterance], batch_size: int, length: int, stride: int,
                 rng: np.random.Generator) -> Tuple[List[Utterance], np.ndarray, np.ndarray]:
    """
    Picks `batch_size` utterances with replacement and one crop from each.
    Returns (utterances, sample offsets, (B, length) clean crops); every
    offset is a multiple of `stride` so frame labels stay aligned.
    """
    picks = rng.integers(0, len(utterances), size=batch_size)
    chosen, offsets, crops = [], [], []
    for i in picks:
        utt = utterances[int(i)]
        n_slots = (len(utt.wave) - length) // stride + 1
        off = int(rng.integers(0, n_slots)) * stride
        chosen.append(utt)
        offsets.append(off)
        crops.append(utt.wave.samples[off:off + length])
    return chosen, np.asarray(offsets, dtype=np.int64), np.stack(crops)


def span_mask(n_frames: int, mask_prob: float, span: int, rng: np.random.Generator) -> np.ndarray:
    """
    Boolean frame mask: round(mask_prob * n_blocks) non-overlapping blocks
    of `span` frames on a randomly offset block grid (at least one block).
    """
    n_blocks = n_frames // span
    mask = np.zeros(n_frames, dtype=bool)
    if n_blocks == 0:
        mask[int(rng.integers(0, n_frames))] = True
        return mask
    n_masked = max(1, int(round(mask_prob * n_blocks)))
    start = int(rng.integers(0, n_frames - n_blocks * span + 1))
    for b in rng.choice(n_blocks, size=n_masked, replace=False):
        mask[start + b * span:start + (b + 1) * span] = True
    return mask
