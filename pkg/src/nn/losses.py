from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from ..core.errors import DimensionError
from .tensor import Tensor, as_tensor

COS_EPS = 1e-12


def cosine_similarity(a: Tensor, b: Tensor, axis: int = -1, eps: float = COS_EPS) -> Tensor:
    """a.b / max(|a||b|, eps) along `axis`; the clamp keeps zero vectors finite."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"cosine_similarity: shapes {a.shape} and {b.shape} differ",
                             {"left": list(a.shape), "right": list(b.shape)})
    dot = (a * b).sum(axis=axis)
    norms = ((a * a).sum(axis=axis) * (b * b).sum(axis=axis)).maximum(eps * eps).sqrt()
    return dot / norms


def multilabel_bce(logits: Tensor, targets: np.ndarray) -> Tensor:
    """
    Mean over classes (and batch) of -[t log s(l) + (1-t) log(1-s(l))],
    written as softplus(l) - t*l.
    """
    targets = np.asarray(targets, dtype=np.float64)
    if logits.shape != targets.shape:
        raise DimensionError(f"multilabel_bce: logits {logits.shape} vs targets {targets.shape}",
                             {"left": list(logits.shape), "right": list(targets.shape)})
    if np.any((targets != 0) & (targets != 1)):
        raise DimensionError("multilabel_bce targets must be multi-hot")
    return (logits.softplus() - logits * targets).mean()


def cross_entropy(logits: Tensor, labels: np.ndarray, mask: Optional[np.ndarray] = None) -> Tensor:
    """
    Mean negative log-likelihood over rows of (N, K) logits. With a boolean
    mask only the selected rows contribute.
    """
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if logits.ndim != 2 or logits.shape[0] != labels.size:
        raise DimensionError(f"cross_entropy: logits {logits.shape} vs {labels.size} labels")
    rows = np.arange(labels.size)
    if mask is not None:
        rows = np.flatnonzero(np.asarray(mask, dtype=bool).reshape(-1))
        if rows.size == 0:
            raise DimensionError("cross_entropy: mask selects no rows")
    logp = logits.log_softmax(axis=-1)
    return -logp[rows, labels[rows]].mean()


def distil_terms(targets: Sequence[Union[Tensor, np.ndarray]], preds: Sequence[Tensor],
                 gamma: float) -> Tuple[Tensor, Tensor, Tensor]:
    """
    Layer-to-layer distillation objective on (B, T, D) sequences:
    per utterance, sum over layers and frames of
    (1/D)|h - h_hat|_1 - gamma * log sigmoid(cos(h, h_hat)),
    averaged over the batch. Returns (total, l1, cos) with total = l1 + cos.
    """
    if len(targets) != len(preds) or not preds:
        raise DimensionError(f"distil loss: {len(targets)} target layers vs {len(preds)} heads")
    l1_parts: List[Tensor] = []
    cos_parts: List[Tensor] = []
    for h, h_hat in zip(targets, preds):
        h = as_tensor(h)
        if h.shape != h_hat.shape:
            raise DimensionError(f"distil loss: teacher {h.shape} vs student {h_hat.shape}",
                                 {"left": list(h.shape), "right": list(h_hat.shape)})
        batch, dim = (h.shape[0] if h.ndim == 3 else 1), h.shape[-1]
        l1_parts.append((h - h_hat).abs().sum() * (1.0 / (dim * batch)))
        cos_parts.append(-cosine_similarity(h, h_hat).log_sigmoid().sum() * (1.0 / batch))
    l1 = l1_parts[0]
    for part in l1_parts[1:]:
        l1 = l1 + part
    cos = cos_parts[0]
    for part in cos_parts[1:]:
        cos = cos + part
    cos = cos * gamma
    return l1 + cos, l1, cos
