import logging
from dataclasses import dataclass
from itertools import combinations
from typing import Dict, List, Sequence

import numpy as np
import pandas as pd
from sklearn.metrics import silhouette_score

from ..core.errors import ConfigError

logger = logging.getLogger(__name__)

COS_EPS = 1e-12


def invariance_from_reps(reps_by_condition: Dict[str, np.ndarray]) -> float:
    """
    Mean over utterances of the mean pairwise cosine similarity between
    that utterance's vectors under each condition.
    """
    if len(reps_by_condition) < 2:
        raise ConfigError("invariance needs at least two conditions")
    stacked = np.stack(list(reps_by_condition.values()))  # (C, N, D)
    norms = np.linalg.norm(stacked, axis=2)
    sims = []
    for a, b in combinations(range(len(stacked)), 2):
        dot = np.sum(stacked[a] * stacked[b], axis=1)
        sims.append(dot / np.maximum(norms[a] * norms[b], COS_EPS))
    return float(np.clip(np.mean(np.stack(sims), axis=0).mean(), -1.0, 1.0))


def invariance_score(model, waves_by_condition: Dict[str, Sequence], extract) -> float:
    """`extract(model, waves) -> (N, D)` is applied per condition."""
    return invariance_from_reps({c: extract(model, w) for c, w in waves_by_condition.items()})


@dataclass
class EmbeddingMatrix:
    matrix: np.ndarray          # (n_conditions * n_splits, D)
    split_index: np.ndarray
    condition: List[str]

    def to_frame(self) -> pd.DataFrame:
        cols = {f"d{i}": self.matrix[:, i] for i in range(self.matrix.shape[1])}
        return pd.DataFrame({"split": self.split_index, "condition": self.condition, **cols})


def split_average(reps_by_condition: Dict[str, np.ndarray], n_splits: int) -> EmbeddingMatrix:
    """
    Rows are already in the fixed utterance order; the same contiguous
    split assignment is used for every condition.
    """
    rows, splits, conds = [], [], []
    for cond, reps in reps_by_condition.items():
        if len(reps) < n_splits:
            raise ConfigError(f"{len(reps)} utterances cannot fill {n_splits} splits",
                              {"utterances": len(reps), "splits": n_splits})
        for i, chunk in enumerate(np.array_split(np.arange(len(reps)), n_splits)):
            rows.append(reps[chunk].mean(axis=0))
            splits.append(i)
            conds.append(cond)
    return EmbeddingMatrix(np.stack(rows), np.asarray(splits), conds)


def split_average_embeddings(model, waves_by_condition: Dict[str, Sequence], extract, n_splits: int = 100) -> EmbeddingMatrix:
    return split_average({c: extract(model, w) for c, w in waves_by_condition.items()}, n_splits)


def silhouette(points: np.ndarray, labels: Sequence) -> float:
    """Euclidean silhouette; returns 0.0 when every point coincides."""
    points = np.asarray(points, dtype=np.float64)
    labels = np.asarray(labels)
    values, counts = np.unique(labels, return_counts=True)
    if len(values) < 2:
        raise ConfigError("silhouette needs at least two labels")
    if np.any(counts < 2):
        raise ConfigError(f"silhouette needs >= 2 points per label; singleton labels: {values[counts < 2].tolist()}")
    if np.allclose(points, points[0]):
        return 0.0
    return float(silhouette_score(points, labels, metric="euclidean"))
