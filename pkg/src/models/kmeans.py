import logging
from dataclasses import dataclass, field
from typing import List

import numpy as np
from scipy.spatial.distance import cdist

from ..core.errors import ConfigError
from ..core.seeding import substream

logger = logging.getLogger(__name__)


@dataclass
class Codebook:
    centroids: np.ndarray  # (K, F)
    inertia_history: List[float] = field(default_factory=list)

    @property
    def k(self) -> int:
        return self.centroids.shape[0]

    def assign(self, feats: np.ndarray) -> np.ndarray:
        """Nearest centroid under L2 (ties go to the lower index)."""
        return np.argmin(cdist(feats, self.centroids, "sqeuclidean"), axis=1)


def _plus_plus_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    centroids = [x[int(rng.integers(0, len(x)))]]
    closest = cdist(x, centroids[0][None, :], "sqeuclidean")[:, 0]
    for _ in range(1, k):
        total = closest.sum()
        if total <= 0:
            idx = int(rng.integers(0, len(x)))
        else:
            idx = int(np.searchsorted(np.cumsum(closest), rng.random() * total, side="right"))
            idx = min(idx, len(x) - 1)
        centroids.append(x[idx])
        closest = np.minimum(closest, cdist(x, x[idx][None, :], "sqeuclidean")[:, 0])
    return np.array(centroids)


def kmeans_fit(features: np.ndarray, k: int, iters: int, seed: int) -> Codebook:
    """
    Lloyd's algorithm with k-means++ seeding. An emptied cluster keeps its
    previous centroid, so inertia never increases between iterations.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2:
        raise ConfigError(f"kmeans expects (frames, features), got shape {x.shape}")
    if k <= 0 or k > len(x):
        raise ConfigError(f"K must be in [1, {len(x)}], got {k}", {"k": k, "n_frames": len(x)})

    rng = substream(seed, "kmeans")
    centroids = _plus_plus_init(x, k, rng)
    history: List[float] = []
    labels = None
    for it in range(max(1, iters)):
        dist = cdist(x, centroids, "sqeuclidean")
        new_labels = np.argmin(dist, axis=1)
        history.append(float(dist[np.arange(len(x)), new_labels].sum()))
        if labels is not None and np.array_equal(labels, new_labels):
            break
        labels = new_labels
        for j in range(k):
            members = x[labels == j]
            if len(members):
                centroids[j] = members.mean(axis=0)
    logger.debug(f"k-means K={k}: {len(history)} iterations, inertia {history[0]:.4g} -> {history[-1]:.4g}")
    return Codebook(centroids=centroids, inertia_history=history)
