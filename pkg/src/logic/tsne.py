"""
Exact t-SNE: per-row bandwidth search to a target perplexity, symmetrized
affinities, Student-t low-dimensional kernel, momentum gradient descent
with early exaggeration and per-coordinate gains.
"""
import logging
from dataclasses import dataclass, field
from typing import List

import numpy as np
from scipy.spatial.distance import pdist, squareform

from ..core.errors import ConfigError
from ..core.seeding import substream

logger = logging.getLogger(__name__)

PERPLEXITY_TOL = 1e-4
DUPLICATE_JITTER = 1e-6


@dataclass
class TsneResult:
    embedding: np.ndarray
    row_perplexity: np.ndarray
    kl_history: List[float] = field(default_factory=list)

    @property
    def initial_kl(self) -> float:
        return self.kl_history[0]

    @property
    def final_kl(self) -> float:
        return self.kl_history[-1]


def _row_distribution(d2: np.ndarray, beta: float):
    """Conditional p_{j|i} for precision beta; returns (p, entropy in nats)."""
    shifted = d2 - d2.min()
    w = np.exp(-shifted * beta)
    total = w.sum()
    p = w / total
    entropy = float(np.log(total) + beta * np.sum(shifted * p))
    return p, entropy


def conditional_affinities(x: np.ndarray, perplexity: float, tol: float = PERPLEXITY_TOL,
                           max_evals: int = 200):
    """Binary search on each row's precision until exp(H) is within `tol` of the target."""
    n = len(x)
    d2 = squareform(pdist(x, "sqeuclidean"))
    p = np.zeros((n, n))
    achieved = np.zeros(n)
    for i in range(n):
        row = np.delete(d2[i], i)
        beta, lo, hi = 1.0, 0.0, np.inf
        scale = np.median(row[row > 0]) if np.any(row > 0) else 1.0
        beta = 1.0 / scale
        for _ in range(max_evals):
            pi, h = _row_distribution(row, beta)
            perp = np.exp(h)
            if abs(perp - perplexity) < tol:
                break
            if perp > perplexity:  # too flat: sharpen
                lo = beta
                beta = beta * 2.0 if hi == np.inf else (beta + hi) / 2.0
            else:
                hi = beta
                beta = (beta + lo) / 2.0
        achieved[i] = perp
        p[i, np.arange(n) != i] = pi
    return p, achieved


def _kl(p: np.ndarray, q: np.ndarray) -> float:
    mask = p > 0
    return float(np.sum(p[mask] * np.log(p[mask] / np.maximum(q[mask], 1e-300))))


def tsne(x: np.ndarray, perplexity: float = 30.0, iters: int = 750, seed: int = 0,
         learning_rate: float = 200.0, exaggeration: float = 12.0, exaggeration_iters: int = 100) -> TsneResult:
    x = np.asarray(x, dtype=np.float64)
    n = len(x)
    if not 0 < perplexity < (n - 1) / 3.0:
        raise ConfigError(f"perplexity must be in (0, {(n - 1) / 3.0:.2f}) for {n} rows", {"perplexity": perplexity})
    rng = substream(seed, "tsne")

    # Duplicate rows make a row's entropy independent of its bandwidth
    if len(np.unique(x, axis=0)) < n:
        x = x + rng.normal(0.0, DUPLICATE_JITTER * max(float(x.std()), 1.0), size=x.shape)

    cond, achieved = conditional_affinities(x, perplexity)
    p = (cond + cond.T) / (2.0 * n)
    p = np.maximum(p, 1e-12)
    np.fill_diagonal(p, 0.0)

    y = rng.normal(0.0, 1e-4, size=(n, 2))
    velocity = np.zeros_like(y)
    gains = np.ones_like(y)
    history = []

    def q_matrix(emb):
        num = 1.0 / (1.0 + squareform(pdist(emb, "sqeuclidean")))
        np.fill_diagonal(num, 0.0)
        return num, num / num.sum()

    history.append(_kl(p, q_matrix(y)[1]))
    for it in range(iters):
        p_eff = p * exaggeration if it < exaggeration_iters else p
        num, q = q_matrix(y)
        pq = (p_eff - q) * num
        grad = 4.0 * (np.diag(pq.sum(axis=1)) - pq) @ y

        momentum = 0.5 if it < 250 else 0.8
        same_sign = np.sign(grad) == np.sign(velocity)
        gains = np.where(same_sign, gains * 0.8, gains + 0.2).clip(min=0.01)
        velocity = momentum * velocity - learning_rate * gains * grad
        y = y + velocity
        y = y - y.mean(axis=0)
        if (it + 1) % 50 == 0 or it == iters - 1:
            history.append(_kl(p, q_matrix(y)[1]))
            logger.debug(f"t-SNE iter {it + 1}: KL={history[-1]:.4f}")
    return TsneResult(embedding=y, row_perplexity=achieved, kl_history=history)
