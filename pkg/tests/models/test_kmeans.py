import numpy as np
import pytest
from sklearn.metrics import adjusted_rand_score

from src.core.errors import ConfigError
from src.models.kmeans import kmeans_fit


def _blobs(rng, n_per=40):
    centers = np.array([[0.0, 0.0], [20.0, 0.0], [0.0, 20.0]])
    x = np.concatenate([c + rng.normal(0, 0.5, size=(n_per, 2)) for c in centers])
    return x, np.repeat(np.arange(3), n_per)


def test_single_cluster_is_the_global_mean(rng):
    x = rng.normal(size=(50, 3))
    book = kmeans_fit(x, 1, iters=5, seed=0)
    np.testing.assert_allclose(book.centroids[0], x.mean(axis=0))
    assert np.all(book.assign(x) == 0)


def test_recovers_separated_blobs(rng):
    x, truth = _blobs(rng)
    book = kmeans_fit(x, 3, iters=20, seed=1)
    assert adjusted_rand_score(truth, book.assign(x)) == pytest.approx(1.0)


def test_inertia_never_increases(rng):
    x = rng.normal(size=(200, 4))
    history = kmeans_fit(x, 8, iters=30, seed=2).inertia_history
    assert all(b <= a + 1e-9 for a, b in zip(history, history[1:]))


def test_seeded_and_deterministic(rng):
    x = rng.normal(size=(100, 2))
    np.testing.assert_array_equal(kmeans_fit(x, 4, 10, seed=3).centroids, kmeans_fit(x, 4, 10, seed=3).centroids)


@pytest.mark.parametrize("k,shape", [(0, (10, 2)), (11, (10, 2)), (2, (10,))])
def test_rejects_bad_inputs(k, shape):
    with pytest.raises(ConfigError):
        kmeans_fit(np.ones(shape), k, iters=3, seed=0)
