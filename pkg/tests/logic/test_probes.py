import numpy as np
import pytest

from src.audio.features import log_mel
from src.logic.probes import (distortion_probe, eval_probe, extract_repr, fit_probe, load_probe, save_probe,
                              train_probe)
from src.models.logmel import LogMelEncoder


def _two_clusters(rng, n=60, d=5):
    x = np.concatenate([rng.normal(-3, 1, size=(n, d)), rng.normal(3, 1, size=(n, d))])
    return x, np.repeat([0, 1], n)


def test_extract_repr_is_time_average(tone):
    rep = extract_repr(LogMelEncoder(n_mels=12, hop=16), tone)
    np.testing.assert_allclose(rep, log_mel(tone, 12, 16).mean(axis=0))


def test_probe_separates_clusters(rng):
    x, y = _two_clusters(rng)
    probe = fit_probe(x, y, n_classes=2, steps=100, lr=0.1, seed=0)
    assert probe.accuracy(x, y) == 1.0
    scores = eval_probe(probe, {"clean": x, "flipped": -x}, y)
    assert scores["clean"] == 1.0 and scores["flipped"] == 0.0


def test_probe_training_is_seeded(rng):
    x, y = _two_clusters(rng)
    a = fit_probe(x, y, 2, steps=10, lr=0.1, seed=3)
    b = fit_probe(x, y, 2, steps=10, lr=0.1, seed=3)
    np.testing.assert_array_equal(a.logits(x), b.logits(x))


def test_probe_round_trip(tmp_path, rng):
    x, y = _two_clusters(rng)
    probe = fit_probe(x, y, 2, steps=20, lr=0.1, seed=0)
    save_probe(tmp_path / "probe.npz", probe, {"model_id": "T1"})
    np.testing.assert_allclose(load_probe(tmp_path / "probe.npz").logits(x), probe.logits(x))


def test_distortion_probe_learns_linear_labels(rng):
    reps = rng.normal(size=(400, 7))
    labels = (reps > 0).astype(float)
    result = distortion_probe(reps, labels, steps=300, lr=0.1, seed=0)
    assert len(result.per_class) == 7
    assert result.mean_per_class > 0.9
    assert 0.0 <= result.exact_match <= result.mean_per_class
    assert result.to_dict()["mean_per_class"] == pytest.approx(result.mean_per_class)


def test_distortion_probe_on_noise_is_near_chance(rng):
    reps = rng.normal(size=(400, 4))
    labels = (rng.uniform(size=(400, 7)) > 0.5).astype(float)
    assert distortion_probe(reps, labels, steps=100, lr=0.05, seed=0).mean_per_class < 0.65


def test_probing_leaves_the_encoder_untouched(trained_teacher, small_corpus, train_split):
    before = {k: v.copy() for k, v in trained_teacher.state_dict().items()}
    utts = train_split[:6]
    train_probe(trained_teacher, [u.wave for u in utts], [u.class_label for u in utts],
                small_corpus[0].n_classes, steps=5, lr=0.05, seed=0)
    after = trained_teacher.state_dict()
    assert all(np.array_equal(before[k], after[k]) for k in before)


def test_distortion_probe_on_shuffled_labels_falls_to_the_prior(rng):
    reps = rng.normal(size=(800, 4))
    labels = (reps[:, np.arange(7) % 4] > 0.84).astype(float)
    shuffled = labels[rng.permutation(len(labels))]
    result = distortion_probe(reps, shuffled, steps=200, lr=0.05, seed=0)
    truth = shuffled[400:]
    for i, acc in enumerate(result.per_class.values()):
        prior = max(truth[:, i].mean(), 1.0 - truth[:, i].mean())
        assert acc == pytest.approx(prior, abs=0.08)
