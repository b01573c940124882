import json

import numpy as np
import pytest

from src.audio.augmentor import EVAL_CONDITIONS, VIZ_CONDITIONS
from src.audio.synth_corpus import split_of
from src.core.config_loader import EvalConfig
from src.core.errors import CacheMismatchError
from src.logic.evaluation import ConditionCache, EvalReport, evaluate_model
from src.logic.probes import extract_reprs, fit_probe
from src.logic.visualize import visualize_model
from src.models.logmel import LogMelEncoder

EVAL_CFG = EvalConfig(probe_steps=30, distortion_probe_steps=30, n_splits=4, tsne_perplexity=3.0, tsne_iters=60)


@pytest.fixture
def heldout_split(small_corpus):
    return split_of(small_corpus[1], "test")


@pytest.fixture
def cache(tmp_path, small_corpus, heldout_split, augmentor):
    cache = ConditionCache(tmp_path / "cache", EVAL_CFG.eval_seed, small_corpus[0].content_hash)
    cache.ensure(heldout_split, augmentor, sorted(set(EVAL_CONDITIONS) | set(VIZ_CONDITIONS)))
    return cache


def test_cache_rendering_is_seeded(tmp_path, small_corpus, heldout_split, augmentor, cache):
    twin = ConditionCache(tmp_path / "twin", EVAL_CFG.eval_seed, small_corpus[0].content_hash)
    twin.ensure(heldout_split, augmentor, ["2dist", "fsd_like"])
    for cond in ("2dist", "fsd_like"):
        ids, waves, labels = cache.load(cond)
        twin_ids, twin_waves, twin_labels = twin.load(cond)
        assert ids == twin_ids == sorted(u.id for u in heldout_split)
        assert labels == twin_labels
        for a, b in zip(waves, twin_waves):
            np.testing.assert_array_equal(a.samples, b.samples)
    assert all(len(lab) == 7 for lab in cache.load("2dist")[2])
    # held-out noise keeps a diagnostic label: proxy bank bit plus reverberation
    assert all(lab == [0, 0, 1, 1, 0, 0, 0] for lab in cache.load("dns_like")[2])


def test_cache_refuses_foreign_seed_or_corpus(cache, small_corpus):
    with pytest.raises(CacheMismatchError):
        ConditionCache(cache.dir, EVAL_CFG.eval_seed + 1, small_corpus[0].content_hash).load("clean")
    with pytest.raises(CacheMismatchError):
        ConditionCache(cache.dir, EVAL_CFG.eval_seed, "another-corpus").load("clean")
    with pytest.raises(CacheMismatchError):
        cache.load("underwater")


def test_cache_detects_tampering(cache):
    manifest = json.loads(cache.manifest_path.read_text())
    manifest["conditions"]["clean"] = "0" * 64
    cache.manifest_path.write_text(json.dumps(manifest))
    with pytest.raises(CacheMismatchError):
        cache.load("clean")


def test_evaluate_reference_model(tmp_path, small_corpus, train_split, heldout_split, cache):
    model = LogMelEncoder(n_mels=12, hop=16)
    probe = fit_probe(extract_reprs(model, [u.wave for u in train_split]),
                      np.array([u.class_label for u in train_split]), 3, EVAL_CFG.probe_steps, 0.05, seed=0)
    class_of = {u.id: u.class_label for u in heldout_split}
    report = evaluate_model(model, probe, cache, class_of, EVAL_CFG, "LOGMEL", seed=0)
    assert set(report.accuracies) == set(EVAL_CONDITIONS)
    assert all(0.0 <= a <= 1.0 for a in report.accuracies.values())
    assert -1.0 <= report.invariance <= 1.0 and -1.0 <= report.invariance_heldout <= 1.0
    assert set(report.distortion_probe) == {"exact_match", "mean_per_class", "per_class"}
    assert report.cache_hash == cache.digest()

    report.save(tmp_path / "report.json")
    assert EvalReport.load(tmp_path / "report.json") == report


def test_visualization_outputs(tmp_path, cache):
    summary = visualize_model(LogMelEncoder(n_mels=12, hop=16), cache, EVAL_CFG, "LOGMEL", 0,
                              out_dir=tmp_path / "viz", stamp={"version": "test"})
    assert summary["rows"] == len(VIZ_CONDITIONS) * EVAL_CFG.n_splits
    assert -1.0 <= summary["silhouette"] <= 1.0
    assert summary["max_perplexity_error"] < 1e-4
    for name in ("embeddings.csv", "tsne.csv", "tsne.png", "visualization.json"):
        assert (tmp_path / "viz" / name).exists()
