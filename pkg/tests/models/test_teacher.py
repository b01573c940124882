import dataclasses
import math

import numpy as np
import pytest

from src.core.errors import ConfigError, DimensionError
from src.models.teacher import (TeacherModel, adapt_teacher, load_label_cache, load_teacher, masked_accuracy,
                                pretrain_teacher, save_label_cache, save_teacher)


def test_pseudo_labels_align_with_encoder_frames(pseudo_labels, train_split, teacher_cfg):
    labeler, labels = pseudo_labels
    teacher = TeacherModel(teacher_cfg, seed=0)
    assert set(labels) == {u.id for u in train_split}
    for u in train_split:
        assert len(labels[u.id]) == teacher.encoder.n_frames(len(u.wave))
        assert labels[u.id].min() >= 0 and labels[u.id].max() < teacher_cfg.n_clusters
    assert labeler.hop == teacher_cfg.total_stride


def test_labeler_survives_arrays(pseudo_labels, train_split):
    labeler, labels = pseudo_labels
    rebuilt = type(labeler).from_arrays(labeler.to_arrays(), {"n_mels": labeler.n_mels, "hop": labeler.hop})
    np.testing.assert_array_equal(rebuilt.labels(train_split[0].wave), labels[train_split[0].id])


def test_label_cache_is_bound_to_corpus(tmp_path, pseudo_labels):
    labels = pseudo_labels[1]
    save_label_cache(tmp_path / "labels.npz", labels, "corpus-a")
    loaded = load_label_cache(tmp_path / "labels.npz", "corpus-a")
    uid = next(iter(labels))
    np.testing.assert_array_equal(loaded[uid], labels[uid])
    assert loaded[uid].dtype == np.int64
    with pytest.raises(ConfigError):
        load_label_cache(tmp_path / "labels.npz", "corpus-b")


def test_hidden_states_shape_and_determinism(teacher_cfg, train_split):
    teacher = TeacherModel(teacher_cfg, seed=0)
    wave = train_split[0].wave
    states = teacher.hidden_states(wave)
    assert len(states) == teacher_cfg.n_layers
    for s in states:
        assert s.shape == (teacher.encoder.n_frames(len(wave)), teacher_cfg.dim)
    np.testing.assert_array_equal(states[-1], teacher.last_hidden(wave))
    np.testing.assert_array_equal(TeacherModel(teacher_cfg, seed=0).hidden_states(wave)[2], states[2])
    with pytest.raises(DimensionError):
        teacher.hidden_states(type(wave)(np.ones(10), wave.sample_rate))


def test_initial_loss_is_near_uniform(train_split, pseudo_labels, teacher_cfg):
    _, rows = pretrain_teacher(train_split, pseudo_labels[1], dataclasses.replace(teacher_cfg, pretrain_steps=1), 0)
    assert rows[0]["loss"] == pytest.approx(math.log(teacher_cfg.n_clusters), abs=0.2)


def test_pretraining_is_seeded(train_split, pseudo_labels, teacher_cfg):
    cfg = dataclasses.replace(teacher_cfg, pretrain_steps=2)
    a, rows_a = pretrain_teacher(train_split, pseudo_labels[1], cfg, seed=5)
    b, rows_b = pretrain_teacher(train_split, pseudo_labels[1], cfg, seed=5)
    assert [r["loss"] for r in rows_a] == [r["loss"] for r in rows_b]
    for (name, pa), (_, pb) in zip(a.named_parameters(), b.named_parameters()):
        np.testing.assert_array_equal(pa.data, pb.data, err_msg=name)
    assert [r["step"] for r in rows_a] == [0, 1]


def test_masked_accuracy_is_a_fraction(trained_teacher, train_split, pseudo_labels, teacher_cfg, augmentor):
    acc = masked_accuracy(trained_teacher, train_split, pseudo_labels[1], teacher_cfg, seed=0, n_batches=2)
    assert 0.0 <= acc <= 1.0
    assert acc == masked_accuracy(trained_teacher, train_split, pseudo_labels[1], teacher_cfg, seed=0, n_batches=2)
    noisy = masked_accuracy(trained_teacher, train_split, pseudo_labels[1], teacher_cfg, 0, augmentor, n_batches=2)
    assert 0.0 <= noisy <= 1.0


def test_adaptation_copies_and_leaves_source_untouched(trained_teacher, train_split, pseudo_labels, augmentor):
    before = trained_teacher.state_dict()
    same, rows = adapt_teacher(trained_teacher, train_split, pseudo_labels[1], augmentor, steps=0, seed=0)
    assert rows == [] and same is not trained_teacher
    for name, value in same.state_dict().items():
        np.testing.assert_array_equal(value, before[name])

    adapted, rows = adapt_teacher(trained_teacher, train_split, pseudo_labels[1], augmentor, steps=2, seed=0)
    assert len(rows) == 2
    assert any(not np.array_equal(v, before[n]) for n, v in adapted.state_dict().items())
    for name, value in trained_teacher.state_dict().items():
        np.testing.assert_array_equal(value, before[name])


def test_checkpoint_round_trip(tmp_path, trained_teacher, train_split, teacher_cfg):
    save_teacher(tmp_path / "t.npz", trained_teacher, trained_teacher.metadata(seed=0))
    loaded, meta = load_teacher(tmp_path / "t.npz", teacher_cfg)
    assert meta["kind"] == "teacher"
    wave = train_split[1].wave
    np.testing.assert_allclose(loaded.hidden_states(wave)[-1], trained_teacher.hidden_states(wave)[-1])
    with pytest.raises(ConfigError):
        load_teacher(tmp_path / "t.npz", dataclasses.replace(teacher_cfg, n_layers=2))
