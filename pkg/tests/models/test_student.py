import dataclasses

import numpy as np
import pytest

from src.core.config_loader import DistillConfig
from src.core.errors import ConfigError
from src.models.classifier import DistortionClassifier
from src.models.logmel import LogMelEncoder
from src.models.student import init_student_from_teacher, load_student, save_student, student_forward
from src.models.teacher import TeacherModel
from src.nn.tensor import Tensor


def test_student_starts_as_a_truncated_teacher(trained_teacher, train_split):
    student = init_student_from_teacher(trained_teacher, DistillConfig(), seed=0)
    wave = train_split[0].wave
    teacher_states = trained_teacher.hidden_states(wave)
    student_states = student.hidden_states(wave)
    assert len(student_states) == 2
    for s, t in zip(student_states, teacher_states[:2]):
        np.testing.assert_allclose(s, t, atol=1e-12)
    np.testing.assert_array_equal(student.encoder.frontend.proj.weight.data,
                                  trained_teacher.encoder.frontend.proj.weight.data)
    assert student.encoder.mask_embedding is None


def test_head_count_and_forward(trained_teacher, train_split, teacher_cfg):
    student = init_student_from_teacher(trained_teacher, DistillConfig(target_layers=(2, 3, 4)), seed=0)
    d = teacher_cfg.dim
    assert student.head_parameter_count() == 3 * (d * d + d)
    wave = train_split[0].wave
    z, preds = student_forward(student, wave)
    n = student.encoder.n_frames(len(wave))
    assert z.shape == (n, d)
    assert [p.shape for p in preds] == [(n, d)] * 3
    assert student.training


def test_bad_depth_or_layers(teacher_cfg, trained_teacher):
    shallow = TeacherModel(dataclasses.replace(teacher_cfg, n_layers=2), seed=0)
    with pytest.raises(ConfigError):
        init_student_from_teacher(shallow, DistillConfig(student_layers=3), seed=0)
    with pytest.raises(ConfigError):
        init_student_from_teacher(trained_teacher, DistillConfig(target_layers=(2, 5)), seed=0)


def test_student_checkpoint_round_trip(tmp_path, trained_teacher, train_split, teacher_cfg):
    student = init_student_from_teacher(trained_teacher, DistillConfig(student_layers=1, target_layers=(4,)), 0)
    save_student(tmp_path / "s.npz", student, student.metadata(seed=0, variant="S1"))
    loaded, meta = load_student(tmp_path / "s.npz", teacher_cfg)
    assert meta["variant"] == "S1" and loaded.target_layers == (4,)
    assert loaded.encoder.n_layers == 1
    wave = train_split[2].wave
    np.testing.assert_allclose(student_forward(loaded, wave)[1][0], student_forward(student, wave)[1][0])


def test_classifier_pools_over_time(rng):
    clf = DistortionClassifier(16, seed=0)
    z = rng.normal(size=(2, 5, 16))
    out = clf(Tensor(z)).data
    assert out.shape == (2, 7)
    np.testing.assert_allclose(clf(Tensor(z[:, ::-1])).data, out)


def test_logmel_reference(tone):
    enc = LogMelEncoder(n_mels=20, hop=64)
    states = enc.hidden_states(tone)
    assert len(states) == 1 and states[0].shape == (len(tone) // 64, 20)
    assert enc.dim == 20
