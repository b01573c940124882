import logging
from typing import Any, Dict, List, Sequence, Tuple

import numpy as np

from ..audio.models import Waveform
from ..core.config_loader import DistillConfig, TeacherConfig
from ..core.errors import ConfigError, DimensionError
from ..core.seeding import substream
from ..nn.checkpoint import load_checkpoint, save_checkpoint
from ..nn.layers import Linear, Module
from ..nn.tensor import Tensor, no_grad
from .base import BaseEncoder
from .encoder import SpeechEncoder

logger = logging.getLogger(__name__)


class StudentModel(Module, BaseEncoder):
    """Shallow encoder F plus one linear prediction head per target teacher layer."""

    def __init__(self, cfg: TeacherConfig, n_layers: int, target_layers: Sequence[int], seed: int):
        super().__init__()
        self.cfg = cfg
        self.dim = cfg.dim
        self.target_layers = tuple(target_layers)
        self.encoder = SpeechEncoder(cfg, n_layers, substream(seed, "student", "init"),
                                     substream(seed, "student", "dropout"), maskable=False)
        head_rng = substream(seed, "student", "heads")
        self.heads = [Linear(cfg.dim, cfg.dim, head_rng) for _ in self.target_layers]

    def forward(self, waves: np.ndarray) -> Tuple[Tensor, List[Tensor]]:
        z = self.encoder(waves)[-1]
        return z, [head(z) for head in self.heads]

    def hidden_states(self, wave: Waveform) -> List[np.ndarray]:
        if self.encoder.n_frames(len(wave)) < 1:
            raise DimensionError(f"Input of {len(wave)} samples is shorter than one frame",
                                 {"n_samples": len(wave)})
        was_training = self.training
        self.eval()
        try:
            with no_grad():
                states = self.encoder(wave.samples[None, :])
        finally:
            self.train(was_training)
        return [s.data[0].copy() for s in states]

    def head_parameter_count(self) -> int:
        return int(sum(h.num_parameters() for h in self.heads))

    def metadata(self, seed: int, **extra) -> Dict[str, Any]:
        return {"kind": "student", "architecture": self.encoder.architecture,
                "target_layers": list(self.target_layers), "seed": seed, **extra}


def student_forward(student: StudentModel, wave: Waveform) -> Tuple[np.ndarray, List[np.ndarray]]:
    """Single-utterance forward in eval mode: (z, [h_hat])."""
    if student.encoder.n_frames(len(wave)) < 1:
        raise DimensionError(f"Input of {len(wave)} samples is shorter than one frame",
                             {"n_samples": len(wave)})
    was_training = student.training
    student.eval()
    try:
        with no_grad():
            z, preds = student(wave.samples[None, :])
    finally:
        student.train(was_training)
    return z.data[0].copy(), [p.data[0].copy() for p in preds]


def init_student_from_teacher(teacher, dcfg: DistillConfig, seed: int) -> StudentModel:
    """
    Copies the front-end and the first `student_layers` blocks from the
    teacher; prediction heads are fresh.
    """
    tcfg = teacher.cfg
    n = dcfg.student_layers
    if n > teacher.encoder.n_layers:
        raise ConfigError(f"Student depth {n} exceeds teacher depth {teacher.encoder.n_layers}")
    bad = [i for i in dcfg.target_layers if not 1 <= i <= teacher.encoder.n_layers]
    if bad:
        raise ConfigError(f"Target layers {bad} do not exist in a {teacher.encoder.n_layers}-layer teacher")

    student = StudentModel(tcfg, n, dcfg.target_layers, seed)
    source = teacher.encoder.state_dict()
    copied = {}
    for name, _ in student.encoder.named_parameters():
        if name not in source:
            raise ConfigError(f"Teacher has no parameter '{name}' to copy into the student")
        copied[name] = source[name]
    student.encoder.load_state_dict(copied)
    logger.debug(f"Student initialized: {len(copied)} tensors copied, "
                 f"{student.head_parameter_count()} head parameters")
    return student


def save_student(path, student: StudentModel, meta: Dict[str, Any]) -> str:
    return save_checkpoint(path, student.state_dict(), meta)


def load_student(path, cfg: TeacherConfig) -> Tuple[StudentModel, Dict[str, Any]]:
    arrays, meta = load_checkpoint(path)
    arch = meta.get("architecture", {})
    student = StudentModel(cfg, int(arch.get("n_layers", 2)), meta.get("target_layers", (2, 3, 4)),
                           int(meta.get("seed", 0)))
    if arch != student.encoder.architecture:
        raise ConfigError("Student checkpoint architecture differs from the configured one",
                          {"checkpoint": arch, "config": student.encoder.architecture})
    student.load_state_dict(arrays)
    student.eval()
    return student, meta
