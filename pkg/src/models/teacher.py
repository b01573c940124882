"""
Toy masked-prediction teacher: conv front-end + transformer encoder trained
to predict k-means pseudo-labels of log-mel frames at masked positions.
Domain adaptation continues the same objective on distorted inputs while
the targets stay derived from the clean audio.
"""
import logging
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..audio.augmentor import Augmentor
from ..audio.features import FeatureNormalizer, log_mel
from ..audio.models import Utterance, Waveform
from ..core.config_loader import TeacherConfig
from ..core.errors import ConfigError, DimensionError, DivergenceError
from ..core.seeding import substream
from ..logic.batching import crop_length, random_crops, span_mask
from ..nn.checkpoint import load_checkpoint, save_checkpoint
from ..nn.layers import LayerNorm, Linear, Module
from ..nn.losses import cross_entropy
from ..nn.optim import Adam
from ..nn.tensor import Tensor, no_grad
from .base import BaseEncoder
from .encoder import SpeechEncoder
from .kmeans import Codebook, kmeans_fit

logger = logging.getLogger(__name__)

HEAD_INIT_SCALE = 0.1


# ==========================================
#              PSEUDO-LABELS
# ==========================================

@dataclass
class PseudoLabeler:
    codebook: Codebook
    normalizer: FeatureNormalizer
    n_mels: int
    hop: int

    def features(self, wave: Waveform) -> np.ndarray:
        return self.normalizer(log_mel(wave, self.n_mels, self.hop))

    def labels(self, wave: Waveform) -> np.ndarray:
        return self.codebook.assign(self.features(wave))

    @classmethod
    def fit(cls, utterances: Sequence[Utterance], cfg: TeacherConfig, seed: int) -> "PseudoLabeler":
        hop = cfg.total_stride
        frames = np.concatenate([log_mel(u.wave, cfg.n_mels, hop) for u in utterances])
        normalizer = FeatureNormalizer.fit(frames)
        codebook = kmeans_fit(normalizer(frames), cfg.n_clusters, cfg.kmeans_iters, seed)
        logger.info(f"Pseudo-labeler: K={cfg.n_clusters} over {len(frames)} frames, "
                    f"final inertia {codebook.inertia_history[-1]:.4g}")
        return cls(codebook, normalizer, cfg.n_mels, hop)

    def label_corpus(self, utterances: Sequence[Utterance]) -> Dict[str, np.ndarray]:
        return {u.id: self.labels(u.wave) for u in utterances}

    def to_arrays(self) -> Dict[str, np.ndarray]:
        return {"centroids": self.codebook.centroids, "mean": self.normalizer.mean,
                "std": self.normalizer.std, "inertia": np.asarray(self.codebook.inertia_history)}

    @classmethod
    def from_arrays(cls, arrays: Dict[str, np.ndarray], meta: Dict[str, Any]) -> "PseudoLabeler":
        codebook = Codebook(arrays["centroids"], list(arrays["inertia"]))
        return cls(codebook, FeatureNormalizer(arrays["mean"], arrays["std"]), int(meta["n_mels"]), int(meta["hop"]))


def save_label_cache(path, labels: Dict[str, np.ndarray], manifest_hash: str):
    save_checkpoint(path, {uid: lab.astype(np.float64) for uid, lab in labels.items()},
                    {"kind": "pseudo_labels", "manifest_hash": manifest_hash})


def load_label_cache(path, manifest_hash: str) -> Dict[str, np.ndarray]:
    arrays, meta = load_checkpoint(path)
    if meta.get("manifest_hash") != manifest_hash:
        raise ConfigError("Pseudo-label cache belongs to a different corpus",
                          {"expected": manifest_hash, "found": meta.get("manifest_hash")})
    return {uid: a.astype(np.int64) for uid, a in arrays.items()}


# ==========================================
#                  MODEL
# ==========================================

class TeacherModel(Module, BaseEncoder):
    def __init__(self, cfg: TeacherConfig, seed: int):
        super().__init__()
        rng = substream(seed, "teacher", "init")
        self.cfg = cfg
        self.dim = cfg.dim
        self.encoder = SpeechEncoder(cfg, cfg.n_layers, rng, substream(seed, "teacher", "dropout"))
        self.head_norm = LayerNorm(cfg.dim)
        self.head = Linear(cfg.dim, cfg.n_clusters, rng)
        self.head.weight.data = self.head.weight.data * HEAD_INIT_SCALE

    def masked_logits(self, waves: np.ndarray, mask: np.ndarray) -> Tensor:
        """(B, T_frames, K) cluster logits from the last layer."""
        return self.head(self.head_norm(self.encoder(waves, mask)[-1]))

    def hidden_states(self, wave: Waveform) -> List[np.ndarray]:
        return teacher_hidden(self, wave)

    def metadata(self, seed: int, **extra) -> Dict[str, Any]:
        return {"kind": "teacher", "architecture": self.encoder.architecture,
                "n_clusters": self.cfg.n_clusters, "seed": seed, **extra}


def teacher_hidden(teacher: TeacherModel, wave: Waveform) -> List[np.ndarray]:
    """h^1..h^L for one utterance, each (T_frames, D); eval mode, no graph."""
    if teacher.encoder.n_frames(len(wave)) < 1:
        raise DimensionError(f"Input of {len(wave)} samples is shorter than one frame",
                             {"n_samples": len(wave)})
    was_training = teacher.training
    teacher.eval()
    try:
        with no_grad():
            states = teacher.encoder(wave.samples[None, :])
    finally:
        teacher.train(was_training)
    return [s.data[0].copy() for s in states]


def save_teacher(path, teacher: TeacherModel, meta: Dict[str, Any]) -> str:
    return save_checkpoint(path, teacher.state_dict(), meta)


def load_teacher(path, cfg: TeacherConfig) -> Tuple[TeacherModel, Dict[str, Any]]:
    arrays, meta = load_checkpoint(path)
    teacher = TeacherModel(cfg, int(meta.get("seed", 0)))
    if meta.get("architecture") != teacher.encoder.architecture:
        raise ConfigError("Teacher checkpoint architecture differs from the configured one",
                          {"checkpoint": meta.get("architecture"), "config": teacher.encoder.architecture})
    teacher.load_state_dict(arrays)
    teacher.eval()
    return teacher, meta


# ==========================================
#                TRAINING
# ==========================================

def _batch(utterances, labels, cfg: TeacherConfig, length: int, rng: np.random.Generator,
           augmentor: Optional[Augmentor]):
    stride = cfg.total_stride
    chosen, offsets, crops = random_crops(utterances, cfg.batch_size, length, stride, rng)
    n_frames = length // stride
    targets = np.stack([labels[u.id][o // stride:o // stride + n_frames] for u, o in zip(chosen, offsets)])
    mask = np.stack([span_mask(n_frames, cfg.mask_prob, cfg.mask_span, rng) for _ in chosen])
    if augmentor is not None:
        fs = chosen[0].wave.sample_rate
        crops = np.stack([augmentor.apply(Waveform(c, fs), augmentor.sample_spec(rng, "teacher/adapt"))[0].samples
                          for c in crops])
    return crops, targets, mask


def masked_step_loss(teacher: TeacherModel, crops: np.ndarray, targets: np.ndarray,
                     mask: np.ndarray) -> Tuple[Tensor, float]:
    logits = teacher.masked_logits(crops, mask)
    b, t, k = logits.shape
    flat = logits.reshape(b * t, k)
    loss = cross_entropy(flat, targets.reshape(-1), mask.reshape(-1))
    sel = mask.reshape(-1)
    acc = float(np.mean(flat.data[sel].argmax(axis=1) == targets.reshape(-1)[sel]))
    return loss, acc


def train_masked_prediction(teacher: TeacherModel, utterances: Sequence[Utterance], labels: Dict[str, np.ndarray],
                            cfg: TeacherConfig, steps: int, seed: int, stream: str,
                            augmentor: Optional[Augmentor] = None) -> List[Dict[str, Any]]:
    """Runs `steps` Adam updates; returns the per-step log rows."""
    if not utterances:
        raise ConfigError("Teacher training needs a non-empty train split")
    rng = substream(seed, "teacher", stream, "batches")
    length = crop_length(utterances, cfg.crop_seconds, cfg.total_stride)
    opt = Adam(teacher.named_parameters(), lr=cfg.lr)
    teacher.train()
    rows = []
    for step in range(steps):
        crops, targets, mask = _batch(utterances, labels, cfg, length, rng, augmentor)
        opt.zero_grad()
        loss, acc = masked_step_loss(teacher, crops, targets, mask)
        if not np.isfinite(loss.item()):
            raise DivergenceError(f"Masked-prediction loss became {loss.item()} at step {step}", step=step)
        loss.backward()
        opt.step(step)
        rows.append({"step": step, "loss": loss.item(), "masked_acc": acc})
        if step % 100 == 0 or step == steps - 1:
            logger.info(f"   [{stream}] step {step}/{steps} loss={loss.item():.4f} masked_acc={acc:.3f}")
    teacher.eval()
    return rows


def masked_accuracy(teacher: TeacherModel, utterances: Sequence[Utterance], labels: Dict[str, np.ndarray],
                    cfg: TeacherConfig, seed: int, augmentor: Optional[Augmentor] = None,
                    n_batches: int = 8) -> float:
    """Masked-frame accuracy on fixed (seeded) crops, masks and distortions."""
    rng = substream(seed, "teacher", "masked_eval")
    length = crop_length(utterances, cfg.crop_seconds, cfg.total_stride)
    hits = total = 0
    teacher.eval()
    with no_grad():
        for _ in range(n_batches):
            crops, targets, mask = _batch(utterances, labels, cfg, length, rng, augmentor)
            pred = teacher.masked_logits(crops, mask).data.argmax(axis=-1)
            hits += int(np.sum(pred[mask] == targets[mask]))
            total += int(mask.sum())
    return hits / max(total, 1)


def pretrain_teacher(utterances: Sequence[Utterance], labels: Dict[str, np.ndarray], cfg: TeacherConfig,
                     seed: int) -> Tuple[TeacherModel, List[Dict[str, Any]]]:
    teacher = TeacherModel(cfg, seed)
    rows = train_masked_prediction(teacher, utterances, labels, cfg, cfg.pretrain_steps, seed, "pretrain")
    return teacher, rows


def adapt_teacher(teacher: TeacherModel, utterances: Sequence[Utterance], labels: Dict[str, np.ndarray],
                  augmentor: Augmentor, steps: int, seed: int) -> Tuple[TeacherModel, List[Dict[str, Any]]]:
    """
    Continues masked prediction on distorted crops. `labels` must come from
    the clean audio; the input teacher is left untouched.
    """
    adapted = TeacherModel(teacher.cfg, seed)
    adapted.load_state_dict(teacher.state_dict())
    if steps == 0:
        return adapted, []
    rows = train_masked_prediction(adapted, utterances, labels, teacher.cfg, steps, seed, "adapt", augmentor)
    return adapted, rows
