"""
Frozen-upstream probes: utterance-class probe (clean train / distorted
test) and the 7-class multi-label distortion probe.
"""
import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np

from ..audio.models import DISTORTION_CLASSES, Waveform
from ..core.errors import DivergenceError
from ..core.seeding import substream
from ..models.base import BaseEncoder
from ..models.classifier import LinearProbe
from ..nn.checkpoint import load_checkpoint, save_checkpoint
from ..nn.losses import cross_entropy, multilabel_bce
from ..nn.optim import Adam
from ..nn.tensor import Tensor, no_grad

logger = logging.getLogger(__name__)


def extract_repr(model: BaseEncoder, wave: Waveform) -> np.ndarray:
    """Time-average of the last hidden layer: a length-D vector."""
    return model.last_hidden(wave).mean(axis=0)


def extract_reprs(model: BaseEncoder, waves: Sequence[Waveform]) -> np.ndarray:
    return np.stack([extract_repr(model, w) for w in waves])


@dataclass
class ProbeModel:
    """Standardization + linear layer over pooled representations."""
    mean: np.ndarray
    std: np.ndarray
    layer: LinearProbe

    def logits(self, reps: np.ndarray) -> np.ndarray:
        with no_grad():
            return self.layer(Tensor((reps - self.mean) / self.std)).data

    def predict(self, reps: np.ndarray) -> np.ndarray:
        return self.logits(reps).argmax(axis=1)

    def accuracy(self, reps: np.ndarray, labels: np.ndarray) -> float:
        return float(np.mean(self.predict(reps) == np.asarray(labels)))


def _fit_linear(x: np.ndarray, loss_fn, n_out: int, steps: int, lr: float, seed: int, stream: str) -> ProbeModel:
    mean = x.mean(axis=0)
    std = np.maximum(x.std(axis=0), 1e-8)
    layer = LinearProbe(x.shape[1], n_out, substream(seed, "probe", stream))
    opt = Adam(layer.named_parameters(), lr=lr)
    inputs = Tensor((x - mean) / std)
    for step in range(steps):
        opt.zero_grad()
        loss = loss_fn(layer(inputs))
        if not np.isfinite(loss.item()):
            raise DivergenceError(f"Probe loss became {loss.item()} at step {step}", step=step)
        loss.backward()
        opt.step(step)
    return ProbeModel(mean, std, layer)


def fit_probe(reps: np.ndarray, labels: np.ndarray, n_classes: int, steps: int, lr: float, seed: int) -> ProbeModel:
    """Full-batch cross-entropy training of a linear probe on fixed vectors."""
    labels = np.asarray(labels, dtype=np.int64)
    return _fit_linear(reps, lambda logits: cross_entropy(logits, labels), n_classes, steps, lr, seed, "class")


def train_probe(model: BaseEncoder, waves: Sequence[Waveform], labels: Sequence[int], n_classes: int,
                steps: int, lr: float, seed: int) -> ProbeModel:
    probe = fit_probe(extract_reprs(model, waves), np.asarray(labels), n_classes, steps, lr, seed)
    logger.debug(f"Probe train accuracy {probe.accuracy(extract_reprs(model, waves), np.asarray(labels)):.3f}")
    return probe


def eval_probe(probe: ProbeModel, reps_by_condition: Dict[str, np.ndarray], labels: np.ndarray) -> Dict[str, float]:
    """Per-condition accuracy; every condition holds the same utterances in the same order."""
    return {cond: probe.accuracy(reps, labels) for cond, reps in reps_by_condition.items()}


# --- DISTORTION PROBE ---

@dataclass
class DistortionProbeResult:
    exact_match: float
    per_class: Dict[str, float]

    @property
    def mean_per_class(self) -> float:
        return float(np.mean(list(self.per_class.values())))

    def to_dict(self) -> Dict[str, object]:
        return {"exact_match": self.exact_match, "mean_per_class": self.mean_per_class, "per_class": self.per_class}


def distortion_probe(reps: np.ndarray, labels: np.ndarray, steps: int, lr: float, seed: int,
                     class_names: Sequence[str] = DISTORTION_CLASSES) -> DistortionProbeResult:
    """
    Fresh multi-label linear probe on frozen pooled representations: fitted
    on the first half of the rows, scored on the second half.
    """
    labels = np.asarray(labels, dtype=np.float64)
    half = len(reps) // 2
    probe = _fit_linear(reps[:half], lambda logits: multilabel_bce(logits, labels[:half]),
                        labels.shape[1], steps, lr, seed, "distortion")
    pred = (probe.logits(reps[half:]) > 0).astype(np.float64)
    truth = labels[half:]
    per_class = {name: float(np.mean(pred[:, i] == truth[:, i])) for i, name in enumerate(class_names)}
    exact = float(np.mean(np.all(pred == truth, axis=1)))
    return DistortionProbeResult(exact, per_class)


# --- PERSISTENCE ---

def save_probe(path, probe: ProbeModel, meta: Dict[str, object]) -> str:
    arrays = {"mean": probe.mean, "std": probe.std,
              **{f"layer.{k}": v for k, v in probe.layer.state_dict().items()}}
    n_out = probe.layer.proj.weight.shape[1]
    return save_checkpoint(path, arrays, {"kind": "probe", "n_out": int(n_out), **meta})


def load_probe(path) -> ProbeModel:
    arrays, meta = load_checkpoint(path)
    layer = LinearProbe(len(arrays["mean"]), int(meta["n_out"]), np.random.default_rng(0))
    layer.load_state_dict({k[len("layer."):]: v for k, v in arrays.items() if k.startswith("layer.")})
    return ProbeModel(arrays["mean"], arrays["std"], layer)
