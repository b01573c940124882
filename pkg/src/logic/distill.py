"""
Layer-to-layer distillation with cross-distortion input pairs and optional
domain-adversarial training against a distortion classifier.
"""
import logging
import queue
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from ..audio.augmentor import Augmentor
from ..audio.models import CdmPair, Utterance, Waveform
from ..core.config_loader import DistillConfig, RunConfig
from ..core.errors import ConfigError, DivergenceError
from ..core.file_utils import append_jsonl, version_string
from ..core.seeding import substream
from ..models.classifier import DistortionClassifier
from ..models.student import StudentModel, init_student_from_teacher, save_student
from ..models.teacher import TeacherModel
from ..nn.checkpoint import save_checkpoint
from ..nn.losses import distil_terms, multilabel_bce
from ..nn.optim import Adam
from ..nn.tensor import Tensor, no_grad
from .batching import crop_length, random_crops

logger = logging.getLogger(__name__)


# ==========================================
#                 LOSSES
# ==========================================

def distil_loss(targets: Sequence[np.ndarray], preds: Sequence[Tensor], gamma: float) -> Tuple[Tensor, Tensor, Tensor]:
    """(L_distil, L_L1, L_cos) for teacher layers `targets` and student heads `preds`."""
    return distil_terms(targets, preds, gamma)


def teacher_targets(teacher: TeacherModel, waves: np.ndarray, layers: Sequence[int]) -> List[np.ndarray]:
    """Teacher hidden states h^i (1-based layer ids), each (B, T_frames, D). No graph."""
    teacher.eval()
    with no_grad():
        states = teacher.encoder(waves)
    return [states[i - 1].data for i in layers]


# ==========================================
#                 BATCHES
# ==========================================

@dataclass
class Batch:
    teacher_waves: np.ndarray
    student_waves: np.ndarray
    labels: Optional[np.ndarray]  # (B, 7) multi-hot of the student input
    pairs: List[CdmPair] = field(default_factory=list)
    utterance_ids: List[str] = field(default_factory=list)


def build_batch(utterances: Sequence[Utterance], augmentor: Augmentor, setup: str, batch_size: int,
                length: int, stride: int, rng: np.random.Generator) -> Batch:
    chosen, _, crops = random_crops(utterances, batch_size, length, stride, rng)
    fs = chosen[0].wave.sample_rate
    pairs = [augmentor.make_cdm_pair(Waveform(c, fs), setup, rng) for c in crops]
    return Batch(
        teacher_waves=np.stack([p.teacher_wave.samples for p in pairs]),
        student_waves=np.stack([p.student_wave.samples for p in pairs]),
        labels=np.stack([p.student_label.as_array() for p in pairs]),
        pairs=pairs,
        utterance_ids=[u.id for u in chosen],
    )


class BatchPrefetcher:
    """
    Builds batches on a background thread into a bounded queue. Batch `s`
    always comes from its own substream, so depth never changes results.
    """
    _DONE = object()

    def __init__(self, make_batch: Callable[[int], Batch], steps: int, depth: int = 2):
        self.make_batch = make_batch
        self.steps = steps
        self.depth = depth

    def _put(self, q: queue.Queue, item, stop: threading.Event):
        while not stop.is_set():
            try:
                q.put(item, timeout=0.1)
                return
            except queue.Full:
                continue

    def __iter__(self) -> Iterator[Tuple[int, Batch]]:
        if self.depth <= 0:
            for step in range(self.steps):
                yield step, self.make_batch(step)
            return

        q: queue.Queue = queue.Queue(maxsize=self.depth)
        stop = threading.Event()

        def worker():
            try:
                for step in range(self.steps):
                    if stop.is_set():
                        return
                    self._put(q, (step, self.make_batch(step)), stop)
            except BaseException as e:  # surfaced on the consumer side
                self._put(q, e, stop)
            finally:
                self._put(q, self._DONE, stop)

        thread = threading.Thread(target=worker, name="batch-prefetch", daemon=True)
        thread.start()
        try:
            while True:
                item = q.get()
                if item is self._DONE:
                    break
                if isinstance(item, BaseException):
                    raise item
                yield item
        finally:
            stop.set()
            thread.join(timeout=5.0)


# ==========================================
#                 STEPS
# ==========================================

def plain_step(batch: Batch, student: StudentModel, opt_student: Adam, targets: List[np.ndarray],
               gamma: float, step: int) -> Dict[str, float]:
    opt_student.zero_grad()
    _, preds = student(batch.student_waves)
    total, l1, cos = distil_loss(targets, preds, gamma)
    _check_finite(total, step)
    total.backward()
    opt_student.step(step)
    return {"l_distil": total.item(), "l_l1": l1.item(), "l_cos": cos.item()}


def dat_objective(z: Tensor, preds: List[Tensor], targets: List[np.ndarray], classifier: DistortionClassifier,
                  labels: np.ndarray, gamma: float, lam: float) -> Tuple[Tensor, Tensor, Tensor, Tensor, Optional[Tensor]]:
    """Student objective L_distil - lam * L_D; the L_D term is skipped entirely when lam == 0."""
    total, l1, cos = distil_loss(targets, preds, gamma)
    if lam == 0.0:
        return total, total, l1, cos, None
    l_d = multilabel_bce(classifier(z), labels)
    return total - l_d * lam, total, l1, cos, l_d


def dat_step(batch: Batch, student: StudentModel, classifier: DistortionClassifier, opt_student: Adam,
             opt_classifier: Adam, targets: List[np.ndarray], gamma: float, lam: float, step: int) -> Dict[str, float]:
    """
    One alternating update. Phase 1 trains the classifier on detached
    student states; phase 2 updates the student against the just-updated,
    frozen classifier.
    """
    if batch.labels is None:
        raise ConfigError("Adversarial step needs distortion labels for the student inputs")
    z, preds = student(batch.student_waves)

    # Phase 1: classifier only
    opt_classifier.zero_grad()
    l_d_cls = multilabel_bce(classifier(z.detach()), batch.labels)
    _check_finite(l_d_cls, step)
    l_d_cls.backward()
    opt_classifier.step(step)

    # Phase 2: student only
    opt_student.zero_grad()
    objective, total, l1, cos, _ = dat_objective(z, preds, targets, classifier, batch.labels, gamma, lam)
    _check_finite(objective, step)
    objective.backward()
    opt_student.step(step)
    classifier.zero_grad()
    return {"l_distil": total.item(), "l_l1": l1.item(), "l_cos": cos.item(), "l_d": l_d_cls.item()}


def _check_finite(loss: Tensor, step: int):
    if not np.isfinite(loss.item()):
        raise DivergenceError(f"Loss became {loss.item()} at step {step}", step=step)


# ==========================================
#                 TRAIN LOG
# ==========================================

class TrainLog:
    """Append-only, step-ordered JSONL log."""

    def __init__(self, path: Optional[Path] = None):
        self.path = Path(path) if path is not None else None
        self.rows: List[Dict[str, Any]] = []
        if self.path is not None and self.path.exists():
            self.path.unlink()

    def append(self, row: Dict[str, Any]):
        if self.rows and row["step"] < self.rows[-1]["step"]:
            raise ConfigError(f"TrainLog rows must be step-ordered ({row['step']} after {self.rows[-1]['step']})")
        self.rows.append(row)
        if self.path is not None:
            append_jsonl(self.path, [row])

    def train_rows(self) -> List[Dict[str, Any]]:
        return [r for r in self.rows if r["kind"] == "train"]

    def dev_rows(self) -> List[Dict[str, Any]]:
        return [r for r in self.rows if r["kind"] == "dev"]


@dataclass
class DistillResult:
    student: StudentModel
    classifier: Optional[DistortionClassifier]
    log: TrainLog
    best_step: int
    best_dev_loss: float
    checkpoint_path: Optional[Path] = None
    checkpoint_hash: str = ""


# ==========================================
#                 RUN
# ==========================================

def dev_batch(dev: Sequence[Utterance], length: int) -> np.ndarray:
    """Clean leading crops of every dev utterance (ascending id order)."""
    ordered = sorted(dev, key=lambda u: u.id)
    return np.stack([u.wave.samples[:length] for u in ordered])


def dev_loss(student: StudentModel, waves: np.ndarray, targets: List[np.ndarray], gamma: float) -> float:
    student.eval()
    with no_grad():
        _, preds = student(waves)
        total, _, _ = distil_loss(targets, preds, gamma)
    student.train()
    return total.item()


def distill_run(config: RunConfig, teacher: TeacherModel, train: Sequence[Utterance], dev: Sequence[Utterance],
                augmentor: Augmentor, seed: int, out_dir: Optional[Path] = None) -> DistillResult:
    dcfg: DistillConfig = config.distill
    stride = teacher.encoder.stride
    length = crop_length(train, dcfg.crop_seconds, stride)
    out_dir = Path(out_dir) if out_dir is not None else None

    student = init_student_from_teacher(teacher, dcfg, seed)
    classifier = DistortionClassifier(student.dim, seed) if dcfg.dat_enabled else None
    opt_student = Adam(student.named_parameters(), lr=dcfg.lr_student)
    opt_classifier = Adam(classifier.named_parameters(), lr=dcfg.lr_classifier) if classifier else None
    teacher.eval()
    student.train()

    log = TrainLog(out_dir / "train_log.jsonl" if out_dir else None)
    audit_path = out_dir / "augment_audit.jsonl" if out_dir else None
    if audit_path is not None and audit_path.exists():
        audit_path.unlink()

    dev_waves = dev_batch(dev, crop_length(dev, dcfg.crop_seconds, stride))
    dev_targets = teacher_targets(teacher, dev_waves, dcfg.target_layers)

    best_loss = dev_loss(student, dev_waves, dev_targets, dcfg.gamma)
    best_step, best_state = 0, student.state_dict()
    log.append({"kind": "dev", "step": 0, "dev_loss": best_loss})
    logger.info(f">>> Distilling ({dcfg.setup}, DAT={'on' if classifier else 'off'}) "
                f"for {dcfg.steps} steps; initial dev loss {best_loss:.4f}")

    def make_batch(step: int) -> Batch:
        rng = substream(seed, "distill", "batch", step)
        return build_batch(train, augmentor, dcfg.setup, dcfg.batch_size, length, stride, rng)

    try:
        for step, batch in BatchPrefetcher(make_batch, dcfg.steps, dcfg.prefetch):
            targets = teacher_targets(teacher, batch.teacher_waves, dcfg.target_layers)
            if classifier is not None:
                row = dat_step(batch, student, classifier, opt_student, opt_classifier,
                               targets, dcfg.gamma, dcfg.lam, step)
            else:
                row = plain_step(batch, student, opt_student, targets, dcfg.gamma, step)
            log.append({"kind": "train", "step": step + 1, **row})
            if audit_path is not None:
                append_jsonl(audit_path, [{"step": step + 1, "utterance": uid, "setup": p.setup,
                                           "teacher_spec": p.teacher_spec.to_dict(),
                                           "student_spec": p.student_spec.to_dict(),
                                           "label": list(p.student_label.vector)}
                                          for uid, p in zip(batch.utterance_ids, batch.pairs)])

            done = step + 1
            if done % dcfg.eval_every == 0 or done == dcfg.steps:
                loss = dev_loss(student, dev_waves, dev_targets, dcfg.gamma)
                log.append({"kind": "dev", "step": done, "dev_loss": loss})
                if loss < best_loss:
                    best_loss, best_step, best_state = loss, done, student.state_dict()
                logger.info(f"   step {done}/{dcfg.steps} L_distil={row['l_distil']:.4f} dev={loss:.4f}"
                            + (f" L_D={row['l_d']:.4f}" if "l_d" in row else ""))
    except DivergenceError as e:
        last_good = None
        if out_dir is not None:
            last_good = out_dir / "last_good.npz"
            save_checkpoint(last_good, best_state, student.metadata(seed, best_step=best_step))
        raise DivergenceError(e.message, step=e.step, parameter=e.parameter,
                              last_good=str(last_good) if last_good else None) from e

    student.load_state_dict(best_state)
    student.eval()
    result = DistillResult(student, classifier, log, best_step, best_loss)
    if out_dir is not None:
        meta = student.metadata(seed, best_step=best_step, best_dev_loss=best_loss,
                                config_hash=config.fingerprint(), version=version_string(),
                                setup=dcfg.setup, dat=dcfg.dat_enabled)
        result.checkpoint_path = out_dir / "student.npz"
        result.checkpoint_hash = save_student(result.checkpoint_path, student, meta)
        if classifier is not None:
            save_checkpoint(out_dir / "classifier.npz", classifier.state_dict(), {"kind": "classifier", "seed": seed})
    logger.info(f"   Selected step {best_step} (dev loss {best_loss:.4f})")
    return result
