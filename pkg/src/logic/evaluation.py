"""
Shared evaluation audio and per-model reports.

Distorted test audio is rendered once per evaluation seed and cached to
disk; every model under comparison reads the same arrays, and a manifest
hash check refuses a cache built from a different corpus or seed.
"""
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Sequence, Tuple

import numpy as np

from ..audio.augmentor import EVAL_CONDITIONS, Augmentor
from ..audio.models import Utterance, Waveform
from ..core.config_loader import EvalConfig
from ..core.errors import CacheMismatchError
from ..core.file_utils import arrays_hash, read_json, version_string, write_json
from ..core.seeding import substream
from ..models.base import BaseEncoder
from ..nn.checkpoint import load_checkpoint, save_checkpoint
from .invariance import invariance_from_reps
from .probes import ProbeModel, distortion_probe, eval_probe, extract_reprs

logger = logging.getLogger(__name__)

HELDOUT_CONDITIONS = ("clean", "fsd_like", "dns_like")


class ConditionCache:
    def __init__(self, cache_dir, eval_seed: int, corpus_hash: str):
        self.dir = Path(cache_dir)
        self.eval_seed = int(eval_seed)
        self.corpus_hash = corpus_hash
        self.manifest_path = self.dir / "manifest.json"

    def _manifest(self) -> Dict[str, Any]:
        if not self.manifest_path.exists():
            return {"eval_seed": self.eval_seed, "corpus_hash": self.corpus_hash, "conditions": {}}
        manifest = read_json(self.manifest_path)
        if manifest.get("eval_seed") != self.eval_seed or manifest.get("corpus_hash") != self.corpus_hash:
            raise CacheMismatchError("Evaluation cache was built for a different corpus or evaluation seed",
                                     {"cache": str(self.dir), "expected_seed": self.eval_seed,
                                      "found_seed": manifest.get("eval_seed")})
        return manifest

    def ensure(self, utterances: Sequence[Utterance], augmentor: Augmentor, conditions: Sequence[str]):
        """Renders any condition not yet cached."""
        manifest = self._manifest()
        ordered = sorted(utterances, key=lambda u: u.id)
        for cond in conditions:
            if cond in manifest["conditions"]:
                continue
            arrays, labels, specs = {}, {}, {}
            for utt in ordered:
                sample = augmentor.build_eval_condition(utt.wave, cond, substream(self.eval_seed, "eval", cond, utt.id))
                arrays[utt.id] = sample.wave.samples
                labels[utt.id] = list(sample.label.vector)
                specs[utt.id] = sample.spec.to_dict()
            meta = {"condition": cond, "eval_seed": self.eval_seed, "corpus_hash": self.corpus_hash,
                    "sample_rate": ordered[0].wave.sample_rate, "labels": labels}
            save_checkpoint(self.dir / f"{cond}.npz", arrays, meta)
            write_json(self.dir / f"{cond}.specs.json", specs)
            manifest["conditions"][cond] = arrays_hash(arrays, extra={"labels": labels})
            write_json(self.manifest_path, manifest)
            logger.info(f"   Cached evaluation condition '{cond}' ({len(arrays)} utterances)")

    def load(self, condition: str) -> Tuple[List[str], List[Waveform], List[List[int]]]:
        manifest = self._manifest()
        if condition not in manifest["conditions"]:
            raise CacheMismatchError(f"Condition '{condition}' is not in the evaluation cache",
                                     {"cache": str(self.dir), "condition": condition})
        arrays, meta = load_checkpoint(self.dir / f"{condition}.npz")
        if arrays_hash(arrays, extra={"labels": meta["labels"]}) != manifest["conditions"][condition]:
            raise CacheMismatchError(f"Cached audio for '{condition}' does not match its manifest hash",
                                     {"cache": str(self.dir), "condition": condition})
        ids = sorted(arrays)
        fs = int(meta["sample_rate"])
        return ids, [Waveform(arrays[i], fs) for i in ids], [meta["labels"][i] for i in ids]

    def digest(self) -> str:
        return arrays_hash({}, extra=self._manifest())


@dataclass
class EvalReport:
    model_id: str
    seed: int
    eval_seed: int
    accuracies: Dict[str, float]
    invariance: float
    invariance_heldout: float
    distortion_probe: Dict[str, Any]
    cache_hash: str = ""
    config_hash: str = ""
    version: str = field(default_factory=version_string)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "EvalReport":
        return cls(**data)

    def save(self, path):
        write_json(path, self.to_dict())

    @classmethod
    def load(cls, path) -> "EvalReport":
        return cls.from_dict(read_json(path))


def condition_reprs(model: BaseEncoder, cache: ConditionCache, conditions: Sequence[str]):
    reps, ids_ref, labels = {}, None, {}
    for cond in conditions:
        ids, waves, labs = cache.load(cond)
        if ids_ref is not None and ids != ids_ref:
            raise CacheMismatchError(f"Condition '{cond}' covers different utterances")
        ids_ref = ids
        reps[cond] = extract_reprs(model, waves)
        labels[cond] = labs
    return ids_ref, reps, labels


def evaluate_model(model: BaseEncoder, probe: ProbeModel, cache: ConditionCache, class_of: Dict[str, int],
                   cfg: EvalConfig, model_id: str, seed: int, config_hash: str = "") -> EvalReport:
    ids, reps, labels = condition_reprs(model, cache, EVAL_CONDITIONS)
    y = np.asarray([class_of[i] for i in ids])
    accuracies = eval_probe(probe, reps, y)
    dist_labels = np.asarray(labels["2dist"], dtype=np.float64)
    dprobe = distortion_probe(reps["2dist"], dist_labels, cfg.distortion_probe_steps, cfg.probe_lr,
                              seed=cfg.eval_seed)
    report = EvalReport(
        model_id=model_id, seed=seed, eval_seed=cfg.eval_seed, accuracies=accuracies,
        invariance=invariance_from_reps(reps),
        invariance_heldout=invariance_from_reps({c: reps[c] for c in HELDOUT_CONDITIONS}),
        distortion_probe=dprobe.to_dict(), cache_hash=cache.digest(), config_hash=config_hash,
    )
    logger.info(f"   {model_id}: " + ", ".join(f"{c}={a:.3f}" for c, a in accuracies.items())
                + f", invariance={report.invariance:.3f}, dprobe={dprobe.exact_match:.3f}")
    return report
