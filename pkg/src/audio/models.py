from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from ..core.errors import SignalError

# Fixed label order of the 7-class multi-hot distortion vector
DISTORTION_CLASSES: Tuple[str, ...] = (
    "musan_like", "gaussian", "wham_like", "reverberation", "pitch_shift", "band_reject", "clean",
)
ADDITIVE_CLASSES = ("musan_like", "gaussian", "wham_like")
NON_ADDITIVE_CLASSES = ("reverberation", "pitch_shift", "band_reject")
IN_DOMAIN_BANKS = ADDITIVE_CLASSES
HELDOUT_BANKS = ("fsd_like", "dns_like")
# Diagnostic label bit for held-out noise: the closest in-domain additive family
HELDOUT_LABEL_PROXY = {"fsd_like": "musan_like", "dns_like": "wham_like"}
ALL_BANKS = ("musan_like", "wham_like", "gaussian", "fsd_like", "dns_like")


@dataclass
class Waveform:
    """Mono float64 signal. Samples are never empty and always finite."""
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64).reshape(-1)
        if self.samples.size == 0:
            raise SignalError("Waveform is empty")
        if not np.all(np.isfinite(self.samples)):
            raise SignalError("Waveform contains non-finite samples")

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate

    def power(self) -> float:
        return float(np.mean(self.samples ** 2))

    def rms(self) -> float:
        return float(np.sqrt(self.power()))

    def replace(self, samples: np.ndarray) -> "Waveform":
        return Waveform(samples, self.sample_rate)


@dataclass
class Rir:
    taps: np.ndarray
    sample_rate: int
    meta: Dict[str, Any] = field(default_factory=dict)

    def first_tap(self) -> int:
        nz = np.flatnonzero(self.taps)
        return int(nz[0]) if nz.size else -1

    def energy(self) -> float:
        return float(np.sum(self.taps ** 2))


@dataclass
class Utterance:
    id: str
    wave: Waveform
    class_label: int
    split: str  # train | dev | test
    phones: List[int] = field(default_factory=list)
    durations: List[int] = field(default_factory=list)


@dataclass
class NoiseClip:
    """A noise clip with its provenance tag (bank, index, heldout)."""
    wave: Waveform
    bank: str
    index: int
    heldout: bool

    @property
    def tag(self) -> str:
        return f"{self.bank}#{self.index}"


@dataclass
class NoiseBank:
    name: str
    clips: List[NoiseClip]
    heldout: bool

    def __post_init__(self):
        if self.heldout != (self.name in HELDOUT_BANKS):
            raise SignalError(f"Bank '{self.name}' heldout flag is inconsistent")


@dataclass
class CorpusManifest:
    seed: int
    n_classes: int
    sample_rate: int
    duration_range: Tuple[float, float]
    splits: Dict[str, List[str]]
    entries: List[Dict[str, Any]]
    recipe: Dict[str, Any]
    content_hash: str = ""

    def to_dict(self) -> Dict[str, Any]:
        return {
            "seed": self.seed, "n_classes": self.n_classes, "sample_rate": self.sample_rate,
            "duration_range": list(self.duration_range), "splits": self.splits,
            "entries": self.entries, "recipe": self.recipe, "content_hash": self.content_hash,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "CorpusManifest":
        return cls(seed=data["seed"], n_classes=data["n_classes"], sample_rate=data["sample_rate"],
                   duration_range=tuple(data["duration_range"]), splits=data["splits"],
                   entries=data["entries"], recipe=data["recipe"], content_hash=data.get("content_hash", ""))


# --- DISTORTION PLANS ---

@dataclass(frozen=True)
class AdditiveSpec:
    bank: str
    clip_index: int
    snr_db: float
    crop_position: float  # in [0, 1): offset = floor(pos * (len(clip) - len(utt) + 1))
    rir_applied: bool = False
    rir_params: Optional[Tuple[Tuple[str, Any], ...]] = None


@dataclass(frozen=True)
class NonAdditiveSpec:
    kind: str  # reverberation | pitch_shift | band_reject
    params: Tuple[Tuple[str, Any], ...]

    def param(self, name: str) -> Any:
        return dict(self.params)[name]


@dataclass(frozen=True)
class DistortionSpec:
    additive: Optional[AdditiveSpec] = None
    non_additive: Optional[NonAdditiveSpec] = None
    rng_provenance: str = ""

    @property
    def is_clean(self) -> bool:
        return self.additive is None and self.non_additive is None

    def signature(self) -> Tuple:
        """Everything but provenance; equal signatures mean identical distortions."""
        return (self.additive, self.non_additive)

    def additive_count(self) -> int:
        return int(self.additive is not None)

    def to_dict(self) -> Dict[str, Any]:
        out: Dict[str, Any] = {"provenance": self.rng_provenance}
        if self.additive is not None:
            a = self.additive
            out["additive"] = {"bank": a.bank, "clip_index": a.clip_index, "snr_db": a.snr_db,
                               "crop_position": a.crop_position, "rir_applied": a.rir_applied,
                               "rir_params": dict(a.rir_params) if a.rir_params else None}
        if self.non_additive is not None:
            out["non_additive"] = {"kind": self.non_additive.kind, "params": dict(self.non_additive.params)}
        return out


@dataclass(frozen=True)
class DistortionLabel:
    vector: Tuple[int, ...]

    def __post_init__(self):
        v = self.vector
        if len(v) != len(DISTORTION_CLASSES) or any(x not in (0, 1) for x in v):
            raise SignalError(f"Malformed distortion label {v}")

    @classmethod
    def from_spec(cls, spec: DistortionSpec) -> "DistortionLabel":
        v = [0] * len(DISTORTION_CLASSES)
        if spec.is_clean:
            v[DISTORTION_CLASSES.index("clean")] = 1
            return cls(tuple(v))
        if spec.additive is not None:
            bank = HELDOUT_LABEL_PROXY.get(spec.additive.bank, spec.additive.bank)
            v[DISTORTION_CLASSES.index(bank)] = 1
            if spec.additive.rir_applied:
                v[DISTORTION_CLASSES.index("reverberation")] = 1
        if spec.non_additive is not None:
            v[DISTORTION_CLASSES.index(spec.non_additive.kind)] = 1
        return cls(tuple(v))

    def as_array(self) -> np.ndarray:
        return np.asarray(self.vector, dtype=np.float64)

    def is_valid(self) -> bool:
        v = dict(zip(DISTORTION_CLASSES, self.vector))
        n_add = sum(v[c] for c in ADDITIVE_CLASSES)
        n_non = sum(v[c] for c in NON_ADDITIVE_CLASSES)
        if v["clean"] == 1:
            return n_add == 0 and n_non == 0
        return (n_add + n_non) >= 1 and n_add <= 1 and n_non <= 1

    def active(self) -> List[str]:
        return [c for c, x in zip(DISTORTION_CLASSES, self.vector) if x]


@dataclass
class CdmPair:
    teacher_wave: Waveform
    student_wave: Waveform
    student_label: DistortionLabel
    setup: str
    teacher_spec: DistortionSpec = field(default_factory=DistortionSpec)
    student_spec: DistortionSpec = field(default_factory=DistortionSpec)
