import configparser
import dataclasses
import hashlib
import json
import logging
import os
from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Tuple

from .errors import ConfigError

logger = logging.getLogger(__name__)

SETUPS = ("none", "setup1", "setup2", "setup2_same")
SAMPLE_RATES = (4000, 8000, 16000)


@dataclass(frozen=True)
class CorpusConfig:
    n_classes: int = 10
    n_train: int = 400
    n_dev: int = 50
    n_test: int = 200
    sample_rate: int = 8000
    min_duration: float = 0.5
    max_duration: float = 1.0
    min_phones: int = 2
    max_phones: int = 5

    def __post_init__(self):
        if self.n_classes < 2:
            raise ConfigError("n_classes must be >= 2", {"n_classes": self.n_classes})
        if self.sample_rate not in SAMPLE_RATES:
            raise ConfigError(f"sample_rate must be one of {SAMPLE_RATES}", {"sample_rate": self.sample_rate})
        if not (0 < self.min_duration <= self.max_duration):
            raise ConfigError("duration range must be positive and ordered",
                              {"min_duration": self.min_duration, "max_duration": self.max_duration})
        if min(self.n_train, self.n_dev, self.n_test) < 1:
            raise ConfigError("every split needs at least one utterance")
        if not (2 <= self.min_phones <= self.max_phones <= 5):
            raise ConfigError("phone count range must lie within [2, 5]")


@dataclass(frozen=True)
class NoiseConfig:
    clips_per_bank: int = 6
    clip_seconds: float = 2.0

    def __post_init__(self):
        if self.clips_per_bank < 1 or self.clip_seconds <= 0:
            raise ConfigError("noise banks need >= 1 clip of positive length")


@dataclass(frozen=True)
class AugmentPolicy:
    p_clean: float = 0.25
    p_add_only: float = 0.25
    p_nonadd_only: float = 0.25
    p_both: float = 0.25
    snr_low: float = 10.0
    snr_high: float = 20.0
    pitch_cents: float = 300.0
    notch_fmin: float = 200.0
    notch_fmax_ratio: float = 0.4
    notch_q_low: float = 1.0
    notch_q_high: float = 5.0
    room_min: float = 3.0
    room_max: float = 8.0
    absorption_low: float = 0.2
    absorption_high: float = 0.7
    rir_max_order: int = 3

    def __post_init__(self):
        probs = self.probabilities()
        if any(p < 0 for p in probs) or abs(sum(probs) - 1.0) > 1e-9:
            raise ConfigError("policy probabilities must be non-negative and sum to 1",
                              {"probabilities": list(probs)})
        if not (10.0 <= self.snr_low <= self.snr_high <= 20.0):
            raise ConfigError("SNR range must lie within [10, 20] dB")
        if not (0 < abs(self.pitch_cents) <= 1200):
            raise ConfigError("pitch_cents must lie in (0, 1200]")
        if not (0 < self.absorption_low <= self.absorption_high <= 1.0):
            raise ConfigError("absorption range must lie in (0, 1]")
        if self.rir_max_order < 0:
            raise ConfigError("rir_max_order must be >= 0")

    def probabilities(self) -> Tuple[float, float, float, float]:
        return (self.p_clean, self.p_add_only, self.p_nonadd_only, self.p_both)


@dataclass(frozen=True)
class TeacherConfig:
    n_layers: int = 4
    dim: int = 64
    n_heads: int = 4
    ffn_dim: int = 128
    conv_channels: Tuple[int, ...] = (32, 64, 64)
    conv_kernels: Tuple[int, ...] = (4, 4, 4)
    conv_strides: Tuple[int, ...] = (4, 4, 4)
    dropout: float = 0.0
    n_clusters: int = 32
    n_mels: int = 20
    kmeans_iters: int = 25
    mask_prob: float = 0.4
    mask_span: int = 5
    pretrain_steps: int = 1500
    adapt_steps: int = 500
    batch_size: int = 8
    crop_seconds: float = 0.5
    lr: float = 1e-3

    def __post_init__(self):
        if not (len(self.conv_channels) == len(self.conv_kernels) == len(self.conv_strides)):
            raise ConfigError("conv channel/kernel/stride lists must have equal length")
        if self.dim % self.n_heads:
            raise ConfigError("dim must be divisible by n_heads")
        if self.n_clusters < 1 or self.pretrain_steps < 0 or self.adapt_steps < 0:
            raise ConfigError("invalid teacher training sizes")
        if not (0.0 < self.mask_prob < 1.0) or self.mask_span < 1:
            raise ConfigError("mask_prob must be in (0,1) and mask_span >= 1")

    @property
    def total_stride(self) -> int:
        stride = 1
        for s in self.conv_strides:
            stride *= s
        return stride


@dataclass(frozen=True)
class DistillConfig:
    gamma: float = 1.0
    setup: str = "none"
    dat_enabled: bool = False
    lam: float = 1e-2
    lr_student: float = 1e-3
    lr_classifier: float = 1e-3
    steps: int = 2000
    eval_every: int = 100
    batch_size: int = 8
    crop_seconds: float = 0.5
    target_layers: Tuple[int, ...] = (2, 3, 4)
    student_layers: int = 2
    prefetch: int = 2

    def __post_init__(self):
        if self.setup not in SETUPS:
            raise ConfigError(f"setup must be one of {SETUPS}", {"setup": self.setup})
        if self.lam < 0 or self.gamma < 0:
            raise ConfigError("lambda and gamma must be >= 0", {"lam": self.lam, "gamma": self.gamma})
        if self.steps <= 0 or self.eval_every <= 0 or self.batch_size <= 0:
            raise ConfigError("steps, eval_every and batch_size must be > 0")
        if self.student_layers not in (1, 2, 3):
            raise ConfigError("student_layers must be 1, 2 or 3")
        if not self.target_layers:
            raise ConfigError("at least one target layer is required")


@dataclass(frozen=True)
class EvalConfig:
    eval_seed: int = 1234
    probe_steps: int = 300
    probe_lr: float = 1e-2
    distortion_probe_steps: int = 300
    n_splits: int = 100
    tsne_perplexity: float = 30.0
    tsne_iters: int = 750


@dataclass(frozen=True)
class SystemConfig:
    output_dir: str = "./outputs"
    master_seed: int = 0
    log_level: str = "INFO"
    jobs: int = 1


@dataclass(frozen=True)
class RunConfig:
    system: SystemConfig = field(default_factory=SystemConfig)
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    augment: AugmentPolicy = field(default_factory=AugmentPolicy)
    teacher: TeacherConfig = field(default_factory=TeacherConfig)
    distill: DistillConfig = field(default_factory=DistillConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)

    def fingerprint(self) -> str:
        """
        Hash of every experiment knob. The [SYSTEM] section (output dir,
        seed, logging, jobs) is left out: seeds live in their own
        subdirectories of one run.
        """
        payload = self.to_dict()
        del payload["system"]
        canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def with_overrides(self, **sections) -> "RunConfig":
        """`cfg.with_overrides(distill={"setup": "setup2"})` -> new frozen config."""
        updates = {}
        for name, values in sections.items():
            updates[name] = dataclasses.replace(getattr(self, name), **values)
        return dataclasses.replace(self, **updates)


# --- SECTION MAP: INI section -> (attribute, dataclass) ---
_SECTIONS = {
    "SYSTEM": ("system", SystemConfig),
    "CORPUS": ("corpus", CorpusConfig),
    "NOISE": ("noise", NoiseConfig),
    "AUGMENT": ("augment", AugmentPolicy),
    "TEACHER": ("teacher", TeacherConfig),
    "DISTILL": ("distill", DistillConfig),
    "EVAL": ("eval", EvalConfig),
}


def _coerce(raw: Any, default: Any, key: str) -> Any:
    """Casts a raw INI/JSON value to the type of the dataclass default."""
    try:
        if isinstance(default, bool):
            if isinstance(raw, bool):
                return raw
            return str(raw).strip().lower() in ("1", "true", "yes", "on")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            if isinstance(raw, (list, tuple)):
                items = raw
            else:
                items = [p for p in str(raw).replace(" ", "").split(",") if p]
            return tuple(int(p) for p in items)
        return str(raw).strip()
    except (TypeError, ValueError) as e:
        raise ConfigError(f"Bad value for '{key}': {raw!r}", {"key": key}) from e


def _build_section(cls, values: Dict[str, Any], section: str):
    defaults = {f.name: (f.default if f.default is not dataclasses.MISSING else None)
                for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, raw in values.items():
        name = key.lower()
        if name not in defaults:
            raise ConfigError(f"Unknown key '{key}' in section [{section}]", {"section": section, "key": key})
        kwargs[name] = _coerce(raw, defaults[name], f"{section}.{key}")
    return cls(**kwargs)


class Config:
    def __init__(self, filename: Optional[str] = 'config.txt'):
        self.filename = filename
        self.raw_text = ""
        self.sections: Dict[str, Dict[str, Any]] = {}

        if filename is None:
            return
        if not os.path.exists(filename):
            logger.warning(f"Config file '{filename}' not found. Using defaults.")
            return

        with open(filename, "r", encoding="utf-8") as f:
            self.raw_text = f.read()

        if filename.lower().endswith(".json"):
            try:
                data = json.loads(self.raw_text)
            except json.JSONDecodeError as e:
                raise ConfigError(f"Config JSON is malformed: {e}", {"path": filename}) from e
            self.sections = {str(k).upper(): dict(v) for k, v in data.items()}
        else:
            parser = configparser.ConfigParser()
            parser.read_string(self.raw_text)
            self.sections = {s.upper(): dict(parser.items(s)) for s in parser.sections()}

        unknown = set(self.sections) - set(_SECTIONS)
        if unknown:
            raise ConfigError(f"Unknown config sections: {sorted(unknown)}", {"sections": sorted(unknown)})

    def get_section(self, section: str):
        attr, cls = _SECTIONS[section]
        return _build_section(cls, self.sections.get(section, {}), section)

    def to_run_config(self, seed: Optional[int] = None, output_dir: Optional[str] = None) -> RunConfig:
        built = {attr: self.get_section(section) for section, (attr, _) in _SECTIONS.items()}
        cfg = RunConfig(**built)
        system = {}
        if seed is not None:
            system["master_seed"] = int(seed)
        if output_dir is not None:
            system["output_dir"] = output_dir
        if system:
            cfg = cfg.with_overrides(system=system)
        return cfg


def run_config_from_dict(data: Dict[str, Any]) -> RunConfig:
    """Inverse of RunConfig.to_dict (used when reloading config.resolved.json)."""
    built = {}
    for section, (attr, cls) in _SECTIONS.items():
        built[attr] = _build_section(cls, data.get(attr, {}), section)
    return RunConfig(**built)

