"""
Distortion policy: samples distortion plans, applies them, and builds the
teacher/student input pairs for each cross-distortion setup.

Held-out banks (fsd_like, dns_like) are reachable only through
`build_eval_condition`; the training path never sees them.
"""
import logging
from collections import Counter
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np

from ..core.config_loader import SETUPS, AugmentPolicy
from ..core.errors import ConfigError, PolicyViolationError, SignalError
from . import dsp
from .models import (HELDOUT_BANKS, IN_DOMAIN_BANKS, NON_ADDITIVE_CLASSES,
                     AdditiveSpec, CdmPair, DistortionLabel, DistortionSpec, NoiseBank,
                     NonAdditiveSpec, Waveform)

logger = logging.getLogger(__name__)

CATEGORIES = ("clean", "additive", "non_additive", "both")
EVAL_CONDITIONS = ("clean", "2dist", "fsd_like", "dns_like")
VIZ_CONDITIONS = ("clean", "musan_like", "gaussian", "reverberation", "fsd_like", "dns_like")
ROOM_MARGIN = 0.5


@dataclass
class EvalSample:
    wave: Waveform
    spec: DistortionSpec
    label: DistortionLabel  # held-out banks map to their proxy bit, diagnostic only


def _frozen(params: Dict) -> Tuple:
    return tuple(sorted((k, tuple(v) if isinstance(v, (list, tuple, np.ndarray)) else v)
                        for k, v in params.items()))


# ==========================================
#              SAMPLING
# ==========================================

def sample_room(rng: np.random.Generator, policy: AugmentPolicy) -> Dict:
    room = rng.uniform(policy.room_min, policy.room_max, size=3)
    src = rng.uniform(ROOM_MARGIN, room - ROOM_MARGIN)
    mic = rng.uniform(ROOM_MARGIN, room - ROOM_MARGIN)
    return {
        "room": tuple(float(v) for v in room),
        "source": tuple(float(v) for v in src),
        "mic": tuple(float(v) for v in mic),
        "absorption": float(rng.uniform(policy.absorption_low, policy.absorption_high)),
        "max_order": int(policy.rir_max_order),
    }


def sample_additive(rng: np.random.Generator, policy: AugmentPolicy, bank: str, n_clips: int,
                    with_rir: bool = False) -> AdditiveSpec:
    clip_index = int(rng.integers(0, max(1, n_clips)))
    snr = float(rng.uniform(policy.snr_low, policy.snr_high))
    position = float(rng.random())
    rir = _frozen(sample_room(rng, policy)) if with_rir else None
    return AdditiveSpec(bank=bank, clip_index=clip_index, snr_db=snr, crop_position=position,
                        rir_applied=with_rir, rir_params=rir)


def sample_non_additive(rng: np.random.Generator, policy: AugmentPolicy, sample_rate: int,
                        kind: Optional[str] = None) -> NonAdditiveSpec:
    if kind is None:
        kind = NON_ADDITIVE_CLASSES[int(rng.integers(0, len(NON_ADDITIVE_CLASSES)))]
    if kind == "reverberation":
        params = sample_room(rng, policy)
    elif kind == "pitch_shift":
        cents = float(rng.uniform(-policy.pitch_cents, policy.pitch_cents))
        params = {"cents": cents if cents != 0.0 else policy.pitch_cents}
    elif kind == "band_reject":
        f_center = float(rng.uniform(policy.notch_fmin, policy.notch_fmax_ratio * sample_rate))
        q = float(rng.uniform(policy.notch_q_low, policy.notch_q_high))
        params = {"f_center": f_center, "bandwidth": f_center / q}
    else:
        raise ConfigError(f"Unknown non-additive distortion '{kind}'")
    return NonAdditiveSpec(kind=kind, params=_frozen(params))


def sample_spec(rng: np.random.Generator, policy: AugmentPolicy, sample_rate: int = 8000,
                n_clips: int = 1, provenance: str = "") -> DistortionSpec:
    """One draw of the training policy: clean / additive / non-additive / both."""
    probs = np.asarray(policy.probabilities(), dtype=np.float64)
    if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-9:
        raise ConfigError("policy probabilities must be non-negative and sum to 1")
    category = CATEGORIES[int(rng.choice(len(CATEGORIES), p=probs))]

    additive = non_additive = None
    if category in ("additive", "both"):
        bank = IN_DOMAIN_BANKS[int(rng.integers(0, len(IN_DOMAIN_BANKS)))]
        additive = sample_additive(rng, policy, bank, n_clips)
    if category in ("non_additive", "both"):
        non_additive = sample_non_additive(rng, policy, sample_rate)
    return DistortionSpec(additive=additive, non_additive=non_additive, rng_provenance=provenance)


def category_of(spec: DistortionSpec) -> str:
    if spec.is_clean:
        return "clean"
    if spec.additive is not None and spec.non_additive is not None:
        return "both"
    return "additive" if spec.additive is not None else "non_additive"


# ==========================================
#              APPLICATION
# ==========================================

def rir_from_params(params: Dict, fs: int):
    return dsp.image_method_rir(params["room"], params["source"], params["mic"],
                                params["absorption"], params["max_order"], fs)


def apply_non_additive(x: Waveform, spec: NonAdditiveSpec) -> Waveform:
    p = dict(spec.params)
    if spec.kind == "reverberation":
        return dsp.convolve_trunc(x, rir_from_params(p, x.sample_rate))
    if spec.kind == "pitch_shift":
        return dsp.pitch_shift(x, p["cents"])
    if spec.kind == "band_reject":
        return dsp.band_reject(x, p["f_center"], p["bandwidth"])
    raise ConfigError(f"Unknown non-additive distortion '{spec.kind}'")


def apply_additive(x: Waveform, spec: AdditiveSpec, banks: Dict[str, NoiseBank]) -> Waveform:
    if spec.bank not in banks:
        raise PolicyViolationError(f"Noise bank '{spec.bank}' is not available on this path",
                                   {"bank": spec.bank, "available": sorted(banks)})
    bank = banks[spec.bank]
    clip = bank.clips[spec.clip_index % len(bank.clips)]
    if spec.rir_applied:
        x = dsp.convolve_trunc(x, rir_from_params(dict(spec.rir_params), x.sample_rate))
    span = max(len(clip.wave), len(x)) - len(x) + 1
    if len(clip.wave) < len(x):
        span = len(clip.wave)
    offset = min(int(np.floor(spec.crop_position * span)), span - 1)
    return dsp.mix_at_snr(x, clip.wave, spec.snr_db, offset=offset)


def apply_spec(utt: Waveform, spec: DistortionSpec, banks: Dict[str, NoiseBank],
               training: bool = True) -> Tuple[Waveform, DistortionLabel]:
    """
    Non-additive effect first, then additive mixing (SNR measured against
    the already-altered speech). Training path rejects held-out banks.
    """
    if training and spec.additive is not None and spec.additive.bank in HELDOUT_BANKS:
        raise PolicyViolationError(f"Held-out bank '{spec.additive.bank}' requested on the training path",
                                   {"bank": spec.additive.bank, "provenance": spec.rng_provenance})
    x = utt
    if spec.non_additive is not None:
        x = apply_non_additive(x, spec.non_additive)
    if spec.additive is not None:
        x = apply_additive(x, spec.additive, banks)
    if len(x) != len(utt):
        raise SignalError(f"Distortion changed length {len(utt)} -> {len(x)}")
    return x, DistortionLabel.from_spec(spec)


# ==========================================
#              AUGMENTOR
# ==========================================

class Augmentor:
    """
    Binds a policy to the noise banks. Training calls only see in-domain
    banks; `clip_tags_served` records the provenance of every clip used.
    """

    def __init__(self, banks: Dict[str, NoiseBank], policy: AugmentPolicy, sample_rate: int):
        self.policy = policy
        self.sample_rate = sample_rate
        self._train_banks = {n: b for n, b in banks.items() if not b.heldout}
        self._eval_banks = dict(banks)
        self.clip_tags_served: Counter = Counter()

    @property
    def n_clips(self) -> int:
        return min(len(b.clips) for b in self._train_banks.values())

    def sample_spec(self, rng: np.random.Generator, provenance: str = "") -> DistortionSpec:
        return sample_spec(rng, self.policy, self.sample_rate, self.n_clips, provenance)

    def apply(self, wave: Waveform, spec: DistortionSpec) -> Tuple[Waveform, DistortionLabel]:
        out, label = apply_spec(wave, spec, self._train_banks, training=True)
        if spec.additive is not None:
            bank = self._train_banks[spec.additive.bank]
            self.clip_tags_served[bank.clips[spec.additive.clip_index % len(bank.clips)].tag] += 1
        return out, label

    def make_cdm_pair(self, wave: Waveform, setup: str, rng: np.random.Generator) -> CdmPair:
        if setup not in SETUPS:
            raise ConfigError(f"setup must be one of {SETUPS}", {"setup": setup})
        clean = DistortionSpec(rng_provenance="clean")
        if setup == "none":
            return CdmPair(wave, wave, DistortionLabel.from_spec(clean), setup, clean, clean)

        student_spec = self.sample_spec(rng, provenance=f"{setup}/student")
        student_wave, label = self.apply(wave, student_spec)
        if setup == "setup1":
            return CdmPair(wave, student_wave, label, setup, clean, student_spec)
        if setup == "setup2_same":
            return CdmPair(student_wave, student_wave, label, setup, student_spec, student_spec)

        teacher_spec = self.sample_spec(rng, provenance=f"{setup}/teacher")
        teacher_wave, _ = self.apply(wave, teacher_spec)
        return CdmPair(teacher_wave, student_wave, label, setup, teacher_spec, student_spec)

    def build_eval_condition(self, wave: Waveform, condition: str, rng: np.random.Generator) -> EvalSample:
        """Evaluation path: the only place held-out banks are used."""
        policy = self.policy
        if condition == "clean":
            spec = DistortionSpec(rng_provenance="eval/clean")
        elif condition == "2dist":
            spec = self.sample_spec(rng, provenance="eval/2dist")
        elif condition in ("musan_like", "gaussian", "fsd_like"):
            n = len(self._eval_banks[condition].clips)
            spec = DistortionSpec(additive=sample_additive(rng, policy, condition, n),
                                  rng_provenance=f"eval/{condition}")
        elif condition == "dns_like":
            n = len(self._eval_banks["dns_like"].clips)
            spec = DistortionSpec(additive=sample_additive(rng, policy, "dns_like", n, with_rir=True),
                                  rng_provenance="eval/dns_like")
        elif condition == "reverberation":
            spec = DistortionSpec(non_additive=sample_non_additive(rng, policy, self.sample_rate, "reverberation"),
                                  rng_provenance="eval/reverberation")
        else:
            raise ConfigError(f"Unknown evaluation condition '{condition}'")
        out, label = apply_spec(wave, spec, self._eval_banks, training=False)
        return EvalSample(out, spec, label)
