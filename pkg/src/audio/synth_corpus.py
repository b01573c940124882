import logging
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from ..core.config_loader import CorpusConfig, NoiseConfig
from ..core.errors import ConfigError
from ..core.file_utils import arrays_hash, read_json, write_json
from ..core.seeding import substream
from .models import ALL_BANKS, HELDOUT_BANKS, CorpusManifest, NoiseBank, NoiseClip, Utterance, Waveform
from .wavio import PCM_SCALE, wav_read, wav_write

logger = logging.getLogger(__name__)

SPLITS = ("train", "dev", "test")
FORMANT_BANDWIDTH = 120.0
NOISE_RMS = 0.1


def quantize_pcm16(x: np.ndarray) -> np.ndarray:
    """Snaps samples to the PCM16 grid so in-memory audio equals its WAV file."""
    return np.clip(np.round(np.clip(x, -1.0, 1.0) * PCM_SCALE), -32768, 32767) / PCM_SCALE


# ==========================================
#            PHONE INVENTORY
# ==========================================

def phone_inventory(n_classes: int, sample_rate: int, seed: int) -> List[Dict[str, float]]:
    """
    One harmonic 'phone' per symbol: distinct fundamental and two formants.
    Inventory size is the smallest multiple of n_classes that is >= 8.
    """
    n_phones = n_classes * int(np.ceil(8 / n_classes))
    rng = substream(seed, "corpus", "phones")
    f0s = np.linspace(95.0, 260.0, n_phones)
    rng.shuffle(f0s)
    top = 0.38 * sample_rate
    f1 = rng.uniform(250.0, 0.12 * sample_rate + 250.0, size=n_phones)
    f2 = rng.uniform(0.15 * sample_rate + 400.0, top, size=n_phones)
    return [{"f0": float(f0s[i]), "f1": float(f1[i]), "f2": float(f2[i])} for i in range(n_phones)]


def _formant_gain(freqs: np.ndarray, phone: Dict[str, float]) -> np.ndarray:
    g = np.full_like(freqs, 0.05)
    for key in ("f1", "f2"):
        g += np.exp(-0.5 * ((freqs - phone[key]) / FORMANT_BANDWIDTH) ** 2)
    return g


def synthesize_phone(phone: Dict[str, float], n_samples: int, fs: int, f0_scale: float,
                     rng: np.random.Generator) -> np.ndarray:
    f0 = phone["f0"] * f0_scale
    harmonics = np.arange(1, int(0.45 * fs / f0) + 1)
    freqs = harmonics * f0
    amps = _formant_gain(freqs, phone) / np.sqrt(harmonics)
    phases = rng.uniform(0.0, 2.0 * np.pi, size=harmonics.size)
    t = np.arange(n_samples) / fs
    seg = (amps[:, None] * np.sin(2.0 * np.pi * freqs[:, None] * t[None, :] + phases[:, None])).sum(axis=0)

    ramp = min(n_samples // 2, int(0.008 * fs))
    if ramp > 0:
        env = 0.5 - 0.5 * np.cos(np.pi * np.arange(ramp) / ramp)
        seg[:ramp] *= env
        seg[-ramp:] *= env[::-1]
    return seg


def _plan_utterance(cfg: CorpusConfig, n_phones: int, rng: np.random.Generator) -> Tuple[List[int], List[int], int]:
    """Returns (phone sequence, per-phone sample counts, anchor phone)."""
    lo = int(round(cfg.min_duration * cfg.sample_rate))
    hi = int(round(cfg.max_duration * cfg.sample_rate))
    n_samples = int(rng.integers(lo, hi + 1))
    count = int(rng.integers(cfg.min_phones, cfg.max_phones + 1))

    anchor = int(rng.integers(0, n_phones))
    others = [int(p) for p in rng.choice([p for p in range(n_phones) if p != anchor], size=count - 1)]
    anchor_share = rng.uniform(0.5, 0.65)
    weights = rng.uniform(0.7, 1.3, size=count - 1)
    shares = np.concatenate([[anchor_share], (1.0 - anchor_share) * weights / weights.sum()])

    position = int(rng.integers(0, count))
    order = others[:position] + [anchor] + others[position:]
    share_order = list(shares[1:position + 1]) + [shares[0]] + list(shares[position + 1:])

    sizes = np.floor(np.asarray(share_order) * n_samples).astype(int)
    sizes[position] += n_samples - sizes.sum()
    return order, sizes.tolist(), anchor


def label_from_phones(phones: List[int], durations: List[int], n_classes: int) -> int:
    """Class = (phone with the longest total duration) mod n_classes."""
    totals: Dict[int, int] = {}
    for p, d in zip(phones, durations):
        totals[p] = totals.get(p, 0) + d
    dominant = max(sorted(totals), key=lambda p: totals[p])
    return dominant % n_classes


# ==========================================
#                CORPUS
# ==========================================

def synthesize_utterance(uid: str, split: str, cfg: CorpusConfig, inventory, seed: int) -> Utterance:
    rng = substream(seed, "corpus", "utt", uid)
    phones, sizes, _ = _plan_utterance(cfg, len(inventory), rng)
    f0_scale = rng.uniform(0.97, 1.03)
    parts = [synthesize_phone(inventory[p], n, cfg.sample_rate, f0_scale, rng) for p, n in zip(phones, sizes)]
    x = np.concatenate(parts)
    peak = np.max(np.abs(x))
    x = x / peak * rng.uniform(0.5, 0.9) if peak > 0 else x
    wave = Waveform(quantize_pcm16(x), cfg.sample_rate)
    return Utterance(id=uid, wave=wave, class_label=label_from_phones(phones, sizes, cfg.n_classes),
                     split=split, phones=phones, durations=sizes)


def generate_corpus(cfg: CorpusConfig, seed: int, out_dir: Optional[str] = None
                    ) -> Tuple[CorpusManifest, List[Utterance]]:
    """Pure function of (cfg, seed); optionally persists WAVs + manifest.json under out_dir."""
    inventory = phone_inventory(cfg.n_classes, cfg.sample_rate, seed)
    sizes = {"train": cfg.n_train, "dev": cfg.n_dev, "test": cfg.n_test}

    utterances: List[Utterance] = []
    for split in SPLITS:
        for i in range(sizes[split]):
            utterances.append(synthesize_utterance(f"{split}-{i:05d}", split, cfg, inventory, seed))

    entries = []
    for u in utterances:
        entries.append({"id": u.id, "split": u.split, "label": u.class_label, "n_samples": len(u.wave),
                        "phones": u.phones, "durations": u.durations, "path": f"wav/{u.id}.wav"})
    manifest = CorpusManifest(
        seed=seed, n_classes=cfg.n_classes, sample_rate=cfg.sample_rate,
        duration_range=(cfg.min_duration, cfg.max_duration),
        splits={s: [u.id for u in utterances if u.split == s] for s in SPLITS},
        entries=entries,
        recipe={"phones": inventory, "label_rule": "dominant_phone_mod_n_classes",
                "formant_bandwidth_hz": FORMANT_BANDWIDTH},
        content_hash=arrays_hash({u.id: u.wave.samples for u in utterances}),
    )

    if out_dir is not None:
        root = Path(out_dir)
        for u in utterances:
            wav_write(root / "wav" / f"{u.id}.wav", u.wave)
        write_json(root / "manifest.json", manifest.to_dict())
        logger.info(f"Wrote {len(utterances)} utterances to {root} (hash {manifest.content_hash[:12]})")
    return manifest, utterances


def load_corpus(corpus_dir) -> Tuple[CorpusManifest, List[Utterance]]:
    root = Path(corpus_dir)
    manifest = CorpusManifest.from_dict(read_json(root / "manifest.json"))
    utterances = []
    for e in manifest.entries:
        wave = wav_read(root / e["path"])
        utterances.append(Utterance(id=e["id"], wave=wave, class_label=e["label"], split=e["split"],
                                    phones=e["phones"], durations=e["durations"]))
    return manifest, utterances


def split_of(utterances: List[Utterance], split: str) -> List[Utterance]:
    return sorted((u for u in utterances if u.split == split), key=lambda u: u.id)


# ==========================================
#              NOISE BANKS
# ==========================================

def colored_noise(n: int, exponent: float, rng: np.random.Generator) -> np.ndarray:
    """Gaussian noise with power spectrum ~ f^-exponent (0 white, 1 pink, 2 brown, -1 blue)."""
    spec = np.fft.rfft(rng.normal(size=n))
    f = np.fft.rfftfreq(n)
    f[0] = f[1]
    spec *= f ** (-exponent / 2.0)
    return np.fft.irfft(spec, n)


def _tone_bursts(n: int, fs: int, rng: np.random.Generator) -> np.ndarray:
    out = np.zeros(n)
    for _ in range(max(1, int(n / fs * 4))):
        dur = int(rng.uniform(0.05, 0.2) * fs)
        start = int(rng.integers(0, max(1, n - dur)))
        freq = rng.uniform(300.0, 0.35 * fs)
        t = np.arange(dur) / fs
        burst = np.sin(2 * np.pi * freq * t) * np.hanning(dur)
        out[start:start + dur] += burst[: n - start]
    return out


def _impulse_train(n: int, fs: int, rng: np.random.Generator) -> np.ndarray:
    out = np.zeros(n)
    n_events = rng.poisson(8.0 * n / fs) + 1
    decay = np.exp(-np.arange(int(0.03 * fs)) / (0.004 * fs))
    for _ in range(n_events):
        start = int(rng.integers(0, n))
        ev = rng.normal(size=decay.size) * decay * rng.uniform(2.0, 5.0)
        out[start:start + ev.size] += ev[: n - start]
    return out


def _bank_recipe(name: str, n: int, fs: int, rng: np.random.Generator) -> np.ndarray:
    if name == "gaussian":
        return rng.normal(size=n)
    if name == "musan_like":
        pink = colored_noise(n, 1.0, rng)
        return pink / pink.std() + 1.5 * _tone_bursts(n, fs, rng)
    if name == "wham_like":
        brown = colored_noise(n, 2.0, rng)
        t = np.arange(n) / fs
        env = (1.0 + 0.8 * np.sin(2 * np.pi * rng.uniform(2.0, 6.0) * t + rng.uniform(0, 2 * np.pi))) \
            * (1.0 + 0.5 * np.sin(2 * np.pi * rng.uniform(0.5, 1.5) * t + rng.uniform(0, 2 * np.pi)))
        return brown / brown.std() * env
    if name == "fsd_like":
        blue = colored_noise(n, -1.0, rng)
        return 0.3 * blue / blue.std() + _impulse_train(n, fs, rng)
    if name == "dns_like":
        base = colored_noise(n, 0.5, rng)
        t = np.arange(n) / fs
        hum = sum(np.sin(2 * np.pi * 60.0 * k * t + rng.uniform(0, 2 * np.pi)) / k for k in (1, 2, 3))
        return base / base.std() + 0.8 * hum
    raise ConfigError(f"Unknown noise bank '{name}'")


def generate_noise_banks(cfg: NoiseConfig, sample_rate: int, seed: int,
                         out_dir: Optional[str] = None) -> Dict[str, NoiseBank]:
    n = int(round(cfg.clip_seconds * sample_rate))
    banks: Dict[str, NoiseBank] = {}
    for name in ALL_BANKS:
        heldout = name in HELDOUT_BANKS
        clips = []
        for i in range(cfg.clips_per_bank):
            rng = substream(seed, "noise", name, i)
            x = _bank_recipe(name, n, sample_rate, rng)
            x = x - x.mean() if name != "gaussian" else x
            scale = min(NOISE_RMS / np.sqrt(np.mean(x ** 2)), 0.99 / np.max(np.abs(x)))
            clips.append(NoiseClip(Waveform(quantize_pcm16(x * scale), sample_rate), name, i, heldout))
        banks[name] = NoiseBank(name=name, clips=clips, heldout=heldout)

    if out_dir is not None:
        root = Path(out_dir)
        for bank in banks.values():
            for clip in bank.clips:
                wav_write(root / "noise" / bank.name / f"{clip.index:03d}.wav", clip.wave)
        logger.info(f"Wrote {len(banks)} noise banks to {root / 'noise'}")
    return banks


def load_noise_banks(corpus_dir) -> Dict[str, NoiseBank]:
    root = Path(corpus_dir) / "noise"
    banks = {}
    for name in ALL_BANKS:
        heldout = name in HELDOUT_BANKS
        files = sorted((root / name).glob("*.wav"))
        clips = [NoiseClip(wav_read(p), name, i, heldout) for i, p in enumerate(files)]
        banks[name] = NoiseBank(name=name, clips=clips, heldout=heldout)
    return banks
