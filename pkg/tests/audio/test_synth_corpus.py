import itertools

import numpy as np
from scipy.signal import welch

from src.audio.models import ALL_BANKS, HELDOUT_BANKS
from src.audio.synth_corpus import (NOISE_RMS, generate_corpus, generate_noise_banks, label_from_phones,
                                    load_corpus, load_noise_banks, phone_inventory, split_of)
from src.core.config_loader import CorpusConfig, NoiseConfig

CFG = CorpusConfig(n_classes=3, n_train=5, n_dev=2, n_test=3, sample_rate=4000, min_duration=0.3, max_duration=0.5)


def test_corpus_is_a_pure_function_of_seed():
    m1, u1 = generate_corpus(CFG, seed=3)
    m2, u2 = generate_corpus(CFG, seed=3)
    m3, _ = generate_corpus(CFG, seed=4)
    assert m1.content_hash == m2.content_hash
    assert m1.content_hash != m3.content_hash
    for a, b in zip(u1, u2):
        np.testing.assert_array_equal(a.wave.samples, b.wave.samples)


def test_splits_durations_and_labels(small_corpus):
    manifest, utterances = small_corpus
    assert {s: len(ids) for s, ids in manifest.splits.items()} == {"train": 10, "dev": 4, "test": 6}
    for u in utterances:
        assert 0.3 - 1e-9 <= u.wave.duration <= 0.5 + 1e-9
        assert 0 <= u.class_label < 3
        assert 2 <= len(u.phones) <= 5
        assert sum(u.durations) == len(u.wave)
        assert np.max(np.abs(u.wave.samples)) < 1.0
    ids = [u.id for u in split_of(utterances, "test")]
    assert ids == sorted(ids)


def test_label_is_dominant_phone_mod_classes():
    assert label_from_phones([1, 2, 1], [10, 30, 25], 3) == 1
    assert label_from_phones([4, 2], [50, 10], 3) == 1
    # ties go to the lower phone index
    assert label_from_phones([5, 2], [10, 10], 3) == 2


def test_inventory_is_a_multiple_of_classes():
    inv = phone_inventory(3, 4000, seed=0)
    assert len(inv) == 9
    assert all(p["f1"] < p["f2"] < 0.4 * 4000 for p in inv)


def test_corpus_survives_disk(tmp_path):
    manifest, utterances = generate_corpus(CFG, seed=5, out_dir=str(tmp_path))
    loaded_manifest, loaded = load_corpus(tmp_path)
    assert loaded_manifest.content_hash == manifest.content_hash
    for a, b in zip(utterances, loaded):
        assert a.id == b.id and a.class_label == b.class_label
        np.testing.assert_array_equal(a.wave.samples, b.wave.samples)


def test_noise_banks(tmp_path):
    banks = generate_noise_banks(NoiseConfig(clips_per_bank=2, clip_seconds=0.5), 4000, seed=1, out_dir=str(tmp_path))
    assert set(banks) == set(ALL_BANKS)
    for name, bank in banks.items():
        assert bank.heldout == (name in HELDOUT_BANKS)
        assert len(bank.clips) == 2
        for clip in bank.clips:
            assert len(clip.wave) == 2000
            assert clip.wave.rms() <= NOISE_RMS + 1e-3
            assert clip.wave.power() > 0
    reloaded = load_noise_banks(tmp_path)
    np.testing.assert_array_equal(reloaded["dns_like"].clips[1].wave.samples, banks["dns_like"].clips[1].wave.samples)
    assert reloaded["fsd_like"].clips[0].tag == "fsd_like#0"


def _band_profile(bank, fs, n_bands=16):
    """Level-free log spectrum of a whole bank, averaged into coarse bands."""
    _, psd = welch(np.concatenate([c.wave.samples for c in bank.clips]), fs=fs, nperseg=128)
    profile = 10.0 * np.log10([band.mean() for band in np.array_split(psd[1:], n_bands)])
    return profile - profile.mean()


def test_noise_banks_are_spectrally_distinguishable():
    cfg = NoiseConfig(clips_per_bank=4, clip_seconds=4.0)
    first = {n: _band_profile(b, 4000) for n, b in generate_noise_banks(cfg, 4000, seed=1).items()}
    second = {n: _band_profile(b, 4000) for n, b in generate_noise_banks(cfg, 4000, seed=2).items()}

    def distance(a, b):
        return float(np.sqrt(np.mean((a - b) ** 2)))

    spread = {n: distance(first[n], second[n]) for n in ALL_BANKS}
    for a, b in itertools.combinations(ALL_BANKS, 2):
        between = distance(first[a], first[b])
        assert between > 0.3, (a, b)
        assert between > max(spread[a], spread[b]), (a, b)

