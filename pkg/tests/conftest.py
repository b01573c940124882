import numpy as np
import pytest

from src.audio.augmentor import Augmentor
from src.audio.models import Utterance, Waveform
from src.audio.synth_corpus import generate_corpus, generate_noise_banks, split_of
from src.core.config_loader import (CorpusConfig, DistillConfig, EvalConfig, NoiseConfig, RunConfig,
                                    SystemConfig, TeacherConfig)
from src.models.teacher import PseudoLabeler, pretrain_teacher


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run end-to-end training tests")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


# --- TINY CONFIGS ---

TINY_TEACHER = TeacherConfig(
    n_layers=4, dim=16, n_heads=2, ffn_dim=32,
    conv_channels=(8, 16), conv_kernels=(4, 4), conv_strides=(4, 4),
    n_clusters=8, n_mels=12, kmeans_iters=10, mask_span=2,
    pretrain_steps=4, adapt_steps=2, batch_size=4, crop_seconds=0.25, lr=1e-3,
)


def _tiny_run_config(out_dir, **overrides) -> RunConfig:
    cfg = RunConfig(
        system=SystemConfig(output_dir=str(out_dir), master_seed=0),
        corpus=CorpusConfig(n_classes=3, n_train=12, n_dev=4, n_test=12, sample_rate=4000,
                            min_duration=0.3, max_duration=0.5),
        noise=NoiseConfig(clips_per_bank=2, clip_seconds=0.6),
        teacher=TINY_TEACHER,
        distill=DistillConfig(steps=3, eval_every=2, batch_size=3, crop_seconds=0.25, prefetch=0),
        eval=EvalConfig(probe_steps=20, distortion_probe_steps=20, n_splits=4, tsne_perplexity=3.0,
                        tsne_iters=60),
    )
    return cfg.with_overrides(**overrides) if overrides else cfg


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_corpus():
    cfg = CorpusConfig(n_classes=3, n_train=10, n_dev=4, n_test=6, sample_rate=4000,
                       min_duration=0.3, max_duration=0.5)
    manifest, utterances = generate_corpus(cfg, seed=7)
    return manifest, utterances


@pytest.fixture(scope="session")
def banks():
    return generate_noise_banks(NoiseConfig(clips_per_bank=2, clip_seconds=0.6), sample_rate=4000, seed=7)


@pytest.fixture
def augmentor(banks):
    return Augmentor(banks, RunConfig().augment, 4000)


@pytest.fixture(scope="session")
def train_split(small_corpus):
    return split_of(small_corpus[1], "train")


@pytest.fixture
def tone():
    fs = 4000
    t = np.arange(fs // 2) / fs
    return Waveform(0.5 * np.sin(2 * np.pi * 220.0 * t), fs)


@pytest.fixture
def tiny_config(tmp_path):
    """Factory: tiny_config(**section_overrides) -> RunConfig writing under tmp_path."""
    def build(out_dir=None, **overrides):
        return _tiny_run_config(out_dir or tmp_path / "run", **overrides)
    return build


@pytest.fixture
def make_utterance():
    def build(uid: str, samples, label: int = 0, split: str = "train", fs: int = 4000) -> Utterance:
        return Utterance(id=uid, wave=Waveform(samples, fs), class_label=label, split=split)
    return build


@pytest.fixture
def teacher_cfg():
    return TINY_TEACHER


@pytest.fixture(scope="session")
def pseudo_labels(train_split):
    labeler = PseudoLabeler.fit(train_split, TINY_TEACHER, seed=0)
    return labeler, labeler.label_corpus(train_split)


@pytest.fixture(scope="session")
def trained_teacher(train_split, pseudo_labels):
    """A briefly pretrained teacher shared read-only across tests."""
    teacher, _ = pretrain_teacher(train_split, pseudo_labels[1], TINY_TEACHER, seed=0)
    return teacher
