import json

import pytest

from src.core.config_loader import (AugmentPolicy, Config, CorpusConfig, DistillConfig, RunConfig,
                                    run_config_from_dict)
from src.core.errors import ConfigError

INI = """
[SYSTEM]
OUTPUT_DIR = ./somewhere
MASTER_SEED = 3

[CORPUS]
N_CLASSES = 4
SAMPLE_RATE = 16000

[DISTILL]
SETUP = setup2
DAT_ENABLED = yes
TARGET_LAYERS = 2, 4
"""


def test_ini_values_are_coerced(tmp_path):
    path = tmp_path / "config.txt"
    path.write_text(INI)
    cfg = Config(str(path)).to_run_config()

    assert cfg.system.master_seed == 3
    assert cfg.corpus.n_classes == 4
    assert cfg.corpus.sample_rate == 16000
    assert cfg.distill.setup == "setup2"
    assert cfg.distill.dat_enabled is True
    assert cfg.distill.target_layers == (2, 4)


def test_cli_overrides_take_precedence(tmp_path):
    path = tmp_path / "config.txt"
    path.write_text(INI)
    cfg = Config(str(path)).to_run_config(seed=11, output_dir="elsewhere")
    assert cfg.system.master_seed == 11
    assert cfg.system.output_dir == "elsewhere"


def test_json_config_matches_ini(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"corpus": {"n_classes": 4, "sample_rate": 16000},
                                "distill": {"setup": "setup2", "dat_enabled": True, "target_layers": [2, 4]}}))
    cfg = Config(str(path)).to_run_config()
    assert cfg.distill.target_layers == (2, 4)
    assert cfg.distill.dat_enabled is True


def test_missing_file_falls_back_to_defaults(tmp_path):
    cfg = Config(str(tmp_path / "absent.txt")).to_run_config()
    assert cfg == RunConfig()


@pytest.mark.parametrize("text", [
    "[CORPUS]\nN_CLASES = 4\n",
    "[MYSTERY]\nX = 1\n",
    "[CORPUS]\nN_CLASSES = many\n",
    "[DISTILL]\nSETUP = setup9\n",
    "[CORPUS]\nSAMPLE_RATE = 22050\n",
    # seeds live in [SYSTEM] only
    "[DISTILL]\nSEED = 3\n",
])
def test_bad_configs_are_rejected(tmp_path, text):
    path = tmp_path / "config.txt"
    path.write_text(text)
    with pytest.raises(ConfigError):
        Config(str(path)).to_run_config()


def test_policy_probabilities_must_sum_to_one():
    with pytest.raises(ConfigError):
        AugmentPolicy(p_clean=0.5, p_add_only=0.5, p_nonadd_only=0.5, p_both=0.0)
    with pytest.raises(ConfigError):
        AugmentPolicy(p_clean=-0.1, p_add_only=0.5, p_nonadd_only=0.3, p_both=0.3)


def test_section_invariants():
    with pytest.raises(ConfigError):
        CorpusConfig(min_duration=1.0, max_duration=0.5)
    with pytest.raises(ConfigError):
        DistillConfig(student_layers=4)
    with pytest.raises(ConfigError):
        DistillConfig(lam=-1.0)


def test_fingerprint_ignores_system_section():
    base = RunConfig()
    other = base.with_overrides(system={"master_seed": 9, "output_dir": "/tmp/x", "jobs": 4})
    assert base.fingerprint() == other.fingerprint()


def test_fingerprint_tracks_experiment_knobs():
    base = RunConfig()
    assert base.fingerprint() != base.with_overrides(distill={"setup": "setup1"}).fingerprint()
    assert base.fingerprint() != base.with_overrides(eval={"eval_seed": 1}).fingerprint()


def test_resolved_dict_round_trips():
    cfg = RunConfig().with_overrides(distill={"setup": "setup2", "target_layers": (1, 3)})
    assert run_config_from_dict(cfg.to_dict()) == cfg
