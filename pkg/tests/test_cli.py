import json

import pandas as pd
import pytest

from cli import build_parser, main
from src.core.database import ArtifactRegistry


@pytest.fixture(autouse=True)
def _clean_env(monkeypatch):
    monkeypatch.delenv("DISTORTBENCH_OUT", raising=False)
    monkeypatch.delenv("DISTORTBENCH_LOG_LEVEL", raising=False)


@pytest.fixture
def tiny_json(tmp_path, tiny_config):
    """Writes the tiny run config as a JSON config file."""
    def build(**overrides):
        path = tmp_path / "tiny.json"
        path.write_text(json.dumps(tiny_config(**overrides).to_dict()))
        return str(path)
    return build


def _error(capsys):
    lines = [line for line in capsys.readouterr().err.splitlines() if line.startswith("{")]
    return json.loads(lines[-1])


def test_parser_requires_a_subcommand():
    with pytest.raises(SystemExit):
        build_parser().parse_args([])
    args = build_parser().parse_args(["probe", "--model", "S4'"])
    assert args.model == "S4'" and args.config == "config.txt"


def test_bad_config_exits_with_structured_error(tmp_path, capsys):
    bad = tmp_path / "bad.txt"
    bad.write_text("[UNDERWATER]\nDEPTH = 3\n")
    assert main(["--config", str(bad), "--out", str(tmp_path / "run"), "gen-corpus"]) == 2
    err = _error(capsys)
    assert err["error"] == "config_error"
    assert err["details"]["sections"] == ["UNDERWATER"]


def test_eval_without_probe_names_the_missing_stage(tmp_path, tiny_json, capsys):
    assert main(["--config", tiny_json(), "--out", str(tmp_path / "run"), "eval", "--model", "T1"]) == 2
    err = _error(capsys)
    assert err["error"] == "missing_dependency"
    assert err["details"]["stage"] == "probe"
    assert "'probe' subcommand" in err["message"]


def test_distill_without_teacher(tmp_path, tiny_json, capsys):
    assert main(["--config", tiny_json(), "--out", str(tmp_path / "run"), "distill", "--variant", "S4'"]) == 2
    err = _error(capsys)
    assert err["details"] == {"stage": "adapted_teacher", "key": "seed0/T1'"}


def test_unknown_variant(tmp_path, tiny_json, capsys):
    assert main(["--config", tiny_json(), "--out", str(tmp_path / "run"), "distill", "--variant", "S99"]) == 2
    assert _error(capsys)["error"] == "config_error"


def test_run_directory_is_bound_to_its_config(tmp_path, tiny_json, capsys):
    out = str(tmp_path / "run")
    assert main(["--config", tiny_json(), "--out", out, "gen-corpus"]) == 0
    assert main(["--config", tiny_json(distill={"steps": 5}), "--out", out, "gen-corpus"]) == 2
    assert _error(capsys)["error"] == "config_hash_mismatch"
    # the seed lives outside the fingerprint
    assert main(["--config", tiny_json(), "--out", out, "--seed", "3", "gen-corpus"]) == 0
    assert (tmp_path / "run" / "seed_3" / "corpus").is_dir()


@pytest.mark.slow
def test_end_to_end_pipeline(tmp_path, tiny_json):
    out = tmp_path / "run"
    base = ["--config", tiny_json(), "--out", str(out)]
    for cmd in (["gen-corpus"], ["pretrain-teacher"], ["adapt-teacher"], ["distill", "--variant", "S6'"],
                ["probe", "--model", "S6'"], ["eval", "--model", "S6'"], ["visualize", "--model", "S6'"]):
        assert main(base + cmd) == 0, cmd

    model_dir = out / "seed_0" / "models" / "S6_prime"
    for name in ("student.npz", "classifier.npz", "train_log.jsonl", "probe.npz", "eval_report.json"):
        assert (model_dir / name).exists(), name
    assert (out / "seed_0" / "viz" / "S6_prime" / "tsne.png").exists()

    registry = ArtifactRegistry(out / "registry.db")
    before = registry.lookup("teacher", "seed0/T1")["content_hash"]
    assert main(base + ["pretrain-teacher"]) == 0
    assert registry.lookup("teacher", "seed0/T1")["content_hash"] == before
    assert "Base teacher for seed 0 is current; skipping" in (out / "distortbench.log").read_text()


@pytest.mark.slow
def test_reproduce_matrix(tmp_path, tiny_json):
    grid = tmp_path / "grid.yaml"
    grid.write_text('variants:\n  - {id: "S1", setup: none, dat: false, adapted: false}\n'
                    '  - {id: "S5\'", setup: setup1, dat: true, adapted: true}\n'
                    'depth_ablation:\n  - {id: "S7", setup: none, dat: false, adapted: false, student_layers: 1}\n')
    out = tmp_path / "run"
    assert main(["--config", tiny_json(), "--out", str(out), "--experiments", str(grid),
                 "reproduce-matrix", "--seeds", "0", "1", "--depth-ablation"]) == 0

    summary = pd.read_csv(out / "summary" / "summary.csv")
    assert list(summary["model"]) == ["T1", "T1'", "LOGMEL", "S1", "S5'", "S7"]
    assert set(summary["n_seeds"]) == {2}
    assert summary["clean"].between(0.0, 1.0).all()
    per_seed = pd.read_csv(out / "summary" / "summary_per_seed.csv")
    assert len(per_seed) == 12
    assert (out / "summary" / "summary.xlsx").exists()
