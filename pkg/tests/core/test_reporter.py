import math

import pandas as pd
import pytest

from src.core.database import ArtifactRegistry
from src.core.errors import DependencyError
from src.core.reporter import SummaryReporter, build_summary, flatten_report
from src.logic.evaluation import EvalReport


def _rows(model, seed, clean, dist, inv):
    metrics = {"acc_clean": clean, "acc_2dist": dist, "acc_fsd_like": dist, "acc_dns_like": dist,
               "invariance": inv, "dprobe_exact": 0.5}
    return [{"seed": seed, "model_id": model, "metric": k, "value": v, "source_file": f"{model}-{seed}.json"}
            for k, v in metrics.items()]


@pytest.fixture
def metric_rows():
    return (_rows("S1", 0, 0.8, 0.4, 0.6) + _rows("S1", 1, 0.6, 0.2, 0.8)
            + _rows("T1", 0, 0.9, 0.5, 0.7) + _rows("T1", 1, 0.9, 0.5, 0.7))


def test_summary_averages_over_seeds(metric_rows):
    table = build_summary(metric_rows, ["T1", "S1"], [0, 1])
    assert list(table.summary["model"]) == ["T1", "S1"]
    assert table.cell("S1", "clean") == pytest.approx(0.7)
    assert table.cell("S1", "2dist") == pytest.approx(0.3)
    assert table.cell("S1", "mean_distorted") == pytest.approx(0.3)
    assert table.cell("S1", "invariance") == pytest.approx(0.7)
    assert int(table.summary.loc[table.summary["model"] == "S1", "n_seeds"].iloc[0]) == 2
    assert len(table.per_seed) == 4
    assert set(table.per_seed["report"]) == {"S1-0.json", "S1-1.json", "T1-0.json", "T1-1.json"}


def test_summary_restricts_to_requested_seeds(metric_rows):
    table = build_summary(metric_rows, ["S1"], [1])
    assert table.cell("S1", "clean") == pytest.approx(0.6)
    assert math.isnan(table.cell("S1", "silhouette"))


def test_missing_model_is_a_dependency_error(metric_rows):
    with pytest.raises(DependencyError):
        build_summary(metric_rows, ["T1", "S4"], [0])
    with pytest.raises(DependencyError):
        build_summary([], ["T1"], [0])


def test_flatten_report_names():
    report = EvalReport(model_id="S1", seed=0, eval_seed=1, accuracies={"clean": 1.0, "2dist": 0.5},
                        invariance=0.9, invariance_heldout=0.8,
                        distortion_probe={"exact_match": 0.25, "mean_per_class": 0.75, "per_class": {}})
    flat = flatten_report(report)
    assert flat == {"acc_clean": 1.0, "acc_2dist": 0.5, "invariance": 0.9, "invariance_heldout": 0.8,
                    "dprobe_exact": 0.25, "dprobe_mean_class": 0.75}


def test_reporter_writes_all_formats(tmp_path, metric_rows):
    registry = ArtifactRegistry(tmp_path / "registry.db")
    for r in metric_rows:
        registry.save_metrics(r["seed"], r["model_id"], {r["metric"]: r["value"]}, r["source_file"])
    registry.register("eval", "seed0/S1", "S1-0.json", "abc")

    paths = SummaryReporter(registry, tmp_path / "summary", {"config_hash": "abc", "version": "v0"}).generate(
        ["T1", "S1"], [0, 1])
    csv = pd.read_csv(paths["csv"])
    assert list(csv["model"]) == ["T1", "S1"]
    assert (csv["config_hash"] == "abc").all()
    assert "S1" in paths["text"].read_text()
    sheets = pd.read_excel(paths["xlsx"], sheet_name=None)
    assert set(sheets) == {"Summary", "Per Seed", "Artifact Log"}
    assert len(sheets["Artifact Log"]) == 1
