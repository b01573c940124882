import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from .database import ArtifactRegistry
from .errors import DependencyError
from .file_utils import write_csv

logger = logging.getLogger(__name__)

# metric name in the registry -> column of the summary table
COLUMNS = {
    "acc_clean": "clean",
    "acc_2dist": "2dist",
    "acc_fsd_like": "fsd_like",
    "acc_dns_like": "dns_like",
    "invariance": "invariance",
    "dprobe_exact": "distortion_probe",
    "invariance_heldout": "invariance_heldout",
    "dprobe_mean_class": "distortion_probe_per_class",
    "silhouette": "silhouette",
}
DISTORTED = ("2dist", "fsd_like", "dns_like")


def flatten_report(report) -> Dict[str, float]:
    """EvalReport -> flat {metric: value} rows for the registry."""
    metrics = {f"acc_{cond}": acc for cond, acc in report.accuracies.items()}
    metrics["invariance"] = report.invariance
    metrics["invariance_heldout"] = report.invariance_heldout
    metrics["dprobe_exact"] = report.distortion_probe["exact_match"]
    metrics["dprobe_mean_class"] = report.distortion_probe["mean_per_class"]
    return metrics


@dataclass
class SummaryTable:
    """Seed-averaged rows keyed by model id, plus the per-seed cells they came from."""
    summary: pd.DataFrame
    per_seed: pd.DataFrame

    def to_text(self) -> str:
        return self.summary.to_string(index=False, float_format=lambda v: f"{v:.3f}", na_rep="-")

    def cell(self, model_id: str, column: str) -> float:
        return float(self.summary.loc[self.summary["model"] == model_id, column].iloc[0])


def build_summary(metric_rows: List[Dict[str, Any]], model_order: Sequence[str],
                  seeds: Sequence[int]) -> SummaryTable:
    """
    `metric_rows` are registry metric rows (seed, model_id, metric, value,
    source_file). Rows appear in `model_order`; models with no metrics for
    any requested seed raise DependencyError.
    """
    frame = pd.DataFrame(metric_rows, columns=["seed", "model_id", "metric", "value", "source_file"])
    frame = frame[frame["seed"].isin(list(seeds)) & frame["model_id"].isin(list(model_order))
                  & frame["metric"].isin(list(COLUMNS))]

    missing = [m for m in model_order if m not in set(frame["model_id"])]
    if missing:
        raise DependencyError("eval", ",".join(missing), hint="No evaluation metrics recorded for these rows.")

    per_seed = frame.pivot_table(index=["model_id", "seed"], columns="metric", values="value", aggfunc="first")
    per_seed = per_seed.rename(columns=COLUMNS).reset_index()
    sources = frame[frame["metric"] == "acc_clean"].set_index(["model_id", "seed"])["source_file"]
    per_seed["report"] = [sources.get((m, s), "") for m, s in zip(per_seed["model_id"], per_seed["seed"])]

    for col in COLUMNS.values():
        if col not in per_seed:
            per_seed[col] = np.nan
    per_seed["mean_distorted"] = per_seed[list(DISTORTED)].mean(axis=1)
    value_cols = list(COLUMNS.values()) + ["mean_distorted"]

    rank = {m: i for i, m in enumerate(model_order)}
    per_seed = per_seed.sort_values(by=["model_id", "seed"], key=lambda c: c.map(rank) if c.name == "model_id" else c)
    per_seed = per_seed[["model_id", "seed", *value_cols, "report"]].rename(columns={"model_id": "model"})

    grouped = per_seed.groupby("model", sort=False)
    summary = grouped[value_cols].mean().reset_index()
    summary.insert(1, "n_seeds", grouped.size().values)
    return SummaryTable(summary.reset_index(drop=True), per_seed.reset_index(drop=True))


class SummaryReporter:
    def __init__(self, registry: ArtifactRegistry, output_dir, stamp: Optional[Dict[str, str]] = None):
        self.registry = registry
        self.output_dir = Path(output_dir)
        self.output_dir.mkdir(parents=True, exist_ok=True)
        self.stamp = stamp or {}

    def generate(self, model_order: Sequence[str], seeds: Sequence[int]) -> Dict[str, Path]:
        """
        Writes the summary table three ways:
        1. summary.csv / summary_per_seed.csv (stamped, bit-stable)
        2. summary.txt (human-readable)
        3. summary.xlsx (Summary, Per Seed, Artifact Log sheets)
        """
        table = build_summary(self.registry.fetch_metrics(), model_order, seeds)
        paths = {
            "csv": self.output_dir / "summary.csv",
            "per_seed_csv": self.output_dir / "summary_per_seed.csv",
            "text": self.output_dir / "summary.txt",
        }
        write_csv(paths["csv"], table.summary, self.stamp)
        write_csv(paths["per_seed_csv"], table.per_seed, self.stamp)
        header = " ".join(f"{k}={v}" for k, v in self.stamp.items())
        with open(paths["text"], "w", encoding="utf-8") as f:
            f.write(f"# seeds={list(seeds)} {header}\n{table.to_text()}\n")
        logger.info("Summary table:\n" + table.to_text())

        xlsx = self._write_workbook(table)
        if xlsx is not None:
            paths["xlsx"] = xlsx
        return paths

    def _write_workbook(self, table: SummaryTable) -> Optional[Path]:
        path = self.output_dir / "summary.xlsx"
        conn = self.registry.connect()
        try:
            artifacts = pd.read_sql_query("SELECT * FROM artifacts ORDER BY stage, artifact_key", conn)
        finally:
            conn.close()
        try:
            with pd.ExcelWriter(path, engine="openpyxl") as writer:
                table.summary.to_excel(writer, sheet_name="Summary", index=False)
                table.per_seed.to_excel(writer, sheet_name="Per Seed", index=False)
                artifacts.to_excel(writer, sheet_name="Artifact Log", index=False)
            logger.info(f"Summary workbook written: {path}")
            return path
        except PermissionError:
            logger.error(f"Cannot write {path}: file is open elsewhere. CSV and text tables were still written.")
            return None
