import logging
import os
from dataclasses import dataclass
from typing import Any, Dict, List, Optional

import yaml

from .config_loader import SETUPS, RunConfig
from .errors import ConfigError

logger = logging.getLogger(__name__)

TEACHER_ROWS = ("T1", "T1'")
LOGMEL_ROW = "LOGMEL"


@dataclass(frozen=True)
class Variant:
    """One student row of the matrix: a [DISTILL] override plus teacher choice."""
    id: str
    setup: str = "none"
    dat: bool = False
    adapted: bool = False
    student_layers: Optional[int] = None
    lam: Optional[float] = None

    def __post_init__(self):
        if self.setup not in SETUPS:
            raise ConfigError(f"Variant '{self.id}': setup must be one of {SETUPS}", {"variant": self.id})
        if self.id in TEACHER_ROWS or self.id == LOGMEL_ROW:
            raise ConfigError(f"Variant id '{self.id}' is reserved", {"variant": self.id})

    @property
    def teacher_id(self) -> str:
        return "T1'" if self.adapted else "T1"

    def apply(self, cfg: RunConfig) -> RunConfig:
        overrides: Dict[str, Any] = {"setup": self.setup, "dat_enabled": self.dat}
        if self.student_layers is not None:
            overrides["student_layers"] = self.student_layers
        if self.lam is not None:
            overrides["lam"] = self.lam
        return cfg.with_overrides(distill=overrides)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Variant":
        unknown = set(data) - {"id", "setup", "dat", "adapted", "student_layers", "lam"}
        if unknown or "id" not in data:
            raise ConfigError(f"Bad variant entry {data!r}", {"unknown_keys": sorted(unknown)})
        return cls(id=str(data["id"]), setup=str(data.get("setup", "none")), dat=bool(data.get("dat", False)),
                   adapted=bool(data.get("adapted", False)),
                   student_layers=int(data["student_layers"]) if data.get("student_layers") is not None else None,
                   lam=float(data["lam"]) if data.get("lam") is not None else None)


class VariantGrid:
    """Loads the variant list that `reproduce-matrix` runs from experiments.yaml."""

    def __init__(self, filepath: Optional[str] = None):
        if filepath is None:
            current_dir = os.path.dirname(os.path.abspath(__file__))
            filepath = os.path.join(os.path.dirname(os.path.dirname(current_dir)), "experiments.yaml")
        self.filepath = filepath
        data = self._load()
        self.variants = self._parse(data.get("variants", []), "variants")
        self.depth_ablation = self._parse(data.get("depth_ablation", []), "depth_ablation")
        ids = [v.id for v in self.variants + self.depth_ablation]
        dupes = sorted({i for i in ids if ids.count(i) > 1})
        if dupes:
            raise ConfigError(f"Duplicate variant ids in {self.filepath}: {dupes}", {"duplicates": dupes})
        logger.info(f"Loaded {len(self.variants)} variants (+{len(self.depth_ablation)} depth ablation) "
                    f"from {self.filepath}")

    def _load(self) -> Dict[str, Any]:
        if not os.path.exists(self.filepath):
            raise ConfigError(f"Experiment grid not found: {self.filepath}", {"path": self.filepath})
        try:
            with open(self.filepath, "r", encoding="utf-8") as f:
                return yaml.safe_load(f) or {}
        except yaml.YAMLError as e:
            raise ConfigError(f"Failed to parse {self.filepath}: {e}", {"path": self.filepath}) from e

    @staticmethod
    def _parse(entries: List[Dict[str, Any]], block: str) -> List[Variant]:
        if not isinstance(entries, list):
            raise ConfigError(f"'{block}' must be a list of variant entries")
        return [Variant.from_dict(e) for e in entries]

    def selected(self, depth_ablation: bool = False) -> List[Variant]:
        return self.variants + (self.depth_ablation if depth_ablation else [])

    def get(self, variant_id: str) -> Variant:
        for v in self.variants + self.depth_ablation:
            if v.id == variant_id:
                return v
        raise ConfigError(f"Unknown variant '{variant_id}'", {"known": [v.id for v in self.variants]})
