import hashlib
import json
import logging
import os
import subprocess
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional

import numpy as np
import pandas as pd

from .. import __version__
from .errors import ConfigHashMismatchError

logger = logging.getLogger(__name__)


def version_string() -> str:
    """git-describe style version, falling back to the package version."""
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            cwd=Path(__file__).resolve().parents[2],
            capture_output=True, text=True, timeout=5,
        )
        if out.returncode == 0 and out.stdout.strip():
            return out.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        pass
    return f"v{__version__}"


def file_hash(path) -> str:
    hasher = hashlib.sha256()
    with open(path, 'rb') as f:
        for chunk in iter(lambda: f.read(65536), b""):
            hasher.update(chunk)
    return hasher.hexdigest()


def arrays_hash(named: Dict[str, np.ndarray], extra: Optional[Dict[str, Any]] = None) -> str:
    """Content hash of named arrays (order-independent), optionally with JSON metadata."""
    hasher = hashlib.sha256()
    for name in sorted(named):
        arr = np.ascontiguousarray(named[name])
        hasher.update(name.encode("utf-8"))
        hasher.update(str(arr.dtype).encode("utf-8"))
        hasher.update(str(arr.shape).encode("utf-8"))
        hasher.update(arr.tobytes())
    if extra is not None:
        hasher.update(json.dumps(extra, sort_keys=True).encode("utf-8"))
    return hasher.hexdigest()


def write_json(path, data: Any):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w", encoding="utf-8") as f:
        json.dump(data, f, indent=2, sort_keys=True)
    os.replace(tmp, path)


def read_json(path) -> Any:
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def append_jsonl(path, rows: Iterable[Dict[str, Any]]):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "a", encoding="utf-8") as f:
        for row in rows:
            f.write(json.dumps(row, sort_keys=True) + "\n")


def read_jsonl(path) -> List[Dict[str, Any]]:
    with open(path, "r", encoding="utf-8") as f:
        return [json.loads(line) for line in f if line.strip()]


def write_csv(path, frame: pd.DataFrame, stamp: Optional[Dict[str, str]] = None):
    """
    Writes a CSV with fixed float formatting (bit-stable across runs).
    `stamp` columns (config hash, version) are appended to every row.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = frame.copy()
    for key, value in (stamp or {}).items():
        frame[key] = value
    frame.to_csv(path, index=False, float_format="%.6f", lineterminator="\n")


class RunDirectory:
    """
    Owns the on-disk layout of one run.

    <root>/
      config.resolved.json        fingerprint + resolved config
      registry.db                 artifact registry
      seed_<s>/corpus|teacher|eval_cache|students|viz
      summary/
    """

    def __init__(self, root_dir: str, fingerprint: str):
        self.root = Path(root_dir)
        self.fingerprint = fingerprint
        self.root.mkdir(parents=True, exist_ok=True)

    # --- CONFIG GUARD ---
    def claim(self, resolved_config: Dict[str, Any], raw_text: str = "", raw_name: str = "config.txt"):
        """
        Echoes the config into the run dir. Refuses to reuse a directory
        that was produced under a different config fingerprint.
        """
        resolved_path = self.root / "config.resolved.json"
        if resolved_path.exists():
            existing = read_json(resolved_path).get("fingerprint")
            if existing != self.fingerprint:
                raise ConfigHashMismatchError(
                    f"Output directory {self.root} belongs to config {existing[:12]}, "
                    f"current config is {self.fingerprint[:12]}. Use a different --out.",
                    {"existing": existing, "current": self.fingerprint},
                )
            return
        write_json(resolved_path, {"fingerprint": self.fingerprint, "version": version_string(),
                                   "config": resolved_config})
        if raw_text:
            with open(self.root / f"config.echo{Path(raw_name).suffix or '.txt'}", "w", encoding="utf-8") as f:
                f.write(raw_text)
        logger.info(f"Claimed run directory {self.root} (config {self.fingerprint[:12]})")

    def stamp(self) -> Dict[str, str]:
        return {"config_hash": self.fingerprint, "version": version_string()}

    # --- PATHS ---
    def seed_dir(self, seed: int) -> Path:
        return self._ensure(self.root / f"seed_{seed}")

    def corpus_dir(self, seed: int) -> Path:
        return self._ensure(self.seed_dir(seed) / "corpus")

    def teacher_dir(self, seed: int) -> Path:
        return self._ensure(self.seed_dir(seed) / "teacher")

    def eval_cache_dir(self, seed: int) -> Path:
        return self._ensure(self.seed_dir(seed) / "eval_cache")

    def model_dir(self, seed: int, model_id: str) -> Path:
        return self._ensure(self.seed_dir(seed) / "models" / _safe(model_id))

    def viz_dir(self, seed: int, model_id: str) -> Path:
        return self._ensure(self.seed_dir(seed) / "viz" / _safe(model_id))

    def summary_dir(self) -> Path:
        return self._ensure(self.root / "summary")

    @property
    def registry_path(self) -> Path:
        return self.root / "registry.db"

    @property
    def log_path(self) -> Path:
        return self.root / "distortbench.log"

    @staticmethod
    def _ensure(path: Path) -> Path:
        path.mkdir(parents=True, exist_ok=True)
        return path


def _safe(model_id: str) -> str:
    """S1' -> S1_prime (file-system safe, still readable)."""
    return model_id.replace("'", "_prime").replace("+", "_").replace(" ", "_")
