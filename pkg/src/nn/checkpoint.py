"""
Checkpoint container: an .npz of named float64 arrays plus one JSON
metadata entry. Hashes are taken over contents, not the zip bytes.
"""
import json
import logging
import os
from pathlib import Path
from typing import Any, Dict, Tuple

import numpy as np

from ..core.errors import ConfigError
from ..core.file_utils import arrays_hash

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
META_KEY = "__meta__"


def checkpoint_hash(arrays: Dict[str, np.ndarray], meta: Dict[str, Any]) -> str:
    return arrays_hash(arrays, extra=meta)


def save_checkpoint(path, arrays: Dict[str, np.ndarray], meta: Dict[str, Any]) -> str:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = dict(meta, format_version=FORMAT_VERSION)
    payload = {name: np.asarray(a, dtype=np.float64) for name, a in arrays.items()}
    payload[META_KEY] = np.array(json.dumps(meta, sort_keys=True))

    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        np.savez(f, **payload)
    os.replace(tmp, path)
    digest = checkpoint_hash({k: v for k, v in payload.items() if k != META_KEY}, meta)
    logger.debug(f"Saved checkpoint {path.name} ({digest[:12]})")
    return digest


def load_checkpoint(path) -> Tuple[Dict[str, np.ndarray], Dict[str, Any]]:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"Checkpoint not found: {path}", {"path": str(path)})
    with np.load(path, allow_pickle=False) as data:
        if META_KEY not in data.files:
            raise ConfigError(f"Checkpoint {path.name} has no metadata entry", {"path": str(path)})
        meta = json.loads(str(data[META_KEY]))
        arrays = {k: data[k].copy() for k in data.files if k != META_KEY}
    if meta.get("format_version") != FORMAT_VERSION:
        raise ConfigError(f"Unsupported checkpoint format {meta.get('format_version')}",
                          {"path": str(path), "expected": FORMAT_VERSION})
    return arrays, meta
