import json
import sqlite3
from datetime import datetime
from typing import Any, Dict, List, Optional

from .errors import DependencyError


class ArtifactRegistry:
    """
    sqlite ledger of every artifact a run produces. Stages check their
    upstream dependencies here; the reporter reads eval reports from it.
    """

    def __init__(self, db_path="registry.db"):
        self.db_path = str(db_path)
        self._init_db()

    def connect(self):
        """Returns a raw connection (Used by Reporter)"""
        return sqlite3.connect(self.db_path, timeout=30)

    def _init_db(self):
        """Creates tables if they don't exist."""
        conn = self.connect()
        cursor = conn.cursor()

        # 1. Artifacts Table (one row per stage output)
        cursor.execute('''
            CREATE TABLE IF NOT EXISTS artifacts (
                id INTEGER PRIMARY KEY AUTOINCREMENT,
                stage TEXT,
                artifact_key TEXT,
                path TEXT,
                config_hash TEXT,
                content_hash TEXT,
                status TEXT DEFAULT 'COMPLETE',
                meta_json TEXT,
                last_updated TIMESTAMP,
                UNIQUE(stage, artifact_key)
            )
        ''')

        # 2. Metrics Table (flattened eval report cells)
        cursor.execute('''
            CREATE TABLE IF NOT EXISTS metrics (
                id INTEGER PRIMARY KEY AUTOINCREMENT,
                seed INTEGER,
                model_id TEXT,
                metric TEXT,
                value REAL,
                source_file TEXT,
                UNIQUE(seed, model_id, metric)
            )
        ''')

        conn.commit()
        conn.close()

    def register(self, stage: str, key: str, path: str, config_hash: str,
                 content_hash: str = "", meta: Optional[Dict[str, Any]] = None):
        """Adds or replaces the artifact for (stage, key)."""
        conn = self.connect()
        try:
            conn.execute('''
                INSERT INTO artifacts (stage, artifact_key, path, config_hash, content_hash, status, meta_json, last_updated)
                VALUES (?, ?, ?, ?, ?, 'COMPLETE', ?, ?)
                ON CONFLICT(stage, artifact_key) DO UPDATE SET
                    path=excluded.path, config_hash=excluded.config_hash,
                    content_hash=excluded.content_hash, status='COMPLETE',
                    meta_json=excluded.meta_json, last_updated=excluded.last_updated
            ''', (stage, key, str(path), config_hash, content_hash, json.dumps(meta or {}, sort_keys=True),
                  datetime.now().isoformat()))
            conn.commit()
        finally:
            conn.close()

    def lookup(self, stage: str, key: str) -> Optional[Dict[str, Any]]:
        conn = self.connect()
        conn.row_factory = sqlite3.Row
        try:
            row = conn.execute("SELECT * FROM artifacts WHERE stage = ? AND artifact_key = ?",
                               (stage, key)).fetchone()
            return dict(row) if row else None
        finally:
            conn.close()

    def require(self, stage: str, key: str, config_hash: str) -> Dict[str, Any]:
        """Returns the artifact row or raises DependencyError naming the missing stage."""
        row = self.lookup(stage, key)
        if row is None:
            raise DependencyError(stage, key, hint=f"Run the '{stage}' subcommand first.")
        if row["config_hash"] != config_hash:
            raise DependencyError(stage, key, hint="Artifact is stale (produced under another config).")
        return row

    def is_current(self, stage: str, key: str, config_hash: str) -> bool:
        row = self.lookup(stage, key)
        return row is not None and row["config_hash"] == config_hash

    def save_metrics(self, seed: int, model_id: str, metrics: Dict[str, float], source_file: str):
        if not metrics: return
        conn = self.connect()
        try:
            for name, value in metrics.items():
                conn.execute('''
                    INSERT INTO metrics (seed, model_id, metric, value, source_file) VALUES (?, ?, ?, ?, ?)
                    ON CONFLICT(seed, model_id, metric) DO UPDATE SET value=excluded.value, source_file=excluded.source_file
                ''', (int(seed), model_id, name, float(value), source_file))
            conn.commit()
        finally:
            conn.close()

    def fetch_metrics(self) -> List[Dict[str, Any]]:
        conn = self.connect()
        conn.row_factory = sqlite3.Row
        try:
            rows = conn.execute("SELECT seed, model_id, metric, value, source_file FROM metrics "
                                "ORDER BY seed, model_id, metric").fetchall()
            return [dict(r) for r in rows]
        finally:
            conn.close()
