"""Embedded key-value stores backed by sqlite (file or in-memory)."""

from __future__ import annotations

import json
import sqlite3
import threading
from pathlib import Path
from typing import Callable


class KVStore:
    """Linearizable single-key operations; one lock serializes all access."""

    def __init__(self, path: str | Path = ":memory:"):
        self._db = sqlite3.connect(str(path), check_same_thread=False, isolation_level=None)
        if str(path) != ":memory:":
            self._db.execute("PRAGMA journal_mode=WAL")
        self._db.execute("CREATE TABLE IF NOT EXISTS kv (k TEXT PRIMARY KEY, v BLOB NOT NULL)")
        self._lock = threading.RLock()

    def get(self, key: str) -> bytes | None:
        with self._lock:
            row = self._db.execute("SELECT v FROM kv WHERE k = ?", (key,)).fetchone()
        return None if row is None else bytes(row[0])

    def put(self, key: str, value: bytes) -> None:
        with self._lock:
            self._db.execute("INSERT OR REPLACE INTO kv (k, v) VALUES (?, ?)", (key, value))

    def put_new(self, key: str, value: bytes) -> bool:
        """Insert unless present; returns whether the value was written."""
        with self._lock:
            cur = self._db.execute("INSERT OR IGNORE INTO kv (k, v) VALUES (?, ?)", (key, value))
            return cur.rowcount == 1

    def delete(self, key: str) -> bool:
        with self._lock:
            return self._db.execute("DELETE FROM kv WHERE k = ?", (key,)).rowcount == 1

    def scan(self, prefix: str) -> list[tuple[str, bytes]]:
        hi = prefix + "\uffff"
        with self._lock:
            rows = self._db.execute("SELECT k, v FROM kv WHERE k >= ? AND k < ? ORDER BY k", (prefix, hi)).fetchall()
        return [(k, bytes(v)) for k, v in rows]

    def get_json(self, key: str):
        raw = self.get(key)
        return None if raw is None else json.loads(raw)

    def put_json(self, key: str, value) -> None:
        self.put(key, json.dumps(value).encode())

    def update_json(self, key: str, fn: Callable[[dict | None], dict | None]):
        """Atomic read-modify-write; ``fn`` returning None deletes the key."""
        with self._lock:
            new = fn(self.get_json(key))
            if new is None:
                self.delete(key)
            else:
                self.put_json(key, new)
            return new

    def close(self) -> None:
        with self._lock:
            self._db.close()


class Stores:
    """The three isolated stores of the orchestrator."""

    def __init__(self, data_dir: str | Path | None = None):
        if data_dir is None:
            self.data, self.keys, self.meta = KVStore(), KVStore(), KVStore()
        else:
            d = Path(data_dir)
            d.mkdir(parents=True, exist_ok=True)
            self.data = KVStore(d / "data.db")
            self.keys = KVStore(d / "keys.db")
            self.meta = KVStore(d / "meta.db")

    def close(self) -> None:
        for s in (self.data, self.keys, self.meta):
            s.close()
