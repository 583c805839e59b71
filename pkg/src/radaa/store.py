"""Versioned key-value store with check-and-set, optionally file backed.

Each namespace persists as one JSON file, rewritten atomically on every
successful write. Versions start at 1; version 0 means "absent".
"""
from __future__ import annotations

import json
import os
import tempfile
import threading
from pathlib import Path
from typing import Any, Iterator, Optional

NAMESPACES = (
    "clients", "audiences", "par", "codes", "step-up", "tokens", "grants",
    "revocations", "knn-model", "subject-history", "devices",
)

ABSENT = 0


class StoreError(Exception):
    pass


class StoreConflict(StoreError):
    def __init__(self, namespace: str, key: str, current_version: int):
        super().__init__(f"{namespace}/{key}: version is {current_version}")
        self.current_version = current_version


class Store:
    def __init__(self, path: "str | Path | None" = None, namespaces=NAMESPACES):
        self.path = Path(path) if path is not None else None
        self._data: dict[str, dict[str, list]] = {ns: {} for ns in namespaces}
        self._lock = threading.RLock()
        if self.path is not None:
            self.path.mkdir(parents=True, exist_ok=True)
            for ns in self._data:
                f = self._file(ns)
                if f.exists():
                    self._data[ns] = json.loads(f.read_text())

    def _file(self, ns: str) -> Path:
        return self.path / f"{ns}.json"

    def _ns(self, ns: str) -> dict:
        try:
            return self._data[ns]
        except KeyError:
            raise StoreError(f"unknown namespace {ns!r}") from None

    def _persist(self, ns: str) -> None:
        if self.path is None:
            return
        fd, tmp = tempfile.mkstemp(dir=self.path, prefix=f".{ns}.")
        with os.fdopen(fd, "w") as fh:
            json.dump(self._data[ns], fh)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, self._file(ns))

    def get_versioned(self, ns: str, key: str) -> tuple[int, Any]:
        with self._lock:
            entry = self._ns(ns).get(key)
            return (entry[0], entry[1]) if entry else (ABSENT, None)

    def get(self, ns: str, key: str, default: Any = None) -> Any:
        version, value = self.get_versioned(ns, key)
        return default if version == ABSENT else value

    def checked_put(self, ns: str, key: str, expected_prior: int, value: Any) -> int:
        """Write iff the current version equals ``expected_prior``; returns the new version."""
        with self._lock:
            space = self._ns(ns)
            current = space[key][0] if key in space else ABSENT
            if current != expected_prior:
                raise StoreConflict(ns, key, current)
            space[key] = [current + 1, value]
            self._persist(ns)
            return current + 1

    def put(self, ns: str, key: str, value: Any) -> int:
        with self._lock:
            version, _ = self.get_versioned(ns, key)
            return self.checked_put(ns, key, version, value)

    def keys(self, ns: str) -> list[str]:
        with self._lock:
            return list(self._ns(ns))

    def items(self, ns: str) -> Iterator[tuple[str, Any]]:
        with self._lock:
            snapshot = [(k, v[1]) for k, v in self._ns(ns).items()]
        return iter(snapshot)


def checked_put(store: Store, namespace: str, key: str, expected_prior: int, value: Any) -> int:
    return store.checked_put(namespace, key, expected_prior, value)


class AuditLog:
    """Append-only JSONL audit trail; keeps an in-memory copy for inspection."""

    def __init__(self, path: "str | Path | None" = None):
        self.path = Path(path) if path is not None else None
        self.records: list[dict] = []
        self.skew_events = 0
        self._last_ts: Optional[float] = None
        self._lock = threading.Lock()
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            if self.path.exists():
                for line in self.path.read_text().splitlines():
                    if line.strip():
                        self.records.append(json.loads(line))
                if self.records:
                    self._last_ts = self.records[-1]["ts"]

    def append(self, record: dict) -> None:
        for name in ("ts", "actor", "action", "outcome"):
            if name not in record:
                raise ValueError(f"audit record missing {name!r}")
        line = json.dumps(record, sort_keys=True, separators=(",", ":"))
        with self._lock:
            if self._last_ts is not None and record["ts"] < self._last_ts:
                self.skew_events += 1
            else:
                self._last_ts = record["ts"]
            if self.path is not None:
                with self.path.open("a") as fh:
                    fh.write(line + "\n")
            self.records.append(record)

    def __len__(self) -> int:
        return len(self.records)
