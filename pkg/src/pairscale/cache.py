"""Append-only JSONL store of comparison records, keyed for resumption."""

from __future__ import annotations

import json
import logging
import threading
from pathlib import Path
from typing import Iterable, Iterator

from .core import ComparisonRecord

log = logging.getLogger(__name__)

CacheKey = tuple  # (attribute, model_id, (id, id), repeat_index)


def dump_record(record: ComparisonRecord) -> str:
    return json.dumps(record.to_dict(), ensure_ascii=False, sort_keys=True)


def iter_records(path: str | Path) -> Iterator[ComparisonRecord]:
    path = Path(path)
    if not path.exists():
        return
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                yield ComparisonRecord.from_dict(json.loads(line))
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                # torn writes from an interrupted run
                log.warning("%s:%d: skipping corrupt record (%s)", path, lineno, exc)


def latest_by_key(records: Iterable[ComparisonRecord]) -> dict[CacheKey, ComparisonRecord]:
    """One record per cache key; a usable record always shadows an unusable one,
    otherwise the later record wins."""
    out: dict[CacheKey, ComparisonRecord] = {}
    for rec in records:
        prev = out.get(rec.cache_key)
        if prev is None or rec.outcome.usable or not prev.outcome.usable:
            out[rec.cache_key] = rec
    return out


class ComparisonCache:
    """Thread-safe appender over a JSONL file. Existing lines are never rewritten."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._records = latest_by_key(iter_records(self.path))
        if self.path.exists() and self.path.stat().st_size:
            with self.path.open("rb+") as fh:
                fh.seek(-1, 2)
                if fh.read(1) != b"\n":
                    fh.write(b"\n")

    def __len__(self) -> int:
        return len(self._records)

    def has_usable(self, key: CacheKey) -> bool:
        rec = self._records.get(key)
        return rec is not None and rec.outcome.usable

    def append(self, record: ComparisonRecord) -> None:
        line = dump_record(record) + "\n"
        with self._lock:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with self.path.open("a", encoding="utf-8") as fh:
                fh.write(line)
                fh.flush()
            prev = self._records.get(record.cache_key)
            if prev is None or record.outcome.usable or not prev.outcome.usable:
                self._records[record.cache_key] = record

    def records(self) -> list[ComparisonRecord]:
        with self._lock:
            return list(self._records.values())
