"""Append-only per-stage manifests enabling idempotent resume.

One JSONL file per stage under ``<workdir>/manifests/``. Each line is a
terminal ManifestEntry; a stage skips inputs whose (input_key, input_hash)
already appear. A truncated trailing line (crash mid-write) is discarded on
the next open, so a killed run resumes cleanly.
"""
from __future__ import annotations

import hashlib
import json
import threading
from dataclasses import asdict
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterator, Optional

from .models import ManifestEntry

FIXED_CLOCK = "1970-01-01T00:00:00Z"


def content_hash(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def file_hash(path: str | Path) -> str:
    digest = hashlib.sha256()
    with Path(path).open("rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _utc_now() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


class ManifestStore:
    """Single-writer store for one stage's manifest file.

    ``deterministic=True`` pins completed_at to a constant so reruns with
    mocks produce byte-identical manifests.
    """

    def __init__(self, workdir: str | Path, stage_name: str, deterministic: bool = False):
        self.stage_name = stage_name
        self.deterministic = deterministic
        self.path = Path(workdir) / "manifests" / f"{stage_name}.jsonl"
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        self._entries: dict[str, ManifestEntry] = {}
        self._load()

    def _load(self) -> None:
        if not self.path.exists():
            return
        raw = self.path.read_bytes()
        valid_upto = 0
        for line in raw.splitlines(keepends=True):
            if not line.endswith(b"\n"):
                break  # crash left a partial line; rewind over it
            text = line.decode("utf-8").strip()
            if text:
                entry = self._entry_from_json(text)
                if entry is None:
                    break
                self._entries[entry.input_key] = entry
            valid_upto += len(line)
        if valid_upto != len(raw):
            with self.path.open("r+b") as handle:
                handle.truncate(valid_upto)

    @staticmethod
    def _entry_from_json(text: str) -> Optional[ManifestEntry]:
        try:
            record = json.loads(text)
            return ManifestEntry(
                input_key=record["input_key"],
                input_hash=record["input_hash"],
                output_keys=tuple(record.get("output_keys", ())),
                drop_reason=record.get("drop_reason"),
                completed_at=record.get("completed_at", ""),
            )
        except (json.JSONDecodeError, KeyError, TypeError):
            return None

    def is_done(self, input_key: str, input_hash: str) -> bool:
        entry = self._entries.get(input_key)
        return entry is not None and entry.input_hash == input_hash

    def get(self, input_key: str) -> Optional[ManifestEntry]:
        return self._entries.get(input_key)

    def entries(self) -> Iterator[ManifestEntry]:
        return iter(self._entries.values())

    def record(
        self,
        input_key: str,
        input_hash: str,
        output_keys: tuple[str, ...] = (),
        drop_reason: Optional[str] = None,
    ) -> ManifestEntry:
        completed_at = FIXED_CLOCK if self.deterministic else _utc_now()
        entry = ManifestEntry(
            input_key=input_key,
            input_hash=input_hash,
            output_keys=tuple(output_keys),
            drop_reason=drop_reason,
            completed_at=completed_at,
        ).validate()
        with self._lock:
            if input_key in self._entries:
                raise ValueError(
                    f"manifest {self.stage_name}: duplicate input_key {input_key!r}"
                )
            with self.path.open("a", encoding="utf-8") as handle:
                handle.write(json.dumps(asdict(entry), separators=(",", ":")))
                handle.write("\n")
                handle.flush()
            self._entries[input_key] = entry
        return entry

    def record_note(self, key: str, payload: dict) -> None:
        """Append a free-form summary entry (e.g. emit-stage statistics)."""
        self.record(
            input_key=key,
            input_hash=content_hash(
                json.dumps(payload, sort_keys=True).encode("utf-8")
            ),
            output_keys=(json.dumps(payload, sort_keys=True),),
        )

    def kept_keys(self) -> list[str]:
        return [e.input_key for e in self._entries.values() if e.drop_reason is None]

    def dropped(self) -> dict[str, str]:
        return {
            e.input_key: e.drop_reason
            for e in self._entries.values()
            if e.drop_reason is not None
        }
