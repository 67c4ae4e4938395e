"""Corpus file format: one JSON record per line, plus token counting.

Record schema::

    {"sample_id": str, "source_video_ids": [str], "elements": [
        {"kind": "image", "image_ref": str, "timestamp_s": float}
        | {"kind": "asr_text"|"ocr_text"|"end_of_video", "text": str}
     ], "n_images": int, "n_text_tokens": int}

Serialization is reentrant and round-trips samples bit-exactly.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Iterator, Optional

from .models import (
    ELEM_IMAGE,
    TEXT_KINDS,
    InterleavedElement,
    InterleavedSample,
    ValidationError,
)

Tokenizer = Callable[[str], int]


def count_tokens(text: str) -> int:
    """Whitespace token count; the default, dependency-free tokenizer.

    Deterministic, count_tokens("") == 0, and monotone under concatenation
    with a separator. A tokenizer service can be plugged in wherever a
    counting function is accepted.
    """
    if not text:
        return 0
    return len(text.split())


def element_to_dict(elem: InterleavedElement) -> dict:
    if elem.kind == ELEM_IMAGE:
        record = {"kind": elem.kind, "image_ref": elem.image_ref}
        if elem.timestamp_s is not None:
            record["timestamp_s"] = elem.timestamp_s
        return record
    return {"kind": elem.kind, "text": elem.text}


def element_from_dict(record: dict) -> InterleavedElement:
    kind = record.get("kind")
    if kind == ELEM_IMAGE:
        return InterleavedElement(
            kind=kind,
            image_ref=record.get("image_ref"),
            timestamp_s=record.get("timestamp_s"),
        )
    if kind in TEXT_KINDS:
        return InterleavedElement(kind=kind, text=record.get("text"))
    raise ValidationError(f"unknown element kind {kind!r}")


def serialize_sample(
    sample: InterleavedSample,
    eov_token: Optional[str] = None,
    tokenizer: Optional[Tokenizer] = count_tokens,
) -> str:
    """Serialize one sample to its single-line JSON record.

    The sample is validated first; an invariant violation raises
    ValidationError naming the failed invariant.
    """
    sample.validate(eov_token=eov_token, count_tokens=tokenizer)
    record = {
        "sample_id": sample.sample_id,
        "source_video_ids": list(sample.source_video_ids),
        "elements": [element_to_dict(e) for e in sample.elements],
        "n_images": sample.n_images,
        "n_text_tokens": sample.n_text_tokens,
    }
    return json.dumps(record, ensure_ascii=True, separators=(",", ":"))


def deserialize_sample(line: str) -> InterleavedSample:
    try:
        record = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"record is not valid JSON: {exc}") from exc
    if not isinstance(record, dict):
        raise ValidationError("record must be a JSON object")
    try:
        return InterleavedSample(
            sample_id=record["sample_id"],
            source_video_ids=tuple(record["source_video_ids"]),
            elements=tuple(element_from_dict(e) for e in record["elements"]),
            n_images=record["n_images"],
            n_text_tokens=record["n_text_tokens"],
        )
    except KeyError as exc:
        raise ValidationError(f"record missing field {exc}") from exc


def write_corpus(
    samples: Iterable[InterleavedSample],
    path: str | Path,
    eov_token: Optional[str] = None,
    tokenizer: Optional[Tokenizer] = count_tokens,
) -> int:
    """Write samples as line-delimited records; returns the sample count.

    On failure the partial file is removed so reruns start clean.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n = 0
    try:
        with path.open("w", encoding="utf-8") as handle:
            for sample in samples:
                handle.write(serialize_sample(sample, eov_token, tokenizer))
                handle.write("\n")
                n += 1
    except Exception:
        path.unlink(missing_ok=True)
        raise
    return n


def read_corpus(path: str | Path) -> Iterator[InterleavedSample]:
    with Path(path).open("r", encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if line:
                yield deserialize_sample(line)


@dataclass
class CorpusReport:
    """Result of validating a corpus file."""

    n_samples: int = 0
    n_violations: int = 0
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.n_violations == 0


def validate_corpus(
    path: str | Path,
    eov_token: Optional[str] = None,
    tokenizer: Optional[Tokenizer] = count_tokens,
    require_image: bool = True,
) -> CorpusReport:
    """Parse every record and check sample invariants.

    The report's violations are empty iff every record parses and validates.
    An unreadable path raises the underlying I/O error.
    """
    report = CorpusReport()
    with Path(path).open("r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            report.n_samples += 1
            try:
                sample = deserialize_sample(line)
                sample.validate(
                    eov_token=eov_token,
                    count_tokens=tokenizer,
                    require_image=require_image,
                )
            except ValidationError as exc:
                report.n_violations += 1
                report.violations.append(f"line {lineno}: {exc}")
    return report
