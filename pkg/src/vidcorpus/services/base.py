"""Service interfaces: error taxonomy, embedding type, retry policy.

Transport errors (network-level, retryable) are distinct from protocol
errors (malformed or contract-violating responses, never retried).
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from ..models import AsrSegment

UNIT_NORM_TOL = 1e-6


class ServiceError(Exception):
    """Base class for service failures."""


class TransportError(ServiceError):
    """The service could not be reached; safe to retry idempotent calls."""


class ProtocolError(ServiceError):
    """The service answered with a malformed or contract-violating body."""


@dataclass(frozen=True)
class EmbeddingVector:
    """Unit-norm embedding; clients must normalize before constructing."""

    values: tuple[float, ...]

    @property
    def dim(self) -> int:
        return len(self.values)

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=np.float64)

    def validate(self) -> "EmbeddingVector":
        norm = float(np.linalg.norm(self.array))
        if abs(norm - 1.0) > UNIT_NORM_TOL:
            raise ProtocolError(f"embedding norm {norm} not within {UNIT_NORM_TOL} of 1")
        return self

    @classmethod
    def from_array(cls, values: np.ndarray) -> "EmbeddingVector":
        arr = np.asarray(values, dtype=np.float64)
        norm = float(np.linalg.norm(arr))
        if norm == 0.0:
            raise ValueError("cannot normalize a zero vector")
        return cls(values=tuple((arr / norm).tolist()))


def cosine(a: EmbeddingVector, b: EmbeddingVector) -> float:
    return float(np.dot(a.array, b.array))


@dataclass(frozen=True)
class TranscribeResult:
    segments: tuple[AsrSegment, ...]
    language: str


def check_segments_ordered(segments: tuple[AsrSegment, ...]) -> tuple[AsrSegment, ...]:
    """Transcription contract: segments time-ordered and non-overlapping."""
    prev_end = None
    for seg in segments:
        if seg.end_s <= seg.start_s:
            raise ProtocolError(f"segment span invalid: [{seg.start_s}, {seg.end_s}]")
        if prev_end is not None and seg.start_s < prev_end:
            raise ProtocolError(
                f"segments overlap: start {seg.start_s} before previous end {prev_end}"
            )
        prev_end = seg.end_s
    return segments


def retry_call(fn, attempts: int = 3, base_delay_s: float = 0.05):
    """Call fn(), retrying only TransportError with exponential backoff."""
    last: Exception | None = None
    for attempt in range(attempts):
        try:
            return fn()
        except TransportError as exc:
            last = exc
            if attempt + 1 < attempts:
                time.sleep(base_delay_s * (2**attempt))
    assert last is not None
    raise last
