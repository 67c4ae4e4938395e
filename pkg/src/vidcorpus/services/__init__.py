"""Clients for the external model services plus deterministic mocks."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .base import (
    EmbeddingVector,
    ProtocolError,
    ServiceError,
    TranscribeResult,
    TransportError,
    cosine,
    retry_call,
)
from .http import HttpServiceClient, MockServiceServer
from .mocks import (
    DROP,
    KEEP,
    MockCaptioner,
    MockImageEmbedder,
    MockMetadataJudge,
    MockOcrReader,
    MockPerplexity,
    MockRefiner,
    MockScorer,
    MockTextEmbedder,
    MockTranscriber,
)

DEFAULT_JUDGES = ("judge_a", "judge_b")


@dataclass
class ServiceBundle:
    """Everything a pipeline run needs to talk to, mock or HTTP-backed.

    ``judge_ids`` are the identities queried for video-level criteria
    filtering (two by default). ``ocr_readers`` supports multiple OCR
    backends; the first is the default.
    """

    transcriber: object
    refiner: object
    scorer: object
    captioner: object
    text_embedder: object
    ocr_readers: list = field(default_factory=list)
    perplexity: Optional[object] = None
    image_embedder: Optional[object] = None
    metadata_judge: Optional[object] = None
    judge_ids: tuple[str, ...] = DEFAULT_JUDGES


def mock_services(
    fixtures_dir: str | Path | None = None,
    judge_ids: tuple[str, ...] = DEFAULT_JUDGES,
) -> ServiceBundle:
    """Offline bundle: every service is a deterministic mock, optionally
    fed from fixture tables under ``fixtures_dir``."""
    fixtures = Path(fixtures_dir) if fixtures_dir else None
    ppl_reference = None
    if fixtures is not None:
        ref_path = fixtures / "ppl_reference.txt"
        if ref_path.exists():
            ppl_reference = ref_path.read_text(encoding="utf-8")
    return ServiceBundle(
        transcriber=MockTranscriber(fixtures),
        refiner=MockRefiner(),
        scorer=MockScorer(fixtures),
        captioner=MockCaptioner(fixtures),
        text_embedder=MockTextEmbedder(),
        ocr_readers=[MockOcrReader(fixtures)],
        perplexity=MockPerplexity(ppl_reference) if ppl_reference else MockPerplexity(),
        image_embedder=MockImageEmbedder(),
        metadata_judge=MockMetadataJudge(fixtures),
        judge_ids=judge_ids,
    )


def http_services(
    base_url: str,
    token: str = "",
    judge_ids: tuple[str, ...] = DEFAULT_JUDGES,
    judge_threshold: int = 3,
) -> ServiceBundle:
    """Bundle where every role is served by the shared wire protocol."""
    client = HttpServiceClient(base_url, token=token, judge_threshold=judge_threshold)
    return ServiceBundle(
        transcriber=client,
        refiner=client,
        scorer=client,
        captioner=client,
        text_embedder=client,
        ocr_readers=[client],
        perplexity=client,
        image_embedder=client,
        metadata_judge=client,
        judge_ids=judge_ids,
    )


__all__ = [
    "DEFAULT_JUDGES",
    "DROP",
    "EmbeddingVector",
    "HttpServiceClient",
    "KEEP",
    "MockCaptioner",
    "MockImageEmbedder",
    "MockMetadataJudge",
    "MockOcrReader",
    "MockPerplexity",
    "MockRefiner",
    "MockScorer",
    "MockServiceServer",
    "MockTextEmbedder",
    "MockTranscriber",
    "ProtocolError",
    "ServiceBundle",
    "ServiceError",
    "TranscribeResult",
    "TransportError",
    "cosine",
    "http_services",
    "mock_services",
    "retry_call",
]
