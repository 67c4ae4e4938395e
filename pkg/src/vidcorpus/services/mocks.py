"""Deterministic offline stand-ins for the model services.

Every mock is a pure function of its inputs plus fixture tables loaded from
a directory, so two pipeline runs over the same inputs are byte-identical.
Fixture tables are JSON files keyed by content hash (first 16 hex chars of
sha256); see each class for its subdirectory and fallback rule.
"""
from __future__ import annotations

import hashlib
import io
import json
import math
import wave
from collections import Counter
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from ..models import AsrSegment, CriteriaScores, FILLER_TOKENS, KnowledgePoint, VideoMeta
from .base import EmbeddingVector, TranscribeResult, check_segments_ordered

ImageLike = Union[str, Path, np.ndarray]


def media_key(obj: ImageLike) -> str:
    """Stable 16-hex-char key for an image/audio payload (array or file)."""
    digest = hashlib.sha256()
    if isinstance(obj, np.ndarray):
        arr = np.ascontiguousarray(obj)
        digest.update(str(arr.dtype).encode())
        digest.update(str(arr.shape).encode())
        digest.update(arr.tobytes())
    else:
        digest.update(Path(obj).read_bytes())
    return digest.hexdigest()[:16]


def text_key(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


def _load_fixture(fixtures_dir: Optional[Path], sub: str, key: str) -> Optional[dict]:
    if fixtures_dir is None:
        return None
    path = fixtures_dir / sub / f"{key}.json"
    if not path.exists():
        return None
    return json.loads(path.read_text(encoding="utf-8"))


class MockTranscriber:
    """Plays back transcripts from ``transcribe/<audio_key>.json`` fixtures.

    Unknown audio gets a synthesized transcript derived from the audio hash
    (5 s segments of pseudo-words), so ad-hoc runs stay deterministic.
    """

    def __init__(self, fixtures_dir: Optional[Path] = None):
        self.fixtures_dir = fixtures_dir

    def transcribe(self, audio_ref: str | Path) -> TranscribeResult:
        return self.transcribe_bytes(Path(audio_ref).read_bytes())

    def transcribe_bytes(self, data: bytes) -> TranscribeResult:
        key = hashlib.sha256(data).hexdigest()[:16]
        fixture = _load_fixture(self.fixtures_dir, "transcribe", key)
        if fixture is not None:
            segments = tuple(
                AsrSegment(
                    start_s=s["start_s"],
                    end_s=s["end_s"],
                    text=s["text"],
                    silent=s.get("silent", False),
                )
                for s in fixture["segments"]
            )
            return TranscribeResult(
                segments=check_segments_ordered(segments),
                language=fixture.get("language", "unknown"),
            )
        duration = _wav_duration_s(data)
        if duration <= 0:
            return TranscribeResult(segments=(), language="unknown")
        segments = []
        start = 0.0
        i = 0
        while start < duration:
            end = min(start + 5.0, duration)
            words = " ".join(f"w{key[(i + j) % 16]}{j}" for j in range(6))
            segments.append(AsrSegment(start_s=start, end_s=end, text=words))
            start = end
            i += 1
        return TranscribeResult(segments=tuple(segments), language="en")


def _wav_duration_s(data: bytes) -> float:
    if not data:
        return 0.0
    try:
        with wave.open(io.BytesIO(data), "rb") as handle:
            rate = handle.getframerate()
            return handle.getnframes() / float(rate) if rate else 0.0
    except (wave.Error, EOFError):
        return 0.0


class MockRefiner:
    """Normalization rule standing in for LLM rewriting.

    Drops filler tokens, collapses immediately repeated words, and
    normalizes whitespace. Falls back to the whitespace-normalized input if
    stripping would empty the text (refined text must be non-empty).
    """

    def refine_text(self, text: str) -> str:
        if not text or not text.strip():
            raise ValueError("refine_text requires non-empty text")
        kept: list[str] = []
        for token in text.split():
            if token.lower().strip(".,!?") in FILLER_TOKENS:
                continue
            if kept and token == kept[-1]:
                continue
            kept.append(token)
        if not kept:
            return " ".join(text.split())
        return " ".join(kept)


class MockScorer:
    """Criteria judgments from ``score/<text_key>[__<judge_id>].json``.

    Off-fixture scores come from fixed heuristics (filler ratio, token
    overlap with the knowledge point, repetition rate); these are stand-ins
    and claim nothing about any real judge prompt.
    """

    def __init__(self, fixtures_dir: Optional[Path] = None):
        self.fixtures_dir = fixtures_dir

    def score_transcript(
        self,
        text: str,
        point: KnowledgePoint | str,
        judge_id: str = "judge_a",
    ) -> CriteriaScores:
        if not text:
            raise ValueError("score_transcript requires non-empty text")
        key = text_key(text)
        fixture = _load_fixture(self.fixtures_dir, "score", f"{key}__{judge_id}")
        if fixture is None:
            fixture = _load_fixture(self.fixtures_dir, "score", key)
        if fixture is not None:
            return CriteriaScores(
                relevance=fixture["relevance"],
                knowledge_density=fixture["knowledge_density"],
                transcription_quality=fixture["transcription_quality"],
                judge_id=judge_id,
            ).validate()
        return self._heuristic(text, point, judge_id)

    @staticmethod
    def _heuristic(text: str, point: KnowledgePoint | str, judge_id: str) -> CriteriaScores:
        tokens = [t.lower().strip(".,!?") for t in text.split()]
        n = len(tokens)
        fillers = sum(1 for t in tokens if t in FILLER_TOKENS)
        filler_ratio = fillers / n if n else 1.0

        if filler_ratio > 0.5:
            density = 1
        else:
            distinct = len({t for t in tokens if t not in FILLER_TOKENS})
            density = min(5, 2 + distinct // 8)

        point_text = point.id if isinstance(point, KnowledgePoint) else str(point)
        point_tokens = {t.lower() for t in point_text.replace("/", " ").split()}
        shared = len(point_tokens & set(tokens))
        relevance = min(5, 1 + 2 * shared)

        top = max(Counter(tokens).values()) if tokens else 0
        rep_ratio = top / n if n else 1.0
        if rep_ratio <= 0.15:
            quality = 5
        elif rep_ratio <= 0.3:
            quality = 4
        elif rep_ratio <= 0.5:
            quality = 2
        else:
            quality = 1

        return CriteriaScores(
            relevance=relevance,
            knowledge_density=density,
            transcription_quality=quality,
            judge_id=judge_id,
        ).validate()


class MockCaptioner:
    """Clip captions from ``caption/<frames_key>.json`` fixture tables.

    The key digests the per-frame hashes in order; unknown clips get a
    deterministic low-content caption (which the visual filter then drops).
    """

    def __init__(self, fixtures_dir: Optional[Path] = None):
        self.fixtures_dir = fixtures_dir

    def caption_clip(self, frame_refs: Sequence[ImageLike]) -> str:
        if not frame_refs:
            raise ValueError("caption_clip requires at least one frame")
        key = frames_key(frame_refs)
        fixture = _load_fixture(self.fixtures_dir, "caption", key)
        if fixture is not None:
            return fixture["caption"]
        return f"a static scene {key[:8]}"


def frames_key(frame_refs: Sequence[ImageLike]) -> str:
    joined = "\n".join(media_key(f) for f in frame_refs)
    return hashlib.sha256(joined.encode("utf-8")).hexdigest()[:16]


class MockTextEmbedder:
    """Hashed bag-of-words projection: deterministic, unit-norm vectors.

    Tokens hash (blake2b) into ``dim`` buckets; texts with no shared bucket
    embed exactly orthogonally, identical texts identically.
    """

    def __init__(self, dim: int = 256):
        self.dim = dim

    def embed_texts(self, texts: Sequence[str]) -> list[EmbeddingVector]:
        return [self._embed_one(t) for t in texts]

    def _embed_one(self, text: str) -> EmbeddingVector:
        if not text:
            raise ValueError("embed_texts requires non-empty texts")
        vec = np.zeros(self.dim, dtype=np.float64)
        for token in text.lower().split():
            vec[self.token_bucket(token)] += 1.0
        return EmbeddingVector.from_array(vec)

    def token_bucket(self, token: str) -> int:
        digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
        return int.from_bytes(digest, "little") % self.dim


class MockImageEmbedder:
    """Perceptual projection: 8x8 block means plus a bias term, unit norm.

    Identical images embed identically; images whose coarse 8x8 structure
    matches embed (nearly) identically, mimicking a semantic encoder that
    cannot tell fine-grained slide changes apart.
    """

    GRID = 8

    def embed_images(self, images: Sequence[ImageLike]) -> list[EmbeddingVector]:
        return [self._embed_one(img) for img in images]

    def _embed_one(self, image: ImageLike) -> EmbeddingVector:
        pixels = load_gray(image)
        h, w = pixels.shape
        rows = np.linspace(0, h, self.GRID + 1).astype(int)
        cols = np.linspace(0, w, self.GRID + 1).astype(int)
        blocks = np.zeros((self.GRID, self.GRID), dtype=np.float64)
        for i in range(self.GRID):
            for j in range(self.GRID):
                r0, r1 = rows[i], max(rows[i + 1], rows[i] + 1)
                c0, c1 = cols[j], max(cols[j + 1], cols[j] + 1)
                blocks[i, j] = float(np.mean(pixels[r0:r1, c0:c1]))
        vec = np.concatenate([blocks.ravel() / 255.0, [1.0]])
        return EmbeddingVector.from_array(vec)


def load_gray(image: ImageLike) -> np.ndarray:
    """Image file or array to an HxW float64 intensity grid in [0, 255]."""
    from ..ssim import to_grayscale

    if isinstance(image, np.ndarray):
        return to_grayscale(image)
    from PIL import Image

    with Image.open(image) as img:
        return to_grayscale(np.asarray(img.convert("L"), dtype=np.float64))


class MockOcrReader:
    """OCR results from ``ocr/<image_key>.json``; off-fixture frames read as
    empty text with mid-scale informativeness 3.

    Stored images are keyed by their decoded grayscale pixel content, not
    the encoded file bytes, so fixture keys survive encoder differences.
    """

    def __init__(self, fixtures_dir: Optional[Path] = None):
        self.fixtures_dir = fixtures_dir

    def ocr_frame(self, image_ref: ImageLike) -> dict:
        if isinstance(image_ref, np.ndarray):
            return self._lookup(media_key(image_ref))
        return self._lookup(media_key(load_gray_u8(image_ref)))

    def ocr_bytes(self, data: bytes) -> dict:
        from PIL import Image

        with Image.open(io.BytesIO(data)) as img:
            pixels = np.asarray(img.convert("L"), dtype=np.uint8)
        return self._lookup(media_key(pixels))

    def _lookup(self, key: str) -> dict:
        fixture = _load_fixture(self.fixtures_dir, "ocr", key)
        if fixture is not None:
            info = int(fixture["informativeness"])
            if not 1 <= info <= 5:
                raise ValueError(f"informativeness {info} outside [1, 5]")
            return {"text": fixture.get("text", ""), "informativeness": info}
        return {"text": "", "informativeness": 3}


def load_gray_u8(image_ref: str | Path) -> np.ndarray:
    from PIL import Image

    with Image.open(image_ref) as img:
        return np.asarray(img.convert("L"), dtype=np.uint8)


DEFAULT_PPL_REFERENCE = (
    "the angle of a triangle is measured in degrees and the sum of the "
    "interior angles equals one hundred eighty degrees so each equation "
    "follows from the definition of a straight line and we can solve for "
    "the unknown value by writing the equation and checking the result"
)


class MockPerplexity:
    """exp(mean surprisal) under a unigram model fit on a reference corpus.

    Pure MLE for in-vocabulary tokens so the identities are exact (a
    single-word corpus scores its own word at 1.0; a corpus with V distinct
    single-count words scores any in-vocab text at V). Out-of-vocabulary
    tokens get a fixed floor 1/(2*total); this is a deterministic scorer,
    not a proper probability distribution.
    """

    def __init__(self, reference_text: str = DEFAULT_PPL_REFERENCE):
        tokens = reference_text.lower().split()
        if not tokens:
            raise ValueError("reference corpus must be non-empty")
        self.counts = Counter(tokens)
        self.total = len(tokens)

    def perplexity(self, text: str) -> float:
        tokens = text.lower().split()
        if not tokens:
            raise ValueError("perplexity requires non-empty text")
        floor = 1.0 / (2.0 * self.total)
        total_surprisal = 0.0
        for token in tokens:
            count = self.counts.get(token, 0)
            p = count / self.total if count else floor
            total_surprisal += -math.log(p)
        return math.exp(total_surprisal / len(tokens))


KEEP = "keep"
DROP = "drop"
DROP_REASONS = ("irrelevant", "inappropriate", "illegal", "other")


class MockMetadataJudge:
    """Metadata review from ``metadata/<video_id>.json`` fixtures.

    Off-fixture videos keep unless the title/description share no token
    with the knowledge point (then drop as irrelevant).
    """

    def __init__(self, fixtures_dir: Optional[Path] = None):
        self.fixtures_dir = fixtures_dir

    def review_metadata(self, meta: VideoMeta, point: KnowledgePoint | str) -> tuple[str, Optional[str]]:
        fixture = _load_fixture(self.fixtures_dir, "metadata", meta.video_id)
        if fixture is not None:
            decision = fixture["decision"]
            if decision == KEEP:
                return KEEP, None
            reason = fixture.get("reason", "other")
            if reason not in DROP_REASONS:
                reason = "other"
            return DROP, reason
        point_text = point.id if isinstance(point, KnowledgePoint) else str(point)
        point_tokens = {t.lower() for t in point_text.replace("/", " ").split()}
        blob = f"{meta.title} {meta.description}".lower().split()
        if point_tokens & set(blob):
            return KEEP, None
        return DROP, "irrelevant"
