"""Domain types shared by every pipeline stage.

All types are immutable value objects (frozen dataclasses) and safe to share
across worker threads. Validation raises :class:`ValidationError` naming the
violated invariant.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Optional

FILLER_TOKENS = frozenset({"um", "uh", "uhh", "umm", "er", "ah", "hmm", "mmm"})


class ValidationError(ValueError):
    """An object violates one of its declared invariants."""


@dataclass(frozen=True)
class KnowledgePoint:
    """One leaf of the four-layer subject/course/sub-course/point hierarchy."""

    subject: str
    course: str
    sub_course: str
    point: str

    @property
    def id(self) -> str:
        return f"{self.subject}/{self.course}/{self.sub_course}/{self.point}"

    def validate(self) -> "KnowledgePoint":
        for layer in ("subject", "course", "sub_course", "point"):
            if not getattr(self, layer):
                raise ValidationError(f"knowledge point layer '{layer}' is empty")
        return self


@dataclass(frozen=True)
class VideoMeta:
    """Platform metadata for a candidate video."""

    video_id: str
    title: str
    description: str = ""
    comments: tuple[str, ...] = ()
    duration_s: float = 0.0
    language: str = "unknown"
    source_point: str = ""

    def validate(self) -> "VideoMeta":
        if not self.video_id:
            raise ValidationError("video_id is empty")
        if self.duration_s < 0:
            raise ValidationError(f"duration_s is negative: {self.duration_s}")
        return self


@dataclass(frozen=True)
class AsrSegment:
    """One timestamped span of transcribed speech."""

    start_s: float
    end_s: float
    text: str
    silent: bool = False

    def validate(self) -> "AsrSegment":
        if self.start_s < 0:
            raise ValidationError(f"segment start_s is negative: {self.start_s}")
        if self.end_s <= self.start_s:
            raise ValidationError(
                f"segment end_s {self.end_s} not after start_s {self.start_s}"
            )
        if not self.text and not self.silent:
            raise ValidationError("segment text empty but not flagged silent")
        return self

    @property
    def duration_s(self) -> float:
        return self.end_s - self.start_s


@dataclass(frozen=True)
class RefinedTranscript:
    """Raw ASR segments plus the merged, rewritten paragraphs."""

    video_id: str
    raw_segments: tuple[AsrSegment, ...]
    refined_paragraphs: tuple[AsrSegment, ...]
    ppl_raw: Optional[float] = None
    ppl_refined: Optional[float] = None

    def validate(self) -> "RefinedTranscript":
        prev_end = None
        for para in self.refined_paragraphs:
            para.validate()
            if prev_end is not None and para.start_s < prev_end:
                raise ValidationError(
                    f"paragraphs overlap or out of order at {para.start_s:.3f}s"
                )
            prev_end = para.end_s
        for name in ("ppl_raw", "ppl_refined"):
            value = getattr(self, name)
            if value is not None and value <= 0:
                raise ValidationError(f"{name} must be positive, got {value}")
        return self


CLIP_KEPT = "kept"
CLIP_DROPPED_VISUAL = "dropped_visual"
CLIP_PENDING = "pending"


@dataclass(frozen=True)
class VideoClip:
    """A 10-20 s span of one video aligned to a merged ASR paragraph."""

    clip_id: str
    video_id: str
    start_s: float
    end_s: float
    asr_text: str
    caption: Optional[str] = None
    caption_asr_similarity: Optional[float] = None
    status: str = CLIP_PENDING

    def validate(self) -> "VideoClip":
        if self.end_s <= self.start_s:
            raise ValidationError(
                f"clip {self.clip_id} end_s {self.end_s} not after start_s {self.start_s}"
            )
        if self.status not in (CLIP_KEPT, CLIP_DROPPED_VISUAL, CLIP_PENDING):
            raise ValidationError(f"clip {self.clip_id} has unknown status {self.status!r}")
        sim = self.caption_asr_similarity
        if sim is not None and not -1.0 <= sim <= 1.0:
            raise ValidationError(
                f"clip {self.clip_id} caption_asr_similarity {sim} outside [-1, 1]"
            )
        return self

    @property
    def duration_s(self) -> float:
        return self.end_s - self.start_s


@dataclass(frozen=True)
class Keyframe:
    """A retained frame with its stored image and optional OCR sidecar."""

    frame_id: str
    clip_id: str
    timestamp_s: float
    image_ref: str
    score: Optional[int] = None
    ocr_text: Optional[str] = None
    ocr_kept: bool = False
    ocr_failed: bool = False

    def validate(self) -> "Keyframe":
        if self.score is not None and not 1 <= self.score <= 5:
            raise ValidationError(f"keyframe {self.frame_id} score {self.score} outside [1, 5]")
        return self


ELEM_IMAGE = "image"
ELEM_ASR = "asr_text"
ELEM_OCR = "ocr_text"
ELEM_EOV = "end_of_video"
TEXT_KINDS = (ELEM_ASR, ELEM_OCR, ELEM_EOV)


@dataclass(frozen=True)
class InterleavedElement:
    """One image or text span inside an interleaved sample."""

    kind: str
    text: Optional[str] = None
    image_ref: Optional[str] = None
    timestamp_s: Optional[float] = None

    def validate(self, eov_token: Optional[str] = None) -> "InterleavedElement":
        if self.kind == ELEM_IMAGE:
            if not self.image_ref:
                raise ValidationError("image element missing image_ref")
            if self.text is not None:
                raise ValidationError("image element carries text payload")
        elif self.kind in TEXT_KINDS:
            if self.text is None:
                raise ValidationError(f"{self.kind} element missing text payload")
            if self.image_ref is not None:
                raise ValidationError(f"{self.kind} element carries image_ref")
            if self.kind == ELEM_EOV and eov_token is not None and self.text != eov_token:
                raise ValidationError(
                    f"end_of_video payload {self.text!r} != configured token {eov_token!r}"
                )
        else:
            raise ValidationError(f"unknown element kind {self.kind!r}")
        return self


@dataclass(frozen=True)
class InterleavedSample:
    """One training sample: an ordered mix of images and text spans."""

    sample_id: str
    source_video_ids: tuple[str, ...]
    elements: tuple[InterleavedElement, ...]
    n_images: int
    n_text_tokens: int

    def validate(
        self,
        eov_token: Optional[str] = None,
        count_tokens=None,
        require_image: bool = True,
    ) -> "InterleavedSample":
        """Check structural invariants.

        ``count_tokens`` must match the tokenizer the sample was built with;
        when None the token-accounting check is skipped. ``require_image``
        is relaxed for externally adapted corpora that allow text-only samples.
        """
        n_images = sum(1 for e in self.elements if e.kind == ELEM_IMAGE)
        if n_images != self.n_images:
            raise ValidationError(
                f"sample {self.sample_id}: n_images {self.n_images} != actual {n_images}"
            )
        if require_image and self.n_images < 1:
            raise ValidationError(f"sample {self.sample_id}: no image elements")
        for elem in self.elements:
            elem.validate(eov_token=eov_token)
        if count_tokens is not None:
            total = sum(
                count_tokens(e.text) for e in self.elements if e.kind in TEXT_KINDS
            )
            if total != self.n_text_tokens:
                raise ValidationError(
                    f"sample {self.sample_id}: n_text_tokens {self.n_text_tokens} "
                    f"!= actual {total}"
                )
        self._check_chronology()
        return self

    def _check_chronology(self) -> None:
        # Image timestamps must be non-decreasing within each source video;
        # in concat samples videos are delimited by end_of_video elements.
        prev: Optional[float] = None
        for elem in self.elements:
            if elem.kind == ELEM_EOV:
                prev = None
            elif elem.kind == ELEM_IMAGE and elem.timestamp_s is not None:
                if prev is not None and elem.timestamp_s < prev:
                    raise ValidationError(
                        f"sample {self.sample_id}: image timestamps out of order "
                        f"({elem.timestamp_s} after {prev})"
                    )
                prev = elem.timestamp_s


@dataclass(frozen=True)
class ManifestEntry:
    """Terminal record for one processed item of one stage."""

    input_key: str
    input_hash: str
    output_keys: tuple[str, ...] = ()
    drop_reason: Optional[str] = None
    completed_at: str = ""

    def validate(self) -> "ManifestEntry":
        if not self.input_key:
            raise ValidationError("manifest entry missing input_key")
        if not self.output_keys and self.drop_reason is None:
            raise ValidationError(
                f"manifest entry {self.input_key} is not terminal "
                "(neither outputs nor drop_reason)"
            )
        return self


@dataclass(frozen=True)
class CriteriaScores:
    """Relevance / knowledge-density / transcription-quality judgment."""

    relevance: int
    knowledge_density: int
    transcription_quality: int
    judge_id: str = ""

    def validate(self) -> "CriteriaScores":
        for name in ("relevance", "knowledge_density", "transcription_quality"):
            value = getattr(self, name)
            if not 1 <= value <= 5:
                raise ValidationError(f"criteria score {name}={value} outside [1, 5]")
        return self

    def passes(self, threshold: int) -> bool:
        return (
            self.relevance >= threshold
            and self.knowledge_density >= threshold
            and self.transcription_quality >= threshold
        )


def as_dict(obj) -> dict:
    """Dataclass to plain dict with tuples converted to lists."""
    return dataclasses.asdict(obj)
