"""Chronological interleaving and sample packing.

A video's stream is built clip by clip: a kept clip contributes its
keyframe images, one OCR text (the deduplicated texts of its frames), and
its ASR paragraph; a visually dropped clip contributes only its ASR text
(orphan ASR). Packing operates on atomic fragments: one kept clip's unit
plus any orphan ASR texts that immediately follow it.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from .config import (
    PipelineConfig,
    STRATEGY_CONCAT,
    STRATEGY_PER_VIDEO,
    STRATEGY_SPLIT_VIDEO,
)
from .corpus import count_tokens, write_corpus
from .models import (
    CLIP_DROPPED_VISUAL,
    CLIP_KEPT,
    CLIP_PENDING,
    ELEM_ASR,
    ELEM_EOV,
    ELEM_IMAGE,
    ELEM_OCR,
    InterleavedElement,
    InterleavedSample,
    Keyframe,
    TEXT_KINDS,
    ValidationError,
    VideoClip,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Fragment:
    """Atomic packing unit: one kept clip's elements plus trailing orphan ASR."""

    video_id: str
    elements: tuple[InterleavedElement, ...]
    n_images: int
    n_tokens: int
    last_of_video: bool = False


def clip_elements(
    clip: VideoClip, keyframes: list[Keyframe]
) -> list[InterleavedElement]:
    """[frames..., ocr (if any kept), asr] for a kept clip; [asr] for a
    visually dropped one."""
    if clip.status == CLIP_PENDING:
        raise ValidationError(f"clip {clip.video_id}/{clip.clip_id} still pending")
    elements: list[InterleavedElement] = []
    if clip.status == CLIP_KEPT:
        for kf in sorted(keyframes, key=lambda k: (k.timestamp_s, k.frame_id)):
            elements.append(
                InterleavedElement(
                    kind=ELEM_IMAGE, image_ref=kf.image_ref, timestamp_s=kf.timestamp_s
                )
            )
        ocr_texts = [k.ocr_text for k in keyframes if k.ocr_kept and k.ocr_text]
        if ocr_texts:
            elements.append(InterleavedElement(kind=ELEM_OCR, text="\n".join(ocr_texts)))
    if clip.asr_text:
        elements.append(InterleavedElement(kind=ELEM_ASR, text=clip.asr_text))
    return elements


def interleave_video(
    clips: list[VideoClip],
    keyframes_by_clip: dict[str, list[Keyframe]],
) -> list[InterleavedElement]:
    """Full chronological element stream for one video."""
    elements: list[InterleavedElement] = []
    for clip in clips:
        elements.extend(clip_elements(clip, keyframes_by_clip.get(clip.clip_id, [])))
    return elements


def build_fragments(
    clips: list[VideoClip],
    keyframes_by_clip: dict[str, list[Keyframe]],
    tokenizer: Callable[[str], int] = count_tokens,
) -> list[Fragment]:
    """Group a video's stream into atomic fragments.

    Orphan ASR attaches to the preceding kept clip's fragment; orphans before
    the first kept clip form a leading text-only fragment.
    """
    if not clips:
        return []
    video_id = clips[0].video_id
    groups: list[list[InterleavedElement]] = []
    for clip in clips:
        elems = clip_elements(clip, keyframes_by_clip.get(clip.clip_id, []))
        if not elems:
            continue
        if clip.status == CLIP_KEPT or not groups:
            groups.append(elems)
        else:
            groups[-1].extend(elems)
    fragments = []
    for i, elems in enumerate(groups):
        n_images = sum(1 for e in elems if e.kind == ELEM_IMAGE)
        n_tokens = sum(tokenizer(e.text) for e in elems if e.kind in TEXT_KINDS)
        fragments.append(
            Fragment(
                video_id=video_id,
                elements=tuple(elems),
                n_images=n_images,
                n_tokens=n_tokens,
                last_of_video=(i == len(groups) - 1),
            )
        )
    return fragments


@dataclass
class PackResult:
    samples: list[InterleavedSample] = field(default_factory=list)
    suppressed: list[InterleavedSample] = field(default_factory=list)
    oversized_sample_ids: list[str] = field(default_factory=list)

    @property
    def all_samples(self) -> list[InterleavedSample]:
        return self.samples + self.suppressed


def _make_sample(
    sample_id: str,
    fragments: list[Fragment],
    tokenizer: Callable[[str], int],
) -> InterleavedSample:
    elements: list[InterleavedElement] = []
    video_ids: list[str] = []
    for frag in fragments:
        if not video_ids or video_ids[-1] != frag.video_id:
            video_ids.append(frag.video_id)
        elements.extend(frag.elements)
    n_images = sum(1 for e in elements if e.kind == ELEM_IMAGE)
    n_tokens = sum(tokenizer(e.text) for e in elements if e.kind in TEXT_KINDS)
    return InterleavedSample(
        sample_id=sample_id,
        source_video_ids=tuple(video_ids),
        elements=tuple(elements),
        n_images=n_images,
        n_text_tokens=n_tokens,
    )


def pack(
    videos: list[tuple[str, list[Fragment]]],
    config: PipelineConfig,
    tokenizer: Callable[[str], int] = count_tokens,
) -> PackResult:
    """Pack per-video fragment lists into samples under the configured
    strategy. Zero-image samples are suppressed (and returned for the drop
    log); a single fragment over budget is emitted alone and flagged.
    """
    strategy = config.packing_strategy
    if strategy == STRATEGY_PER_VIDEO:
        return _pack_per_video(videos, tokenizer)
    if strategy == STRATEGY_SPLIT_VIDEO:
        return _pack_split(videos, config, tokenizer)
    if strategy == STRATEGY_CONCAT:
        return _pack_concat(videos, config, tokenizer)
    raise ValidationError(f"unknown packing strategy {strategy!r}")


def _collect(result: PackResult, sample: InterleavedSample, oversized: bool) -> None:
    if sample.n_images == 0:
        logger.info("suppressing zero-image sample %s", sample.sample_id)
        result.suppressed.append(sample)
        return
    if oversized:
        result.oversized_sample_ids.append(sample.sample_id)
    result.samples.append(sample)


def _pack_per_video(videos, tokenizer) -> PackResult:
    result = PackResult()
    for video_id, fragments in videos:
        if not fragments:
            continue
        _collect(result, _make_sample(video_id, fragments, tokenizer), oversized=False)
    return result


def _pack_split(videos, config: PipelineConfig, tokenizer) -> PackResult:
    result = PackResult()
    for video_id, fragments in videos:
        part = 0
        current: list[Fragment] = []
        tokens = images = 0

        def close(oversized: bool = False):
            nonlocal part, current, tokens, images
            if current:
                _collect(
                    result,
                    _make_sample(f"{video_id}/p{part:03d}", current, tokenizer),
                    oversized,
                )
                part += 1
                current, tokens, images = [], 0, 0

        for frag in fragments:
            over_alone = frag.n_tokens > config.token_budget or (
                frag.n_images > config.max_images_per_sample
            )
            if current and (
                tokens + frag.n_tokens > config.token_budget
                or images + frag.n_images > config.max_images_per_sample
            ):
                close()
            current.append(frag)
            tokens += frag.n_tokens
            images += frag.n_images
            if over_alone:
                close(oversized=True)
        close()
    return result


def _eov_element(config: PipelineConfig) -> InterleavedElement:
    return InterleavedElement(kind=ELEM_EOV, text=config.eov_token)


def _pack_concat(videos, config: PipelineConfig, tokenizer) -> PackResult:
    # Each video's final fragment carries the end-of-video marker (and its
    # one-token cost), so budget checks see the true fragment cost.
    eov_cost = tokenizer(config.eov_token)
    flat: list[Fragment] = []
    for video_id, fragments in videos:
        for frag in fragments:
            if frag.last_of_video:
                flat.append(
                    Fragment(
                        video_id=frag.video_id,
                        elements=frag.elements + (_eov_element(config),),
                        n_images=frag.n_images,
                        n_tokens=frag.n_tokens + eov_cost,
                        last_of_video=True,
                    )
                )
            else:
                flat.append(frag)

    result = PackResult()
    index = 0
    current: list[Fragment] = []
    tokens = images = 0

    def close(oversized: bool = False):
        nonlocal index, current, tokens, images
        if current:
            _collect(result, _make_sample(f"s{index:06d}", current, tokenizer), oversized)
            index += 1
            current, tokens, images = [], 0, 0

    for frag in flat:
        over_alone = frag.n_tokens > config.token_budget or (
            frag.n_images > config.max_images_per_sample
        )
        if current and (
            tokens + frag.n_tokens > config.token_budget
            or images + frag.n_images > config.max_images_per_sample
        ):
            close()
        current.append(frag)
        tokens += frag.n_tokens
        images += frag.n_images
        if over_alone:
            close(oversized=True)
    close()
    return result


@dataclass
class EmitStats:
    n_samples: int = 0
    images_min: int = 0
    images_max: int = 0
    images_avg: float = 0.0
    tokens_min: int = 0
    tokens_max: int = 0
    tokens_avg: float = 0.0

    def as_dict(self) -> dict:
        return {
            "n_samples": self.n_samples,
            "images": {"min": self.images_min, "max": self.images_max, "avg": self.images_avg},
            "tokens": {"min": self.tokens_min, "max": self.tokens_max, "avg": self.tokens_avg},
        }


def summarize(samples: list[InterleavedSample]) -> EmitStats:
    if not samples:
        return EmitStats()
    images = [s.n_images for s in samples]
    tokens = [s.n_text_tokens for s in samples]
    return EmitStats(
        n_samples=len(samples),
        images_min=min(images),
        images_max=max(images),
        images_avg=round(sum(images) / len(images), 1),
        tokens_min=min(tokens),
        tokens_max=max(tokens),
        tokens_avg=round(sum(tokens) / len(tokens), 1),
    )


def emit(
    result: PackResult,
    out_path: str | Path,
    config: PipelineConfig,
    manifest=None,
    tokenizer: Callable[[str], int] = count_tokens,
) -> EmitStats:
    """Write the corpus file and append a stats summary to the manifest.

    Reruns over the same samples produce a byte-identical file; on failure
    the partial file is cleaned up by the corpus writer.
    """
    write_corpus(result.samples, out_path, eov_token=config.eov_token, tokenizer=tokenizer)
    stats = summarize(result.samples)
    if manifest is not None:
        payload = stats.as_dict()
        payload["suppressed_zero_image"] = [
            {
                "sample_id": s.sample_id,
                "n_images": s.n_images,
                "n_text_tokens": s.n_text_tokens,
            }
            for s in result.suppressed
        ]
        payload["oversized"] = result.oversized_sample_ids
        manifest.record_note("emit-stats", payload)
    return stats
