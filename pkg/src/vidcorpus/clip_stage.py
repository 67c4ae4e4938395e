"""Clip-level processing: paragraph merging, logical cuts, visual filter.

Clips are logical spans over the source video (no re-encoding); the frame
stage samples pixels from the original file by timestamp.
"""
from __future__ import annotations

import logging
from pathlib import Path
from typing import Optional

import numpy as np

from .config import PipelineConfig
from .models import (
    AsrSegment,
    CLIP_DROPPED_VISUAL,
    CLIP_KEPT,
    CLIP_PENDING,
    ValidationError,
    VideoClip,
)
from .media import MediaError, open_toolkit
from .services.base import ServiceError, cosine

logger = logging.getLogger(__name__)


def merge_segments(
    segments: tuple[AsrSegment, ...] | list[AsrSegment],
    config: PipelineConfig,
) -> tuple[AsrSegment, ...]:
    """Merge fragmented ASR segments into paragraph spans.

    Greedy rule: a paragraph closes once its duration reaches
    clip_target_s, or when adding the next segment would push it past
    clip_max_s. Afterwards any paragraph shorter than clip_min_s merges
    backward into its predecessor when the union stays within clip_max_s.
    An indivisible segment longer than clip_max_s is emitted alone.
    """
    prev_end = None
    for seg in segments:
        seg.validate()
        if prev_end is not None and seg.start_s < prev_end:
            raise ValidationError(
                f"segments overlap at {seg.start_s:.3f}s (previous end {prev_end:.3f}s)"
            )
        prev_end = seg.end_s

    groups: list[list[AsrSegment]] = []
    current: list[AsrSegment] = []
    for seg in segments:
        if not current:
            current = [seg]
            continue
        duration = current[-1].end_s - current[0].start_s
        would_span = seg.end_s - current[0].start_s
        if duration >= config.clip_target_s or would_span > config.clip_max_s:
            groups.append(current)
            current = [seg]
        else:
            current.append(seg)
    if current:
        groups.append(current)

    merged: list[list[AsrSegment]] = []
    for group in groups:
        duration = group[-1].end_s - group[0].start_s
        if (
            merged
            and duration < config.clip_min_s
            and group[-1].end_s - merged[-1][0].start_s <= config.clip_max_s
        ):
            merged[-1].extend(group)
        else:
            merged.append(group)

    paragraphs = []
    for group in merged:
        texts = [s.text for s in group if s.text]
        paragraphs.append(
            AsrSegment(
                start_s=group[0].start_s,
                end_s=group[-1].end_s,
                text=" ".join(texts),
                silent=not texts,
            )
        )
    return tuple(paragraphs)


def cut_clips(
    video_id: str,
    paragraphs: tuple[AsrSegment, ...],
    duration_s: float,
) -> list[VideoClip]:
    """One pending clip per paragraph, pairing the span with its text."""
    clips = []
    for i, para in enumerate(paragraphs):
        if para.end_s > duration_s + 1e-6:
            raise ValidationError(
                f"paragraph [{para.start_s}, {para.end_s}] exceeds video duration "
                f"{duration_s}"
            )
        clips.append(
            VideoClip(
                clip_id=f"c{i:04d}",
                video_id=video_id,
                start_s=para.start_s,
                end_s=para.end_s,
                asr_text=para.text,
                status=CLIP_PENDING,
            ).validate()
        )
    return clips


def caption_sample_times(start_s: float, end_s: float, k: int) -> list[float]:
    """Midpoints of k equal subdivisions of the clip span."""
    span = end_s - start_s
    return [start_s + (i + 0.5) * span / k for i in range(k)]


def visual_filter(
    clip: VideoClip,
    frames: list[np.ndarray],
    captioner,
    text_embedder,
    threshold: float,
) -> VideoClip:
    """Caption the clip's frames and compare against its ASR text.

    Kept iff the cosine of the caption and ASR embeddings reaches the
    threshold; a dropped clip still carries its asr_text. Captioner or
    embedder failure leaves the clip pending.
    """
    if not clip.asr_text:
        # Nothing to compare against: no textual knowledge, drop the visuals.
        return _with_status(clip, CLIP_DROPPED_VISUAL, None, None)
    try:
        caption = captioner.caption_clip(frames)
        vectors = text_embedder.embed_texts([caption, clip.asr_text])
    except (ServiceError, ValueError) as exc:
        logger.warning("visual filter pending for %s/%s: %s", clip.video_id, clip.clip_id, exc)
        return clip
    similarity = cosine(vectors[0], vectors[1])
    status = CLIP_KEPT if similarity >= threshold else CLIP_DROPPED_VISUAL
    return _with_status(clip, status, caption, similarity)


def _with_status(
    clip: VideoClip, status: str, caption: Optional[str], similarity: Optional[float]
) -> VideoClip:
    return VideoClip(
        clip_id=clip.clip_id,
        video_id=clip.video_id,
        start_s=clip.start_s,
        end_s=clip.end_s,
        asr_text=clip.asr_text,
        caption=caption,
        caption_asr_similarity=similarity,
        status=status,
    )


def filter_clips(
    video_ref: str | Path,
    clips: list[VideoClip],
    services,
    config: PipelineConfig,
) -> list[VideoClip]:
    """Run the visual filter over a video's clips, sampling caption frames
    from the source media. Media failures leave clips pending."""
    try:
        toolkit = open_toolkit(video_ref)
    except MediaError as exc:
        logger.warning("media unavailable for %s: %s", video_ref, exc)
        return clips
    out = []
    for clip in clips:
        try:
            times = caption_sample_times(
                clip.start_s, clip.end_s, config.caption_frames_per_clip
            )
            frames = toolkit.sample_frames(times)
        except MediaError as exc:
            logger.warning("frame sampling pending for %s/%s: %s", clip.video_id, clip.clip_id, exc)
            out.append(clip)
            continue
        out.append(
            visual_filter(
                clip,
                frames,
                services.captioner,
                services.text_embedder,
                config.caption_asr_sim_threshold,
            )
        )
    return out
