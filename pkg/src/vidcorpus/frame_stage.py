"""Keyframe extraction, scoring, OCR, and OCR deduplication.

The reference-chain extractor: the first frame is always a keyframe; each
later frame becomes one when its change against the current reference
crosses the threshold, and then becomes the new reference. Three change
measures share that loop: windowed structural similarity (default), mean
absolute pixel difference, and image-embedding cosine.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .config import (
    EXTRACTOR_PIXEL,
    EXTRACTOR_SEMANTIC,
    EXTRACTOR_SSIM,
    PipelineConfig,
)
from .media import MediaError
from .models import Keyframe, VideoClip
from .services.base import ServiceError, cosine
from .ssim import compute_ssim

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class Frame:
    """A sampled frame: position in the sampled sequence, time, intensity grid."""

    index: int
    timestamp_s: float
    pixels: np.ndarray  # HxW uint8


def sample_frames(clip: VideoClip, toolkit, fps: float) -> list[Frame]:
    """Uniform sampling at 1/fps within [start_s, end_s); at least one frame."""
    if fps <= 0:
        raise ValueError("fps must be positive")
    times = []
    k = 0
    while True:
        t = clip.start_s + k / fps
        if t >= clip.end_s and k > 0:
            break
        times.append(min(t, clip.end_s))
        k += 1
        if k > 10_000_000:
            raise ValueError("frame sampling runaway; check fps and clip span")
    pixels = toolkit.sample_frames(times)
    return [
        Frame(index=i, timestamp_s=t, pixels=np.asarray(p))
        for i, (t, p) in enumerate(zip(times, pixels))
    ]


def extract_keyframes_ssim(
    frames: Sequence[Frame],
    threshold: float,
    initial_reference: Optional[Frame] = None,
) -> list[Frame]:
    """Keep frames whose structural similarity to the reference drops below
    the threshold; each kept frame becomes the new reference.

    Without an initial reference the first frame is always kept. With one
    (reference carried across clip boundaries) the first frame competes
    like any other.
    """
    if not frames:
        return []
    keep: list[Frame] = []
    if initial_reference is None:
        keep.append(frames[0])
        reference = frames[0]
        rest = frames[1:]
    else:
        reference = initial_reference
        rest = frames
    for frame in rest:
        # Negative structural similarity (anticorrelated frames) is floored
        # at 0: already maximal change on the threshold's (0, 1) domain, and
        # the floor makes the T->0 limit degenerate to the first frame only.
        similarity = max(0.0, compute_ssim(reference.pixels, frame.pixels))
        if similarity < threshold:
            keep.append(frame)
            reference = frame
    return keep


def extract_keyframes_pixel(
    frames: Sequence[Frame],
    pixel_threshold: float,
    initial_reference: Optional[Frame] = None,
) -> list[Frame]:
    """Ablation backend: mean absolute pixel difference as the change measure."""
    if not frames:
        return []
    keep: list[Frame] = []
    if initial_reference is None:
        keep.append(frames[0])
        reference = frames[0]
        rest = frames[1:]
    else:
        reference = initial_reference
        rest = frames
    for frame in rest:
        delta = float(
            np.mean(
                np.abs(
                    frame.pixels.astype(np.float64) - reference.pixels.astype(np.float64)
                )
            )
        )
        if delta > pixel_threshold:
            keep.append(frame)
            reference = frame
    return keep


def extract_keyframes_semantic(
    frames: Sequence[Frame],
    image_embedder,
    cos_threshold: float,
    initial_reference: Optional[Frame] = None,
) -> list[Frame]:
    """Ablation backend: image-embedding cosine as the change measure.

    Embedding failures propagate as ServiceError so the caller can mark the
    clip pending.
    """
    if not frames:
        return []
    vectors = image_embedder.embed_images([f.pixels for f in frames])
    keep: list[Frame] = []
    if initial_reference is None:
        keep.append(frames[0])
        ref_vec = vectors[0]
        rest = list(zip(frames, vectors))[1:]
    else:
        ref_vec = image_embedder.embed_images([initial_reference.pixels])[0]
        rest = list(zip(frames, vectors))
    for frame, vec in rest:
        if cosine(ref_vec, vec) < cos_threshold:
            keep.append(frame)
            ref_vec = vec
    return keep


def extract_keyframes(
    frames: Sequence[Frame],
    config: PipelineConfig,
    image_embedder=None,
    initial_reference: Optional[Frame] = None,
) -> list[Frame]:
    """Dispatch to the configured extractor backend."""
    if config.keyframe_extractor == EXTRACTOR_SSIM:
        return extract_keyframes_ssim(frames, config.ssim_threshold_T, initial_reference)
    if config.keyframe_extractor == EXTRACTOR_PIXEL:
        return extract_keyframes_pixel(frames, config.pixel_threshold, initial_reference)
    if config.keyframe_extractor == EXTRACTOR_SEMANTIC:
        if image_embedder is None:
            raise ValueError("semantic extractor requires an image embedder")
        return extract_keyframes_semantic(
            frames, image_embedder, config.semantic_cos_threshold, initial_reference
        )
    raise ValueError(f"unknown extractor {config.keyframe_extractor!r}")


def save_frame_png(pixels: np.ndarray, path: str | Path) -> Path:
    from PIL import Image

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.asarray(pixels, dtype=np.uint8), mode="L").save(path, format="PNG")
    return path


def ocr_and_filter(
    keyframes: list[Keyframe],
    ocr_reader,
    config: PipelineConfig,
    workdir: Optional[Path] = None,
) -> tuple[list[Keyframe], list[Keyframe]]:
    """Score each stored keyframe via OCR; drop low-informativeness frames.

    OCR failure keeps the frame without OCR text, flagged ocr_failed.
    Returns (kept, dropped).
    """
    kept: list[Keyframe] = []
    dropped: list[Keyframe] = []
    for kf in keyframes:
        image_path = Path(kf.image_ref)
        if workdir is not None and not image_path.is_absolute():
            image_path = workdir / image_path
        try:
            result = ocr_reader.ocr_frame(image_path)
        except (ServiceError, OSError, ValueError) as exc:
            logger.warning("ocr failed for %s: %s", kf.frame_id, exc)
            kept.append(
                Keyframe(
                    frame_id=kf.frame_id,
                    clip_id=kf.clip_id,
                    timestamp_s=kf.timestamp_s,
                    image_ref=kf.image_ref,
                    score=None,
                    ocr_text=None,
                    ocr_failed=True,
                )
            )
            continue
        score = int(result["informativeness"])
        scored = Keyframe(
            frame_id=kf.frame_id,
            clip_id=kf.clip_id,
            timestamp_s=kf.timestamp_s,
            image_ref=kf.image_ref,
            score=score,
            ocr_text=result.get("text") or None,
        ).validate()
        if score < config.keyframe_score_threshold:
            dropped.append(scored)
        else:
            kept.append(scored)
    return kept, dropped


def token_jaccard(a: str, b: str) -> float:
    """Jaccard similarity of lowercase whitespace token sets; 1.0 when both
    are empty."""
    sa = set(a.lower().split())
    sb = set(b.lower().split())
    if not sa and not sb:
        return 1.0
    return len(sa & sb) / len(sa | sb)


def dedup_ocr(keyframes: list[Keyframe], threshold: float) -> list[Keyframe]:
    """Mark ocr_kept per frame, suppressing OCR near-duplicates.

    Frames arrive in video order; a frame's OCR is kept unless its token-set
    Jaccard similarity with any previously kept OCR in the same video
    reaches the threshold. Images are never dropped here.
    """
    kept_texts: list[str] = []
    out: list[Keyframe] = []
    for kf in keyframes:
        keep = False
        if kf.ocr_text:
            keep = all(token_jaccard(kf.ocr_text, prev) < threshold for prev in kept_texts)
            if keep:
                kept_texts.append(kf.ocr_text)
        out.append(
            Keyframe(
                frame_id=kf.frame_id,
                clip_id=kf.clip_id,
                timestamp_s=kf.timestamp_s,
                image_ref=kf.image_ref,
                score=kf.score,
                ocr_text=kf.ocr_text,
                ocr_kept=keep,
                ocr_failed=kf.ocr_failed,
            )
        )
    return out


def process_video_frames(
    video_ref: str | Path,
    video_id: str,
    clips: list[VideoClip],
    services,
    config: PipelineConfig,
    workdir: Path,
) -> tuple[list[Keyframe], list[Keyframe], list[str]]:
    """Frame-level stage for one video's kept clips.

    Keyframe images land at <workdir>/frames/{video_id}/{clip_id}/{index}.png
    and image_refs are stored workdir-relative so the corpus is portable.
    After per-clip extraction and OCR scoring, OCR deduplication runs across
    the whole video in time order. Returns (kept, score-dropped, notes).
    """
    from .media import open_toolkit
    from .models import CLIP_KEPT

    notes: list[str] = []
    toolkit = open_toolkit(video_ref)
    all_scored: list[Keyframe] = []
    all_dropped: list[Keyframe] = []
    reference: Optional[Frame] = None
    for clip in clips:
        if clip.status != CLIP_KEPT:
            continue
        try:
            frames = sample_frames(clip, toolkit, config.frame_sample_fps)
            selected = extract_keyframes(
                frames,
                config,
                image_embedder=services.image_embedder,
                initial_reference=reference if config.carry_reference_across_clips else None,
            )
        except (MediaError, ServiceError) as exc:
            notes.append(f"{video_id}/{clip.clip_id} pending: {exc}")
            continue
        if config.carry_reference_across_clips and selected:
            reference = selected[-1]

        stored: list[Keyframe] = []
        for frame in selected:
            rel = Path("frames") / video_id / clip.clip_id / f"{frame.index:04d}.png"
            save_frame_png(frame.pixels, workdir / rel)
            stored.append(
                Keyframe(
                    frame_id=f"{video_id}/{clip.clip_id}/{frame.index:04d}",
                    clip_id=clip.clip_id,
                    timestamp_s=frame.timestamp_s,
                    image_ref=rel.as_posix(),
                )
            )
        kept, dropped = ocr_and_filter(
            stored, services.ocr_readers[0], config, workdir=workdir
        )
        all_scored.extend(kept)
        all_dropped.extend(dropped)
    deduped = dedup_ocr(all_scored, config.ocr_dedup_jaccard)
    return deduped, all_dropped, notes
