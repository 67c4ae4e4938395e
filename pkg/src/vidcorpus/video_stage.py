"""Video-level extraction and filtering.

Per video, strictly sequential: audio extraction, transcription, rule
filter, dual-judge criteria filter on the raw transcript (before any
rewriting), then paragraph merge and refinement for kept videos.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .clip_stage import merge_segments
from .config import PipelineConfig
from .corpus import count_tokens
from .media import MediaError, MissingAudioError, open_toolkit
from .models import AsrSegment, CriteriaScores, KnowledgePoint, RefinedTranscript, VideoMeta
from .services.base import ServiceError, TransportError

logger = logging.getLogger(__name__)

RULE_NON_ENGLISH = "non_english"
RULE_TOO_SHORT = "too_short"
RULE_TOO_FEW_TOKENS = "too_few_tokens"

FINAL_KEPT = "kept"
FINAL_DROPPED = "dropped"
FINAL_PENDING = "pending"


@dataclass(frozen=True)
class JudgeResult:
    judge_id: str
    passed: bool
    scores: CriteriaScores


@dataclass(frozen=True)
class VideoVerdict:
    """Outcome of the video-level filters for one video."""

    video_id: str
    rule_result: Optional[str]  # None = pass, else failure reason
    judge_results: tuple[JudgeResult, ...] = ()
    final: str = FINAL_PENDING
    final_reason: Optional[str] = None


@dataclass
class VideoStageResult:
    verdict: VideoVerdict
    transcript: Optional[RefinedTranscript] = None
    language: str = "unknown"
    duration_s: float = 0.0
    refine_failures: tuple[int, ...] = ()
    notes: list[str] = field(default_factory=list)


def extract_audio(video_ref: str | Path, out_path: str | Path) -> Path:
    """Pull the audio track to a 16 kHz mono WAV at a deterministic path."""
    return open_toolkit(video_ref).extract_audio(out_path)


def rule_filter(
    meta: VideoMeta,
    segments: tuple[AsrSegment, ...],
    language: str,
    config: PipelineConfig,
) -> Optional[str]:
    """Predefined rules; returns None on pass or the failure reason.

    Token count is checked before language so silent videos (whose language
    tag is necessarily "unknown") fail as too_few_tokens, not non_english.
    """
    if meta.duration_s < config.min_duration_s:
        return RULE_TOO_SHORT
    total_tokens = sum(count_tokens(s.text) for s in segments)
    if total_tokens < config.min_asr_tokens:
        return RULE_TOO_FEW_TOKENS
    if not language.lower().startswith("en"):
        return RULE_NON_ENGLISH
    return None


def judge_filter(
    transcript_text: str,
    point: KnowledgePoint | str,
    scorer,
    judge_ids: tuple[str, ...],
    threshold: int,
) -> tuple[tuple[JudgeResult, ...], str, Optional[str]]:
    """Query each judge; a video is dropped only when every responding judge
    fails it. Unreachable judges are skipped (logged); if none respond the
    video is pending.

    Returns (judge_results, final, final_reason).
    """
    results: list[JudgeResult] = []
    unreachable = 0
    for judge_id in judge_ids:
        try:
            scores = scorer.score_transcript(transcript_text, point, judge_id=judge_id)
        except TransportError as exc:
            unreachable += 1
            logger.warning("judge %s unreachable: %s", judge_id, exc)
            continue
        results.append(
            JudgeResult(judge_id=judge_id, passed=scores.passes(threshold), scores=scores)
        )
    if not results:
        return (), FINAL_PENDING, None
    if any(r.passed for r in results):
        return tuple(results), FINAL_KEPT, None
    return tuple(results), FINAL_DROPPED, "judges_failed"


def refine_transcript(
    video_id: str,
    paragraphs: tuple[AsrSegment, ...],
    refiner,
    raw_segments: tuple[AsrSegment, ...] = (),
    perplexity=None,
) -> tuple[RefinedTranscript, tuple[int, ...]]:
    """Rewrite each merged paragraph, never touching its timestamps.

    A paragraph whose refinement fails keeps its raw text; the returned
    index tuple flags those for the manifest.
    """
    refined: list[AsrSegment] = []
    failures: list[int] = []
    for i, para in enumerate(paragraphs):
        text = para.text
        if text:
            try:
                text = refiner.refine_text(para.text)
            except (ServiceError, ValueError) as exc:
                failures.append(i)
                logger.warning("refine failed for %s paragraph %d: %s", video_id, i, exc)
                text = para.text
        refined.append(
            AsrSegment(start_s=para.start_s, end_s=para.end_s, text=text, silent=para.silent)
        )

    ppl_raw = ppl_refined = None
    if perplexity is not None:
        raw_text = " ".join(p.text for p in paragraphs if p.text)
        ref_text = " ".join(p.text for p in refined if p.text)
        if raw_text and ref_text:
            try:
                ppl_raw = perplexity.perplexity(raw_text)
                ppl_refined = perplexity.perplexity(ref_text)
            except (ServiceError, ValueError) as exc:
                logger.warning("perplexity scoring failed for %s: %s", video_id, exc)

    transcript = RefinedTranscript(
        video_id=video_id,
        raw_segments=tuple(raw_segments),
        refined_paragraphs=tuple(refined),
        ppl_raw=ppl_raw,
        ppl_refined=ppl_refined,
    ).validate()
    return transcript, tuple(failures)


def process_video(
    meta: VideoMeta,
    video_ref: str | Path,
    point: KnowledgePoint | str,
    services,
    config: PipelineConfig,
    audio_path: str | Path,
) -> VideoStageResult:
    """The full video-level sequence for one video."""
    video_id = meta.video_id

    try:
        extract_audio(video_ref, audio_path)
    except MissingAudioError:
        # No audio track: transcript is empty, the rule filter decides.
        Path(audio_path).parent.mkdir(parents=True, exist_ok=True)
        Path(audio_path).write_bytes(b"")
    except MediaError as exc:
        return VideoStageResult(
            verdict=VideoVerdict(
                video_id=video_id, rule_result=None, final=FINAL_PENDING
            ),
            notes=[f"audio extraction failed: {exc}"],
        )

    try:
        transcription = services.transcriber.transcribe(audio_path)
    except TransportError as exc:
        return VideoStageResult(
            verdict=VideoVerdict(video_id=video_id, rule_result=None, final=FINAL_PENDING),
            notes=[f"transcription unreachable: {exc}"],
        )

    duration = meta.duration_s or open_toolkit(video_ref).probe_duration_s()
    meta_for_rules = meta if meta.duration_s else VideoMeta(
        video_id=meta.video_id,
        title=meta.title,
        description=meta.description,
        comments=meta.comments,
        duration_s=duration,
        language=meta.language,
        source_point=meta.source_point,
    )

    rule_reason = rule_filter(
        meta_for_rules, transcription.segments, transcription.language, config
    )
    if rule_reason is not None:
        return VideoStageResult(
            verdict=VideoVerdict(
                video_id=video_id,
                rule_result=rule_reason,
                final=FINAL_DROPPED,
                final_reason=rule_reason,
            ),
            language=transcription.language,
            duration_s=duration,
        )

    # Criteria scoring sees the raw transcript: this runs before rewriting.
    raw_text = " ".join(s.text for s in transcription.segments if s.text)
    judge_results, final, final_reason = judge_filter(
        raw_text,
        point,
        services.scorer,
        services.judge_ids,
        config.criteria_pass_threshold,
    )
    if final != FINAL_KEPT:
        return VideoStageResult(
            verdict=VideoVerdict(
                video_id=video_id,
                rule_result=None,
                judge_results=judge_results,
                final=final,
                final_reason=final_reason,
            ),
            language=transcription.language,
            duration_s=duration,
        )

    paragraphs = merge_segments(transcription.segments, config)
    transcript, refine_failures = refine_transcript(
        video_id,
        paragraphs,
        services.refiner,
        raw_segments=transcription.segments,
        perplexity=services.perplexity,
    )
    return VideoStageResult(
        verdict=VideoVerdict(
            video_id=video_id,
            rule_result=None,
            judge_results=judge_results,
            final=FINAL_KEPT,
        ),
        transcript=transcript,
        language=transcription.language,
        duration_s=duration,
        refine_failures=refine_failures,
    )
