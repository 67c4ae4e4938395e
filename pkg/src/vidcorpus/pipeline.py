"""Stage orchestration over a work directory, with crash-safe resume.

Workdir layout::

    manifests/<stage>.jsonl     append-only completion records
    collect/videos.jsonl        kept videos after metadata filtering
    audio/<video_id>.wav        extracted audio
    video/<video_id>.json       verdict + refined transcript
    clip/<video_id>.json        clip records + visual-filter drop log
    frame/<video_id>.json       keyframe records (kept and score-dropped)
    frames/<video_id>/<clip>/   keyframe images
    corpus/corpus.jsonl         emitted samples
    reports/                    metrics outputs

Every stage consumes the previous stage's manifest and skips completed
items; with mock services two runs produce byte-identical corpora and
manifests (the manifest clock is pinned in deterministic mode).
"""
from __future__ import annotations

import dataclasses
import json
import logging
import os
import shutil
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Iterable, Optional

from . import assembler, clip_stage, collection, frame_stage, metrics, video_stage
from .config import PipelineConfig
from .corpus import read_corpus
from .manifest import ManifestStore, content_hash, file_hash
from .media import MediaError
from .models import (
    AsrSegment,
    CLIP_PENDING,
    CriteriaScores,
    Keyframe,
    RefinedTranscript,
    ValidationError,
    VideoClip,
    VideoMeta,
)
from .services import ServiceBundle

logger = logging.getLogger(__name__)

STAGES = ("collect", "video", "clip", "frame", "assemble", "metrics")


class StageError(RuntimeError):
    """A stage failed; message lists the failing item keys."""


@dataclasses.dataclass
class RunContext:
    workdir: Path
    config: PipelineConfig
    services: ServiceBundle
    videos_dir: Optional[Path] = None
    deterministic: bool = False

    def manifest(self, stage: str) -> ManifestStore:
        return ManifestStore(self.workdir, stage, deterministic=self.deterministic)

    def resolve_video(self, video_id: str) -> Path:
        if self.videos_dir is None:
            raise StageError(f"no videos directory configured (needed for {video_id})")
        matches = sorted(self.videos_dir.glob(f"{video_id}.*"))
        if not matches:
            raise MediaError(f"no media file for video {video_id} under {self.videos_dir}")
        return matches[0]


def _write_json(path: Path, payload) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(
        json.dumps(payload, sort_keys=True, separators=(",", ":")) + "\n",
        encoding="utf-8",
    )
    os.replace(tmp, path)


def _read_json(path: Path):
    return json.loads(path.read_text(encoding="utf-8"))


def _ordered_parallel(items: list, fn: Callable, workers: int) -> Iterable[tuple]:
    """Run fn over items with a bounded pool, yielding results in input
    order so manifests stay deterministic."""
    if workers <= 1 or len(items) <= 1:
        for item in items:
            yield item, fn(item)
        return
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(fn, item) for item in items]
        for item, future in zip(items, futures):
            yield item, future.result()


def _workers(config: PipelineConfig) -> int:
    return config.workers if config.workers > 0 else (os.cpu_count() or 1)


# ---------------------------------------------------------------------------
# Serialization of stage records (artifact plumbing)

def _segment_to_dict(seg: AsrSegment) -> dict:
    record = {"start_s": seg.start_s, "end_s": seg.end_s, "text": seg.text}
    if seg.silent:
        record["silent"] = True
    return record


def _segment_from_dict(record: dict) -> AsrSegment:
    return AsrSegment(
        start_s=record["start_s"],
        end_s=record["end_s"],
        text=record["text"],
        silent=record.get("silent", False),
    )


def _transcript_to_dict(t: RefinedTranscript) -> dict:
    return {
        "video_id": t.video_id,
        "raw_segments": [_segment_to_dict(s) for s in t.raw_segments],
        "refined_paragraphs": [_segment_to_dict(s) for s in t.refined_paragraphs],
        "ppl_raw": t.ppl_raw,
        "ppl_refined": t.ppl_refined,
    }


def _transcript_from_dict(record: dict) -> RefinedTranscript:
    return RefinedTranscript(
        video_id=record["video_id"],
        raw_segments=tuple(_segment_from_dict(s) for s in record["raw_segments"]),
        refined_paragraphs=tuple(
            _segment_from_dict(s) for s in record["refined_paragraphs"]
        ),
        ppl_raw=record.get("ppl_raw"),
        ppl_refined=record.get("ppl_refined"),
    )


def _clip_to_dict(clip: VideoClip) -> dict:
    return {
        "clip_id": clip.clip_id,
        "video_id": clip.video_id,
        "start_s": clip.start_s,
        "end_s": clip.end_s,
        "asr_text": clip.asr_text,
        "caption": clip.caption,
        "caption_asr_similarity": clip.caption_asr_similarity,
        "status": clip.status,
    }


def _clip_from_dict(record: dict) -> VideoClip:
    return VideoClip(
        clip_id=record["clip_id"],
        video_id=record["video_id"],
        start_s=record["start_s"],
        end_s=record["end_s"],
        asr_text=record["asr_text"],
        caption=record.get("caption"),
        caption_asr_similarity=record.get("caption_asr_similarity"),
        status=record["status"],
    )


def _keyframe_to_dict(kf: Keyframe) -> dict:
    return {
        "frame_id": kf.frame_id,
        "clip_id": kf.clip_id,
        "timestamp_s": kf.timestamp_s,
        "image_ref": kf.image_ref,
        "score": kf.score,
        "ocr_text": kf.ocr_text,
        "ocr_kept": kf.ocr_kept,
        "ocr_failed": kf.ocr_failed,
    }


def _keyframe_from_dict(record: dict) -> Keyframe:
    return Keyframe(
        frame_id=record["frame_id"],
        clip_id=record["clip_id"],
        timestamp_s=record["timestamp_s"],
        image_ref=record["image_ref"],
        score=record.get("score"),
        ocr_text=record.get("ocr_text"),
        ocr_kept=record.get("ocr_kept", False),
        ocr_failed=record.get("ocr_failed", False),
    )


def _meta_from_dict(record: dict) -> VideoMeta:
    return VideoMeta(
        video_id=record["video_id"],
        title=record.get("title", ""),
        description=record.get("description", ""),
        comments=tuple(record.get("comments", ())),
        duration_s=record.get("duration_s", 0.0),
        language=record.get("language", "unknown"),
        source_point=record.get("source_point", ""),
    )


def _verdict_to_dict(v: video_stage.VideoVerdict) -> dict:
    return {
        "video_id": v.video_id,
        "rule_result": v.rule_result,
        "judge_results": [
            {
                "judge_id": j.judge_id,
                "passed": j.passed,
                "scores": {
                    "relevance": j.scores.relevance,
                    "knowledge_density": j.scores.knowledge_density,
                    "transcription_quality": j.scores.transcription_quality,
                },
            }
            for j in v.judge_results
        ],
        "final": v.final,
        "final_reason": v.final_reason,
    }


# ---------------------------------------------------------------------------
# Stages

def stage_collect(ctx: RunContext, taxonomy_path: Path, backend) -> Path:
    """Search per knowledge point, dedup by video id, filter on metadata."""
    manifest = ctx.manifest("collect")
    taxonomy = collection.load_taxonomy(taxonomy_path)
    results = collection.run_search(taxonomy, backend, ctx.config.top_k_search_results)
    kept_results, dup_dropped = collection.dedup_by_video_id(results)

    for result in dup_dropped:
        key = f"dup::{result.point_id}::rank{result.rank}::{result.meta.video_id}"
        if manifest.get(key) is None:
            manifest.record(
                key,
                content_hash(result.meta.video_id.encode()),
                drop_reason="duplicate_video_id",
            )

    kept_metas: list[dict] = []
    pending: list[str] = []
    for result in kept_results:
        meta = result.meta
        key = meta.video_id
        item_hash = content_hash(
            json.dumps(dataclasses.asdict(meta), sort_keys=True).encode()
        )
        entry = manifest.get(key)
        if entry is not None and entry.input_hash == item_hash:
            decision = "keep" if entry.drop_reason is None else "drop"
        else:
            decision, reason = collection.filter_metadata(
                meta, ctx.services.metadata_judge, result.point_id
            )
            if decision == collection.PENDING:
                pending.append(key)
                logger.warning("metadata review pending for %s", key)
                continue
            manifest.record(
                key,
                item_hash,
                output_keys=(f"collect::{key}",) if decision == "keep" else (),
                drop_reason=None if decision == "keep" else f"metadata_{reason}",
            )
        if decision == "keep":
            record = dataclasses.asdict(meta)
            record["point_id"] = result.point_id
            record["comments"] = list(meta.comments)
            kept_metas.append(record)

    out_path = ctx.workdir / "collect" / "videos.jsonl"
    out_path.parent.mkdir(parents=True, exist_ok=True)
    tmp = out_path.with_suffix(".tmp")
    with tmp.open("w", encoding="utf-8") as handle:
        for record in kept_metas:
            handle.write(json.dumps(record, sort_keys=True, separators=(",", ":")) + "\n")
    os.replace(tmp, out_path)
    if pending:
        logger.warning("%d videos pending metadata review", len(pending))
    return out_path


def _load_collected(ctx: RunContext, in_path: Optional[Path] = None) -> list[dict]:
    path = in_path or (ctx.workdir / "collect" / "videos.jsonl")
    if not path.exists():
        raise StageError(f"collect output missing: {path}")
    records = []
    with path.open("r", encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records


def stage_video(ctx: RunContext, in_path: Optional[Path] = None) -> list[str]:
    """Audio, ASR, rule + dual-judge filters, refinement. Returns kept ids."""
    manifest = ctx.manifest("video")
    records = _load_collected(ctx, in_path)

    def work(record: dict):
        video_id = record["video_id"]
        video_ref = ctx.resolve_video(video_id)
        item_hash = file_hash(video_ref)
        if manifest.is_done(video_id, item_hash):
            return None
        meta = _meta_from_dict(record)
        audio_path = ctx.workdir / "audio" / f"{video_id}.wav"
        result = video_stage.process_video(
            meta,
            video_ref,
            record.get("point_id", meta.source_point),
            ctx.services,
            ctx.config,
            audio_path,
        )
        return item_hash, result

    for record, outcome in _ordered_parallel(records, work, _workers(ctx.config)):
        video_id = record["video_id"]
        if outcome is None:
            continue  # already complete
        item_hash, result = outcome
        if result.verdict.final == video_stage.FINAL_PENDING:
            logger.warning("video %s pending: %s", video_id, "; ".join(result.notes))
            continue
        payload = {
            "verdict": _verdict_to_dict(result.verdict),
            "language": result.language,
            "duration_s": result.duration_s,
            "refine_failures": list(result.refine_failures),
        }
        if result.verdict.final == video_stage.FINAL_KEPT:
            payload["transcript"] = _transcript_to_dict(result.transcript)
            _write_json(ctx.workdir / "video" / f"{video_id}.json", payload)
            manifest.record(video_id, item_hash, output_keys=(f"video/{video_id}.json",))
        else:
            _write_json(ctx.workdir / "video" / f"{video_id}.json", payload)
            manifest.record(
                video_id,
                item_hash,
                drop_reason=result.verdict.final_reason or "dropped",
            )
    return manifest.kept_keys()


def stage_clip(ctx: RunContext) -> list[str]:
    """Cut clips from refined paragraphs and run the visual filter."""
    manifest = ctx.manifest("clip")
    video_manifest = ctx.manifest("video")
    kept_videos = video_manifest.kept_keys()

    def work(video_id: str):
        video_path = ctx.workdir / "video" / f"{video_id}.json"
        if not video_path.exists():
            raise StageError(f"video stage output missing for {video_id}")
        item_hash = file_hash(video_path)
        if manifest.is_done(video_id, item_hash):
            return None
        payload = _read_json(video_path)
        transcript = _transcript_from_dict(payload["transcript"])
        clips = clip_stage.cut_clips(
            video_id, transcript.refined_paragraphs, payload["duration_s"]
        )
        video_ref = ctx.resolve_video(video_id)
        filtered = clip_stage.filter_clips(video_ref, clips, ctx.services, ctx.config)
        return item_hash, filtered

    for video_id, outcome in _ordered_parallel(kept_videos, work, _workers(ctx.config)):
        if outcome is None:
            continue
        item_hash, clips = outcome
        drop_log = [
            {
                "clip_id": c.clip_id,
                "similarity": c.caption_asr_similarity,
                "threshold": ctx.config.caption_asr_sim_threshold,
            }
            for c in clips
            if c.status == "dropped_visual"
        ]
        payload = {
            "video_id": video_id,
            "clips": [_clip_to_dict(c) for c in clips],
            "drop_log": drop_log,
        }
        _write_json(ctx.workdir / "clip" / f"{video_id}.json", payload)
        manifest.record(video_id, item_hash, output_keys=(f"clip/{video_id}.json",))
    return manifest.kept_keys()


def stage_frame(ctx: RunContext) -> list[str]:
    """Keyframe extraction, OCR scoring, and per-video OCR deduplication."""
    manifest = ctx.manifest("frame")
    clip_manifest = ctx.manifest("clip")
    video_ids = clip_manifest.kept_keys()

    def work(video_id: str):
        clip_path = ctx.workdir / "clip" / f"{video_id}.json"
        if not clip_path.exists():
            raise StageError(f"clip stage output missing for {video_id}")
        item_hash = file_hash(clip_path)
        if manifest.is_done(video_id, item_hash):
            return None
        clips = [_clip_from_dict(c) for c in _read_json(clip_path)["clips"]]
        video_ref = ctx.resolve_video(video_id)
        kept, dropped, notes = frame_stage.process_video_frames(
            video_ref, video_id, clips, ctx.services, ctx.config, ctx.workdir
        )
        return item_hash, kept, dropped, notes

    for video_id, outcome in _ordered_parallel(video_ids, work, _workers(ctx.config)):
        if outcome is None:
            continue
        item_hash, kept, dropped, notes = outcome
        payload = {
            "video_id": video_id,
            "keyframes": [_keyframe_to_dict(k) for k in kept],
            "dropped": [_keyframe_to_dict(k) for k in dropped],
            "notes": notes,
        }
        _write_json(ctx.workdir / "frame" / f"{video_id}.json", payload)
        manifest.record(video_id, item_hash, output_keys=(f"frame/{video_id}.json",))
    return manifest.kept_keys()


def stage_assemble(ctx: RunContext) -> Path:
    """Interleave each video chronologically and pack into samples."""
    manifest = ctx.manifest("assemble")
    frame_manifest = ctx.manifest("frame")
    video_ids = frame_manifest.kept_keys()
    out_path = ctx.workdir / "corpus" / "corpus.jsonl"

    hasher_input = []
    for video_id in video_ids:
        frame_path = ctx.workdir / "frame" / f"{video_id}.json"
        if not frame_path.exists():
            raise StageError(f"frame stage output missing for {video_id}")
        hasher_input.append(f"{video_id}:{file_hash(frame_path)}")
    corpus_hash = content_hash("\n".join(hasher_input).encode())
    if manifest.is_done("corpus", corpus_hash) and out_path.exists():
        return out_path

    videos: list[tuple[str, list[assembler.Fragment]]] = []
    for video_id in video_ids:
        clips = [
            _clip_from_dict(c)
            for c in _read_json(ctx.workdir / "clip" / f"{video_id}.json")["clips"]
        ]
        if any(c.status == CLIP_PENDING for c in clips):
            logger.warning("skipping %s: clips still pending", video_id)
            continue
        frame_payload = _read_json(ctx.workdir / "frame" / f"{video_id}.json")
        keyframes = [_keyframe_from_dict(k) for k in frame_payload["keyframes"]]
        by_clip: dict[str, list[Keyframe]] = {}
        for kf in keyframes:
            by_clip.setdefault(kf.clip_id, []).append(kf)
        videos.append((video_id, assembler.build_fragments(clips, by_clip)))

    result = assembler.pack(videos, ctx.config)
    assembler.emit(result, out_path, ctx.config, manifest=manifest)
    manifest.record("corpus", corpus_hash, output_keys=("corpus/corpus.jsonl",))
    return out_path


def stage_metrics(ctx: RunContext, corpus_path: Optional[Path] = None) -> Path:
    """Audit the emitted corpus: stats, image similarity, perplexity."""
    corpus_path = corpus_path or (ctx.workdir / "corpus" / "corpus.jsonl")
    if not corpus_path.exists():
        raise StageError(f"corpus missing: {corpus_path}")
    samples = list(read_corpus(corpus_path))
    loader = metrics.file_image_loader(ctx.workdir)
    report = {
        "stats": metrics.corpus_stats(samples),
        "insi_sim": metrics.insi_sim(
            samples, loader, ctx.services.image_embedder
        ).as_dict(),
    }
    if ctx.services.perplexity is not None:
        ppl = metrics.ppl_report(samples, ctx.services.perplexity)
        report["ppl"] = {"mean_ppl": ppl["mean_ppl"], "n_failed": ppl["n_failed"]}
    out_path = ctx.workdir / "reports" / "metrics.json"
    _write_json(out_path, report)
    return out_path


def run(
    ctx: RunContext,
    stage: str,
    taxonomy_path: Optional[Path] = None,
    backend=None,
) -> int:
    """Run one stage or all of them in order. Returns the exit code."""
    if stage not in STAGES + ("all",):
        raise ValidationError(f"unknown stage {stage!r}")
    order = STAGES if stage == "all" else (stage,)
    for name in order:
        logger.info("stage %s starting", name)
        if name == "collect":
            if taxonomy_path is None or backend is None:
                raise StageError("collect requires a taxonomy and a search backend")
            stage_collect(ctx, taxonomy_path, backend)
        elif name == "video":
            stage_video(ctx)
        elif name == "clip":
            stage_clip(ctx)
        elif name == "frame":
            stage_frame(ctx)
        elif name == "assemble":
            stage_assemble(ctx)
        elif name == "metrics":
            stage_metrics(ctx)
        logger.info("stage %s done", name)
    return 0


def doctor(config: PipelineConfig, workdir: Optional[Path] = None, mock: bool = False) -> list[dict]:
    """Diagnostic checks; returns [{check, ok, detail}] without raising."""
    checks: list[dict] = []

    ffmpeg = shutil.which("ffmpeg")
    checks.append(
        {
            "check": "media-toolkit",
            "ok": ffmpeg is not None,
            "detail": ffmpeg or "ffmpeg not on PATH (synthetic .npz backend still available)",
        }
    )

    if mock or not config.service_base_url:
        checks.append({"check": "services", "ok": True, "detail": "mock mode"})
    else:
        from .services.http import HttpServiceClient
        from .services.base import ServiceError

        client = HttpServiceClient(
            config.service_base_url, token=config.service_token, attempts=1, timeout_s=5
        )
        probes = {
            "/refine": lambda: client.refine_text("ping"),
            "/score": lambda: client.score_transcript("ping", "subject/c/sc/p"),
            "/embed": lambda: client.embed_texts(["ping"]),
            "/ppl": lambda: client.perplexity("ping"),
            "/transcribe": lambda: client.transcribe(_empty_wav()),
        }
        for endpoint, probe in probes.items():
            try:
                probe()
                checks.append({"check": endpoint, "ok": True, "detail": "reachable"})
            except ServiceError as exc:
                checks.append(
                    {
                        "check": endpoint,
                        "ok": False,
                        "detail": f"{config.service_base_url}{endpoint}: {exc}",
                    }
                )

    if workdir is not None:
        try:
            workdir.mkdir(parents=True, exist_ok=True)
            probe = workdir / ".doctor-probe"
            probe.write_text("ok", encoding="utf-8")
            probe.unlink()
            checks.append({"check": "workdir", "ok": True, "detail": str(workdir)})
        except OSError as exc:
            checks.append({"check": "workdir", "ok": False, "detail": f"{workdir}: {exc}"})
    return checks


def _empty_wav() -> Path:
    import tempfile

    from .media import write_wav
    import numpy as np

    path = Path(tempfile.gettempdir()) / "vidcorpus-doctor.wav"
    write_wav(path, np.zeros(0, dtype=np.int16))
    return path
