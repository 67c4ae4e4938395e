"""Taxonomy handling, query expansion, and metadata-level video filtering.

The search backend is an interface (query string in, ranked metadata out);
the fixture backend reads a ``search.json`` table so collection is testable
offline. Live platform crawling is intentionally not implemented here.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .models import KnowledgePoint, ValidationError, VideoMeta
from .services.base import TransportError
from .services import mocks

PENDING = "pending"


@dataclass(frozen=True)
class SubCourse:
    name: str
    points: tuple[str, ...]


@dataclass(frozen=True)
class Course:
    name: str
    sub_courses: tuple[SubCourse, ...]


@dataclass(frozen=True)
class Subject:
    name: str
    courses: tuple[Course, ...]


@dataclass(frozen=True)
class Taxonomy:
    subjects: tuple[Subject, ...]

    def leaf_points(self) -> list[KnowledgePoint]:
        points = []
        for subject in self.subjects:
            for course in subject.courses:
                for sub in course.sub_courses:
                    for point in sub.points:
                        points.append(
                            KnowledgePoint(
                                subject=subject.name,
                                course=course.name,
                                sub_course=sub.name,
                                point=point,
                            )
                        )
        return points


@dataclass(frozen=True)
class SearchResult:
    point_id: str
    rank: int
    meta: VideoMeta


def load_taxonomy(path: str | Path) -> Taxonomy:
    """Load and validate the four-layer taxonomy from its JSON file.

    Every layer name must be non-empty and every leaf id unique; violations
    raise ValidationError naming the offender.
    """
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(raw, dict) or "subjects" not in raw:
        raise ValidationError("taxonomy file must hold an object with 'subjects'")
    subjects = []
    for s in raw["subjects"]:
        courses = []
        for c in s.get("courses", []):
            subs = []
            for sc in c.get("sub_courses", []):
                subs.append(SubCourse(name=sc.get("name", ""), points=tuple(sc.get("points", []))))
            courses.append(Course(name=c.get("name", ""), sub_courses=tuple(subs)))
        subjects.append(Subject(name=s.get("name", ""), courses=tuple(courses)))
    taxonomy = Taxonomy(subjects=tuple(subjects))

    seen: set[str] = set()
    for point in taxonomy.leaf_points():
        point.validate()
        if point.id in seen:
            raise ValidationError(f"duplicate knowledge point id: {point.id}")
        seen.add(point.id)
    return taxonomy


def expand_queries(taxonomy: Taxonomy) -> list[dict]:
    """One search query per leaf point, prefixed by its sub-course for
    disambiguation."""
    return [
        {"point_id": p.id, "query": f"{p.sub_course}: {p.point}"}
        for p in taxonomy.leaf_points()
    ]


def dedup_by_video_id(
    results: list[SearchResult],
) -> tuple[list[SearchResult], list[SearchResult]]:
    """First occurrence of each video_id wins; returns (kept, dropped) with
    input order preserved in both."""
    seen: set[str] = set()
    kept: list[SearchResult] = []
    dropped: list[SearchResult] = []
    for result in results:
        vid = result.meta.video_id
        if vid in seen:
            dropped.append(result)
        else:
            seen.add(vid)
            kept.append(result)
    return kept, dropped


def filter_metadata(
    meta: VideoMeta,
    judge,
    point: KnowledgePoint | str,
) -> tuple[str, Optional[str]]:
    """Metadata-level review: keep, drop(reason), or pending.

    A judge that stays unreachable after retries marks the item pending
    rather than dropping it, so the pipeline can continue.
    """
    if not meta.title:
        raise ValidationError(f"video {meta.video_id} has no title")
    try:
        decision, reason = judge.review_metadata(meta, point)
    except TransportError:
        return PENDING, None
    if decision == mocks.KEEP:
        return mocks.KEEP, None
    if reason not in mocks.DROP_REASONS:
        reason = "other"
    return mocks.DROP, reason


class FixtureSearchBackend:
    """Ranked results from ``search.json`` ({query: [VideoMeta dict, ...]})."""

    def __init__(self, fixtures_dir: str | Path):
        path = Path(fixtures_dir) / "search.json"
        self.table: dict = json.loads(path.read_text(encoding="utf-8")) if path.exists() else {}

    def search(self, query: str) -> list[VideoMeta]:
        return [
            VideoMeta(
                video_id=m["video_id"],
                title=m.get("title", ""),
                description=m.get("description", ""),
                comments=tuple(m.get("comments", ())),
                duration_s=m.get("duration_s", 0.0),
                language=m.get("language", "unknown"),
                source_point=m.get("source_point", ""),
            )
            for m in self.table.get(query, [])
        ]


class LiveSearchBackend:
    """Placeholder for a video-platform search API client.

    Crawling is out of scope; constructing one and calling search raises so
    misconfiguration fails loudly instead of silently returning nothing.
    """

    def __init__(self, platform: str = "default"):
        self.platform = platform

    def search(self, query: str) -> list[VideoMeta]:
        raise NotImplementedError(
            "live platform search is not bundled; point --backend at fixture:<dir>"
        )


def run_search(
    taxonomy: Taxonomy,
    backend,
    top_k: int,
) -> list[SearchResult]:
    """Expand queries and collect ranked results, truncated to top_k each."""
    results: list[SearchResult] = []
    for item in expand_queries(taxonomy):
        metas = backend.search(item["query"])[:top_k]
        for rank, meta in enumerate(metas, start=1):
            if not meta.source_point:
                meta = VideoMeta(
                    video_id=meta.video_id,
                    title=meta.title,
                    description=meta.description,
                    comments=meta.comments,
                    duration_s=meta.duration_s,
                    language=meta.language,
                    source_point=item["point_id"],
                )
            results.append(SearchResult(point_id=item["point_id"], rank=rank, meta=meta))
    return results
