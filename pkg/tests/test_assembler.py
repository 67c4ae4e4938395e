"""Interleaving order, fragment atomicity, packing strategies, emission."""
from __future__ import annotations

import dataclasses

import pytest
from hypothesis import given, settings, strategies as st

from vidcorpus.assembler import (
    Fragment,
    build_fragments,
    clip_elements,
    emit,
    interleave_video,
    pack,
    summarize,
)
from vidcorpus.config import PipelineConfig
from vidcorpus.corpus import count_tokens
from vidcorpus.manifest import ManifestStore
from vidcorpus.models import (
    CLIP_DROPPED_VISUAL,
    CLIP_KEPT,
    CLIP_PENDING,
    ELEM_ASR,
    ELEM_EOV,
    ELEM_IMAGE,
    ELEM_OCR,
    InterleavedElement,
    Keyframe,
    ValidationError,
    VideoClip,
)

CONFIG = PipelineConfig()


def make_clip(i: int, status: str = CLIP_KEPT, video_id: str = "vid", text=None) -> VideoClip:
    return VideoClip(
        clip_id=f"c{i:04d}",
        video_id=video_id,
        start_s=i * 15.0,
        end_s=(i + 1) * 15.0,
        asr_text=f"asr text {i}" if text is None else text,
        status=status,
    )


def make_keyframe(clip_i: int, frame_i: int, ocr=None, ocr_kept=False, video_id="vid") -> Keyframe:
    return Keyframe(
        frame_id=f"{video_id}/c{clip_i:04d}/{frame_i:04d}",
        clip_id=f"c{clip_i:04d}",
        timestamp_s=clip_i * 15.0 + frame_i,
        image_ref=f"frames/{video_id}/c{clip_i:04d}/{frame_i:04d}.png",
        ocr_text=ocr,
        ocr_kept=ocr_kept,
    )


class TestInterleave:
    def test_pattern_frames_ocr_asr_then_orphans(self):
        # kept(2 frames + ocr), dropped, kept(1 frame, no ocr):
        # [img, img, ocr, asr, asr, img, asr]
        clips = [
            make_clip(0),
            make_clip(1, status=CLIP_DROPPED_VISUAL),
            make_clip(2),
        ]
        kf = {
            "c0000": [
                make_keyframe(0, 0, ocr="slide text", ocr_kept=True),
                make_keyframe(0, 5),
            ],
            "c0002": [make_keyframe(2, 0)],
        }
        elements = interleave_video(clips, kf)
        assert [e.kind for e in elements] == [
            ELEM_IMAGE,
            ELEM_IMAGE,
            ELEM_OCR,
            ELEM_ASR,
            ELEM_ASR,
            ELEM_IMAGE,
            ELEM_ASR,
        ]
        # Images are time-ordered and carry their timestamps.
        assert elements[0].timestamp_s < elements[1].timestamp_s

    def test_all_dropped_video_is_text_only(self):
        clips = [make_clip(0, status=CLIP_DROPPED_VISUAL), make_clip(1, status=CLIP_DROPPED_VISUAL)]
        elements = interleave_video(clips, {})
        assert [e.kind for e in elements] == [ELEM_ASR, ELEM_ASR]

    def test_empty_video(self):
        assert interleave_video([], {}) == []

    def test_pending_clip_is_stage_error(self):
        with pytest.raises(ValidationError, match="pending"):
            clip_elements(make_clip(0, status=CLIP_PENDING), [])

    def test_ocr_joins_only_kept_texts(self):
        clip = make_clip(0)
        kf = [
            make_keyframe(0, 0, ocr="formula one", ocr_kept=True),
            make_keyframe(0, 1, ocr="formula one", ocr_kept=False),
            make_keyframe(0, 2, ocr="formula two", ocr_kept=True),
        ]
        elements = clip_elements(clip, kf)
        ocr_elements = [e for e in elements if e.kind == ELEM_OCR]
        assert len(ocr_elements) == 1
        assert ocr_elements[0].text == "formula one\nformula two"


class TestFragments:
    def test_orphans_attach_to_preceding_kept_clip(self):
        clips = [
            make_clip(0),
            make_clip(1, status=CLIP_DROPPED_VISUAL),
            make_clip(2, status=CLIP_DROPPED_VISUAL),
            make_clip(3),
        ]
        kf = {"c0000": [make_keyframe(0, 0)], "c0003": [make_keyframe(3, 0)]}
        fragments = build_fragments(clips, kf)
        assert len(fragments) == 2
        assert [e.kind for e in fragments[0].elements] == [ELEM_IMAGE, ELEM_ASR, ELEM_ASR, ELEM_ASR]
        assert [e.kind for e in fragments[1].elements] == [ELEM_IMAGE, ELEM_ASR]
        assert fragments[-1].last_of_video

    def test_leading_orphans_form_text_fragment(self):
        clips = [make_clip(0, status=CLIP_DROPPED_VISUAL), make_clip(1)]
        kf = {"c0001": [make_keyframe(1, 0)]}
        fragments = build_fragments(clips, kf)
        assert len(fragments) == 2
        assert fragments[0].n_images == 0


def _fragment(
    video_id: str, n_tokens: int, n_images: int = 1, last=False, t0: float = 0.0
) -> Fragment:
    elements = []
    for i in range(n_images):
        elements.append(
            InterleavedElement(
                kind=ELEM_IMAGE,
                image_ref=f"frames/{video_id}/{t0 + i}.png",
                timestamp_s=t0 + float(i),
            )
        )
    elements.append(InterleavedElement(kind=ELEM_ASR, text=" ".join(["w"] * n_tokens)))
    return Fragment(
        video_id=video_id,
        elements=tuple(elements),
        n_images=n_images,
        n_tokens=n_tokens,
        last_of_video=last,
    )


class TestPacking:
    def test_concat_greedy_hand_trace(self):
        # Costs 700 (V1a), 300 (V1b final), 800 (V2a final); budget 1200,
        # EOV costs 1: sample1 = [V1a, V1b, EOV] (1001), sample2 = [V2a, EOV] (801).
        config = dataclasses.replace(
            CONFIG, token_budget=1200, max_images_per_sample=100, packing_strategy="concat"
        )
        videos = [
            ("V1", [_fragment("V1", 700), _fragment("V1", 300, last=True)]),
            ("V2", [_fragment("V2", 800, last=True)]),
        ]
        result = pack(videos, config)
        assert len(result.samples) == 2
        s1, s2 = result.samples
        assert s1.n_text_tokens == 1001
        assert s2.n_text_tokens == 801
        assert s1.elements[-1].kind == ELEM_EOV
        assert s2.elements[-1].kind == ELEM_EOV
        assert s1.source_video_ids == ("V1",)
        assert s2.source_video_ids == ("V2",)
        assert result.oversized_sample_ids == []

    def test_per_video_bijection(self):
        config = dataclasses.replace(CONFIG, packing_strategy="per_video")
        videos = [(f"V{i}", [_fragment(f"V{i}", 10, last=True)]) for i in range(3)]
        result = pack(videos, config)
        assert len(result.samples) == 3
        assert [s.sample_id for s in result.samples] == ["V0", "V1", "V2"]
        # No EOV and no budget enforcement in per_video mode.
        assert all(e.kind != ELEM_EOV for s in result.samples for e in s.elements)

    def test_split_video_respects_budgets(self):
        config = dataclasses.replace(
            CONFIG, packing_strategy="split_video", token_budget=25, max_images_per_sample=3
        )
        fragments = [_fragment("V1", 10, n_images=2) for _ in range(4)]
        fragments[-1] = dataclasses.replace(fragments[-1], last_of_video=True)
        result = pack([("V1", fragments)], config)
        assert len(result.samples) == 4  # image budget allows one fragment each
        for sample in result.samples:
            assert sample.n_text_tokens <= 25
            assert sample.n_images <= 3

    def test_oversized_single_fragment_flagged_and_alone(self):
        config = dataclasses.replace(CONFIG, packing_strategy="concat", token_budget=50)
        videos = [
            ("V1", [_fragment("V1", 200, last=True)]),
            ("V2", [_fragment("V2", 10, last=True)]),
        ]
        result = pack(videos, config)
        assert len(result.samples) == 2
        assert result.samples[0].n_text_tokens == 201
        assert result.oversized_sample_ids == [result.samples[0].sample_id]
        assert result.samples[1].n_text_tokens == 11

    def test_zero_image_samples_suppressed_and_logged(self):
        config = dataclasses.replace(CONFIG, packing_strategy="per_video")
        videos = [
            ("V1", [_fragment("V1", 10, n_images=0, last=True)]),
            ("V2", [_fragment("V2", 10, n_images=1, last=True)]),
        ]
        result = pack(videos, config)
        assert [s.sample_id for s in result.samples] == ["V2"]
        assert [s.sample_id for s in result.suppressed] == ["V1"]

    @settings(max_examples=60, deadline=None)
    @given(
        st.lists(
            st.tuples(st.integers(1, 80), st.integers(0, 4)), min_size=1, max_size=12
        ),
        st.sampled_from(["concat", "split_video"]),
    )
    def test_budget_and_conservation_properties(self, sizes, strategy):
        config = dataclasses.replace(
            CONFIG, packing_strategy=strategy, token_budget=100, max_images_per_sample=6
        )
        videos = []
        for v, chunk in enumerate([sizes[i : i + 3] for i in range(0, len(sizes), 3)]):
            fragments = [
                _fragment(f"V{v}", tokens, n_images, t0=100.0 * k)
                for k, (tokens, n_images) in enumerate(chunk)
            ]
            fragments[-1] = dataclasses.replace(fragments[-1], last_of_video=True)
            videos.append((f"V{v}", fragments))
        result = pack(videos, config)

        oversized = set(result.oversized_sample_ids)
        for sample in result.samples:
            if sample.sample_id not in oversized:
                assert sample.n_text_tokens <= config.token_budget
                assert sample.n_images <= config.max_images_per_sample
            # Within one sample, per-video element subsequences stay ordered.
            sample.validate(eov_token=config.eov_token, count_tokens=count_tokens)

        # Conservation: fragment totals match sample totals (incl. suppressed),
        # plus one EOV token per video in concat mode.
        all_samples = result.samples + result.suppressed
        eov_tokens = len(videos) if strategy == "concat" else 0
        assert sum(s.n_images for s in all_samples) == sum(
            f.n_images for _, frags in videos for f in frags
        )
        assert sum(s.n_text_tokens for s in all_samples) == (
            sum(f.n_tokens for _, frags in videos for f in frags) + eov_tokens
        )

    def test_concat_video_order_is_input_order(self):
        config = dataclasses.replace(CONFIG, packing_strategy="concat", token_budget=10_000)
        videos = [
            ("A", [_fragment("A", 5, last=True)]),
            ("B", [_fragment("B", 5, last=True)]),
            ("C", [_fragment("C", 5, last=True)]),
        ]
        result = pack(videos, config)
        assert len(result.samples) == 1
        assert result.samples[0].source_video_ids == ("A", "B", "C")


class TestEmit:
    def test_rerun_is_byte_identical(self, tmp_path):
        config = dataclasses.replace(CONFIG, packing_strategy="concat")
        videos = [("V1", [_fragment("V1", 7, last=True)])]
        result = pack(videos, config)
        emit(result, tmp_path / "a.jsonl", config)
        emit(result, tmp_path / "b.jsonl", config)
        assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()

    def test_zero_samples_empty_file_valid_manifest(self, tmp_path):
        config = dataclasses.replace(CONFIG, packing_strategy="per_video")
        manifest = ManifestStore(tmp_path, "assemble", deterministic=True)
        from vidcorpus.assembler import PackResult

        stats = emit(PackResult(), tmp_path / "c.jsonl", config, manifest=manifest)
        assert (tmp_path / "c.jsonl").read_text() == ""
        assert stats.n_samples == 0
        assert manifest.get("emit-stats") is not None

    def test_stats_match_hand_count(self, tmp_path):
        config = dataclasses.replace(CONFIG, packing_strategy="per_video")
        videos = [
            ("V1", [_fragment("V1", 10, n_images=2, last=True)]),
            ("V2", [_fragment("V2", 20, n_images=4, last=True)]),
            ("V3", [_fragment("V3", 30, n_images=6, last=True)]),
        ]
        stats = emit(pack(videos, config), tmp_path / "c.jsonl", config)
        assert (stats.images_min, stats.images_max, stats.images_avg) == (2, 6, 4.0)
        assert (stats.tokens_min, stats.tokens_max, stats.tokens_avg) == (10, 30, 20.0)
        assert summarize([]).n_samples == 0
