"""Structural similarity, keyframe extractors, OCR scoring and dedup."""
from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import vidcorpus.frame_stage as frame_stage
from vidcorpus.config import PipelineConfig
from vidcorpus.frame_stage import (
    Frame,
    dedup_ocr,
    extract_keyframes_pixel,
    extract_keyframes_semantic,
    extract_keyframes_ssim,
    ocr_and_filter,
    sample_frames,
    token_jaccard,
)
from vidcorpus.models import Keyframe, VideoClip
from vidcorpus.services.base import EmbeddingVector, TransportError
from vidcorpus.services.mocks import MockImageEmbedder
from vidcorpus.ssim import C1, C2, compute_ssim, to_grayscale

from conftest import random_frames


def ssim_oracle(a: np.ndarray, b: np.ndarray, win: int = 8) -> float:
    """Independent per-window evaluation of the similarity formula."""
    a = a.astype(np.float64)
    b = b.astype(np.float64)
    h, w = a.shape
    win = min(win, h, w)
    values = []
    for i in range(h - win + 1):
        for j in range(w - win + 1):
            wa = a[i : i + win, j : j + win]
            wb = b[i : i + win, j : j + win]
            mu1, mu2 = wa.mean(), wb.mean()
            v1 = ((wa - mu1) ** 2).mean()
            v2 = ((wb - mu2) ** 2).mean()
            cov = ((wa - mu1) * (wb - mu2)).mean()
            values.append(
                ((2 * mu1 * mu2 + C1) * (2 * cov + C2))
                / ((mu1**2 + mu2**2 + C1) * (v1 + v2 + C2))
            )
    return sum(values) / len(values)


class TestComputeSsim:
    def test_identical_frames_score_one(self, rng):
        frame = rng.integers(0, 256, size=(32, 32), dtype=np.uint8)
        assert compute_ssim(frame, frame) == 1.0

    def test_black_vs_white_closed_form(self):
        black = np.zeros((64, 64))
        white = np.full((64, 64), 255.0)
        expected = C1 / (255.0**2 + C1)  # ~1.0e-4
        assert compute_ssim(black, white) == pytest.approx(expected, abs=1e-6)
        assert compute_ssim(black, white) == pytest.approx(1.0e-4, abs=1e-6)

    def test_symmetry(self, rng):
        a = rng.integers(0, 256, size=(24, 24), dtype=np.uint8)
        b = rng.integers(0, 256, size=(24, 24), dtype=np.uint8)
        assert compute_ssim(a, b) == pytest.approx(compute_ssim(b, a), abs=1e-12)

    def test_matches_brute_force_oracle(self, rng):
        for _ in range(10):
            a = rng.integers(0, 256, size=(32, 32), dtype=np.uint8)
            b = np.clip(
                a.astype(int) + rng.integers(-30, 31, size=(32, 32)), 0, 255
            ).astype(np.uint8)
            assert compute_ssim(a, b) == pytest.approx(ssim_oracle(a, b), abs=1e-9)

    def test_dimension_mismatch_is_argument_error(self):
        with pytest.raises(ValueError, match="shapes differ"):
            compute_ssim(np.zeros((8, 8)), np.zeros((8, 9)))

    def test_small_frames_use_whole_frame_window(self):
        a = np.zeros((4, 4))
        assert compute_ssim(a, a) == 1.0

    def test_luma_conversion_weights(self):
        rgb = np.zeros((2, 2, 3))
        rgb[..., 0] = 100  # red only
        gray = to_grayscale(rgb)
        assert gray[0, 0] == pytest.approx(29.9)


def _frames(arrays) -> list[Frame]:
    return [Frame(index=i, timestamp_s=float(i), pixels=np.asarray(a)) for i, a in enumerate(arrays)]


class TestSsimExtractor:
    def test_constant_sequence_keeps_first_only(self):
        a = np.full((16, 16), 128, dtype=np.uint8)
        keep = extract_keyframes_ssim(_frames([a, a.copy(), a.copy()]), threshold=0.9)
        assert [f.index for f in keep] == [0]

    def test_hand_trace_of_reference_updates(self, monkeypatch):
        # Scripted similarities: s(f0,f1)=0.98, s(f0,f2)=0.70, s(f2,f3)=0.99.
        frames = _frames([np.full((8, 8), v, dtype=np.uint8) for v in (0, 1, 2, 3)])
        table = {(0, 1): 0.98, (0, 2): 0.70, (2, 3): 0.99}

        def scripted(a, b):
            return table[(int(a[0, 0]), int(b[0, 0]))]

        monkeypatch.setattr(frame_stage, "compute_ssim", scripted)
        keep = frame_stage.extract_keyframes_ssim(frames, threshold=0.85)
        assert [f.index for f in keep] == [0, 2]

    def test_threshold_zero_keeps_first_frame_only(self, rng):
        frames = _frames(random_frames(rng, 12))
        keep = extract_keyframes_ssim(frames, threshold=0.0)
        assert [f.index for f in keep] == [0]

    def test_threshold_near_one_keeps_all_distinct_random_frames(self, rng):
        frames = _frames(random_frames(rng, 12, drift=False))
        keep = extract_keyframes_ssim(frames, threshold=1 - 1e-9)
        assert [f.index for f in keep] == list(range(12))

    def test_output_is_subsequence_containing_first(self, rng):
        for seed in range(5):
            local = np.random.default_rng(seed)
            frames = _frames(random_frames(local, 20))
            for threshold in (0.3, 0.6, 0.9):
                keep = extract_keyframes_ssim(frames, threshold)
                indices = [f.index for f in keep]
                assert indices[0] == 0
                assert indices == sorted(indices)
                assert len(set(indices)) == len(indices)

    def test_monotone_in_threshold_on_drifting_sequences(self):
        # Raising the threshold can only add keyframes for these sequences
        # (seeded, not adversarial: the chain rule is not a theorem for
        # arbitrary similarity values).
        for seed in range(8):
            rng = np.random.default_rng(100 + seed)
            frames = _frames(random_frames(rng, 24))
            low = {f.index for f in extract_keyframes_ssim(frames, 0.6)}
            high = {f.index for f in extract_keyframes_ssim(frames, 0.9)}
            assert low <= high


class TestAblationExtractors:
    def test_pixel_identical_keeps_first(self):
        a = np.full((16, 16), 60, dtype=np.uint8)
        keep = extract_keyframes_pixel(_frames([a, a.copy()]), pixel_threshold=2.0)
        assert [f.index for f in keep] == [0]

    def test_pixel_black_to_white_flip_keeps_both(self):
        black = np.zeros((16, 16), dtype=np.uint8)
        white = np.full((16, 16), 255, dtype=np.uint8)
        keep = extract_keyframes_pixel(_frames([black, white]), pixel_threshold=100.0)
        assert [f.index for f in keep] == [0, 1]

    def test_semantic_identical_keeps_first(self):
        a = np.full((16, 16), 60, dtype=np.uint8)
        keep = extract_keyframes_semantic(
            _frames([a, a.copy()]), MockImageEmbedder(), cos_threshold=0.95
        )
        assert [f.index for f in keep] == [0]

    def test_semantic_blind_embedder_underproduces(self, rng):
        # An embedder collapsing every slide to one vector misses all changes.
        class BlindEmbedder:
            def embed_images(self, images):
                vec = EmbeddingVector.from_array(np.ones(4))
                return [vec for _ in images]

        frames = _frames(random_frames(rng, 10, drift=False))
        keep = extract_keyframes_semantic(frames, BlindEmbedder(), cos_threshold=0.95)
        assert [f.index for f in keep] == [0]

    def test_semantic_failure_propagates_for_pending(self, rng):
        class DownEmbedder:
            def embed_images(self, images):
                raise TransportError("embedder down")

        frames = _frames(random_frames(rng, 4))
        with pytest.raises(TransportError):
            extract_keyframes_semantic(frames, DownEmbedder(), cos_threshold=0.9)


class TestSampleFrames:
    class _GridToolkit:
        def sample_frames(self, timestamps):
            return [np.zeros((4, 4), dtype=np.uint8) for _ in timestamps]

    def _clip(self, start: float, end: float) -> VideoClip:
        return VideoClip(clip_id="c", video_id="v", start_s=start, end_s=end, asr_text="t")

    def test_fifteen_seconds_at_1fps(self):
        frames = sample_frames(self._clip(0, 15), self._GridToolkit(), fps=1.0)
        assert len(frames) == 15
        assert frames[0].timestamp_s == 0.0 and frames[-1].timestamp_s == 14.0

    def test_fifteen_seconds_at_fifth_fps(self):
        frames = sample_frames(self._clip(0, 15), self._GridToolkit(), fps=0.2)
        assert [f.timestamp_s for f in frames] == [0.0, 5.0, 10.0]

    def test_one_second_clip_single_frame(self):
        frames = sample_frames(self._clip(10, 11), self._GridToolkit(), fps=0.1)
        assert len(frames) == 1 and frames[0].timestamp_s == 10.0


class _TableOcr:
    def __init__(self, table):
        self.table = table
        self.down = False

    def ocr_frame(self, image_ref):
        if self.down:
            raise TransportError("ocr down")
        return self.table[str(image_ref)]


def _keyframe(i: int, ocr_text=None, ocr_kept=False) -> Keyframe:
    return Keyframe(
        frame_id=f"v/c/{i:04d}",
        clip_id="c",
        timestamp_s=float(i),
        image_ref=f"img{i}.png",
        ocr_text=ocr_text,
        ocr_kept=ocr_kept,
    )


class TestOcrAndFilter:
    CONFIG = PipelineConfig()

    def test_low_score_drops_frame(self):
        ocr = _TableOcr({"img0.png": {"text": "occluded", "informativeness": 1}})
        kept, dropped = ocr_and_filter([_keyframe(0)], ocr, self.CONFIG)
        assert kept == [] and len(dropped) == 1
        assert dropped[0].score == 1

    def test_high_score_keeps_with_text(self):
        ocr = _TableOcr({"img0.png": {"text": "slope formula", "informativeness": 5}})
        kept, dropped = ocr_and_filter([_keyframe(0)], ocr, self.CONFIG)
        assert dropped == [] and kept[0].ocr_text == "slope formula"
        assert kept[0].score == 5

    def test_service_failure_keeps_frame_flagged(self):
        ocr = _TableOcr({})
        ocr.down = True
        kept, dropped = ocr_and_filter([_keyframe(0), _keyframe(1)], ocr, self.CONFIG)
        assert len(kept) == 2 and dropped == []
        assert all(k.ocr_failed and k.ocr_text is None for k in kept)


class TestDedupOcr:
    def test_identical_consecutive_suppresses_second(self):
        frames = [_keyframe(0, "angle sum 180"), _keyframe(1, "angle sum 180")]
        out = dedup_ocr(frames, threshold=0.8)
        assert [k.ocr_kept for k in out] == [True, False]

    def test_disjoint_texts_both_kept(self):
        frames = [_keyframe(0, "alpha beta"), _keyframe(1, "gamma delta")]
        out = dedup_ocr(frames, threshold=0.8)
        assert [k.ocr_kept for k in out] == [True, True]

    def test_jaccard_half_below_threshold_keeps_both(self):
        # {a, b, c} vs {a, b, d}: intersection 2, union 4 -> 0.5 < 0.8.
        assert token_jaccard("a b c", "a b d") == pytest.approx(0.5)
        frames = [_keyframe(0, "a b c"), _keyframe(1, "a b d")]
        out = dedup_ocr(frames, threshold=0.8)
        assert [k.ocr_kept for k in out] == [True, True]

    def test_never_drops_images(self):
        frames = [_keyframe(i, "same text") for i in range(5)]
        out = dedup_ocr(frames, threshold=0.5)
        assert len(out) == len(frames)

    def test_idempotent(self):
        frames = [
            _keyframe(0, "one two"),
            _keyframe(1, "one two"),
            _keyframe(2, "three four"),
            _keyframe(3, None),
        ]
        once = dedup_ocr(frames, threshold=0.8)
        twice = dedup_ocr(once, threshold=0.8)
        assert once == twice

    def test_comparison_is_against_kept_only(self):
        # B duplicates A (suppressed); C overlaps B but not A: C must be
        # compared against kept texts only, so C survives.
        frames = [
            _keyframe(0, "alpha beta gamma delta"),
            _keyframe(1, "alpha beta gamma delta"),
            _keyframe(2, "epsilon zeta eta theta"),
        ]
        out = dedup_ocr(frames, threshold=0.6)
        assert [k.ocr_kept for k in out] == [True, False, True]

    def test_empty_ocr_never_kept(self):
        out = dedup_ocr([_keyframe(0, None), _keyframe(1, "")], threshold=0.8)
        assert [k.ocr_kept for k in out] == [False, False]
