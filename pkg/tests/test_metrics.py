"""Corpus statistics, in-sample image similarity, shuffling, adapters."""
from __future__ import annotations

import json

import numpy as np
import pytest

import vidcorpus.metrics as metrics_mod
from vidcorpus.metrics import (
    adapt_external,
    corpus_stats,
    insi_sim,
    ppl_report,
    report_to_csv,
    sample_image_similarity,
    shuffle_images,
)
from vidcorpus.models import ELEM_ASR, ELEM_IMAGE
from vidcorpus.services.base import cosine
from vidcorpus.services.mocks import MockImageEmbedder, MockPerplexity

from conftest import build_sample, image_element, text_element


def _sample_with_images(i: int, n_images: int, sample_id=None):
    elements = []
    for k in range(n_images):
        elements.append(image_element(f"img://{i}/{k}", float(k)))
        elements.append(text_element(f"text {i} {k} alpha beta"))
    return build_sample(sample_id=sample_id or f"s{i:03d}", elements=elements)


class TestCorpusStats:
    def test_hand_counted_fixture(self):
        samples = [_sample_with_images(i, n) for i, n in enumerate([2, 4, 6])]
        stats = corpus_stats(samples)
        assert stats["images"] == {"min": 2, "max": 6, "avg": 4.0}
        assert stats["n_samples"] == 3

    def test_single_sample_min_equals_max(self):
        stats = corpus_stats([_sample_with_images(0, 3)])
        assert stats["images"]["min"] == stats["images"]["max"] == 3
        assert stats["images"]["avg"] == 3.0

    def test_empty_corpus(self):
        assert corpus_stats([])["n_samples"] == 0


def _image_bank(rng, n: int, size: int = 16):
    return {f"img{i}": rng.integers(0, 256, size=(size, size), dtype=np.uint8) for i in range(n)}


class TestInSampleSimilarity:
    def test_identical_images_score_one(self, rng):
        img = rng.integers(0, 256, size=(16, 16), dtype=np.uint8)
        images = [img, img.copy(), img.copy(), img.copy()]
        embeddings = MockImageEmbedder().embed_images(images)
        assert sample_image_similarity(images, embeddings) == pytest.approx(1.0, abs=1e-9)

    def test_stubbed_pair_scores_average(self, monkeypatch):
        # Pairwise combined scores {0.8, 0.6, 0.4} -> mean 0.6.
        scores = {(0, 1): 0.8, (0, 2): 0.6, (1, 2): 0.4}

        def stub(img_a, img_b, emb_a, emb_b):
            return scores[(int(img_a[0, 0]), int(img_b[0, 0]))]

        monkeypatch.setattr(metrics_mod, "pair_similarity", stub)
        images = [np.full((4, 4), v, dtype=np.uint8) for v in (0, 1, 2)]
        embeddings = MockImageEmbedder().embed_images(images)
        assert sample_image_similarity(images, embeddings) == pytest.approx(0.6, abs=1e-12)

    def test_bucketing_and_overall_average(self, rng):
        bank = _image_bank(rng, 10)

        def loader(ref):
            return bank[ref].astype(np.float64)

        samples = []
        for i, L in enumerate([4, 4, 5, 9, 1]):
            elements = [image_element(f"img{(i + k) % 10}", float(k)) for k in range(L)]
            elements.append(text_element("t"))
            samples.append(build_sample(sample_id=f"s{i}", elements=elements))
        report = insi_sim(samples, loader, MockImageEmbedder())
        assert report.n_samples_per_L[4] == 2
        assert report.n_samples_per_L[5] == 1
        assert report.n_outside_buckets == 2  # L=9 and L=1 fall outside 4..8
        present = [report.per_L[L] for L in report.per_L]
        assert report.overall_avg == pytest.approx(sum(present) / len(present), abs=1e-12)

    def test_brute_force_equivalence_and_permutation_invariance(self, rng):
        from vidcorpus.ssim import compute_ssim

        bank = _image_bank(rng, 6)

        def loader(ref):
            return bank[ref].astype(np.float64)

        refs = [f"img{k}" for k in range(5)]
        elements = [image_element(r, float(i)) for i, r in enumerate(refs)]
        sample = build_sample(sample_id="s", elements=elements + [text_element("t")])
        report = insi_sim([sample], loader, MockImageEmbedder())

        # Independent double loop over unordered pairs.
        images = [loader(r) for r in refs]
        embeddings = MockImageEmbedder().embed_images(images)
        total, pairs = 0.0, 0
        for i in range(len(images) - 1):
            for j in range(i + 1, len(images)):
                cos = float(np.dot(embeddings[i].array, embeddings[j].array))
                total += (cos + compute_ssim(images[i], images[j])) / 2.0
                pairs += 1
        assert report.per_L[5] == pytest.approx(total / pairs, abs=1e-9)

        # Permuting the images leaves the metric unchanged.
        perm = rng.permutation(5)
        shuffled_refs = [refs[i] for i in perm]
        elements = [image_element(r, float(i)) for i, r in enumerate(shuffled_refs)]
        sample_p = build_sample(sample_id="sp", elements=elements + [text_element("t")])
        report_p = insi_sim([sample_p], loader, MockImageEmbedder())
        assert report_p.per_L[5] == pytest.approx(report.per_L[5], abs=1e-9)

    def test_csv_output(self, rng):
        bank = _image_bank(rng, 4)
        samples = [
            build_sample(
                sample_id="s",
                elements=[image_element(f"img{k}", float(k)) for k in range(4)]
                + [text_element("t")],
            )
        ]
        report = insi_sim(samples, lambda r: bank[r].astype(float), MockImageEmbedder())
        csv = report_to_csv(report)
        assert csv.startswith("L,score\n4,")


class TestShuffle:
    def _corpus(self, n: int, images_per_sample: int = 4):
        return [_sample_with_images(i, images_per_sample) for i in range(n)]

    def test_exact_selection_count(self):
        samples = self._corpus(10)
        shuffled = shuffle_images(samples, p=0.2, seed=7)
        changed = sum(
            1
            for a, b in zip(samples, shuffled)
            if [e.image_ref for e in a.elements if e.kind == ELEM_IMAGE]
            != [e.image_ref for e in b.elements if e.kind == ELEM_IMAGE]
        )
        assert changed == 2

    def test_full_shuffle_preserves_multiset_and_text(self):
        samples = self._corpus(8)
        shuffled = shuffle_images(samples, p=1.0, seed=3)
        for before, after in zip(samples, shuffled):
            assert sorted(e.image_ref for e in before.elements if e.kind == ELEM_IMAGE) == sorted(
                e.image_ref for e in after.elements if e.kind == ELEM_IMAGE
            )
            assert [
                (i, e.text) for i, e in enumerate(before.elements) if e.kind != ELEM_IMAGE
            ] == [(i, e.text) for i, e in enumerate(after.elements) if e.kind != ELEM_IMAGE]
            assert before.n_images == after.n_images
            assert before.n_text_tokens == after.n_text_tokens

    def test_seeded_determinism(self):
        samples = self._corpus(12)
        assert shuffle_images(samples, 0.5, seed=11) == shuffle_images(samples, 0.5, seed=11)

    def test_invalid_ratio_is_argument_error(self):
        with pytest.raises(ValueError):
            shuffle_images(self._corpus(2), 0.0, seed=1)
        with pytest.raises(ValueError):
            shuffle_images(self._corpus(2), 1.5, seed=1)

    def test_all_identical_images_pass_through(self):
        elements = [image_element("same", 0.0) for _ in range(3)]
        elements = [
            image_element("same", 1.0),
            image_element("same", 1.0),
            text_element("t"),
        ]
        sample = build_sample(sample_id="s", elements=elements)
        out = shuffle_images([sample], 1.0, seed=1)
        assert out[0] == sample


class TestPplReport:
    def test_single_word_repetition_scores_one(self):
        samples = [
            build_sample(
                sample_id="s",
                elements=[image_element("i", 0.0), text_element("word word word")],
            )
        ]
        report = ppl_report(samples, MockPerplexity("word word"))
        assert report["mean_ppl"] == pytest.approx(1.0, abs=1e-12)

    def test_uniform_model_scores_vocab_size(self):
        samples = [
            build_sample(
                sample_id="s",
                elements=[image_element("i", 0.0), text_element("a b")],
            )
        ]
        report = ppl_report(samples, MockPerplexity("a b c d e"))
        assert report["mean_ppl"] == pytest.approx(5.0, abs=1e-12)

    def test_failures_are_skipped_and_counted(self):
        class Exploding:
            def perplexity(self, text):
                raise ValueError("boom")

        samples = [_sample_with_images(0, 1)]
        report = ppl_report(samples, Exploding())
        assert report["n_failed"] == 1 and report["per_sample"] == []

    def test_refined_leq_raw_direction(self):
        raw_text = "um the angle uh is um ninety degrees um"
        refined_text = "the angle is ninety degrees"
        ppl = MockPerplexity("the angle is ninety degrees and the sum of angles")
        raw = ppl_report(
            [build_sample(sample_id="r", elements=[image_element("i", 0.0), text_element(raw_text)])],
            ppl,
        )
        refined = ppl_report(
            [
                build_sample(
                    sample_id="f",
                    elements=[image_element("i", 0.0), text_element(refined_text)],
                )
            ],
            ppl,
        )
        assert refined["mean_ppl"] <= raw["mean_ppl"]


class TestAdapters:
    def test_matched_list(self, tmp_path):
        records = [
            {
                "id": "m0",
                "texts": ["first text", "second text"],
                "images": [
                    {"image_ref": "a.png", "matched_text_index": 1},
                    {"image_ref": "b.png", "matched_text_index": 0},
                ],
            }
        ]
        path = tmp_path / "m.jsonl"
        path.write_text("\n".join(json.dumps(r) for r in records))
        samples, errors = adapt_external(path, "matched-list")
        assert errors == []
        kinds = [e.kind for e in samples[0].elements]
        assert kinds == [ELEM_IMAGE, ELEM_ASR, ELEM_IMAGE, ELEM_ASR]
        assert samples[0].elements[0].image_ref == "b.png"
        assert samples[0].n_images == 2

    def test_parallel_list_with_nulls(self, tmp_path):
        records = [
            {"id": "p0", "images": ["x.png", None, "y.png"], "texts": [None, "mid", None]}
        ]
        path = tmp_path / "p.jsonl"
        path.write_text("\n".join(json.dumps(r) for r in records))
        samples, errors = adapt_external(path, "parallel-list")
        assert errors == []
        assert [e.kind for e in samples[0].elements] == [ELEM_IMAGE, ELEM_ASR, ELEM_IMAGE]

    def test_malformed_record_reports_line_number(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        lines = [
            json.dumps({"id": "ok", "texts": ["t"], "images": []}),
            "{not json",
            json.dumps({"id": "bad-idx", "texts": ["t"], "images": [{"image_ref": "a", "matched_text_index": 9}]}),
        ]
        path.write_text("\n".join(lines))
        samples, errors = adapt_external(path, "matched-list")
        assert len(samples) == 1
        assert len(errors) == 2
        assert errors[0].startswith("line 2:")
        assert errors[1].startswith("line 3:")

    def test_unknown_format_is_argument_error(self, tmp_path):
        path = tmp_path / "x.jsonl"
        path.write_text("")
        with pytest.raises(ValueError, match="format"):
            adapt_external(path, "webdoc")

    def test_adapted_stream_feeds_stats(self, tmp_path):
        records = [
            {"texts": ["one"], "images": [{"image_ref": "a", "matched_text_index": 0}]},
            {"texts": ["one two"], "images": []},
        ]
        path = tmp_path / "m.jsonl"
        path.write_text("\n".join(json.dumps(r) for r in records))
        samples, _ = adapt_external(path, "matched-list")
        stats = corpus_stats(samples)
        assert stats["images"]["min"] == 0  # external corpora may lack images
        assert stats["tokens"]["max"] == 2
