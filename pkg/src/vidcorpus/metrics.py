"""Corpus auditing: statistics, in-sample image similarity, image-order
shuffling, perplexity reporting, and adapters for external corpus layouts.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .corpus import count_tokens
from .models import (
    ELEM_ASR,
    ELEM_IMAGE,
    ELEM_OCR,
    InterleavedElement,
    InterleavedSample,
    TEXT_KINDS,
    ValidationError,
)
from .services.base import EmbeddingVector, ServiceError, cosine
from .ssim import compute_ssim

logger = logging.getLogger(__name__)

DEFAULT_L_BUCKETS = (4, 5, 6, 7, 8)


def corpus_stats(samples: Iterable[InterleavedSample]) -> dict:
    """Image/token distribution: exact integer min/max, averages to one
    decimal."""
    images: list[int] = []
    tokens: list[int] = []
    for sample in samples:
        images.append(sample.n_images)
        tokens.append(sample.n_text_tokens)
    if not images:
        return {
            "n_samples": 0,
            "images": {"min": 0, "max": 0, "avg": 0.0},
            "tokens": {"min": 0, "max": 0, "avg": 0.0},
        }
    return {
        "n_samples": len(images),
        "images": {
            "min": min(images),
            "max": max(images),
            "avg": round(sum(images) / len(images), 1),
        },
        "tokens": {
            "min": min(tokens),
            "max": max(tokens),
            "avg": round(sum(tokens) / len(tokens), 1),
        },
    }


@dataclass
class InSiSimReport:
    """Per-bucket and overall in-sample image similarity."""

    per_L: dict[int, float] = field(default_factory=dict)
    overall_avg: float = 0.0
    n_samples_per_L: dict[int, int] = field(default_factory=dict)
    n_outside_buckets: int = 0
    n_excluded: int = 0

    def as_dict(self) -> dict:
        return {
            "per_L": {str(k): v for k, v in sorted(self.per_L.items())},
            "overall_avg": self.overall_avg,
            "n_samples_per_L": {str(k): v for k, v in sorted(self.n_samples_per_L.items())},
            "n_outside_buckets": self.n_outside_buckets,
            "n_excluded": self.n_excluded,
        }


def _pair_shape(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # Symmetric resize to the common minimum shape so pair scores do not
    # depend on argument order.
    if a.shape == b.shape:
        return a, b
    from PIL import Image

    h = min(a.shape[0], b.shape[0])
    w = min(a.shape[1], b.shape[1])

    def fit(x: np.ndarray) -> np.ndarray:
        img = Image.fromarray(np.asarray(x, dtype=np.uint8), mode="L")
        return np.asarray(img.resize((w, h), Image.BILINEAR), dtype=np.float64)

    return fit(a), fit(b)


def pair_similarity(
    img_a: np.ndarray,
    img_b: np.ndarray,
    emb_a: EmbeddingVector,
    emb_b: EmbeddingVector,
) -> float:
    """(semantic cosine + structural similarity) / 2 for one image pair."""
    a, b = _pair_shape(img_a, img_b)
    return (cosine(emb_a, emb_b) + compute_ssim(a, b)) / 2.0


def sample_image_similarity(
    images: Sequence[np.ndarray], embeddings: Sequence[EmbeddingVector]
) -> float:
    """Mean pair score over all unordered image pairs of one sample."""
    n = len(images)
    if n < 2:
        raise ValidationError("sample needs at least 2 images for pair similarity")
    total = 0.0
    pairs = 0
    for i in range(n - 1):
        for j in range(i + 1, n):
            total += pair_similarity(images[i], images[j], embeddings[i], embeddings[j])
            pairs += 1
    return total / pairs


def insi_sim(
    samples: Iterable[InterleavedSample],
    image_loader: Callable[[str], np.ndarray],
    image_embedder,
    buckets: Sequence[int] = DEFAULT_L_BUCKETS,
) -> InSiSimReport:
    """In-sample image similarity per image-count bucket.

    Samples are grouped by exact image count L; the bucket score is the mean
    over samples of the mean pair score, and overall_avg is the mean of the
    per-L values. Samples whose image count falls outside the buckets are
    counted but not scored.
    """
    report = InSiSimReport()
    sums: dict[int, float] = {L: 0.0 for L in buckets}
    counts: dict[int, int] = {L: 0 for L in buckets}
    for sample in samples:
        L = sample.n_images
        if L not in sums:
            report.n_outside_buckets += 1
            continue
        if L < 2:
            report.n_excluded += 1
            continue
        refs = [e.image_ref for e in sample.elements if e.kind == ELEM_IMAGE]
        images = [np.asarray(image_loader(ref), dtype=np.float64) for ref in refs]
        embeddings = image_embedder.embed_images(images)
        sums[L] += sample_image_similarity(images, embeddings)
        counts[L] += 1
    for L in buckets:
        if counts[L]:
            report.per_L[L] = sums[L] / counts[L]
        report.n_samples_per_L[L] = counts[L]
    if report.per_L:
        report.overall_avg = sum(report.per_L.values()) / len(report.per_L)
    return report


def file_image_loader(root: str | Path):
    """Loader resolving workdir-relative image_refs to grayscale arrays."""
    root = Path(root)

    def load(ref: str) -> np.ndarray:
        from PIL import Image

        path = Path(ref)
        if not path.is_absolute():
            path = root / path
        with Image.open(path) as img:
            return np.asarray(img.convert("L"), dtype=np.float64)

    return load


def shuffle_images(
    samples: Sequence[InterleavedSample],
    p: float,
    seed: int,
) -> list[InterleavedSample]:
    """Shuffle image order within ceil(p*N) randomly selected samples.

    Only image elements move (permuted among the image positions); every
    text element keeps its position and content. Unselected samples pass
    through untouched. Selected samples with at least two distinct images
    are guaranteed a non-identity arrangement. Deterministic per seed.
    """
    if not 0.0 < p <= 1.0:
        raise ValueError(f"shuffle ratio p={p} outside (0, 1]")
    rng = np.random.default_rng(seed)
    n = len(samples)
    k = math.ceil(p * n)
    selected = set(rng.choice(n, size=k, replace=False).tolist()) if n else set()
    out: list[InterleavedSample] = []
    for idx, sample in enumerate(samples):
        if idx not in selected:
            out.append(sample)
            continue
        out.append(_shuffle_one(sample, rng))
    return out


def _shuffle_one(sample: InterleavedSample, rng: np.random.Generator) -> InterleavedSample:
    image_positions = [i for i, e in enumerate(sample.elements) if e.kind == ELEM_IMAGE]
    payloads = [sample.elements[i] for i in image_positions]
    m = len(payloads)
    if m < 2:
        return sample
    keys = [(e.image_ref, e.timestamp_s) for e in payloads]
    changeable = len(set(keys)) > 1
    order = list(range(m))
    for _ in range(20):
        perm = rng.permutation(m).tolist()
        if not changeable or [keys[i] for i in perm] != keys:
            order = perm
            break
    else:
        order = list(range(1, m)) + [0]  # rotation always changes distinct sequences
        if [keys[i] for i in order] == keys:
            order = list(range(m))
    elements = list(sample.elements)
    for pos, src in zip(image_positions, order):
        elements[pos] = payloads[src]
    return InterleavedSample(
        sample_id=sample.sample_id,
        source_video_ids=sample.source_video_ids,
        elements=tuple(elements),
        n_images=sample.n_images,
        n_text_tokens=sample.n_text_tokens,
    )


def ppl_report(samples: Iterable[InterleavedSample], perplexity_client) -> dict:
    """Per-sample perplexity of the concatenated prose (ASR and OCR
    elements; the end-of-video marker is excluded). Failed samples are
    skipped and counted."""
    per_sample: list[dict] = []
    failed = 0
    for sample in samples:
        text = " ".join(
            e.text for e in sample.elements if e.kind in (ELEM_ASR, ELEM_OCR) and e.text
        )
        if not text:
            failed += 1
            continue
        try:
            value = perplexity_client.perplexity(text)
        except (ServiceError, ValueError) as exc:
            logger.warning("perplexity failed for %s: %s", sample.sample_id, exc)
            failed += 1
            continue
        per_sample.append({"sample_id": sample.sample_id, "ppl": value})
    mean = sum(r["ppl"] for r in per_sample) / len(per_sample) if per_sample else 0.0
    return {"mean_ppl": mean, "per_sample": per_sample, "n_failed": failed}


FORMAT_MATCHED = "matched-list"
FORMAT_PARALLEL = "parallel-list"


def adapt_external(
    path: str | Path,
    format: str,
    tokenizer: Callable[[str], int] = count_tokens,
) -> tuple[list[InterleavedSample], list[str]]:
    """Normalize an external interleaved corpus file into samples.

    matched-list: {"texts": [...], "images": [{"image_ref", "matched_text_index"}]},
    each image placed immediately before its matched text.
    parallel-list: {"images": [...|null], "texts": [...|null]} of equal
    length, exactly one side non-null per position.

    Malformed records are skipped; each error names its line number.
    """
    if format not in (FORMAT_MATCHED, FORMAT_PARALLEL):
        raise ValueError(f"unknown adapter format {format!r}")
    samples: list[InterleavedSample] = []
    errors: list[str] = []
    with Path(path).open("r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
                if format == FORMAT_MATCHED:
                    elements = _adapt_matched(record)
                else:
                    elements = _adapt_parallel(record)
                sample_id = str(record.get("id", f"line{lineno:06d}"))
                n_images = sum(1 for e in elements if e.kind == ELEM_IMAGE)
                n_tokens = sum(tokenizer(e.text) for e in elements if e.kind in TEXT_KINDS)
                samples.append(
                    InterleavedSample(
                        sample_id=sample_id,
                        source_video_ids=(),
                        elements=tuple(elements),
                        n_images=n_images,
                        n_text_tokens=n_tokens,
                    )
                )
            except (ValidationError, ValueError, KeyError, TypeError) as exc:
                errors.append(f"line {lineno}: {exc}")
    return samples, errors


def _adapt_matched(record: dict) -> list[InterleavedElement]:
    texts = record["texts"]
    images = record.get("images", [])
    if not isinstance(texts, list) or not isinstance(images, list):
        raise ValidationError("matched-list record needs 'texts' and 'images' lists")
    by_index: dict[int, list[str]] = {}
    for img in images:
        ref = img.get("image_ref") or img.get("image")
        idx = img["matched_text_index"]
        if ref is None:
            raise ValidationError("image entry missing image_ref")
        if not isinstance(idx, int) or not 0 <= idx < len(texts):
            raise ValidationError(f"matched_text_index {idx!r} out of range")
        by_index.setdefault(idx, []).append(ref)
    elements: list[InterleavedElement] = []
    for i, text in enumerate(texts):
        for ref in by_index.get(i, []):
            elements.append(InterleavedElement(kind=ELEM_IMAGE, image_ref=ref))
        if not isinstance(text, str):
            raise ValidationError(f"text at index {i} is not a string")
        elements.append(InterleavedElement(kind=ELEM_ASR, text=text))
    return elements


def _adapt_parallel(record: dict) -> list[InterleavedElement]:
    images = record["images"]
    texts = record["texts"]
    if not isinstance(images, list) or not isinstance(texts, list) or len(images) != len(texts):
        raise ValidationError("parallel-list record needs equal-length 'images' and 'texts'")
    elements: list[InterleavedElement] = []
    for i, (img, text) in enumerate(zip(images, texts)):
        if (img is None) == (text is None):
            raise ValidationError(f"position {i} must hold exactly one of image/text")
        if img is not None:
            elements.append(InterleavedElement(kind=ELEM_IMAGE, image_ref=str(img)))
        else:
            elements.append(InterleavedElement(kind=ELEM_ASR, text=str(text)))
    return elements


def report_to_csv(report: InSiSimReport) -> str:
    """Plot-data CSV: one (L, score) row per bucket."""
    lines = ["L,score"]
    for L in sorted(report.per_L):
        lines.append(f"{L},{report.per_L[L]}")
    return "\n".join(lines) + "\n"
