"""Shared fixtures and the acceptance-criteria summary hook."""
from __future__ import annotations

import numpy as np
import pytest

from vidcorpus.corpus import count_tokens
from vidcorpus.models import (
    ELEM_ASR,
    ELEM_IMAGE,
    ELEM_OCR,
    InterleavedElement,
    InterleavedSample,
    TEXT_KINDS,
)

_ACCEPTANCE_RESULTS: list[tuple[str, bool]] = []


def pytest_runtest_logreport(report):
    if report.when == "call" and "test_acceptance" in report.nodeid:
        name = report.nodeid.split("::")[-1]
        _ACCEPTANCE_RESULTS.append((name, report.passed))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE_RESULTS:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for name, passed in sorted(_ACCEPTANCE_RESULTS):
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {name}")


def build_sample(
    sample_id: str = "s0",
    video_ids=("v1",),
    elements=None,
) -> InterleavedSample:
    if elements is None:
        elements = [
            InterleavedElement(kind=ELEM_IMAGE, image_ref="frames/v1/c0000/0000.png", timestamp_s=0.0),
            InterleavedElement(kind=ELEM_ASR, text="the angle sum"),
        ]
    n_images = sum(1 for e in elements if e.kind == ELEM_IMAGE)
    n_tokens = sum(count_tokens(e.text) for e in elements if e.kind in TEXT_KINDS)
    return InterleavedSample(
        sample_id=sample_id,
        source_video_ids=tuple(video_ids),
        elements=tuple(elements),
        n_images=n_images,
        n_text_tokens=n_tokens,
    )


def image_element(ref: str, t: float) -> InterleavedElement:
    return InterleavedElement(kind=ELEM_IMAGE, image_ref=ref, timestamp_s=t)


def text_element(text: str, kind: str = ELEM_ASR) -> InterleavedElement:
    return InterleavedElement(kind=kind, text=text)


@pytest.fixture
def rng():
    return np.random.default_rng(20260809)


def random_frames(rng: np.random.Generator, n: int, size: int = 32, drift: bool = True):
    """Sequences with persistence so structural similarity values spread
    across the whole range instead of clustering near zero."""
    frames = [rng.integers(0, 256, size=(size, size), dtype=np.uint8)]
    for _ in range(n - 1):
        if drift and rng.random() < 0.6:
            delta = rng.integers(-12, 13, size=(size, size))
            nxt = np.clip(frames[-1].astype(int) + delta, 0, 255).astype(np.uint8)
        else:
            nxt = rng.integers(0, 256, size=(size, size), dtype=np.uint8)
        frames.append(nxt)
    return frames
