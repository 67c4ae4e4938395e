"""vidcorpus: instructional videos to an interleaved image-text corpus.

Stages: collect (taxonomy-driven retrieval + metadata filter), video (ASR +
rule/judge filters + refinement), clip (paragraph merge + visual filter),
frame (keyframe extraction + OCR), assemble (chronological interleave +
packing), metrics (corpus auditing). See the CLI (`vidcorpus --help`) and
README for usage.
"""

__version__ = "0.1.0"

from .config import PipelineConfig, load_config
from .corpus import (
    count_tokens,
    deserialize_sample,
    read_corpus,
    serialize_sample,
    validate_corpus,
    write_corpus,
)
from .models import (
    AsrSegment,
    CriteriaScores,
    InterleavedElement,
    InterleavedSample,
    Keyframe,
    KnowledgePoint,
    RefinedTranscript,
    ValidationError,
    VideoClip,
    VideoMeta,
)
from .ssim import compute_ssim

__all__ = [
    "AsrSegment",
    "CriteriaScores",
    "InterleavedElement",
    "InterleavedSample",
    "Keyframe",
    "KnowledgePoint",
    "PipelineConfig",
    "RefinedTranscript",
    "ValidationError",
    "VideoClip",
    "VideoMeta",
    "__version__",
    "compute_ssim",
    "count_tokens",
    "deserialize_sample",
    "load_config",
    "read_corpus",
    "serialize_sample",
    "validate_corpus",
    "write_corpus",
]
