"""Pipeline configuration: defaults, JSON loading, env overrides."""
from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass
from pathlib import Path

from .models import ValidationError

DEFAULT_EOV_TOKEN = "<|end_of_video|>"

STRATEGY_PER_VIDEO = "per_video"
STRATEGY_SPLIT_VIDEO = "split_video"
STRATEGY_CONCAT = "concat"
PACKING_STRATEGIES = (STRATEGY_PER_VIDEO, STRATEGY_SPLIT_VIDEO, STRATEGY_CONCAT)

EXTRACTOR_SSIM = "ssim"
EXTRACTOR_PIXEL = "pixel"
EXTRACTOR_SEMANTIC = "semantic"
KEYFRAME_EXTRACTORS = (EXTRACTOR_SSIM, EXTRACTOR_PIXEL, EXTRACTOR_SEMANTIC)


@dataclass(frozen=True)
class PipelineConfig:
    """Every tunable knob of the pipeline, with documented defaults.

    Thresholds without an authoritative source are calibration knobs, not
    claims: ssim_threshold_T and frame_sample_fps target roughly 86 keyframes
    per average-length video; caption_asr_sim_threshold is deliberately
    permissive.
    """

    ssim_threshold_T: float = 0.85
    frame_sample_fps: float = 1.0
    clip_target_s: float = 15.0
    clip_min_s: float = 10.0
    clip_max_s: float = 20.0
    min_asr_tokens: int = 20
    min_duration_s: float = 10.0
    caption_asr_sim_threshold: float = 0.35
    criteria_pass_threshold: int = 3
    keyframe_score_threshold: int = 3
    ocr_dedup_jaccard: float = 0.8
    token_budget: int = 2048
    max_images_per_sample: int = 32
    eov_token: str = DEFAULT_EOV_TOKEN
    packing_strategy: str = STRATEGY_CONCAT
    top_k_search_results: int = 50
    # Extractor ablation knobs (pixel/semantic backends of the frame stage).
    keyframe_extractor: str = EXTRACTOR_SSIM
    pixel_threshold: float = 2.0
    semantic_cos_threshold: float = 0.92
    # Algorithm scope: carry the reference frame across clip boundaries
    # within one video instead of restarting per clip.
    carry_reference_across_clips: bool = False
    caption_frames_per_clip: int = 8
    workers: int = 0  # 0 = CPU count
    service_base_url: str = ""
    service_token: str = ""
    mock_fixtures_dir: str = ""

    def validate(self) -> "PipelineConfig":
        if not 0.0 < self.ssim_threshold_T < 1.0:
            raise ValidationError(f"ssim_threshold_T {self.ssim_threshold_T} outside (0, 1)")
        if self.frame_sample_fps <= 0:
            raise ValidationError("frame_sample_fps must be positive")
        if not self.clip_min_s <= self.clip_target_s <= self.clip_max_s:
            raise ValidationError(
                f"clip durations must satisfy min <= target <= max, got "
                f"{self.clip_min_s}/{self.clip_target_s}/{self.clip_max_s}"
            )
        if not 1 <= self.criteria_pass_threshold <= 5:
            raise ValidationError("criteria_pass_threshold outside [1, 5]")
        if not 1 <= self.keyframe_score_threshold <= 5:
            raise ValidationError("keyframe_score_threshold outside [1, 5]")
        if not 0.0 <= self.ocr_dedup_jaccard <= 1.0:
            raise ValidationError("ocr_dedup_jaccard outside [0, 1]")
        if self.token_budget <= 0:
            raise ValidationError("token_budget must be positive")
        if self.max_images_per_sample <= 0:
            raise ValidationError("max_images_per_sample must be positive")
        if self.packing_strategy not in PACKING_STRATEGIES:
            raise ValidationError(f"unknown packing_strategy {self.packing_strategy!r}")
        if self.keyframe_extractor not in KEYFRAME_EXTRACTORS:
            raise ValidationError(f"unknown keyframe_extractor {self.keyframe_extractor!r}")
        if not self.eov_token:
            raise ValidationError("eov_token is empty")
        if self.top_k_search_results < 1:
            raise ValidationError("top_k_search_results must be >= 1")
        return self


def load_config(path: str | Path | None = None, env: dict | None = None) -> PipelineConfig:
    """Build a config from an optional JSON file plus environment overrides.

    Unknown keys in the file are an error (exit code 2 at the CLI). The
    SERVICE_BASE_URL and SERVICE_TOKEN environment variables override the
    corresponding fields.
    """
    env = os.environ if env is None else env
    values: dict = {}
    if path is not None:
        raw = Path(path).read_text(encoding="utf-8")
        try:
            values = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"config file {path} is not valid JSON: {exc}") from exc
        if not isinstance(values, dict):
            raise ValidationError(f"config file {path} must hold a JSON object")
        known = {f.name for f in dataclasses.fields(PipelineConfig)}
        unknown = sorted(set(values) - known)
        if unknown:
            raise ValidationError(f"unknown config keys: {', '.join(unknown)}")
    if "SERVICE_BASE_URL" in env:
        values["service_base_url"] = env["SERVICE_BASE_URL"]
    if "SERVICE_TOKEN" in env:
        values["service_token"] = env["SERVICE_TOKEN"]
    return PipelineConfig(**values).validate()


def save_config(config: PipelineConfig, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(dataclasses.asdict(config), indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
