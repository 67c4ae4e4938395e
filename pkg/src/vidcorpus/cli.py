"""Command-line interface.

Exit codes: 0 success, 1 stage error (failing item keys in the message),
2 configuration error (bad file, unknown key, bad flag value).
"""
from __future__ import annotations

import dataclasses
import json
import logging
import sys
from pathlib import Path
from typing import Optional

import click

from . import metrics as metrics_mod
from . import pipeline
from .collection import FixtureSearchBackend, LiveSearchBackend
from .config import PipelineConfig, load_config
from .corpus import read_corpus, validate_corpus, write_corpus
from .models import ValidationError
from .pipeline import RunContext, StageError
from .services import ServiceBundle, http_services, mock_services

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_STAGE = 1
EXIT_CONFIG = 2


def _fail_config(message: str):
    click.echo(f"config error: {message}", err=True)
    sys.exit(EXIT_CONFIG)


def _fail_stage(message: str):
    click.echo(f"stage error: {message}", err=True)
    sys.exit(EXIT_STAGE)


def _load_cfg(config_path: Optional[str], **overrides) -> PipelineConfig:
    try:
        cfg = load_config(config_path)
        filtered = {k: v for k, v in overrides.items() if v is not None}
        if filtered:
            cfg = dataclasses.replace(cfg, **filtered).validate()
        return cfg
    except (ValidationError, OSError, TypeError) as exc:
        _fail_config(str(exc))


def _services(cfg: PipelineConfig, mock: bool, fixtures: Optional[str], judges: int) -> ServiceBundle:
    judge_ids = tuple(f"judge_{chr(ord('a') + i)}" for i in range(judges))
    if mock or not cfg.service_base_url:
        return mock_services(fixtures or cfg.mock_fixtures_dir or None, judge_ids=judge_ids)
    return http_services(
        cfg.service_base_url,
        token=cfg.service_token,
        judge_ids=judge_ids,
        judge_threshold=cfg.criteria_pass_threshold,
    )


def _context(
    workdir: str,
    cfg: PipelineConfig,
    services: ServiceBundle,
    videos: Optional[str],
    deterministic: bool,
) -> RunContext:
    return RunContext(
        workdir=Path(workdir),
        config=cfg,
        services=services,
        videos_dir=Path(videos) if videos else None,
        deterministic=deterministic,
    )


def _backend(spec: str):
    if spec.startswith("fixture:"):
        return FixtureSearchBackend(spec.split(":", 1)[1])
    if spec == "live":
        return LiveSearchBackend()
    _fail_config(f"unknown search backend {spec!r} (expected fixture:<dir> or live)")


common_options = [
    click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None, help="JSON config file."),
    click.option("--workdir", envvar="WORKDIR", required=True, type=click.Path(file_okay=False), help="Pipeline work directory."),
    click.option("--mock/--no-mock", default=True, show_default=True, help="Use deterministic mock services."),
    click.option("--fixtures", type=click.Path(file_okay=False), default=None, help="Mock fixture-table directory."),
    click.option("--videos", type=click.Path(file_okay=False), default=None, help="Directory holding <video_id>.* media files."),
    click.option("--judges", type=int, default=2, show_default=True, help="Number of criteria judges."),
    click.option("--deterministic/--wall-clock", default=None, help="Pin manifest timestamps (defaults to on in mock mode)."),
]


def _with_options(options):
    def wrap(fn):
        for option in reversed(options):
            fn = option(fn)
        return fn

    return wrap


def _setup(config_path, workdir, mock, fixtures, videos, judges, deterministic):
    cfg = _load_cfg(config_path)
    services = _services(cfg, mock, fixtures, judges)
    det = mock if deterministic is None else deterministic
    return _context(workdir, cfg, services, videos, det), cfg


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Debug logging.")
def main(verbose: bool):
    """Turn instructional videos into an interleaved image-text corpus."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )


@main.command()
@_with_options(common_options)
@click.option("--taxonomy", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--backend", "backend_spec", default=None, help="fixture:<dir> or live.")
@click.option("--top-k", type=int, default=None, help="Results kept per knowledge point.")
def collect(config_path, workdir, mock, fixtures, videos, judges, deterministic, taxonomy, backend_spec, top_k):
    """Retrieve candidate videos per knowledge point and filter metadata."""
    cfg = _load_cfg(config_path, top_k_search_results=top_k)
    services = _services(cfg, mock, fixtures, judges)
    det = mock if deterministic is None else deterministic
    ctx = _context(workdir, cfg, services, videos, det)
    backend = _backend(backend_spec or (f"fixture:{fixtures}" if fixtures else "live"))
    try:
        out = pipeline.stage_collect(ctx, Path(taxonomy), backend)
    except (StageError, ValidationError, NotImplementedError) as exc:
        _fail_stage(str(exc))
    click.echo(f"collect: wrote {out}")


@main.command(name="video-stage")
@_with_options(common_options)
@click.option("--in", "in_path", type=click.Path(exists=True, dir_okay=False), default=None, help="Collected-videos file (defaults to workdir/collect/videos.jsonl).")
def video_stage_cmd(config_path, workdir, mock, fixtures, videos, judges, deterministic, in_path):
    """ASR, rule filters, dual-judge criteria filter, refinement."""
    ctx, _ = _setup(config_path, workdir, mock, fixtures, videos, judges, deterministic)
    try:
        kept = pipeline.stage_video(ctx, Path(in_path) if in_path else None)
    except (StageError, ValidationError) as exc:
        _fail_stage(str(exc))
    click.echo(f"video stage: {len(kept)} videos kept")


@main.command(name="clip-stage")
@_with_options(common_options)
def clip_stage_cmd(config_path, workdir, mock, fixtures, videos, judges, deterministic):
    """Cut 10-20 s clips and drop visually uninformative ones."""
    ctx, _ = _setup(config_path, workdir, mock, fixtures, videos, judges, deterministic)
    try:
        kept = pipeline.stage_clip(ctx)
    except (StageError, ValidationError) as exc:
        _fail_stage(str(exc))
    click.echo(f"clip stage: {len(kept)} videos processed")


@main.command(name="frame-stage")
@_with_options(common_options)
@click.option("--extractor", type=click.Choice(["ssim", "pixel", "semantic"]), default=None, help="Keyframe extractor backend.")
def frame_stage_cmd(config_path, workdir, mock, fixtures, videos, judges, deterministic, extractor):
    """Extract keyframes, score them via OCR, deduplicate OCR text."""
    cfg = _load_cfg(config_path, keyframe_extractor=extractor)
    services = _services(cfg, mock, fixtures, judges)
    det = mock if deterministic is None else deterministic
    ctx = _context(workdir, cfg, services, videos, det)
    try:
        kept = pipeline.stage_frame(ctx)
    except (StageError, ValidationError) as exc:
        _fail_stage(str(exc))
    click.echo(f"frame stage: {len(kept)} videos processed")


@main.command()
@_with_options(common_options)
@click.option("--strategy", type=click.Choice(["per_video", "split_video", "concat"]), default=None)
@click.option("--budget", type=int, default=None, help="Token budget per sample.")
@click.option("--max-images", type=int, default=None, help="Image budget per sample.")
@click.option("--eov", default=None, help="End-of-video token text.")
def assemble(config_path, workdir, mock, fixtures, videos, judges, deterministic, strategy, budget, max_images, eov):
    """Interleave chronologically and pack into training samples."""
    cfg = _load_cfg(
        config_path,
        packing_strategy=strategy,
        token_budget=budget,
        max_images_per_sample=max_images,
        eov_token=eov,
    )
    services = _services(cfg, mock, fixtures, judges)
    det = mock if deterministic is None else deterministic
    ctx = _context(workdir, cfg, services, videos, det)
    try:
        out = pipeline.stage_assemble(ctx)
    except (StageError, ValidationError) as exc:
        _fail_stage(str(exc))
    click.echo(f"assemble: wrote {out}")


@main.command()
@click.argument("stage", type=click.Choice(pipeline.STAGES + ("all",)))
@_with_options(common_options)
@click.option("--taxonomy", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--backend", "backend_spec", default=None)
def run(stage, config_path, workdir, mock, fixtures, videos, judges, deterministic, taxonomy, backend_spec):
    """Run one stage (or all) with manifests-based resume."""
    ctx, _ = _setup(config_path, workdir, mock, fixtures, videos, judges, deterministic)
    backend = None
    if stage in ("collect", "all"):
        if taxonomy is None:
            _fail_config("missing required key: --taxonomy (collect stage)")
        backend = _backend(backend_spec or (f"fixture:{fixtures}" if fixtures else "live"))
    try:
        code = pipeline.run(ctx, stage, Path(taxonomy) if taxonomy else None, backend)
    except (StageError, NotImplementedError) as exc:
        _fail_stage(str(exc))
    except ValidationError as exc:
        _fail_config(str(exc))
    sys.exit(code)


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--workdir", envvar="WORKDIR", type=click.Path(file_okay=False), default=None)
@click.option("--mock", is_flag=True, default=False)
def doctor(config_path, workdir, mock):
    """Check media toolkit, service endpoints, and workdir writability."""
    cfg = _load_cfg(config_path)
    checks = pipeline.doctor(cfg, Path(workdir) if workdir else None, mock=mock)
    for check in checks:
        mark = "ok " if check["ok"] else "RED"
        click.echo(f"[{mark}] {check['check']}: {check['detail']}")
    sys.exit(EXIT_OK)


@main.group()
def metrics():
    """Corpus auditing tools."""


@metrics.command()
@click.option("--corpus", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--format", "fmt", type=click.Choice(["native", "matched-list", "parallel-list"]), default="native", show_default=True)
def stats(corpus, fmt):
    """Image/token distribution of a corpus file."""
    samples = _read_samples(corpus, fmt)
    click.echo(json.dumps(metrics_mod.corpus_stats(samples), indent=2, sort_keys=True))


@metrics.command(name="insi-sim")
@click.option("--corpus", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--workdir", envvar="WORKDIR", required=True, type=click.Path(file_okay=False), help="Root for resolving image refs.")
@click.option("--csv", "csv_path", type=click.Path(dir_okay=False), default=None, help="Optional plot-data CSV output.")
@click.option("--format", "fmt", type=click.Choice(["native", "matched-list", "parallel-list"]), default="native", show_default=True)
def insi_sim_cmd(corpus, workdir, csv_path, fmt):
    """In-sample image similarity report (L = 4..8 buckets)."""
    samples = _read_samples(corpus, fmt)
    loader = metrics_mod.file_image_loader(workdir)
    report = metrics_mod.insi_sim(samples, loader, mock_services().image_embedder)
    click.echo(json.dumps(report.as_dict(), indent=2, sort_keys=True))
    if csv_path:
        Path(csv_path).write_text(metrics_mod.report_to_csv(report), encoding="utf-8")


@metrics.command()
@click.option("--corpus", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--p", type=float, required=True, help="Fraction of samples to shuffle, in (0, 1].")
@click.option("--seed", type=int, default=7, show_default=True)
def shuffle(corpus, out, p, seed):
    """Shuffle image order inside ceil(p*N) samples (seeded)."""
    samples = list(read_corpus(corpus))
    try:
        shuffled = metrics_mod.shuffle_images(samples, p, seed)
    except ValueError as exc:
        _fail_config(str(exc))
    write_corpus(shuffled, out, eov_token=None, tokenizer=None)
    click.echo(f"shuffle: wrote {out}")


@metrics.command()
@click.option("--corpus", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--fixtures", type=click.Path(file_okay=False), default=None)
@click.option("--format", "fmt", type=click.Choice(["native", "matched-list", "parallel-list"]), default="native", show_default=True)
def ppl(corpus, fixtures, fmt):
    """Mean perplexity of sample texts under the configured scorer."""
    samples = _read_samples(corpus, fmt)
    bundle = mock_services(fixtures)
    report = metrics_mod.ppl_report(samples, bundle.perplexity)
    click.echo(
        json.dumps(
            {"mean_ppl": report["mean_ppl"], "n_failed": report["n_failed"]},
            indent=2,
            sort_keys=True,
        )
    )


@metrics.command()
@click.option("--corpus", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--eov", default=None, help="Expected end-of-video token.")
def validate(corpus, eov):
    """Validate every record against the sample invariants."""
    report = validate_corpus(corpus, eov_token=eov)
    click.echo(
        json.dumps(
            {
                "n_samples": report.n_samples,
                "n_violations": report.n_violations,
                "violations": report.violations[:50],
            },
            indent=2,
            sort_keys=True,
        )
    )
    sys.exit(EXIT_OK if report.ok else EXIT_STAGE)


def _read_samples(corpus: str, fmt: str):
    if fmt == "native":
        return list(read_corpus(corpus))
    samples, errors = metrics_mod.adapt_external(corpus, fmt)
    for err in errors[:20]:
        click.echo(f"adapter: {err}", err=True)
    return samples


@main.command(name="mock-server")
@click.option("--fixtures", type=click.Path(file_okay=False), default=None)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8099, show_default=True)
@click.option("--token", default="", help="Require this bearer token.")
def mock_server(fixtures, host, port, token):
    """Serve the mock services over the wire protocol."""
    from .services.http import MockServiceServer

    server = MockServiceServer(mock_services(fixtures), host=host, port=port, token=token)
    click.echo(f"mock services listening on {server.base_url}")
    server.serve_forever()


if __name__ == "__main__":
    main()
