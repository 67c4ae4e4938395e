"""Media toolkit: duration probing, audio extraction, frame sampling.

Two backends behind the same duck-typed surface:

* ``FfmpegToolkit`` shells out to ffmpeg/ffprobe (input path, output path,
  16 kHz mono; any non-zero exit is a failure with captured diagnostics).
* ``SyntheticToolkit`` reads ``.npz`` videos (arrays: ``frames`` NxHxW or
  NxHxWx3 uint8, ``fps`` scalar, optional ``audio`` int16 PCM at 16 kHz),
  used by tests and offline runs where no decoder exists.

``open_toolkit`` picks the backend from the file extension.
"""
from __future__ import annotations

import subprocess
import wave
from pathlib import Path

import numpy as np

AUDIO_RATE = 16000


class MediaError(RuntimeError):
    """External toolkit failed; message carries the captured diagnostics."""


class MissingAudioError(MediaError):
    """The container has no audio track (routed to the silent-video rule)."""


def write_wav(path: str | Path, samples: np.ndarray, rate: int = AUDIO_RATE) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = np.asarray(samples, dtype="<i2")
    with wave.open(str(path), "wb") as handle:
        handle.setnchannels(1)
        handle.setsampwidth(2)
        handle.setframerate(rate)
        handle.writeframes(data.tobytes())
    return path


class SyntheticToolkit:
    """Backend for ``.npz`` synthetic videos."""

    def __init__(self, video_ref: str | Path):
        self.path = Path(video_ref)
        with np.load(self.path) as data:
            self.frames = np.asarray(data["frames"])
            self.fps = float(data["fps"])
            self.audio = np.asarray(data["audio"]) if "audio" in data else None
            self._duration = (
                float(data["duration_s"])
                if "duration_s" in data
                else self.frames.shape[0] / self.fps
            )
        if self.frames.ndim == 4:  # RGB to luma, ITU-R 601
            from .ssim import to_grayscale

            self.frames = np.stack(
                [to_grayscale(f) for f in self.frames]
            ).round().astype(np.uint8)

    def probe_duration_s(self) -> float:
        return self._duration

    def extract_audio(self, out_path: str | Path) -> Path:
        if self.audio is None:
            raise MissingAudioError(f"{self.path} has no audio track")
        return write_wav(out_path, self.audio)

    def sample_frames(self, timestamps: list[float]) -> list[np.ndarray]:
        n = self.frames.shape[0]
        out = []
        for t in timestamps:
            idx = min(n - 1, max(0, int(t * self.fps)))
            out.append(self.frames[idx])
        return out


class FfmpegToolkit:
    """Backend invoking the external ffmpeg/ffprobe binaries."""

    def __init__(self, video_ref: str | Path, ffmpeg: str = "ffmpeg", ffprobe: str = "ffprobe"):
        self.path = Path(video_ref)
        self.ffmpeg = ffmpeg
        self.ffprobe = ffprobe

    def _run(self, args: list[str]) -> subprocess.CompletedProcess:
        result = subprocess.run(args, capture_output=True, text=True)
        if result.returncode != 0:
            raise MediaError(
                f"{args[0]} exited {result.returncode}: {result.stderr.strip()[:500]}"
            )
        return result

    def probe_duration_s(self) -> float:
        result = self._run(
            [
                self.ffprobe,
                "-v",
                "error",
                "-show_entries",
                "format=duration",
                "-of",
                "default=noprint_wrappers=1:nokey=1",
                str(self.path),
            ]
        )
        try:
            return float(result.stdout.strip())
        except ValueError as exc:
            raise MediaError(f"ffprobe returned no duration for {self.path}") from exc

    def extract_audio(self, out_path: str | Path) -> Path:
        out_path = Path(out_path)
        out_path.parent.mkdir(parents=True, exist_ok=True)
        self._run(
            [
                self.ffmpeg,
                "-y",
                "-i",
                str(self.path),
                "-vn",
                "-ac",
                "1",
                "-ar",
                str(AUDIO_RATE),
                "-f",
                "wav",
                str(out_path),
            ]
        )
        if not out_path.exists() or out_path.stat().st_size == 0:
            raise MissingAudioError(f"{self.path} produced no audio")
        return out_path

    def sample_frames(self, timestamps: list[float]) -> list[np.ndarray]:
        from PIL import Image
        import io

        frames = []
        for t in timestamps:
            result = subprocess.run(
                [
                    self.ffmpeg,
                    "-ss",
                    f"{t:.3f}",
                    "-i",
                    str(self.path),
                    "-frames:v",
                    "1",
                    "-f",
                    "image2pipe",
                    "-vcodec",
                    "png",
                    "-pix_fmt",
                    "gray",
                    "-",
                ],
                capture_output=True,
            )
            if result.returncode != 0 or not result.stdout:
                raise MediaError(
                    f"ffmpeg frame grab at {t:.3f}s failed: "
                    f"{result.stderr.decode(errors='replace')[:500]}"
                )
            with Image.open(io.BytesIO(result.stdout)) as img:
                frames.append(np.asarray(img.convert("L"), dtype=np.uint8))
        return frames


def open_toolkit(video_ref: str | Path, ffmpeg: str = "ffmpeg", ffprobe: str = "ffprobe"):
    video_ref = Path(video_ref)
    if not video_ref.exists():
        raise MediaError(f"video not found: {video_ref}")
    if video_ref.suffix == ".npz":
        return SyntheticToolkit(video_ref)
    return FfmpegToolkit(video_ref, ffmpeg=ffmpeg, ffprobe=ffprobe)
