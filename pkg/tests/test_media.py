"""Media toolkit: synthetic backend behavior and the external-process
contract of the ffmpeg backend (exercised against a stub executable)."""
from __future__ import annotations

import os
import stat
import wave

import numpy as np
import pytest

from vidcorpus.media import (
    FfmpegToolkit,
    MediaError,
    MissingAudioError,
    SyntheticToolkit,
    open_toolkit,
    write_wav,
)

from vidfixtures import build_slide_video


class TestSyntheticToolkit:
    def test_probe_and_audio_duration(self, tmp_path):
        video = build_slide_video(
            tmp_path / "v.npz", "v", duration_s=30.0, slide_schedule=[(0.0, 1)]
        )
        toolkit = open_toolkit(video)
        assert isinstance(toolkit, SyntheticToolkit)
        assert toolkit.probe_duration_s() == pytest.approx(30.0)
        wav_path = toolkit.extract_audio(tmp_path / "a.wav")
        with wave.open(str(wav_path), "rb") as handle:
            audio_s = handle.getnframes() / handle.getframerate()
        assert abs(audio_s - 30.0) <= 0.5

    def test_extract_audio_is_deterministic(self, tmp_path):
        video = build_slide_video(
            tmp_path / "v.npz", "v", duration_s=5.0, slide_schedule=[(0.0, 1)]
        )
        toolkit = open_toolkit(video)
        a = toolkit.extract_audio(tmp_path / "a.wav").read_bytes()
        b = toolkit.extract_audio(tmp_path / "b.wav").read_bytes()
        assert a == b

    def test_missing_audio_track(self, tmp_path):
        video = build_slide_video(
            tmp_path / "s.npz", "s", 10.0, [(0.0, 1)], with_audio=False
        )
        with pytest.raises(MissingAudioError):
            open_toolkit(video).extract_audio(tmp_path / "a.wav")

    def test_frame_sampling_clamps_to_bounds(self, tmp_path):
        video = build_slide_video(tmp_path / "v.npz", "v", 10.0, [(0.0, 1), (5.0, 2)])
        toolkit = open_toolkit(video)
        frames = toolkit.sample_frames([0.0, 4.9, 5.0, 9.9, 99.0])
        assert len(frames) == 5
        assert np.array_equal(frames[0], frames[1])  # same slide
        assert not np.array_equal(frames[1], frames[2])  # slide change at 5 s
        assert np.array_equal(frames[3], frames[4])  # clamped to last frame

    def test_missing_file(self, tmp_path):
        with pytest.raises(MediaError):
            open_toolkit(tmp_path / "nope.mp4")


FAKE_FFMPEG_OK = """#!/bin/sh
# minimal stand-in honoring: -i <in> ... <out>; writes a tiny wav
out=""
for last; do out="$last"; done
printf 'RIFF' > "$out"
exit 0
"""

FAKE_FFMPEG_FAIL = """#!/bin/sh
echo "boom: simulated decoder failure" >&2
exit 1
"""


def _install_stub(tmp_path, name: str, script: str) -> str:
    path = tmp_path / name
    path.write_text(script)
    path.chmod(path.stat().st_mode | stat.S_IEXEC)
    return str(path)


class TestFfmpegContract:
    def test_invocation_arguments(self, tmp_path):
        # The stub records its argv so the invocation contract is checkable:
        # input path, output path, 16 kHz, mono, non-zero exit = failure.
        log = tmp_path / "argv.log"
        script = f"""#!/bin/sh
echo "$@" > {log}
out=""
for last; do out="$last"; done
printf 'RIFFxxxx' > "$out"
exit 0
"""
        stub = _install_stub(tmp_path, "ffmpeg-ok", script)
        video = tmp_path / "clip.mp4"
        video.write_bytes(b"not really a video")
        toolkit = FfmpegToolkit(video, ffmpeg=stub)
        out = toolkit.extract_audio(tmp_path / "audio.wav")
        argv = log.read_text()
        assert str(video) in argv
        assert str(out) in argv
        assert "16000" in argv
        assert "-ac 1" in argv

    def test_nonzero_exit_surfaces_diagnostics(self, tmp_path):
        stub = _install_stub(tmp_path, "ffmpeg-bad", FAKE_FFMPEG_FAIL)
        video = tmp_path / "clip.mp4"
        video.write_bytes(b"x")
        toolkit = FfmpegToolkit(video, ffmpeg=stub)
        with pytest.raises(MediaError, match="simulated decoder failure"):
            toolkit.extract_audio(tmp_path / "audio.wav")

    def test_probe_parses_duration(self, tmp_path):
        script = """#!/bin/sh
echo "42.50"
"""
        stub = _install_stub(tmp_path, "ffprobe-ok", script)
        video = tmp_path / "clip.mp4"
        video.write_bytes(b"x")
        toolkit = FfmpegToolkit(video, ffprobe=stub)
        assert toolkit.probe_duration_s() == pytest.approx(42.5)


class TestWav:
    def test_wav_round_trip(self, tmp_path):
        samples = (np.sin(np.linspace(0, 100, 16000)) * 5000).astype(np.int16)
        path = write_wav(tmp_path / "t.wav", samples)
        with wave.open(str(path), "rb") as handle:
            assert handle.getframerate() == 16000
            assert handle.getnchannels() == 1
            data = np.frombuffer(handle.readframes(handle.getnframes()), dtype="<i2")
        assert np.array_equal(data, samples)
