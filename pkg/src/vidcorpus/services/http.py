"""One wire protocol for every model service: JSON over HTTP POST.

Endpoints: /transcribe /refine /score /caption /embed /ocr /ppl
/embed_image. Request/response bodies are documented on the client methods.
Binary payloads (audio, images) travel base64-encoded. Auth is an optional
static bearer token. All requests are idempotent, so transport failures are
retried (3 attempts, exponential backoff); contract-violating responses
raise ProtocolError and are never retried.
"""
from __future__ import annotations

import base64
import io
import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
import requests

from ..models import AsrSegment, CriteriaScores, KnowledgePoint, VideoMeta
from .base import (
    EmbeddingVector,
    ProtocolError,
    TranscribeResult,
    TransportError,
    check_segments_ordered,
    retry_call,
)
from . import mocks

ImageLike = Union[str, Path, np.ndarray]


def _image_bytes(image: ImageLike) -> bytes:
    if isinstance(image, np.ndarray):
        from PIL import Image

        arr = np.ascontiguousarray(image.astype(np.uint8))
        buf = io.BytesIO()
        Image.fromarray(arr).save(buf, format="PNG")
        return buf.getvalue()
    return Path(image).read_bytes()


def _decode_image(data: bytes) -> np.ndarray:
    from PIL import Image

    with Image.open(io.BytesIO(data)) as img:
        return np.asarray(img.convert("L"), dtype=np.uint8)


class HttpServiceClient:
    """Client for the shared wire protocol; safe for concurrent use.

    In-flight requests are bounded by ``max_in_flight`` (default 8).
    """

    def __init__(
        self,
        base_url: str,
        token: str = "",
        timeout_s: float = 30.0,
        max_in_flight: int = 8,
        attempts: int = 3,
        backoff_s: float = 0.05,
        judge_threshold: int = 3,
    ):
        self.base_url = base_url.rstrip("/")
        self.token = token
        self.timeout_s = timeout_s
        self.attempts = attempts
        self.backoff_s = backoff_s
        self.judge_threshold = judge_threshold
        self._limiter = threading.BoundedSemaphore(max_in_flight)
        self._session = requests.Session()

    def _post(self, endpoint: str, payload: dict) -> dict:
        def attempt() -> dict:
            headers = {"Content-Type": "application/json"}
            if self.token:
                headers["Authorization"] = f"Bearer {self.token}"
            with self._limiter:
                try:
                    response = self._session.post(
                        f"{self.base_url}{endpoint}",
                        data=json.dumps(payload),
                        headers=headers,
                        timeout=self.timeout_s,
                    )
                except requests.RequestException as exc:
                    raise TransportError(f"POST {endpoint}: {exc}") from exc
            if response.status_code >= 500:
                raise TransportError(f"POST {endpoint}: HTTP {response.status_code}")
            if response.status_code != 200:
                raise ProtocolError(
                    f"POST {endpoint}: HTTP {response.status_code}: {response.text[:200]}"
                )
            try:
                body = response.json()
            except ValueError as exc:
                raise ProtocolError(f"POST {endpoint}: non-JSON response") from exc
            if not isinstance(body, dict):
                raise ProtocolError(f"POST {endpoint}: response body is not an object")
            return body

        return retry_call(attempt, attempts=self.attempts, base_delay_s=self.backoff_s)

    # POST /transcribe {"audio_b64"} -> {"language", "segments": [{start_s, end_s, text}]}
    def transcribe(self, audio_ref: str | Path) -> TranscribeResult:
        payload = {"audio_b64": base64.b64encode(Path(audio_ref).read_bytes()).decode()}
        body = self._post("/transcribe", payload)
        try:
            segments = tuple(
                AsrSegment(
                    start_s=float(s["start_s"]),
                    end_s=float(s["end_s"]),
                    text=str(s["text"]),
                    silent=bool(s.get("silent", False)),
                )
                for s in body["segments"]
            )
            language = str(body["language"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ProtocolError(f"/transcribe: malformed response: {exc}") from exc
        return TranscribeResult(segments=check_segments_ordered(segments), language=language)

    # POST /refine {"text"} -> {"text"}
    def refine_text(self, text: str) -> str:
        if not text:
            raise ValueError("refine_text requires non-empty text")
        body = self._post("/refine", {"text": text})
        refined = body.get("text")
        if not isinstance(refined, str) or not refined:
            raise ProtocolError("/refine: response text missing or empty")
        return refined

    # POST /score {"text", "knowledge_point", "judge_id"} -> three 1-5 scores
    def score_transcript(
        self, text: str, point: KnowledgePoint | str, judge_id: str = "judge_a"
    ) -> CriteriaScores:
        if not text:
            raise ValueError("score_transcript requires non-empty text")
        point_id = point.id if isinstance(point, KnowledgePoint) else str(point)
        body = self._post(
            "/score", {"text": text, "knowledge_point": point_id, "judge_id": judge_id}
        )
        try:
            scores = CriteriaScores(
                relevance=int(body["relevance"]),
                knowledge_density=int(body["knowledge_density"]),
                transcription_quality=int(body["transcription_quality"]),
                judge_id=judge_id,
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ProtocolError(f"/score: malformed response: {exc}") from exc
        try:
            return scores.validate()
        except Exception as exc:
            raise ProtocolError(f"/score: {exc}") from exc

    # POST /caption {"frames_b64": [...]} -> {"caption"}
    def caption_clip(self, frame_refs: Sequence[ImageLike]) -> str:
        if not frame_refs:
            raise ValueError("caption_clip requires at least one frame")
        payload = {
            "frames_b64": [base64.b64encode(_image_bytes(f)).decode() for f in frame_refs]
        }
        body = self._post("/caption", payload)
        caption = body.get("caption")
        if not isinstance(caption, str) or not caption:
            raise ProtocolError("/caption: response caption missing or empty")
        return caption

    # POST /embed {"texts": [...]} -> {"vectors": [[...]]}
    def embed_texts(self, texts: Sequence[str]) -> list[EmbeddingVector]:
        if any(not t for t in texts):
            raise ValueError("embed_texts requires non-empty texts")
        body = self._post("/embed", {"texts": list(texts)})
        return self._parse_vectors(body, len(texts), "/embed")

    # POST /embed_image {"images_b64": [...]} -> {"vectors": [[...]]}
    def embed_images(self, images: Sequence[ImageLike]) -> list[EmbeddingVector]:
        payload = {
            "images_b64": [base64.b64encode(_image_bytes(i)).decode() for i in images]
        }
        body = self._post("/embed_image", payload)
        return self._parse_vectors(body, len(images), "/embed_image")

    @staticmethod
    def _parse_vectors(body: dict, expected: int, endpoint: str) -> list[EmbeddingVector]:
        vectors = body.get("vectors")
        if not isinstance(vectors, list) or len(vectors) != expected:
            raise ProtocolError(f"{endpoint}: expected {expected} vectors")
        return [EmbeddingVector(values=tuple(map(float, v))).validate() for v in vectors]

    # POST /ocr {"image_b64"} -> {"text", "informativeness"}
    def ocr_frame(self, image_ref: ImageLike) -> dict:
        body = self._post(
            "/ocr", {"image_b64": base64.b64encode(_image_bytes(image_ref)).decode()}
        )
        try:
            info = int(body["informativeness"])
            text = str(body.get("text", ""))
        except (KeyError, TypeError, ValueError) as exc:
            raise ProtocolError(f"/ocr: malformed response: {exc}") from exc
        if not 1 <= info <= 5:
            raise ProtocolError(f"/ocr: informativeness {info} outside [1, 5]")
        return {"text": text, "informativeness": info}

    # POST /ppl {"text"} -> {"perplexity"}
    def perplexity(self, text: str) -> float:
        if not text:
            raise ValueError("perplexity requires non-empty text")
        body = self._post("/ppl", {"text": text})
        try:
            value = float(body["perplexity"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ProtocolError(f"/ppl: malformed response: {exc}") from exc
        if value <= 0:
            raise ProtocolError(f"/ppl: perplexity {value} not positive")
        return value

    def review_metadata(
        self, meta: VideoMeta, point: KnowledgePoint | str
    ) -> tuple[str, Optional[str]]:
        """Metadata review rides the /score endpoint: the serialized
        title/description/comments are scored against the knowledge point and
        low relevance drops the video as irrelevant."""
        blob = " ".join([meta.title, meta.description, *meta.comments]).strip() or meta.video_id
        scores = self.score_transcript(blob, point, judge_id="metadata")
        if scores.relevance < self.judge_threshold:
            return mocks.DROP, "irrelevant"
        return mocks.KEEP, None


class _Handler(BaseHTTPRequestHandler):
    server_version = "vidcorpus-mock/0.1"

    def log_message(self, fmt, *args):  # quiet test output
        pass

    def _reply(self, status: int, body: dict) -> None:
        payload = json.dumps(body).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def do_POST(self):  # noqa: N802 (http.server API)
        bundle = self.server.bundle  # type: ignore[attr-defined]
        token = self.server.token  # type: ignore[attr-defined]
        if token:
            auth = self.headers.get("Authorization", "")
            if auth != f"Bearer {token}":
                self._reply(401, {"error": "unauthorized"})
                return
        length = int(self.headers.get("Content-Length", "0"))
        try:
            payload = json.loads(self.rfile.read(length) or b"{}")
        except json.JSONDecodeError:
            self._reply(400, {"error": "invalid JSON body"})
            return
        try:
            body = self._dispatch(self.path, payload, bundle)
        except KeyError as exc:
            self._reply(400, {"error": f"missing field {exc}"})
            return
        except ValueError as exc:
            self._reply(400, {"error": str(exc)})
            return
        if body is None:
            self._reply(404, {"error": f"unknown endpoint {self.path}"})
            return
        self._reply(200, body)

    def _dispatch(self, path: str, payload: dict, bundle) -> Optional[dict]:
        if path == "/transcribe":
            result = bundle.transcriber.transcribe_bytes(
                base64.b64decode(payload["audio_b64"])
            )
            return {
                "language": result.language,
                "segments": [
                    {"start_s": s.start_s, "end_s": s.end_s, "text": s.text}
                    for s in result.segments
                ],
            }
        if path == "/refine":
            return {"text": bundle.refiner.refine_text(payload["text"])}
        if path == "/score":
            scores = bundle.scorer.score_transcript(
                payload["text"], payload["knowledge_point"], payload.get("judge_id", "")
            )
            return {
                "relevance": scores.relevance,
                "knowledge_density": scores.knowledge_density,
                "transcription_quality": scores.transcription_quality,
            }
        if path == "/caption":
            frames = [
                _decode_image(base64.b64decode(b)) for b in payload["frames_b64"]
            ]
            return {"caption": bundle.captioner.caption_clip(frames)}
        if path == "/embed":
            vectors = bundle.text_embedder.embed_texts(payload["texts"])
            return {"vectors": [list(v.values) for v in vectors]}
        if path == "/embed_image":
            images = [
                _decode_image(base64.b64decode(b)) for b in payload["images_b64"]
            ]
            vectors = bundle.image_embedder.embed_images(images)
            return {"vectors": [list(v.values) for v in vectors]}
        if path == "/ocr":
            return bundle.ocr_readers[0].ocr_bytes(base64.b64decode(payload["image_b64"]))
        if path == "/ppl":
            return {"perplexity": bundle.perplexity.perplexity(payload["text"])}
        return None


class MockServiceServer:
    """Serves a mock service bundle over the wire protocol on a local port."""

    def __init__(self, bundle, host: str = "127.0.0.1", port: int = 0, token: str = ""):
        self._httpd = ThreadingHTTPServer((host, port), _Handler)
        self._httpd.bundle = bundle  # type: ignore[attr-defined]
        self._httpd.token = token  # type: ignore[attr-defined]
        self._thread: Optional[threading.Thread] = None

    @property
    def base_url(self) -> str:
        host, port = self._httpd.server_address[:2]
        return f"http://{host}:{port}"

    def start(self) -> "MockServiceServer":
        self._thread = threading.Thread(target=self._httpd.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._httpd.shutdown()
        self._httpd.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)

    def serve_forever(self) -> None:
        self._httpd.serve_forever()
