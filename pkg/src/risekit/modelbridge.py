"""The black-box score-function contract and its adapters.

A scorer maps a batch of images to one scalar confidence per image for a
fixed target. Nothing in this package reads model weights, gradients, or
activations; this module's adapter surface is the only model interface.

Remote scorers speak one frame format, shared verbatim between the HTTP
and subprocess transports: a JSON object
``{"shape": [B, H, W, 3], "dtype": "f32le", "data": "<base64>",
"target": {...}}`` where ``data`` is the raw little-endian float32 tensor,
row-major and channel-interleaved, and the response is
``{"scores": [...]}`` of length B. Images travel as the already-masked
[0,1] floats; any model-specific normalization lives server-side.
"""

import base64
import json
import shlex
import struct
import subprocess
import threading
import time
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
import requests

from .errors import (
    InvalidArgumentError,
    InvalidConfigError,
    ProtocolError,
    RemoteError,
    TransportError,
)
from .imagegrid import Image

SCORE_PATH = "/v1/score"
HEALTH_PATH = "/v1/health"

# Response frames carry one JSON number per image; anything beyond this is
# a desynced stream, not a real frame.
MAX_RESPONSE_FRAME = 1 << 26


@dataclass(frozen=True)
class TargetSpec:
    """What the scorer should report confidence for.

    Either a class index, or an opaque conditional target (a context token
    sequence plus the token being scored) forwarded untouched to the
    scorer.
    """

    kind: str
    class_index: int | None = None
    context: tuple[str, ...] | None = None
    target_token: str | None = None

    def __post_init__(self):
        if self.kind == "class_index":
            if self.class_index is None or self.class_index < 0:
                raise InvalidConfigError("class_index target needs class_index >= 0")
            if self.context is not None or self.target_token is not None:
                raise InvalidConfigError("class_index target must not carry tokens")
        elif self.kind == "conditional":
            if self.target_token is None:
                raise InvalidConfigError("conditional target needs a target_token")
            if self.class_index is not None:
                raise InvalidConfigError("conditional target must not carry a class index")
            object.__setattr__(self, "context", tuple(self.context or ()))
        else:
            raise InvalidConfigError(f"unknown target kind {self.kind!r}")

    @classmethod
    def for_class(cls, class_index: int) -> "TargetSpec":
        return cls(kind="class_index", class_index=class_index)

    @classmethod
    def for_token(cls, target_token: str, context: Sequence[str] = ()) -> "TargetSpec":
        return cls(kind="conditional", context=tuple(context), target_token=target_token)

    def to_json(self) -> dict:
        if self.kind == "class_index":
            return {"kind": "class_index", "class_index": self.class_index}
        return {
            "kind": "conditional",
            "context": list(self.context),
            "target_token": self.target_token,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "TargetSpec":
        kind = obj.get("kind")
        if kind == "class_index":
            return cls.for_class(int(obj["class_index"]))
        if kind == "conditional":
            return cls.for_token(obj["target_token"], obj.get("context", ()))
        raise InvalidConfigError(f"unknown target kind {kind!r}")


def as_batch_array(images) -> np.ndarray:
    """Normalize a scorer input to a (B, H, W, 3) float32 array.

    Accepts a stacked array or any sequence of :class:`Image`.
    """
    if isinstance(images, np.ndarray):
        if images.ndim != 4 or images.shape[3] != 3:
            raise InvalidArgumentError(
                f"image batch must have shape (B, H, W, 3), got {images.shape}"
            )
        return np.ascontiguousarray(images, dtype=np.float32)
    return np.stack([img.data for img in images]).astype(np.float32, copy=False)


class ScoreFunction:
    """Behavioral contract: ``score_batch(images, target) -> list[float]``.

    Adapters declare ``max_batch`` (None = unlimited), whether they are
    ``reentrant`` (safe to call from multiple threads), and a
    ``score_range_hint`` documenting the expected score interval.
    """

    max_batch: int | None = 32
    reentrant: bool = False
    score_range_hint: tuple[float, float] = (0.0, 1.0)

    def score_batch(self, images, target: TargetSpec) -> list[float]:
        raise NotImplementedError

    def score_batch_multi(self, images, targets: Sequence[TargetSpec]) -> np.ndarray:
        """Scores for several targets on one batch, shape (B, len(targets)).

        The default probes once per target; adapters that can amortize a
        forward pass across targets may override.
        """
        columns = [self.score_batch(images, t) for t in targets]
        return np.asarray(columns, dtype=np.float64).T


class SerializedScorer(ScoreFunction):
    """Wrap a non-reentrant scorer in a lock so callers may share it."""

    reentrant = True

    def __init__(self, inner: ScoreFunction):
        self._inner = inner
        self._lock = threading.Lock()
        self.max_batch = inner.max_batch
        self.score_range_hint = inner.score_range_hint

    def score_batch(self, images, target: TargetSpec) -> list[float]:
        with self._lock:
            return self._inner.score_batch(images, target)

    def score_batch_multi(self, images, targets) -> np.ndarray:
        with self._lock:
            return self._inner.score_batch_multi(images, targets)


def reentrant_view(scorer: ScoreFunction) -> ScoreFunction:
    """The scorer itself if it declares reentrancy, else a serialized gate."""
    return scorer if scorer.reentrant else SerializedScorer(scorer)


# ---------------------------------------------------------------------------
# Synthetic scorers (oracle models for tests and benchmarks)
# ---------------------------------------------------------------------------


class ConstantModel(ScoreFunction):
    """f == value, regardless of input or target."""

    max_batch = None
    reentrant = True

    def __init__(self, value: float):
        if not 0.0 <= value <= 1.0:
            raise InvalidConfigError(f"constant score must be in [0, 1], got {value}")
        self.value = float(value)

    def score_batch(self, images, target: TargetSpec) -> list[float]:
        batch = as_batch_array(images)
        return [self.value] * batch.shape[0]


class RegionMeanModel(ScoreFunction):
    """Mean channel-averaged intensity inside a half-open pixel region."""

    max_batch = None
    reentrant = True

    def __init__(self, y_min: int, x_min: int, y_max: int, x_max: int):
        if not (0 <= y_min < y_max and 0 <= x_min < x_max):
            raise InvalidConfigError(
                f"empty or negative region ({y_min},{x_min})..({y_max},{x_max})"
            )
        self.region = (y_min, x_min, y_max, x_max)

    def score_batch(self, images, target: TargetSpec) -> list[float]:
        batch = as_batch_array(images)
        y_min, x_min, y_max, x_max = self.region
        if y_max > batch.shape[1] or x_max > batch.shape[2]:
            raise InvalidConfigError(
                f"region {self.region} exceeds image {batch.shape[1:3]}"
            )
        patch = batch[:, y_min:y_max, x_min:x_max, :]
        return patch.mean(axis=(1, 2, 3), dtype=np.float64).tolist()


class TemplateDotModel(ScoreFunction):
    """clamp(sum(T * intensity) / sum(T) + bias, 0, 1) for a template T."""

    max_batch = None
    reentrant = True

    def __init__(self, template: np.ndarray, bias: float = 0.0):
        template = np.asarray(template, dtype=np.float64)
        if template.ndim != 2:
            raise InvalidConfigError("template must be 2-D")
        if template.min() < 0 or not np.isfinite(template).all():
            raise InvalidConfigError("template must be finite and nonnegative")
        total = template.sum()
        if total <= 0:
            raise InvalidConfigError("template must have positive mass")
        self.template = template
        self.total = float(total)
        self.bias = float(bias)

    def score_batch(self, images, target: TargetSpec) -> list[float]:
        batch = as_batch_array(images)
        if batch.shape[1:3] != self.template.shape:
            raise InvalidConfigError(
                f"template {self.template.shape} does not match images {batch.shape[1:3]}"
            )
        intensity = batch.mean(axis=3, dtype=np.float64)
        raw = np.tensordot(intensity, self.template, axes=([1, 2], [0, 1])) / self.total
        return np.clip(raw + self.bias, 0.0, 1.0).tolist()


# ---------------------------------------------------------------------------
# Wire frame shared by the HTTP and subprocess transports
# ---------------------------------------------------------------------------


def encode_score_request(images, target: TargetSpec) -> bytes:
    """Serialize a batch into the canonical JSON request body."""
    batch = as_batch_array(images)
    payload = base64.b64encode(batch.astype("<f4").tobytes()).decode("ascii")
    body = {
        "shape": list(batch.shape),
        "dtype": "f32le",
        "data": payload,
        "target": target.to_json(),
    }
    return json.dumps(body, separators=(",", ":")).encode("ascii")


def parse_score_request(body: bytes) -> tuple[np.ndarray, TargetSpec]:
    """Inverse of :func:`encode_score_request`; used by stub scorers."""
    try:
        obj = json.loads(body)
        shape = tuple(int(v) for v in obj["shape"])
        if len(shape) != 4 or shape[3] != 3 or obj.get("dtype") != "f32le":
            raise ValueError(f"bad tensor descriptor {obj.get('shape')}/{obj.get('dtype')}")
        raw = base64.b64decode(obj["data"], validate=True)
        expected = shape[0] * shape[1] * shape[2] * shape[3] * 4
        if len(raw) != expected:
            raise ValueError(f"payload is {len(raw)} bytes, expected {expected}")
        batch = np.frombuffer(raw, dtype="<f4").reshape(shape)
        target = TargetSpec.from_json(obj["target"])
    except (KeyError, ValueError, TypeError, json.JSONDecodeError) as exc:
        raise ProtocolError(f"malformed score request: {exc}") from exc
    return batch, target


def encode_score_response(scores: Sequence[float]) -> bytes:
    return json.dumps({"scores": [float(s) for s in scores]}, separators=(",", ":")).encode(
        "ascii"
    )


def decode_score_response(body: bytes, expected: int) -> list[float]:
    try:
        obj = json.loads(body)
        scores = obj["scores"]
        if not isinstance(scores, list):
            raise TypeError("scores is not a list")
        scores = [float(s) for s in scores]
    except (KeyError, ValueError, TypeError, json.JSONDecodeError) as exc:
        raise ProtocolError(f"malformed score response: {exc}") from exc
    if len(scores) != expected:
        raise ProtocolError(
            f"score response length {len(scores)} does not match batch size {expected}"
        )
    return scores


def _slices(total: int, size: int | None):
    step = total if size is None else size
    for start in range(0, total, step):
        yield start, min(start + step, total)


# ---------------------------------------------------------------------------
# HTTP adapter
# ---------------------------------------------------------------------------


class HttpScorer(ScoreFunction):
    """POST batches to a remote scorer at ``endpoint`` + "/v1/score".

    Connection and timeout failures are retried with exponential backoff
    (3 attempts) before raising a transport error. In-flight requests are
    capped by a semaphore, so the adapter is reentrant.
    """

    reentrant = True

    def __init__(
        self,
        endpoint: str,
        timeout: float = 30.0,
        max_batch: int = 32,
        retries: int = 3,
        backoff: float = 0.5,
        max_in_flight: int = 4,
        session: requests.Session | None = None,
    ):
        self.endpoint = endpoint.rstrip("/")
        self.timeout = timeout
        self.max_batch = max_batch
        self.retries = retries
        self.backoff = backoff
        self._gate = threading.BoundedSemaphore(max_in_flight)
        self._session = session or requests.Session()

    def _post(self, body: bytes) -> bytes:
        url = self.endpoint + SCORE_PATH
        delay = self.backoff
        last_exc: Exception | None = None
        for attempt in range(self.retries):
            try:
                with self._gate:
                    resp = self._session.post(
                        url,
                        data=body,
                        timeout=self.timeout,
                        headers={"Content-Type": "application/json"},
                    )
            except (requests.ConnectionError, requests.Timeout) as exc:
                last_exc = exc
                if attempt + 1 < self.retries:
                    time.sleep(delay)
                    delay *= 2
                continue
            if not 200 <= resp.status_code < 300:
                raise RemoteError(
                    f"scorer at {url} returned {resp.status_code}: {resp.text[:200]}"
                )
            return resp.content
        raise TransportError(f"cannot reach scorer at {url}: {last_exc}")

    def score_batch(self, images, target: TargetSpec) -> list[float]:
        batch = as_batch_array(images)
        scores: list[float] = []
        for start, stop in _slices(batch.shape[0], self.max_batch):
            body = encode_score_request(batch[start:stop], target)
            scores.extend(decode_score_response(self._post(body), stop - start))
        return scores


def probe_health(endpoint: str, timeout: float = 10.0) -> dict:
    """GET /v1/health; returns the decoded status document."""
    url = endpoint.rstrip("/") + HEALTH_PATH
    try:
        resp = requests.get(url, timeout=timeout)
    except (requests.ConnectionError, requests.Timeout) as exc:
        raise TransportError(f"cannot reach {url}: {exc}") from exc
    if resp.status_code != 200:
        raise RemoteError(f"{url} returned {resp.status_code}: {resp.text[:200]}")
    try:
        return resp.json()
    except ValueError as exc:
        raise ProtocolError(f"malformed health response from {url}") from exc


# ---------------------------------------------------------------------------
# Subprocess adapter
# ---------------------------------------------------------------------------


class SubprocessScorer(ScoreFunction):
    """Score through a persistent child process over framed stdio.

    Every frame is a little-endian u32 byte length followed by the JSON
    body; one response frame answers each request frame, in order. The
    child persists across batches. Not reentrant; wrap with
    :func:`reentrant_view` to share across threads.
    """

    reentrant = False

    def __init__(self, command: str | Sequence[str], max_batch: int = 32):
        argv = shlex.split(command) if isinstance(command, str) else list(command)
        if not argv:
            raise InvalidConfigError("empty scorer command")
        self.max_batch = max_batch
        try:
            self._child = subprocess.Popen(
                argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE, bufsize=0
            )
        except OSError as exc:
            raise TransportError(f"cannot launch scorer {argv[0]!r}: {exc}") from exc

    def _read_exact(self, size: int) -> bytes:
        chunks = []
        remaining = size
        while remaining:
            piece = self._child.stdout.read(remaining)
            if not piece:
                raise TransportError(
                    f"scorer process exited mid-response (code {self._child.poll()})"
                )
            chunks.append(piece)
            remaining -= len(piece)
        return b"".join(chunks)

    def _round_trip(self, body: bytes) -> bytes:
        try:
            self._child.stdin.write(struct.pack("<I", len(body)) + body)
            self._child.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise TransportError(f"scorer process pipe broke: {exc}") from exc
        (length,) = struct.unpack("<I", self._read_exact(4))
        if length > MAX_RESPONSE_FRAME:
            raise ProtocolError(f"implausible response frame length {length}; stream desynced")
        return self._read_exact(length)

    def score_batch(self, images, target: TargetSpec) -> list[float]:
        batch = as_batch_array(images)
        scores: list[float] = []
        for start, stop in _slices(batch.shape[0], self.max_batch):
            body = encode_score_request(batch[start:stop], target)
            scores.extend(decode_score_response(self._round_trip(body), stop - start))
        return scores

    def close(self) -> None:
        if self._child.poll() is None:
            self._child.stdin.close()
            try:
                self._child.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self._child.kill()
                self._child.wait()

    def __enter__(self) -> "SubprocessScorer":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()
