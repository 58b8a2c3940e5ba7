"""Wire-format decoding for the batch scoring endpoint.

A request body is JSON: {"shape": [B, H, W, 3], "dtype": "f32le",
"data": "<base64>", "target": {...}} where data holds the raw
little-endian float32 tensor, row-major and channel-interleaved. The
response is {"scores": [...]} with one float per image. This module is
self-contained on purpose: the server shares the protocol with its
clients, not their code.
"""

import base64
import binascii
import json

import numpy as np


class BadRequest(ValueError):
    """The request body does not follow the wire format."""


def decode_request(body: bytes) -> tuple[np.ndarray, dict]:
    """Parse a request body into a (B, H, W, 3) float32 batch and target."""
    try:
        doc = json.loads(body)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise BadRequest(f"body is not JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise BadRequest("body must be a JSON object")
    shape = doc.get("shape")
    if (
        not isinstance(shape, list)
        or len(shape) != 4
        or not all(isinstance(v, int) and v > 0 for v in shape)
        or shape[3] != 3
    ):
        raise BadRequest(f"shape must be [B, H, W, 3], got {shape!r}")
    if doc.get("dtype") != "f32le":
        raise BadRequest(f"dtype must be 'f32le', got {doc.get('dtype')!r}")
    data = doc.get("data")
    if not isinstance(data, str):
        raise BadRequest("data must be a base64 string")
    try:
        raw = base64.b64decode(data, validate=True)
    except (binascii.Error, ValueError) as exc:
        raise BadRequest(f"data is not valid base64: {exc}") from exc
    expected = shape[0] * shape[1] * shape[2] * shape[3] * 4
    if len(raw) != expected:
        raise BadRequest(f"payload is {len(raw)} bytes, expected {expected}")
    batch = np.frombuffer(raw, dtype="<f4").reshape(shape)
    if not np.isfinite(batch).all():
        raise BadRequest("tensor contains NaN or Inf")
    target = doc.get("target")
    if not isinstance(target, dict) or "kind" not in target:
        raise BadRequest("target must be an object with a 'kind'")
    return batch, target


def class_index(target: dict) -> int:
    """The class index of a class_index target; BadRequest otherwise."""
    idx = target.get("class_index")
    if not isinstance(idx, int) or idx < 0:
        raise BadRequest(f"class_index must be a nonnegative integer, got {idx!r}")
    return idx
