"""Binary exchange format for external embedders.

All values are little-endian.

Request::

    b"VTE1", u32 T, u32 H, u32 W, u32 C,
    T*H*W*C float32 samples (frame, row, column, channel), earliest frame first,
    H*W uint8 semantic mask of the base frame

Reply::

    b"VTE2", u32 D, u32 H, u32 W,
    D*H*W float32 embedding components (component, row, column)
"""

import struct

import numpy as np

from tracer.errors import ProtocolError
from tracer.temporal import TemporalSequence

REQUEST_MAGIC = b"VTE1"
REPLY_MAGIC = b"VTE2"

_REQUEST_HEADER = struct.Struct("<4sIIII")
_REPLY_HEADER = struct.Struct("<4sIII")


def encode_request(sequence: TemporalSequence, semantic_mask: np.ndarray) -> bytes:
    frames = np.stack([np.asarray(frame.pixels, dtype="<f4") for frame in sequence.frames])
    if frames.ndim == 3:
        frames = frames[..., None]
    count, height, width, channels = frames.shape
    mask = np.asarray(semantic_mask, dtype=bool)
    if mask.shape != (height, width):
        raise ProtocolError(f"Mask {mask.shape} does not match frames {(height, width)}")
    header = _REQUEST_HEADER.pack(REQUEST_MAGIC, count, height, width, channels)
    return header + frames.tobytes() + mask.astype(np.uint8).tobytes()


def decode_request(payload: bytes) -> tuple[np.ndarray, np.ndarray]:
    """Frames as (T, H, W, C) float32 and the base-frame mask as bool."""
    if len(payload) < _REQUEST_HEADER.size:
        raise ProtocolError("Request shorter than its header")
    magic, count, height, width, channels = _REQUEST_HEADER.unpack_from(payload)
    if magic != REQUEST_MAGIC:
        raise ProtocolError(f"Bad request magic {magic!r}")
    samples = count * height * width * channels
    expected = _REQUEST_HEADER.size + 4 * samples + height * width
    if len(payload) != expected:
        raise ProtocolError(f"Request has {len(payload)} bytes, expected {expected}")
    offset = _REQUEST_HEADER.size
    frames = np.frombuffer(payload, dtype="<f4", count=samples, offset=offset)
    mask = np.frombuffer(payload, dtype=np.uint8, offset=offset + 4 * samples)
    return (
        frames.reshape(count, height, width, channels).astype(np.float32),
        mask.reshape(height, width).astype(bool),
    )


def encode_reply(field: np.ndarray) -> bytes:
    field = np.asarray(field, dtype="<f4")
    if field.ndim != 3:
        raise ProtocolError(f"Embedding field must be (H, W, D), got {field.shape}")
    height, width, dim = field.shape
    header = _REPLY_HEADER.pack(REPLY_MAGIC, dim, height, width)
    return header + np.ascontiguousarray(field.transpose(2, 0, 1)).tobytes()


def decode_reply(payload: bytes) -> np.ndarray:
    """Embedding field as (H, W, D) float64."""
    if len(payload) < _REPLY_HEADER.size:
        raise ProtocolError("Reply shorter than its header")
    magic, dim, height, width = _REPLY_HEADER.unpack_from(payload)
    if magic != REPLY_MAGIC:
        raise ProtocolError(f"Bad reply magic {magic!r}")
    expected = _REPLY_HEADER.size + 4 * dim * height * width
    if len(payload) != expected:
        raise ProtocolError(f"Reply has {len(payload)} bytes, expected {expected}")
    values = np.frombuffer(payload, dtype="<f4", offset=_REPLY_HEADER.size)
    return values.reshape(dim, height, width).transpose(1, 2, 0).astype(np.float64)
