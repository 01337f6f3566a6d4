"""Tests for the external embedder wire format."""

import struct

import numpy as np
import pytest

from tracer.errors import ProtocolError
from tracer.temporal import build_temporal_sequence
from tracer.wire import decode_reply, decode_request, encode_reply, encode_request


def rgb_sequence(rng):
    image = rng.random((64, 64, 3))
    return build_temporal_sequence(None, image, (30, 30), size=16)


def test_request_layout(rng):
    sequence = rgb_sequence(rng)
    mask = np.zeros((16, 16), dtype=bool)
    mask[3, 4] = True
    payload = encode_request(sequence, mask)
    assert payload[:4] == b"VTE1"
    assert struct.unpack_from("<IIII", payload, 4) == (1, 16, 16, 3)
    assert len(payload) == 20 + 4 * 16 * 16 * 3 + 16 * 16

    frames, decoded_mask = decode_request(payload)
    assert frames.shape == (1, 16, 16, 3)
    assert np.allclose(frames[0], sequence.base.pixels, atol=1e-6)
    assert np.array_equal(decoded_mask, mask)


def test_grayscale_frames_get_one_channel():
    sequence = build_temporal_sequence(None, np.full((40, 40), 0.5), (20, 20), size=8)
    frames, _ = decode_request(encode_request(sequence, np.zeros((8, 8), dtype=bool)))
    assert frames.shape == (1, 8, 8, 1)


def test_reply_is_component_major(rng):
    field = rng.random((5, 7, 3)).astype(np.float32)
    payload = encode_reply(field)
    assert struct.unpack_from("<4sIII", payload) == (b"VTE2", 3, 5, 7)
    first_plane = np.frombuffer(payload, dtype="<f4", count=35, offset=16).reshape(5, 7)
    assert np.array_equal(first_plane, field[..., 0])
    assert np.allclose(decode_reply(payload), field)


def test_mask_must_match_frames(rng):
    with pytest.raises(ProtocolError):
        encode_request(rgb_sequence(rng), np.zeros((4, 4), dtype=bool))


@pytest.mark.parametrize(
    "payload",
    [
        b"VT",
        b"XXXX" + struct.pack("<III", 1, 1, 1) + b"\0" * 4,
        b"VTE2" + struct.pack("<III", 2, 2, 2) + b"\0" * 8,
    ],
)
def test_malformed_replies(payload):
    with pytest.raises(ProtocolError):
        decode_reply(payload)


def test_truncated_request(rng):
    payload = encode_request(rgb_sequence(rng), np.zeros((16, 16), dtype=bool))
    with pytest.raises(ProtocolError):
        decode_request(payload[:-1])
