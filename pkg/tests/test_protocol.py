"""Wire codec: frame layout, payload round trips, stream splitting."""

import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hiershap.errors import ProtocolError
from hiershap.masking import mask_to_spans, spans_to_mask
from hiershap.protocol import (
    FRAME_ERROR,
    FRAME_EVAL,
    FRAME_HELLO,
    FRAME_RESULT,
    Hello,
    encode_error,
    encode_eval,
    encode_frame,
    encode_hello,
    encode_result,
    parse_error,
    parse_eval,
    parse_hello,
    parse_result,
    split_frames,
)


def test_frame_layout_is_length_type_payload():
    frame = encode_frame(7, b"abc")
    assert frame == struct.pack("<IB", 4, 7) + b"abc"


def test_hello_round_trip():
    h = Hello(64, 48, 3, 5, 0, (128, 128, 128))
    frames, rest = split_frames(encode_hello(h))
    assert rest == b""
    ftype, payload = frames[0]
    assert ftype == FRAME_HELLO
    assert parse_hello(payload) == h


def test_eval_round_trip():
    spans = [[(0, 3), (10, 2)], [], [(5, 1)]]
    frames, _ = split_frames(encode_eval(9, spans))
    ftype, payload = frames[0]
    assert ftype == FRAME_EVAL
    request_id, parsed = parse_eval(payload)
    assert request_id == 9
    assert parsed == spans


def test_result_round_trip():
    scores = np.array([[0.5, -1.25], [3.0, 0.0]])
    frames, _ = split_frames(encode_result(3, scores))
    ftype, payload = frames[0]
    assert ftype == FRAME_RESULT
    request_id, flat = parse_result(payload)
    assert request_id == 3
    assert flat.tolist() == [0.5, -1.25, 3.0, 0.0]


def test_error_round_trip():
    frames, _ = split_frames(encode_error(2, "dims mismatch"))
    ftype, payload = frames[0]
    assert ftype == FRAME_ERROR
    assert parse_error(payload) == (2, "dims mismatch")


def test_split_frames_handles_partial_and_concatenated():
    a = encode_error(1, "x")
    b = encode_hello(Hello(2, 2, 3, 1, 0, (0, 0, 0)))
    stream = a + b
    frames, rest = split_frames(stream[:-3])
    assert len(frames) == 1 and rest == b[:-3]
    frames, rest = split_frames(stream)
    assert len(frames) == 2 and rest == b""


def test_split_frames_rejects_zero_length():
    with pytest.raises(ProtocolError):
        split_frames(struct.pack("<IB", 0, 1) + b"xxxx")


def test_parse_eval_rejects_truncation():
    full = encode_eval(1, [[(0, 4)]])
    payload = full[5:]
    with pytest.raises(ProtocolError):
        parse_eval(payload[:-2])


@settings(max_examples=150)
@given(st.integers(1, 400), st.data())
def test_mask_span_wire_round_trip(n, data):
    mask = data.draw(st.integers(0, (1 << n) - 1))
    spans = mask_to_spans(mask, n)
    frames, _ = split_frames(encode_eval(0, [spans]))
    _, parsed = parse_eval(frames[0][1])
    assert spans_to_mask(parsed[0], n) == mask
