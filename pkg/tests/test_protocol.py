import random

import pytest
from hypothesis import given, strategies as st

from oracles import command_ref, crc7_ref, crc16_ref, lane_crcs_ref
from sdhcsim.protocol import (
    CrcError, DataBlock, FramingError, Response, ResponseKind, block_symbol_count, bits_of, crc7,
    crc7_bytes, crc16, crc16_bytes, decode_block_symbols, decode_command, encode_block_symbols,
    encode_command, int_to_bits, merge_lanes, response_crc_ok, split_block_into_lanes,
)


@pytest.mark.parametrize("index,arg,wire", [
    (0, 0, "400000000095"),
    (8, 0x1AA, "48000001aa87"),
    (17, 0, "510000000055"),
])
def test_known_command_frames(index, arg, wire):
    assert encode_command(index, arg).to_bytes().hex() == wire
    assert command_ref(index, arg).hex() == wire


def test_cmd0_crc():
    assert encode_command(0, 0).crc7 == 0x4A


def test_crc16_all_ones_block():
    assert crc16_bytes(b"\xff" * 512) == 0x7FA1
    assert crc16(bits_of(b"\xff" * 512)) == 0x7FA1


def test_lane_crcs_of_counting_pattern():
    block = bytes(range(256)) * 2
    assert DataBlock.from_bytes(block).lane_crcs == (29527, 4277, 43389, 27299)
    assert lane_crcs_ref(block) == (29527, 4277, 43389, 27299)


@given(st.binary(min_size=0, max_size=64))
def test_crc_implementations_agree(data):
    value = int.from_bytes(data, "big") if data else 0
    n = len(data) * 8
    assert crc7(bits_of(data)) == crc7_bytes(data) == crc7_ref(value, n)
    assert crc16(bits_of(data)) == crc16_bytes(data) == crc16_ref(value, n)


@given(st.integers(0, 2 ** 37 - 1), st.integers(1, 37))
def test_crc_on_odd_bit_lengths(value, n):
    value &= (1 << n) - 1
    assert crc7(int_to_bits(value, n)) == crc7_ref(value, n)
    assert crc16(int_to_bits(value, n)) == crc16_ref(value, n)


@given(st.integers(0, 63), st.integers(0, 0xFFFFFFFF))
def test_command_round_trip(index, arg):
    frame = encode_command(index, arg)
    assert frame.to_bytes() == command_ref(index, arg)
    assert decode_command(frame.to_bytes()) == (index, arg)
    assert decode_command(frame.to_bits()) == (index, arg)


@pytest.mark.parametrize("index,arg", [(64, 0), (-1, 0), (0, 1 << 32)])
def test_encode_rejects_out_of_range(index, arg):
    with pytest.raises(ValueError):
        encode_command(index, arg)


def test_decode_framing_errors():
    good = bytearray(encode_command(17, 5).to_bytes())
    with pytest.raises(FramingError):
        decode_command(bytes(good[:5]))
    with pytest.raises(FramingError):
        decode_command([0, 1] * 10)
    bad_end = bytearray(good)
    bad_end[5] &= 0xFE
    with pytest.raises(FramingError):
        decode_command(bytes(bad_end))
    bad_start = bytearray(good)
    bad_start[0] |= 0x80
    with pytest.raises(FramingError):
        decode_command(bytes(bad_start))


def test_every_single_bit_flip_is_rejected():
    bits = encode_command(18, 0x1234_5678).to_bits()
    for pos in range(48):
        flipped = list(bits)
        flipped[pos] ^= 1
        with pytest.raises((FramingError, CrcError)):
            decode_command(flipped)


def test_response_r1_round_trip():
    r = Response(ResponseKind.R1, 0x0000_0900, 17)
    wire = r.serialize()
    assert len(wire) == 6 and response_crc_ok(ResponseKind.R1, wire)
    assert Response.deserialize(ResponseKind.R1, wire) == r


def test_response_r2_and_r3_layout():
    reg = (0x1234 << 112) | (0x55 << 1)
    wire = Response(ResponseKind.R2, reg).serialize()
    assert len(wire) * 8 == 136 and wire[0] == 0x3F and wire[-1] & 1
    r3 = Response(ResponseKind.R3, 0xC0FF8000).serialize()
    assert r3.hex() == "3fc0ff8000ff"
    assert response_crc_ok(ResponseKind.R3, r3)


def test_response_length_mismatch():
    with pytest.raises(FramingError):
        Response.deserialize(ResponseKind.R2, bytes(6))


def test_block_symbol_counts():
    assert block_symbol_count() == 1042
    assert len(encode_block_symbols(bytes(512))) == 1042
    assert len(encode_block_symbols(bytes(512), width=1)) == 4114


@given(st.binary(min_size=512, max_size=512))
def test_lane_split_matches_reference(block):
    lanes, crcs = split_block_into_lanes(block)
    assert crcs == lane_crcs_ref(block)
    assert merge_lanes(lanes) == block


@given(st.binary(min_size=512, max_size=512), st.sampled_from([1, 4]))
def test_block_symbols_round_trip(block, width):
    data, ok = decode_block_symbols(encode_block_symbols(block, width), width)
    assert ok and data == block


def test_corrupted_block_symbol_detected():
    rng = random.Random(3)
    block = bytes(rng.randrange(256) for _ in range(512))
    symbols = bytearray(encode_block_symbols(block))
    for _ in range(50):
        pos = rng.randrange(1, len(symbols) - 1)
        bad = bytearray(symbols)
        bad[pos] ^= 1 << rng.randrange(4)
        assert not decode_block_symbols(bytes(bad))[1]


def test_merge_lanes_rejects_ragged():
    with pytest.raises(ValueError):
        merge_lanes([[0, 1], [0, 1], [0], [0, 1]])
