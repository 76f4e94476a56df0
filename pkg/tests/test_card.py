import pytest
from hypothesis import given, settings, strategies as st

from sdhcsim.card import (
    ADDRESS_ERROR, ILLEGAL_COMMAND, OCR_CCS, OCR_POWER_UP, OCR_VOLTAGE_WINDOW, OUT_OF_RANGE,
    WP_VIOLATION, AddressError, CardImage, CardModel, CardState, CardTiming, WriteProtectError,
    csd_capacity_blocks, make_cid,
)
from sdhcsim.protocol import ResponseKind, crc7_bytes, decode_block_symbols, encode_block_symbols, encode_command

HCS_ARG = OCR_CCS | OCR_VOLTAGE_WINDOW


def powered(capacity=8192, **timing):
    card = CardModel(capacity, timing=CardTiming(**timing))
    card.power_on()
    card.tick(74)
    return card


def send(card, index, arg=0):
    return card.receive_command(encode_command(index, arg).to_bytes())


def to_transfer(card):
    send(card, 0)
    send(card, 8, 0x1AA)
    while True:
        send(card, 55)
        if send(card, 41, HCS_ARG).payload & OCR_POWER_UP:
            break
    send(card, 2)
    rca = send(card, 3).payload >> 16
    send(card, 7, rca << 16)
    send(card, 55, rca << 16)
    send(card, 6, 2)
    card.tick(card.edges_to_event() or 0)
    return rca


def drain_events(card, limit=100_000):
    events = []
    while limit > 0 and (step := card.edges_to_event()) is not None:
        events += card.tick(step)
        limit -= step
    return events


def test_new_card_is_idle():
    card = CardModel(8192)
    assert card.state == CardState.IDLE and card.capacity_blocks == 8192
    assert CardModel(1).capacity_blocks == 1
    with pytest.raises(ValueError):
        CardModel(0)


def test_file_backed_image(tmp_path):
    path = tmp_path / "card.img"
    path.write_bytes(bytes(4 * 1024 * 1024))
    card = CardModel.from_file(path)
    assert card.capacity_blocks == 8192
    card.write_block(3, b"\xab" * 512)
    card.image.flush()
    assert CardModel.from_file(path).read_block(3).data == b"\xab" * 512
    with pytest.raises(OSError):
        CardImage.from_file(tmp_path / "missing.img")


def test_image_round_trip_and_bounds():
    img = CardImage(4)
    assert img.read_block(2) == bytes(512)
    img.write_block(2, b"\x5a" * 512)
    assert img.read_block(2) == b"\x5a" * 512
    with pytest.raises(AddressError):
        img.write_block(4, bytes(512))
    with pytest.raises(ValueError):
        img.write_block(0, bytes(10))
    with pytest.raises(WriteProtectError):
        CardImage(4, read_only=True).write_block(0, bytes(512))


def test_commands_ignored_before_init_clocks():
    card = CardModel(16)
    card.power_on()
    card.tick(10)
    assert send(card, 8, 0x1AA) is None


def test_cmd0_resets_without_response():
    card = powered()
    to_transfer(card)
    resp = send(card, 0)
    assert resp.kind is ResponseKind.NONE
    assert card.state == CardState.IDLE and card.regs.rca == 0


def test_cmd8_echo():
    card = powered()
    resp = send(card, 8, 0x1AA)
    assert resp.kind is ResponseKind.R7 and resp.payload == 0x1AA


def test_acmd41_needs_polls_and_cmd55():
    card = powered()
    assert send(card, 41, HCS_ARG) is None  # plain CMD41 is illegal
    ready = []
    for _ in range(3):
        send(card, 55)
        ready.append(bool(send(card, 41, HCS_ARG).payload & OCR_POWER_UP))
    assert ready == [False, False, True]
    assert card.state == CardState.READY
    send(card, 55)
    assert send(card, 41, HCS_ARG) is None  # already out of idle
    assert card.regs.ocr & OCR_CCS


def test_card_that_never_powers_up():
    card = powered(ready_after_polls=None)
    for _ in range(20):
        send(card, 55)
        assert not send(card, 41, HCS_ARG).payload & OCR_POWER_UP


def test_identification_sequence():
    card = powered()
    rca = to_transfer(card)
    assert rca != 0 and card.state == CardState.TRANSFER and card.regs.bus_width == 4


def test_cid_and_csd_registers():
    cid = make_cid(0x1234)
    assert cid >> 120 == 0x53
    assert crc7_bytes((cid >> 8).to_bytes(15, "big")) == (cid >> 1) & 0x7F
    card = powered(capacity=8192)
    assert csd_capacity_blocks(card.regs.csd) == 8192


def test_cmd9_returns_csd_in_standby():
    card = powered()
    send(card, 8, 0x1AA)
    while True:
        send(card, 55)
        if send(card, 41, HCS_ARG).payload & OCR_POWER_UP:
            break
    send(card, 2)
    rca = send(card, 3).payload >> 16
    resp = send(card, 9, rca << 16)
    assert resp.kind is ResponseKind.R2 and csd_capacity_blocks(resp.payload) == 8192


def test_illegal_command_reported_in_next_r1():
    card = powered()
    rca = to_transfer(card)
    assert send(card, 2) is None
    status = send(card, 13, rca << 16).payload
    assert status & ILLEGAL_COMMAND
    assert not send(card, 13, rca << 16).payload & ILLEGAL_COMMAND


def test_corrupted_frame_gets_no_response():
    card = powered()
    frame = bytearray(encode_command(8, 0x1AA).to_bytes())
    frame[2] ^= 0x10
    assert card.receive_command(bytes(frame)) is None
    assert not card.response_pending


def test_cmd17_streams_one_block_after_response():
    card = powered()
    to_transfer(card)
    payload = bytes(range(256)) * 2
    card.write_block(5, payload)
    resp = send(card, 17, 5)
    assert resp.kind is ResponseKind.R1
    events = drain_events(card)
    kinds = [e.kind for e in events]
    assert kinds == ["response", "dat_ready", "block"]
    data, ok = decode_block_symbols(events[-1].payload)
    assert ok and data == payload
    assert card.state == CardState.TRANSFER


def test_read_block_takes_1042_clocks():
    card = powered()
    to_transfer(card)
    send(card, 17, 0)
    while "dat_ready" not in [e.kind for e in card.tick(1)]:
        pass
    assert card.tick(1041) == []
    assert [e.kind for e in card.tick(1)] == ["block"]


def test_tick_zero_is_noop():
    card = powered()
    to_transfer(card)
    send(card, 17, 0)
    before = card.edges_to_event()
    assert card.tick(0) == [] and card.edges_to_event() == before


def test_multi_block_read_until_cmd12():
    card = powered()
    to_transfer(card)
    send(card, 18, 0)
    blocks = 0
    while blocks < 3:
        blocks += sum(e.kind == "block" for e in card.tick(card.edges_to_event()))
    assert card.state == CardState.SENDING_DATA
    assert send(card, 12).kind is ResponseKind.R1B
    assert card.state == CardState.TRANSFER


def test_out_of_range_read():
    card = powered(capacity=4)
    to_transfer(card)
    status = send(card, 17, 4).payload
    assert status & OUT_OF_RANGE and status & ADDRESS_ERROR


def test_write_protected_card():
    card = CardModel(16, read_only=True)
    card.power_on()
    card.tick(74)
    to_transfer(card)
    assert send(card, 24, 0).payload & WP_VIOLATION


def test_write_block_then_busy():
    card = powered(program_busy=16)
    to_transfer(card)
    send(card, 24, 7)
    drain_events(card)
    assert card.state == CardState.RECEIVE_DATA
    card.receive_block(encode_block_symbols(b"\x11" * 512))
    assert card.busy
    events = drain_events(card)
    assert [e.kind for e in events] == ["crc_status", "busy_end"] and events[0].payload is True
    assert card.read_block(7).data == b"\x11" * 512
    assert card.state == CardState.TRANSFER


def test_bad_write_crc_leaves_storage_untouched():
    card = powered()
    to_transfer(card)
    send(card, 24, 1)
    symbols = bytearray(encode_block_symbols(b"\x22" * 512))
    symbols[100] ^= 1
    card.receive_block(bytes(symbols))
    events = drain_events(card)
    assert events[0].kind == "crc_status" and events[0].payload is False
    assert card.read_block(1).data == bytes(512)


def test_timing_validation():
    with pytest.raises(ValueError):
        CardTiming(n_cr=1)
    with pytest.raises(ValueError):
        CardTiming(n_ac=0)


LEGAL = [0, 2, 3, 7, 8, 9, 12, 13, 16, 17, 18, 24, 25, 55, 6, 41]


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.sampled_from(LEGAL), st.integers(0, 0xFFFFFFFF)), max_size=40))
def test_random_commands_never_break_card(seq):
    card = powered(capacity=64)
    card.write_block(0, b"\x77" * 512)
    for index, arg in seq:
        if index in (17, 18, 24, 25):
            arg %= 80
        resp = send(card, index, arg)
        card.tick(min(card.edges_to_event() or 1, 2000))
        assert card.state in CardState
        assert card.regs.bus_width in (1, 4)
        if resp is not None and resp.kind in (ResponseKind.R1, ResponseKind.R1B):
            assert (resp.payload >> 9) & 0xF in [s.value for s in CardState]
    # no host data was ever sent, so storage cannot have changed
    assert card.read_block(0).data == b"\x77" * 512
    assert all(card.read_block(i).data == bytes(512) for i in range(1, 64))
