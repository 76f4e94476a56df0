"""SD bus framing: CRC7/CRC16, command and response frames, DAT-lane blocks.

Bit sequences are plain sequences of 0/1 ints, most significant bit first,
in the order they appear on the wire.  Byte-oriented helpers (``crc7_bytes``,
``crc16_bytes``) are table-driven fast paths over the same polynomials.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

CRC7_POLY = 0x09  # x^7 + x^3 + 1
CRC16_POLY = 0x1021  # x^16 + x^12 + x^5 + 1

COMMAND_BITS = 48
LONG_RESPONSE_BITS = 136
BLOCK_SIZE = 512


class FramingError(ValueError):
    """Start, transmission or end bit of a frame has the wrong value."""


class CrcError(ValueError):
    """A frame's CRC field does not match its contents."""


def crc7(bits: Iterable[int]) -> int:
    reg = 0
    for bit in bits:
        feedback = ((reg >> 6) & 1) ^ (bit & 1)
        reg = (reg << 1) & 0x7F
        if feedback:
            reg ^= CRC7_POLY
    return reg


def crc16(bits: Iterable[int]) -> int:
    reg = 0
    for bit in bits:
        feedback = ((reg >> 15) & 1) ^ (bit & 1)
        reg = (reg << 1) & 0xFFFF
        if feedback:
            reg ^= CRC16_POLY
    return reg


def bits_of(data: bytes, nbits: int | None = None) -> list[int]:
    """MSB-first bit list of ``data``, optionally truncated to ``nbits``."""
    out = [(byte >> (7 - i)) & 1 for byte in data for i in range(8)]
    return out if nbits is None else out[:nbits]


def int_to_bits(value: int, nbits: int) -> list[int]:
    return [(value >> (nbits - 1 - i)) & 1 for i in range(nbits)]


def bits_to_int(bits: Iterable[int]) -> int:
    value = 0
    for bit in bits:
        value = (value << 1) | (bit & 1)
    return value


def _crc7_table() -> list[int]:
    # indexed by (crc7 << 1) ^ byte; entries are the next crc7 value
    table = []
    for i in range(256):
        table.append(crc7(int_to_bits(i, 8)))
    return table


def _crc16_table() -> list[int]:
    return [crc16(int_to_bits(i, 8)) for i in range(256)]


_CRC7_TABLE = _crc7_table()
_CRC16_TABLE = _crc16_table()


def crc7_bytes(data: bytes, crc: int = 0) -> int:
    for byte in data:
        crc = _CRC7_TABLE[((crc << 1) ^ byte) & 0xFF]
    return crc


def crc16_bytes(data: bytes, crc: int = 0) -> int:
    table = _CRC16_TABLE
    for byte in data:
        crc = ((crc << 8) & 0xFFFF) ^ table[((crc >> 8) ^ byte) & 0xFF]
    return crc


# ---------------------------------------------------------------------------
# Command frames

@dataclass(frozen=True)
class CommandFrame:
    """48-bit host-to-card command token."""

    index: int
    argument: int
    crc7: int

    start_bit = 0
    transmission_bit = 1
    end_bit = 1

    def to_bytes(self) -> bytes:
        head = bytes([0x40 | self.index]) + self.argument.to_bytes(4, "big")
        return head + bytes([(self.crc7 << 1) | 1])

    def to_bits(self) -> list[int]:
        return bits_of(self.to_bytes())


def encode_command(index: int, argument: int) -> CommandFrame:
    if not 0 <= index <= 63:
        raise ValueError(f"command index {index} out of range 0..63")
    if not 0 <= argument <= 0xFFFFFFFF:
        raise ValueError(f"argument {argument:#x} is not a 32-bit value")
    head = bytes([0x40 | index]) + argument.to_bytes(4, "big")
    return CommandFrame(index, argument, crc7_bytes(head))


def decode_command(frame: bytes | Sequence[int]) -> tuple[int, int]:
    """Validate a serialized command and return ``(index, argument)``.

    ``frame`` is either 6 bytes or a 48-entry bit sequence.
    """
    if isinstance(frame, (bytes, bytearray)):
        raw = bytes(frame)
    else:
        if len(frame) != COMMAND_BITS:
            raise FramingError(f"command frame has {len(frame)} bits, expected 48")
        raw = bits_to_int(frame).to_bytes(6, "big")
    if len(raw) != 6:
        raise FramingError(f"command frame has {len(raw)} bytes, expected 6")
    if raw[0] & 0xC0 != 0x40:
        raise FramingError("bad start/transmission bits")
    if raw[5] & 1 != 1:
        raise FramingError("bad end bit")
    if crc7_bytes(raw[:5]) != raw[5] >> 1:
        raise CrcError("command CRC7 mismatch")
    return raw[0] & 0x3F, int.from_bytes(raw[1:5], "big")


# ---------------------------------------------------------------------------
# Responses

class ResponseKind(enum.Enum):
    NONE = "none"
    R1 = "R1"
    R1B = "R1b"
    R2 = "R2"
    R3 = "R3"
    R6 = "R6"
    R7 = "R7"

    @property
    def bits(self) -> int:
        if self is ResponseKind.NONE:
            return 0
        return LONG_RESPONSE_BITS if self is ResponseKind.R2 else COMMAND_BITS


@dataclass(frozen=True)
class Response:
    kind: ResponseKind
    payload: int = 0
    index: int = 0
    busy: bool = False

    def serialize(self) -> bytes:
        """Wire image; 6 bytes, or 17 for R2. R2/R3 carry ``111111`` in the index field."""
        kind = self.kind
        if kind is ResponseKind.NONE:
            return b""
        if kind is ResponseKind.R2:
            return bytes([0x3F]) + (self.payload | 1).to_bytes(16, "big")
        if kind is ResponseKind.R3:
            return bytes([0x3F]) + self.payload.to_bytes(4, "big") + b"\xff"
        head = bytes([self.index & 0x3F]) + self.payload.to_bytes(4, "big")
        return head + bytes([(crc7_bytes(head) << 1) | 1])

    @classmethod
    def deserialize(cls, kind: ResponseKind, data: bytes) -> "Response":
        """Inverse of :meth:`serialize`. Performs no CRC check."""
        if len(data) * 8 != kind.bits:
            raise FramingError(f"{kind.value} response needs {kind.bits} bits, got {len(data) * 8}")
        if kind is ResponseKind.NONE:
            return cls(kind)
        if data[0] & 0xC0 != 0 or data[-1] & 1 != 1:
            raise FramingError("bad response start/transmission/end bits")
        if kind is ResponseKind.R2:
            return cls(kind, int.from_bytes(data[1:], "big"), 0x3F)
        return cls(kind, int.from_bytes(data[1:5], "big"), data[0] & 0x3F,
                   busy=kind is ResponseKind.R1B)


def response_crc_ok(kind: ResponseKind, data: bytes) -> bool:
    """CRC7 check of a serialized response. R3 carries no CRC and always passes."""
    if kind is ResponseKind.R3 or kind is ResponseKind.NONE:
        return True
    if kind is ResponseKind.R2:
        # internal CRC of CID/CSD covers register bits 127..8
        return crc7_bytes(data[1:16]) == data[16] >> 1
    return crc7_bytes(data[:5]) == data[5] >> 1


# ---------------------------------------------------------------------------
# Data blocks on the DAT lanes
#
# Lane i carries bits (7 - i) and (3 - i) of every byte, i.e. lane 0 is DAT3.
# A wide-bus block on the wire is a sequence of 4-bit symbols (one per SD
# clock): start (0x0), 2 * block_size data nibbles, 16 CRC nibbles, end (0xF).

def _lane_matrix(block: bytes) -> np.ndarray:
    bits = np.unpackbits(np.frombuffer(block, dtype=np.uint8)).reshape(-1, 8)
    # column c holds bit (7 - c); lane i -> columns i and i + 4
    return np.stack([bits[:, [i, i + 4]].reshape(-1) for i in range(4)])


def _crc16_of_bitarray(bits: np.ndarray) -> int:
    if len(bits) % 8 == 0:
        return crc16_bytes(np.packbits(bits).tobytes())
    return crc16(bits.tolist())


@dataclass(frozen=True)
class DataBlock:
    data: bytes
    lane_crcs: tuple[int, int, int, int] = field(default=(0, 0, 0, 0))

    @classmethod
    def from_bytes(cls, data: bytes) -> "DataBlock":
        _, crcs = split_block_into_lanes(data)
        return cls(bytes(data), crcs)


def split_block_into_lanes(block: bytes | DataBlock) -> tuple[list[list[int]], tuple[int, int, int, int]]:
    data = block.data if isinstance(block, DataBlock) else bytes(block)
    matrix = _lane_matrix(data)
    crcs = tuple(_crc16_of_bitarray(matrix[i]) for i in range(4))
    return [row.tolist() for row in matrix], crcs  # type: ignore[return-value]


def merge_lanes(lanes: Sequence[Sequence[int]]) -> bytes:
    if len(lanes) != 4 or len({len(lane) for lane in lanes}) != 1:
        raise ValueError("need four lanes of equal length")
    matrix = np.asarray(lanes, dtype=np.uint8)
    nbytes = matrix.shape[1] // 2
    bits = np.empty((nbytes, 8), dtype=np.uint8)
    for i in range(4):
        pairs = matrix[i].reshape(nbytes, 2)
        bits[:, i] = pairs[:, 0]
        bits[:, i + 4] = pairs[:, 1]
    return np.packbits(bits.reshape(-1)).tobytes()


def block_symbol_count(block_size: int = BLOCK_SIZE, width: int = 4) -> int:
    """SD clocks needed to move one block including start, CRC and end bits."""
    return 1 + block_size * 8 // width + 16 + 1


def encode_block_symbols(data: bytes, width: int = 4) -> bytes:
    """Per-clock DAT symbols for ``data`` in 4-bit (nibbles) or 1-bit mode."""
    arr = np.frombuffer(bytes(data), dtype=np.uint8)
    if width == 4:
        nibbles = np.empty(len(arr) * 2, dtype=np.uint8)
        nibbles[0::2] = arr >> 4
        nibbles[1::2] = arr & 0x0F
        _, crcs = split_block_into_lanes(bytes(data))
        tail = bytearray()
        for k in range(16):
            sym = 0
            for lane, crc in enumerate(crcs):
                sym |= ((crc >> (15 - k)) & 1) << (3 - lane)
            tail.append(sym)
        return b"\x00" + nibbles.tobytes() + bytes(tail) + b"\x0f"
    if width == 1:
        crc = crc16_bytes(bytes(data))
        return (b"\x00" + np.unpackbits(arr).tobytes()
                + bytes(int_to_bits(crc, 16)) + b"\x01")
    raise ValueError(f"unsupported bus width {width}")


def decode_block_symbols(symbols: bytes, width: int = 4) -> tuple[bytes, bool]:
    """Recover block bytes from DAT symbols. Returns ``(data, ok)``.

    ``ok`` is False on a CRC mismatch or bad start/end symbol.
    """
    if width == 4:
        if len(symbols) < 19 or (len(symbols) - 18) % 2:
            return b"", False
        body = np.frombuffer(symbols[1:-17], dtype=np.uint8)
        data = ((body[0::2] << 4) | (body[1::2] & 0x0F)).astype(np.uint8).tobytes()
        _, crcs = split_block_into_lanes(data)
        received = [0, 0, 0, 0]
        for sym in symbols[-17:-1]:
            for lane in range(4):
                received[lane] = (received[lane] << 1) | ((sym >> (3 - lane)) & 1)
        ok = symbols[0] == 0 and symbols[-1] == 0x0F and tuple(received) == crcs
        return data, ok
    if width == 1:
        if len(symbols) < 26 or (len(symbols) - 18) % 8:
            return b"", False
        data = np.packbits(np.frombuffer(symbols[1:-17], dtype=np.uint8)).tobytes()
        ok = (symbols[0] == 0 and symbols[-1] == 1
              and bits_to_int(symbols[-17:-1]) == crc16_bytes(data))
        return data, ok
    raise ValueError(f"unsupported bus width {width}")
