"""Reference models kept deliberately naive: polynomial division over GF(2)
on Python ints, and the SD 4-bit lane split done bit by bit."""


def gf2_mod(value: int, nbits: int, poly: int, width: int) -> int:
    """Remainder of value(x) * x^width divided by poly(x)."""
    dividend = value << width
    for shift in range(nbits + width - 1, width - 1, -1):
        if dividend >> shift & 1:
            dividend ^= poly << (shift - width)
    return dividend & ((1 << width) - 1)


def crc7_ref(value: int, nbits: int) -> int:
    return gf2_mod(value, nbits, 0x89, 7)       # x^7 + x^3 + 1


def crc16_ref(value: int, nbits: int) -> int:
    return gf2_mod(value, nbits, 0x11021, 16)   # x^16 + x^12 + x^5 + 1


def command_ref(index: int, argument: int) -> bytes:
    head = (0b01 << 38) | (index << 32) | argument
    crc = crc7_ref(head, 40)
    return ((head << 8) | (crc << 1) | 1).to_bytes(6, "big")


def lane_bits(block: bytes, lane: int) -> list[int]:
    """DAT[3 - lane] carries bit (7 - lane) then bit (3 - lane) of each byte."""
    out = []
    for byte in block:
        out.append(byte >> (7 - lane) & 1)
        out.append(byte >> (3 - lane) & 1)
    return out


def lane_crcs_ref(block: bytes) -> tuple[int, ...]:
    crcs = []
    for lane in range(4):
        bits = lane_bits(block, lane)
        crcs.append(crc16_ref(int("".join(map(str, bits)), 2), len(bits)))
    return tuple(crcs)
