"""Behavioral SDHC card: state machine, card registers and block storage.

The card only advances when the host supplies SD clock edges through
:meth:`CardModel.tick`, so a gated clock freezes it mid-transfer.
"""

from __future__ import annotations

import enum
import hashlib
import logging
import os
from dataclasses import dataclass
from typing import NamedTuple

from . import protocol
from .protocol import BLOCK_SIZE, CrcError, FramingError, Response, ResponseKind

log = logging.getLogger(__name__)

# R1 card status bits
OUT_OF_RANGE = 1 << 31
ADDRESS_ERROR = 1 << 30
BLOCK_LEN_ERROR = 1 << 29
WP_VIOLATION = 1 << 26
COM_CRC_ERROR = 1 << 23
ILLEGAL_COMMAND = 1 << 22
READY_FOR_DATA = 1 << 8
APP_CMD = 1 << 5
ERROR_BITS = OUT_OF_RANGE | ADDRESS_ERROR | BLOCK_LEN_ERROR | WP_VIOLATION | COM_CRC_ERROR | ILLEGAL_COMMAND

OCR_VOLTAGE_WINDOW = 0x00FF8000
OCR_CCS = 1 << 30
OCR_POWER_UP = 1 << 31


class CardState(enum.IntEnum):
    # values are the CURRENT_STATE codes reported in R1
    IDLE = 0
    READY = 1
    IDENT = 2
    STANDBY = 3
    TRANSFER = 4
    SENDING_DATA = 5
    RECEIVE_DATA = 6
    PROGRAMMING = 7


class AddressError(IndexError):
    pass


class WriteProtectError(PermissionError):
    pass


class BusEvent(NamedTuple):
    kind: str  # response | dat_ready | block | crc_status | busy_end
    payload: object = None


@dataclass
class CardTiming:
    """Gap timings in SD clocks."""

    n_cr: int = 8            # command end bit -> response start bit
    n_ac: int = 8            # response end -> read data start, and between read blocks
    program_busy: int = 16   # DAT0 held low after each written block
    n_crc: int = 2           # data end bit -> CRC status token
    init_clocks: int = 74
    ready_after_polls: int | None = 2  # ACMD41 polls answered busy; None = never ready

    def __post_init__(self):
        if not 2 <= self.n_cr <= 64:
            raise ValueError("n_cr must be within 2..64 SD clocks")
        if self.n_ac < 2:
            raise ValueError("n_ac must be at least 2 SD clocks")
        if self.program_busy < 0 or self.n_crc < 2:
            raise ValueError("program_busy >= 0 and n_crc >= 2 required")


class CardImage:
    """Whole-block storage, in memory or backed by a raw image file."""

    def __init__(self, capacity_blocks: int, path: str | os.PathLike | None = None,
                 read_only: bool = False):
        if capacity_blocks < 1:
            raise ValueError("capacity_blocks must be >= 1")
        self.capacity_blocks = capacity_blocks
        self.path = path
        self.read_only = read_only
        self.dirty = False
        if path is None:
            self._buf = bytearray(capacity_blocks * BLOCK_SIZE)
        else:
            self._buf = self._load(path, capacity_blocks)

    @classmethod
    def from_file(cls, path: str | os.PathLike, read_only: bool = False) -> "CardImage":
        size = os.path.getsize(path)
        if size == 0 or size % BLOCK_SIZE:
            raise ValueError(f"{path}: image size {size} is not a positive multiple of {BLOCK_SIZE}")
        return cls(size // BLOCK_SIZE, path, read_only)

    @staticmethod
    def _load(path, capacity_blocks: int) -> bytearray:
        nbytes = capacity_blocks * BLOCK_SIZE
        buf = bytearray(nbytes)
        if os.path.exists(path):
            with open(path, "rb") as fh:
                data = fh.read(nbytes)
            buf[:len(data)] = data
        return buf

    def _check(self, lba: int) -> None:
        if not 0 <= lba < self.capacity_blocks:
            raise AddressError(f"block {lba} outside card of {self.capacity_blocks} blocks")

    def read_block(self, lba: int) -> bytes:
        self._check(lba)
        off = lba * BLOCK_SIZE
        return bytes(self._buf[off:off + BLOCK_SIZE])

    def write_block(self, lba: int, data: bytes) -> None:
        self._check(lba)
        if self.read_only:
            raise WriteProtectError("image is write protected")
        if len(data) != BLOCK_SIZE:
            raise ValueError(f"block must be {BLOCK_SIZE} bytes, got {len(data)}")
        off = lba * BLOCK_SIZE
        self._buf[off:off + BLOCK_SIZE] = data
        self.dirty = True

    def flush(self) -> None:
        if self.path is not None and self.dirty:
            with open(self.path, "wb") as fh:
                fh.write(self._buf)
        self.dirty = False

    def digest(self) -> bytes:
        return hashlib.sha256(self._buf).digest()


def _with_crc(reg_without_crc: int) -> int:
    """Fill bits 7..1 of a 128-bit CID/CSD with CRC7 over bits 127..8."""
    body = (reg_without_crc >> 8).to_bytes(15, "big")
    return (reg_without_crc & ~0xFF) | (protocol.crc7_bytes(body) << 1) | 1


def make_cid(serial: int) -> int:
    cid = 0x53 << 120                            # MID
    cid |= int.from_bytes(b"SM", "big") << 104   # OID
    cid |= int.from_bytes(b"SIM  ", "big") << 64  # PNM
    cid |= 0x10 << 56                            # PRV 1.0
    cid |= (serial & 0xFFFFFFFF) << 24           # PSN
    cid |= ((25 << 4) | 1) << 8                  # MDT 2025-01
    return _with_crc(cid)


def make_csd(capacity_blocks: int, write_protect: bool = False) -> int:
    c_size = -(-capacity_blocks // 1024) - 1
    csd = 1 << 126                # CSD_STRUCTURE = 1 (v2.0)
    csd |= 0x0E << 112            # TAAC
    csd |= 0x32 << 96             # TRAN_SPEED 25 MHz
    csd |= 0x5B5 << 84            # CCC
    csd |= 9 << 80                # READ_BL_LEN 512
    csd |= (c_size & 0x3FFFFF) << 48
    csd |= 1 << 46                # ERASE_BLK_EN
    csd |= 0x7F << 39             # SECTOR_SIZE
    csd |= 2 << 26                # R2W_FACTOR
    csd |= 9 << 22                # WRITE_BL_LEN 512
    if write_protect:
        csd |= 1 << 12            # TMP_WRITE_PROTECT
    return _with_crc(csd)


def csd_capacity_blocks(csd: int) -> int:
    if csd >> 126 != 1:
        raise ValueError("not a CSD version 2.0 register")
    return (((csd >> 48) & 0x3FFFFF) + 1) * 1024


@dataclass
class CardRegisters:
    ocr: int = OCR_VOLTAGE_WINDOW | OCR_CCS
    cid: int = 0
    csd: int = 0
    rca: int = 0
    scr: int = 0x0205_0000_0000_0000
    bus_width: int = 1


# response kind by (app command?, index)
_RESPONSES = {
    (False, 0): ResponseKind.NONE,
    (False, 2): ResponseKind.R2,
    (False, 3): ResponseKind.R6,
    (False, 7): ResponseKind.R1B,
    (False, 8): ResponseKind.R7,
    (False, 9): ResponseKind.R2,
    (False, 12): ResponseKind.R1B,
    (False, 13): ResponseKind.R1,
    (False, 16): ResponseKind.R1,
    (False, 17): ResponseKind.R1,
    (False, 18): ResponseKind.R1,
    (False, 24): ResponseKind.R1,
    (False, 25): ResponseKind.R1,
    (False, 55): ResponseKind.R1,
    (True, 6): ResponseKind.R1,
    (True, 41): ResponseKind.R3,
}


def response_kind(index: int, app: bool = False) -> ResponseKind | None:
    """Response type the card uses for a command, or None if unsupported."""
    return _RESPONSES.get((app, index))


class CardModel:
    """SDHC card attached to one SD bus.

    ``tick`` advances the card by whole SD clock edges and returns the
    :class:`BusEvent` s that completed; the controller never calls it with
    more edges than :meth:`edges_to_event` allows, so every event lands on
    its exact edge.
    """

    def __init__(self, capacity_blocks: int = 8192, backing: str | os.PathLike | CardImage | None = None,
                 timing: CardTiming | None = None, read_only: bool = False):
        if isinstance(backing, CardImage):
            self.image = backing
        else:
            self.image = CardImage(capacity_blocks, backing, read_only)
        self.timing = timing or CardTiming()
        serial = int.from_bytes(self.image.digest()[:4], "big")
        self.regs = CardRegisters(cid=make_cid(serial),
                                  csd=make_csd(self.image.capacity_blocks, self.image.read_only))
        self._next_rca = (serial & 0xFFFF) or 1
        self.powered = False
        self.clocks_since_power = 0
        self.total_clocks = 0
        self._reset_state()

    @classmethod
    def from_file(cls, path: str | os.PathLike, timing: CardTiming | None = None,
                  read_only: bool = False) -> "CardModel":
        """Card backed by an existing image; capacity is taken from its size."""
        return cls(backing=CardImage.from_file(path, read_only), timing=timing)

    @property
    def capacity_blocks(self) -> int:
        return self.image.capacity_blocks

    def _reset_state(self) -> None:
        self.state = CardState.IDLE
        self.regs.ocr &= ~OCR_POWER_UP
        self.regs.rca = 0
        self.regs.bus_width = 1
        self.acmd41_polls = 0
        self.expect_acmd = False
        self.pending_status = 0   # error bits reported in the next R1
        self._resp: list | None = None        # [edges_left, wire bytes]
        self._abort_dat()
        self.commands_seen = 0

    def _abort_dat(self) -> None:
        self._rd_lba = 0
        self._rd_multi = False
        self._rd_nac = 0          # > 0 while counting down to the next block
        self._rd_left = 0         # > 0 while a block is on the wire
        self._rd_symbols = b""
        self._wr_lba = 0
        self._wr_multi = False
        self._crc_left = 0
        self._crc_ok = True
        self._busy_left = 0

    # -- power ---------------------------------------------------------------

    def power_on(self) -> None:
        if not self.powered:
            self.powered = True
            self.clocks_since_power = 0
            self._reset_state()

    def power_off(self) -> None:
        self.powered = False
        self._reset_state()

    # -- direct storage access ----------------------------------------------

    def read_block(self, lba: int) -> protocol.DataBlock:
        return protocol.DataBlock.from_bytes(self.image.read_block(lba))

    def write_block(self, lba: int, block: protocol.DataBlock | bytes) -> None:
        data = block.data if isinstance(block, protocol.DataBlock) else bytes(block)
        self.image.write_block(lba, data)

    # -- bus timing ------------------------------------------------------------

    @property
    def busy(self) -> bool:
        """DAT0 held low (CRC status or programming)."""
        return self._crc_left > 0 or self._busy_left > 0

    @property
    def sending(self) -> bool:
        return self._rd_nac > 0 or self._rd_left > 0

    @property
    def block_on_wire(self) -> bool:
        return self._rd_left > 0

    @property
    def response_pending(self) -> bool:
        return self._resp is not None

    def edges_to_event(self) -> int | None:
        candidates = [c for c in (self._resp[0] if self._resp else 0, self._rd_nac, self._rd_left,
                                  self._crc_left, self._busy_left) if c > 0]
        return min(candidates) if candidates else None

    def tick(self, edges: int) -> list[BusEvent]:
        events: list[BusEvent] = []
        if not self.powered:
            return events
        while edges > 0:
            step = self.edges_to_event()
            if step is None:
                self._count(edges)
                break
            step = min(step, edges)
            self._count(step)
            edges -= step
            self._advance(step, events)
        return events

    def _count(self, n: int) -> None:
        self.clocks_since_power += n
        self.total_clocks += n

    def _advance(self, n: int, events: list[BusEvent]) -> None:
        if self._resp is not None:
            self._resp[0] -= n
            if self._resp[0] == 0:
                events.append(BusEvent("response", self._resp[1]))
                self._resp = None
        if self._rd_left > 0:
            self._rd_left -= n
            if self._rd_left == 0:
                events.append(BusEvent("block", self._rd_symbols))
                self._rd_lba += 1
                if self._rd_multi:
                    self._schedule_read()
                else:
                    self.state = CardState.TRANSFER
        elif self._rd_nac > 0:
            self._rd_nac -= n
            if self._rd_nac == 0:
                self._start_block()
                events.append(BusEvent("dat_ready"))
        if self._crc_left > 0:
            self._crc_left -= n
            if self._crc_left == 0:
                events.append(BusEvent("crc_status", self._crc_ok))
                if self._crc_ok:
                    self._busy_left = self.timing.program_busy
                    if self._busy_left == 0:
                        self._finish_program(events)
                else:
                    self._after_program()
        elif self._busy_left > 0:
            self._busy_left -= n
            if self._busy_left == 0:
                self._finish_program(events)

    def _finish_program(self, events: list[BusEvent]) -> None:
        events.append(BusEvent("busy_end"))
        self._after_program()

    def _after_program(self) -> None:
        if self.state == CardState.PROGRAMMING:
            self.state = CardState.RECEIVE_DATA if self._wr_multi else CardState.TRANSFER

    def _schedule_read(self) -> None:
        if self._rd_lba >= self.capacity_blocks:
            # streamed past the end: stop and report on the next R1
            self.pending_status |= OUT_OF_RANGE | ADDRESS_ERROR
            self._rd_multi = False
            self.state = CardState.TRANSFER
            return
        self._rd_nac = self.timing.n_ac

    def _start_block(self) -> None:
        data = self.image.read_block(self._rd_lba)
        self._rd_symbols = protocol.encode_block_symbols(data, self.regs.bus_width)
        self._rd_left = len(self._rd_symbols)

    # -- host -> card ------------------------------------------------------------

    def receive_command(self, frame: bytes) -> Response | None:
        """A complete command token arrived on CMD; schedule the response."""
        if not self.powered or self.clocks_since_power < self.timing.init_clocks:
            return None
        try:
            index, argument = protocol.decode_command(frame)
        except (CrcError, FramingError) as exc:
            log.debug("card dropped command: %s", exc)
            self.pending_status |= COM_CRC_ERROR
            return None
        resp = self.handle_command(index, argument)
        if resp is not None and resp.kind is not ResponseKind.NONE:
            self._resp = [self.timing.n_cr + resp.kind.bits, resp.serialize()]
        return resp

    def handle_command(self, index: int, argument: int, now: int | None = None) -> Response | None:
        """Apply one decoded command; returns the response (None = no response)."""
        self.commands_seen += 1
        app = self.expect_acmd
        self.expect_acmd = False
        if index == 0:
            self._reset_state()
            self.commands_seen = 1
            return Response(ResponseKind.NONE)
        kind = response_kind(index, app)
        if kind is None and app:
            kind = response_kind(index, False)
            app = False
        handler = getattr(self, f"_{'acmd' if app else 'cmd'}{index}", None)
        if kind is None or handler is None:
            return self._illegal()
        state_at_receipt = self.state
        payload = handler(argument)
        if payload is None:
            return self._illegal()
        if payload is _NO_RESPONSE:
            return None
        if kind in (ResponseKind.R1, ResponseKind.R1B):
            payload = self._status(state_at_receipt, payload)
        return Response(kind, payload, index, busy=kind is ResponseKind.R1B)

    def _illegal(self) -> None:
        self.pending_status |= ILLEGAL_COMMAND
        return None

    def _status(self, state: CardState, extra: int) -> int:
        status = extra | self.pending_status | (int(state) << 9)
        if not self.busy:
            status |= READY_FOR_DATA
        if self.expect_acmd:
            status |= APP_CMD
        self.pending_status = 0
        return status

    def _rca_matches(self, argument: int) -> bool:
        return (argument >> 16) == self.regs.rca

    # Handlers return the response payload, None for an illegal command,
    # or _NO_RESPONSE for a legal command the card does not answer.

    def _cmd2(self, arg):
        if self.state != CardState.READY:
            return None
        self.state = CardState.IDENT
        return self.regs.cid

    def _cmd3(self, arg):
        if self.state not in (CardState.IDENT, CardState.STANDBY):
            return None
        self.regs.rca = self._next_rca
        self._next_rca = (self._next_rca % 0xFFFF) + 1
        self.state = CardState.STANDBY
        status = self._status(self.state, 0)
        short = ((status >> 8) & 0xC000) | ((status >> 6) & 0x2000) | (status & 0x1FFF)
        return (self.regs.rca << 16) | short

    def _cmd7(self, arg):
        if self.state == CardState.STANDBY and self._rca_matches(arg):
            self.state = CardState.TRANSFER
            return 0
        if self.state in (CardState.TRANSFER, CardState.PROGRAMMING) and not self._rca_matches(arg):
            self.state = CardState.STANDBY
            return _NO_RESPONSE
        if self.state == CardState.TRANSFER:
            return 0
        return None

    def _cmd8(self, arg):
        if self.state != CardState.IDLE:
            return None
        if (arg >> 8) & 0xF != 0x1:
            return _NO_RESPONSE  # voltage not supported
        return arg & 0xFFF

    def _cmd9(self, arg):
        if self.state != CardState.STANDBY or not self._rca_matches(arg):
            return None
        return self.regs.csd

    def _cmd12(self, arg):
        if self.state == CardState.SENDING_DATA:
            self._rd_multi = False
            self._rd_nac = self._rd_left = 0
            self.state = CardState.TRANSFER
            return 0
        if self.state == CardState.RECEIVE_DATA:
            self._wr_multi = False
            self.state = CardState.TRANSFER
            return 0
        if self.state == CardState.PROGRAMMING:
            self._wr_multi = False
            return 0
        return None

    def _cmd13(self, arg):
        if self.state in (CardState.IDLE, CardState.READY, CardState.IDENT) or not self._rca_matches(arg):
            return None
        return 0

    def _cmd16(self, arg):
        if self.state != CardState.TRANSFER:
            return None
        return 0 if arg == BLOCK_SIZE else BLOCK_LEN_ERROR

    def _start_read(self, arg, multi):
        if self.state != CardState.TRANSFER:
            return None
        if arg >= self.capacity_blocks:
            return OUT_OF_RANGE | ADDRESS_ERROR
        self.state = CardState.SENDING_DATA
        self._rd_lba = arg
        self._rd_multi = multi
        self._rd_nac = self.timing.n_ac + self.timing.n_cr + ResponseKind.R1.bits
        return 0

    def _cmd17(self, arg):
        return self._start_read(arg, False)

    def _cmd18(self, arg):
        return self._start_read(arg, True)

    def _start_write(self, arg, multi):
        if self.state != CardState.TRANSFER:
            return None
        if arg >= self.capacity_blocks:
            return OUT_OF_RANGE | ADDRESS_ERROR
        if self.image.read_only:
            return WP_VIOLATION
        self.state = CardState.RECEIVE_DATA
        self._wr_lba = arg
        self._wr_multi = multi
        return 0

    def _cmd24(self, arg):
        return self._start_write(arg, False)

    def _cmd25(self, arg):
        return self._start_write(arg, True)

    def _cmd55(self, arg):
        if self.state != CardState.IDLE and not self._rca_matches(arg):
            return None
        self.expect_acmd = True
        return APP_CMD

    def _acmd6(self, arg):
        if self.state != CardState.TRANSFER or arg & 3 not in (0, 2):
            return None
        self.regs.bus_width = 4 if arg & 3 == 2 else 1
        return APP_CMD

    def _acmd41(self, arg):
        if self.state != CardState.IDLE:
            return None
        if arg & OCR_VOLTAGE_WINDOW:
            self.acmd41_polls += 1
            limit = self.timing.ready_after_polls
            if limit is not None and self.acmd41_polls > limit and arg & OCR_CCS:
                self.regs.ocr |= OCR_POWER_UP
                self.state = CardState.READY
        ocr = self.regs.ocr
        return ocr if ocr & OCR_POWER_UP else ocr & ~OCR_CCS

    def receive_block(self, symbols: bytes) -> None:
        """A data block from the host finished on DAT; answer with CRC status."""
        if self.state != CardState.RECEIVE_DATA:
            log.debug("card ignored data block in state %s", self.state.name)
            return
        data, ok = protocol.decode_block_symbols(symbols, self.regs.bus_width)
        if ok and len(data) == BLOCK_SIZE:
            if self._wr_lba < self.capacity_blocks:
                self.image.write_block(self._wr_lba, data)
            else:
                self.pending_status |= OUT_OF_RANGE | ADDRESS_ERROR
            self._wr_lba += 1
            self.state = CardState.PROGRAMMING
        else:
            ok = False
            self.pending_status |= COM_CRC_ERROR
        self._crc_ok = ok
        self._crc_left = self.timing.n_crc + 5


_NO_RESPONSE = object()
