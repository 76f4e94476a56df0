"""Polling SDHCI driver: card bring-up and PIO block transfers.

Mirrors a boot-ROM style bare-metal driver. Every register access goes
through :class:`~sdhcsim.system.System` and is charged to the host clock.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

from . import registers as R
from .card import ERROR_BITS, OCR_CCS, OCR_POWER_UP, OCR_VOLTAGE_WINDOW, WP_VIOLATION, csd_capacity_blocks
from .protocol import BLOCK_SIZE
from .system import System

log = logging.getLogger(__name__)

INIT_CLOCK_HZ = 400_000
INIT_CLOCKS = 74
WORDS_PER_BLOCK = BLOCK_SIZE // 4

_CHECKED = R.CMD_CRC_CHECK | R.CMD_INDEX_CHECK
# host-side command register flags by (app command?, index)
COMMAND_FLAGS = {
    (False, 0): R.CMD_RESP_NONE,
    (False, 2): R.CMD_RESP_136 | R.CMD_CRC_CHECK,
    (False, 3): R.CMD_RESP_48 | _CHECKED,
    (False, 7): R.CMD_RESP_48_BUSY | _CHECKED,
    (False, 8): R.CMD_RESP_48 | _CHECKED,
    (False, 9): R.CMD_RESP_136 | R.CMD_CRC_CHECK,
    (False, 12): R.CMD_RESP_48_BUSY | _CHECKED | R.CMD_TYPE_ABORT,
    (False, 13): R.CMD_RESP_48 | _CHECKED,
    (False, 16): R.CMD_RESP_48 | _CHECKED,
    (False, 17): R.CMD_RESP_48 | _CHECKED | R.CMD_DATA_PRESENT,
    (False, 18): R.CMD_RESP_48 | _CHECKED | R.CMD_DATA_PRESENT,
    (False, 24): R.CMD_RESP_48 | _CHECKED | R.CMD_DATA_PRESENT,
    (False, 25): R.CMD_RESP_48 | _CHECKED | R.CMD_DATA_PRESENT,
    (False, 55): R.CMD_RESP_48 | _CHECKED,
    (True, 6): R.CMD_RESP_48 | _CHECKED,
    (True, 41): R.CMD_RESP_48,
}

_STATUS = R.NORMAL_INT_STATUS  # 32-bit view: normal status low, error status high
_ERROR_MASK = R.INT_ERROR | (0xFFFF << 16)


class DriverError(Exception):
    pass


class InitTimeout(DriverError):
    def __init__(self, step: str, detail: str = ""):
        super().__init__(f"card init timed out at {step}{': ' + detail if detail else ''}")
        self.step = step


class UnusableCard(DriverError):
    pass


class TransferError(DriverError):
    def __init__(self, message: str, status: int = 0):
        super().__init__(f"{message} (status 0x{status:08X})")
        self.status = status


class Timeout(DriverError):
    pass


class CommandError(DriverError):
    def __init__(self, index: int, status: int):
        super().__init__(f"CMD{index} failed with status 0x{status:08X}")
        self.index = index
        self.status = status


@dataclass(frozen=True)
class CardInfo:
    rca: int
    capacity_blocks: int
    bus_width: int
    sd_clock_hz: float


@dataclass(frozen=True)
class TransferResult:
    data: bytes
    cycles: int

    @property
    def nbytes(self) -> int:
        return len(self.data)


def divisor_for(base_hz: float, target_hz: float, power_of_two: bool = False, clamp: bool = False) -> int:
    """Smallest divider value N with base / (2N) <= target (N = 0 means base).

    With ``clamp`` an unreachable target falls back to the slowest divider.
    """
    if target_hz >= base_hz:
        return 0
    n = math.ceil(base_hz / (2 * target_hz))
    if power_of_two:
        n = 1 << (n - 1).bit_length()
    if n > 0xFF:
        if not clamp:
            raise ValueError(f"cannot reach {target_hz} Hz from {base_hz} Hz with an 8-bit divider")
        n = 0x80 if power_of_two else 0xFF
        log.info("divider saturated: %.0f Hz requested, using %.0f Hz", target_hz, base_hz / (2 * n))
    return n


class SDHCDriver:
    def __init__(self, system: System, poll_limit: int = 10_000_000, acmd41_limit: int = 1000,
                 power_of_two_divider: bool = False):
        self.sys = system
        self.poll_limit = poll_limit
        self.acmd41_limit = acmd41_limit
        self.power_of_two_divider = power_of_two_divider
        self.base_hz = system.cost.host_freq_hz
        self.info: CardInfo | None = None

    # -- low level -----------------------------------------------------------

    def _wait(self, mask: int, what: str) -> int:
        status = self.sys.poll(_STATUS, 4, mask | _ERROR_MASK, self.poll_limit)
        if status is None:
            raise Timeout(f"timed out waiting for {what}")
        return status

    def _clear(self, bits: int) -> None:
        self.sys.write(_STATUS, 4, bits)

    def _recover(self) -> None:
        self.sys.write(R.SOFTWARE_RESET, 1, R.SR_CMD | R.SR_DAT)
        self._clear(0xFFFFFFFF)

    def command(self, index: int, argument: int = 0, app: bool = False, transfer_mode: int = 0) -> int:
        """Issue one command and wait for Command Complete; returns Response[31:0]."""
        flags = COMMAND_FLAGS[(app, index)]
        sys = self.sys
        sys.write(R.ARGUMENT, 4, argument)
        sys.write(R.TRANSFER_MODE, 4, transfer_mode | ((index << 8 | flags) << 16))
        status = self._wait(R.INT_COMMAND_COMPLETE, f"CMD{index}")
        if status & _ERROR_MASK:
            self._recover()
            raise CommandError(index, status)
        self._clear(R.INT_COMMAND_COMPLETE)
        if flags & 0b11 == R.CMD_RESP_NONE:
            return 0
        response = sys.read(R.RESPONSE, 4)
        if flags & 0b11 == R.CMD_RESP_48_BUSY and not flags & R.CMD_DATA_PRESENT:
            status = self._wait(R.INT_TRANSFER_COMPLETE, f"CMD{index} busy")
            if status & _ERROR_MASK:
                self._recover()
                raise CommandError(index, status)
            self._clear(R.INT_TRANSFER_COMPLETE)
        return response

    def _long_response(self) -> int:
        words = [self.sys.read(R.RESPONSE + 4 * i, 4) for i in range(4)]
        value = sum(w << (32 * i) for i, w in enumerate(words))
        return (value & ((1 << 120) - 1)) << 8

    def _set_clock(self, target_hz: float, clamp: bool = False) -> float:
        n = divisor_for(self.base_hz, target_hz, self.power_of_two_divider, clamp)
        sys = self.sys
        sys.write(R.CLOCK_CONTROL, 2, (n << 8) | R.CC_INTERNAL_ENABLE)
        if sys.poll(R.CLOCK_CONTROL, 2, R.CC_INTERNAL_STABLE, self.poll_limit) is None:
            raise InitTimeout("clock", "internal clock never stabilised")
        sys.write(R.CLOCK_CONTROL, 2, (n << 8) | R.CC_INTERNAL_ENABLE | R.CC_SD_ENABLE)
        return self.base_hz / (2 * n if n else 1)

    # -- bring-up ---------------------------------------------------------------

    def power_up(self) -> float:
        """Reset the controller, start the identification clock, power the bus."""
        sys = self.sys
        sys.write(R.SOFTWARE_RESET, 1, R.SR_ALL)
        sys.write(R.NORMAL_INT_STATUS_ENABLE, 4, 0x01FF01FF)
        sys.write(R.TIMEOUT_CONTROL, 1, 0x0E)
        init_hz = self._set_clock(INIT_CLOCK_HZ, clamp=True)
        sys.write(R.POWER_CONTROL, 1, R.PC_3V3 | R.PC_BUS_POWER)
        period = self.sys.controller.period
        sys.delay((INIT_CLOCKS + 1) * period)
        return init_hz

    def init(self, target_sd_hz: float = 25e6) -> CardInfo:
        self.info = None
        self.power_up()

        def step(name, index, arg=0, app=False):
            try:
                return self.command(index, arg, app)
            except (CommandError, Timeout) as exc:
                raise InitTimeout(name, str(exc)) from exc

        step("CMD0", 0)
        echo = step("CMD8", 8, 0x1AA)
        if echo & 0xFFF != 0x1AA:
            raise UnusableCard(f"CMD8 echo 0x{echo & 0xFFF:03X} != 0x1AA")
        for _ in range(self.acmd41_limit):
            step("CMD55", 55, 0)
            ocr = step("ACMD41", 41, OCR_CCS | OCR_VOLTAGE_WINDOW, app=True)
            if ocr & OCR_POWER_UP:
                break
        else:
            raise InitTimeout("ACMD41", f"card busy after {self.acmd41_limit} polls")
        if not ocr & OCR_CCS:
            raise UnusableCard("card is not high capacity")
        step("CMD2", 2)
        rca = step("CMD3", 3) >> 16
        step("CMD9", 9, rca << 16)
        capacity = csd_capacity_blocks(self._long_response())
        step("CMD7", 7, rca << 16)
        step("CMD55", 55, rca << 16)
        step("ACMD6", 6, 2, app=True)
        self.sys.write(R.HOST_CONTROL, 1, R.HC_4BIT)
        status = step("CMD16", 16, BLOCK_SIZE)
        if status & ERROR_BITS:
            raise UnusableCard(f"CMD16 rejected, card status 0x{status:08X}")
        sd_hz = self._set_clock(target_sd_hz)
        self.info = CardInfo(rca, capacity, 4, sd_hz)
        log.info("card ready: rca=0x%04X %d blocks at %.3f MHz", rca, capacity, sd_hz / 1e6)
        return self.info

    # -- transfers ---------------------------------------------------------------

    def _check_range(self, lba: int, count: int) -> None:
        if self.info is None:
            raise DriverError("card not initialised")
        if count < 0 or lba < 0 or lba + count > self.info.capacity_blocks:
            raise ValueError(f"blocks {lba}..{lba + count - 1} outside card of {self.info.capacity_blocks} blocks")

    def _start(self, lba: int, count: int, read: bool) -> None:
        multi = count > 1
        index = (18 if multi else 17) if read else (25 if multi else 24)
        mode = R.TM_READ if read else 0
        if multi:
            mode |= R.TM_MULTI_BLOCK | R.TM_BLOCK_COUNT_ENABLE | R.TM_AUTO_CMD12
        self.sys.write(R.BLOCK_SIZE, 4, BLOCK_SIZE | (count << 16))
        try:
            status = self.command(index, lba, transfer_mode=mode)
        except CommandError as exc:
            raise TransferError(str(exc), exc.status) from exc
        if status & ERROR_BITS:
            self._recover()
            kind = "write protected" if status & WP_VIOLATION else "card rejected transfer"
            raise TransferError(f"CMD{index}: {kind}", status)

    def _wait_data(self, mask: int, what: str) -> None:
        status = self._wait(mask, what)
        if status & _ERROR_MASK:
            self._recover()
            raise TransferError(f"error while waiting for {what}", status)
        self._clear(mask)

    def read_blocks(self, lba: int, count: int) -> TransferResult:
        self._check_range(lba, count)
        if count == 0:
            return TransferResult(b"", 0)
        sys = self.sys
        t0 = sys.now
        self._start(lba, count, read=True)
        out = bytearray()
        stack = sys.cost.stack_cycles_per_block
        for i in range(count):
            self._wait_data(R.INT_BUFFER_READ_READY, f"read buffer {i}")
            for _ in range(WORDS_PER_BLOCK):
                out += sys.read(R.BUFFER_DATA_PORT, 4).to_bytes(4, "little")
            if stack:
                sys.delay(stack)
        self._wait_data(R.INT_TRANSFER_COMPLETE, "read transfer complete")
        return TransferResult(bytes(out), sys.now - t0)

    def write_blocks(self, lba: int, data: bytes) -> TransferResult:
        if len(data) % BLOCK_SIZE:
            raise ValueError(f"write length {len(data)} is not a multiple of {BLOCK_SIZE}")
        count = len(data) // BLOCK_SIZE
        self._check_range(lba, count)
        if count == 0:
            return TransferResult(b"", 0)
        sys = self.sys
        t0 = sys.now
        self._start(lba, count, read=False)
        stack = sys.cost.stack_cycles_per_block
        view = memoryview(data)
        for i in range(count):
            if stack:
                sys.delay(stack)
            self._wait_data(R.INT_BUFFER_WRITE_READY, f"write buffer {i}")
            base = i * BLOCK_SIZE
            for off in range(base, base + BLOCK_SIZE, 4):
                sys.write(R.BUFFER_DATA_PORT, 4, int.from_bytes(view[off:off + 4], "little"))
        self._wait_data(R.INT_TRANSFER_COMPLETE, "write transfer complete")
        return TransferResult(bytes(data), sys.now - t0)
