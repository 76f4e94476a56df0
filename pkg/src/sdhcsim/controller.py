"""SD Host Controller model: SDHCI 1.00 register file plus command engine,
data engine (SRAM buffers with SD clock gating) and integer clock divider.

Time advances in system clock cycles through :meth:`SDHostController.tick`.
Inside a tick the controller jumps from one SD clock edge of interest to
the next, so idle stretches and long block transfers cost a handful of
Python steps rather than one per cycle.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass
from typing import Callable

from . import protocol
from . import registers as R
from .card import CardModel, BusEvent
from .protocol import BLOCK_SIZE, ResponseKind

log = logging.getLogger(__name__)

TraceHook = Callable[[int, str, str], None]

NO_RESPONSE_WAIT = 8     # SD clocks after a response-less command before completion
RESPONSE_TIMEOUT = 64    # SD clocks without a response start bit


class BusError(Exception):
    """Unaligned or out-of-range register access."""


@dataclass
class ControllerConfig:
    base_freq_hz: float = 50e6
    rx_buffer_blocks: int = 2
    tx_buffer_blocks: int = 1
    settle_cycles: int = 8
    n_wr: int = 2

    def __post_init__(self):
        if self.rx_buffer_blocks < 1 or self.tx_buffer_blocks < 1:
            raise ValueError("buffers need at least one block")
        if self.n_wr < 2:
            raise ValueError("n_wr must be >= 2 SD clocks")


_RW_MASK = bytearray(256)
_W1C_MASK = bytearray(256)
for _reg in R.REGISTERS:
    for _i in range(min(_reg.width, 4)):
        _byte = (_reg.writable >> (8 * _i)) & 0xFF
        if _reg.access == "rw":
            _RW_MASK[_reg.offset + _i] = _byte
        elif _reg.access == "w1c":
            _W1C_MASK[_reg.offset + _i] = _byte


class _Command:
    __slots__ = ("index", "argument", "flags", "resp_type", "data", "auto")

    def __init__(self, index: int, argument: int, flags: int, auto: bool = False):
        self.index = index
        self.argument = argument
        self.flags = flags
        self.resp_type = flags & 0b11
        self.data = bool(flags & R.CMD_DATA_PRESENT)
        self.auto = auto

    @property
    def busy(self) -> bool:
        return self.resp_type == R.CMD_RESP_48_BUSY


class SDHostController:
    """SDHCI 1.00 host controller attached to one card slot."""

    def __init__(self, card: CardModel | None = None, config: ControllerConfig | None = None,
                 trace: TraceHook | None = None):
        self.card = card
        self.config = config or ControllerConfig()
        self.trace = trace
        self.now = 0
        self.sd_edges = 0
        self.gated_cycles = 0
        self.force_gate = False
        self.empty_port_reads = 0
        self.dropped_port_writes = 0
        self.irq_log: list[tuple[int, str]] = []
        self.max_fill_level = 0
        self._power_on_reset()

    # ------------------------------------------------------------------ reset

    def _power_on_reset(self) -> None:
        self.regs = bytearray(256)
        for reg in R.REGISTERS:
            if reg.width <= 4 and reg.reset:
                self.regs[reg.offset:reg.offset + reg.width] = reg.reset.to_bytes(reg.width, "little")
        caps = R.capabilities_value(self.config.base_freq_hz)
        self.regs[R.CAPABILITIES:R.CAPABILITIES + 4] = caps.to_bytes(4, "little")
        self._phase = 0
        self._stable_at: int | None = None
        if self.card is not None:
            self.card.power_off()
        self._reset_cmd()
        self._reset_dat()

    def _reset_cmd(self) -> None:
        self._cmd: _Command | None = None
        self._cmd_phase = "idle"   # idle | sending | waiting | nowait
        self._cmd_left = 0
        self._cmd_inhibit = False
        self._pending_auto12 = False

    def _reset_dat(self) -> None:
        if getattr(self, "gated", False):
            self._trace("GATE_OFF", "reset")
        self.gated = False
        self._dat_inhibit = False
        self._busy_cmd = False       # R1b command outstanding (DAT inhibit)
        self._busy_wait = False      # its response arrived; waiting for DAT0 release
        self._direction: str | None = None
        self._blocks_expected = 0
        self._multi = False
        self._auto12 = False
        self._auto12_done = True
        self._cmd_notice = False     # command-complete notification for the data engine
        # read side
        self._rx_ready: deque[bytearray] = deque()
        self._rx_pos = 0
        self._rx_incoming = False
        self._rx_pending_start = False
        self._rx_received = 0
        # write side
        self._tx_fill: bytearray | None = None
        self._tx_queue: deque[bytes] = deque()
        self._tx_on_wire = False
        self._tx_symbols = b""
        self._tx_left = 0
        self._tx_wait = 0          # N_WR countdown before a start bit
        self._tx_accepted = 0      # blocks the host has completely written
        self._tx_done = 0          # blocks acknowledged and programmed
        self._tx_await_card = False
        self._bwe = False
        self._bre = False
        self._dat_timeout = 0
        self._transfer_active = False

    # ------------------------------------------------------------ utilities

    def _trace(self, kind: str, detail: str = "") -> None:
        if self.trace is not None:
            self.trace(self.now, kind, detail)

    def _reg(self, offset: int, width: int) -> int:
        return int.from_bytes(self.regs[offset:offset + width], "little")

    def _set_reg(self, offset: int, width: int, value: int) -> None:
        self.regs[offset:offset + width] = (value & ((1 << (8 * width)) - 1)).to_bytes(width, "little")

    def _raise(self, bits: int, error: bool = False) -> None:
        enable_off = R.ERROR_INT_STATUS_ENABLE if error else R.NORMAL_INT_STATUS_ENABLE
        status_off = R.ERROR_INT_STATUS if error else R.NORMAL_INT_STATUS
        latched = bits & self._reg(enable_off, 2)
        if not latched:
            return
        new = latched & ~self._reg(status_off, 2)
        self._set_reg(status_off, 2, self._reg(status_off, 2) | latched)
        names = R.ERROR_INT_NAMES if error else R.NORMAL_INT_NAMES
        for bit, name in names.items():
            if new & bit:
                self.irq_log.append((self.now, name))
                self._trace("IRQ_RAISE", name)

    @property
    def normal_status(self) -> int:
        return self._reg(R.NORMAL_INT_STATUS, 2)

    @property
    def error_status(self) -> int:
        return self._reg(R.ERROR_INT_STATUS, 2)

    @property
    def interrupt_line(self) -> bool:
        normal = self.normal_status & self._reg(R.NORMAL_INT_SIGNAL_ENABLE, 2)
        error = self.error_status & self._reg(R.ERROR_INT_SIGNAL_ENABLE, 2)
        return bool(normal or error)

    # ---------------------------------------------------------------- clock

    @property
    def divisor(self) -> int:
        return self.regs[R.CLOCK_CONTROL + 1]

    @property
    def period(self) -> int:
        """System cycles per SD clock."""
        n = self.divisor
        return 2 * n if n else 1

    @property
    def sd_freq_hz(self) -> float:
        return self.config.base_freq_hz / self.period

    def _stable(self) -> bool:
        return self._stable_at is not None and self.now >= self._stable_at

    def _clock_enabled(self) -> bool:
        """SD clock programmed on (ignoring data-engine gating)."""
        cc = self.regs[R.CLOCK_CONTROL]
        return bool(cc & R.CC_SD_ENABLE) and bool(cc & R.CC_INTERNAL_ENABLE) and self._stable()

    @property
    def clock_running(self) -> bool:
        return self._clock_enabled() and not self.gated and not self.force_gate

    @property
    def fill_level(self) -> int:
        if self._direction == "write":
            level = sum(len(b) for b in self._tx_queue) + (len(self._tx_fill) if self._tx_fill is not None else 0)
            return level + (BLOCK_SIZE if self._tx_on_wire else 0)
        return sum(len(b) for b in self._rx_ready) - self._rx_pos

    @property
    def buffer_capacity(self) -> int:
        blocks = self.config.tx_buffer_blocks if self._direction == "write" else self.config.rx_buffer_blocks
        return blocks * BLOCK_SIZE

    # ------------------------------------------------------------------ tick

    def tick(self, cycles: int) -> bool:
        """Advance ``cycles`` system clock cycles. Returns the interrupt line level."""
        if cycles < 0:
            raise ValueError("cannot tick backwards")
        end = self.now + cycles
        while self.now < end:
            if not self.clock_running:
                stable_at = self._stable_at
                if (stable_at is not None and self.now < stable_at < end
                        and self.regs[R.CLOCK_CONTROL] & R.CC_INTERNAL_ENABLE):
                    self.now = stable_at
                    continue
                if self._clock_enabled():
                    self.gated_cycles += end - self.now
                self.now = end
                break
            period = self.period
            to_edge = period - self._phase
            if self.now + to_edge > end:
                self._phase += end - self.now
                self.now = end
                break
            available = 1 + (end - self.now - to_edge) // period
            horizon = self._edges_to_event()
            n = available if horizon is None else min(available, horizon)
            self.now += to_edge + (n - 1) * period
            self._phase = 0
            self._edges(n)
        return self.interrupt_line

    def cycles_to_next_event(self) -> int | None:
        """Lower bound on system cycles before any register-visible change, or None."""
        if not self.clock_running:
            if (self._stable_at is not None and self.now < self._stable_at
                    and self.regs[R.CLOCK_CONTROL] & R.CC_INTERNAL_ENABLE):
                return self._stable_at - self.now
            return None
        horizon = self._edges_to_event()
        if horizon is None:
            return None
        return (self.period - self._phase) + (horizon - 1) * self.period

    def _edges_to_event(self) -> int | None:
        candidates = []
        if self.card is not None and self.card.powered:
            nxt = self.card.edges_to_event()
            if nxt is not None:
                candidates.append(nxt)
        for counter in (self._cmd_left, self._tx_left, self._tx_wait, self._dat_timeout):
            if counter > 0:
                candidates.append(counter)
        return min(candidates) if candidates else None

    def _edges(self, n: int) -> None:
        self.sd_edges += n
        events = self.card.tick(n) if self.card is not None else []
        cmd_done = False
        if self._cmd_left > 0:
            self._cmd_left -= n
            cmd_done = self._cmd_left == 0
        tx_done = False
        if self._tx_left > 0:
            self._tx_left -= n
            tx_done = self._tx_left == 0
        elif self._tx_wait > 0:
            self._tx_wait -= n
            if self._tx_wait == 0:
                self._tx_left = len(self._tx_symbols)
                self._trace("BLOCK_START", f"write {self._tx_done + 1}")
        if self._dat_timeout > 0:
            self._dat_timeout -= n
            if self._dat_timeout == 0:
                self._data_timeout()
        if cmd_done:
            self._cmd_step()
        if tx_done:
            self._tx_block_sent()
        for event in events:
            self._card_event(event)
        self._service()

    # ------------------------------------------------------------ command engine

    def _issue(self, cmd: _Command) -> None:
        self._cmd = cmd
        self._cmd_phase = "sending"
        self._cmd_left = protocol.COMMAND_BITS
        self._cmd_inhibit = True
        self._trace("CMD", f"CMD{cmd.index} arg=0x{cmd.argument:08X}{' auto' if cmd.auto else ''}")

    def _cmd_step(self) -> None:
        cmd = self._cmd
        if self._cmd_phase == "sending":
            frame = protocol.encode_command(cmd.index, cmd.argument).to_bytes()
            if self.card is not None:
                self.card.receive_command(frame)
            if cmd.resp_type == R.CMD_RESP_NONE:
                self._cmd_phase = "nowait"
                self._cmd_left = NO_RESPONSE_WAIT
            elif self.card is not None and self.card.response_pending:
                self._cmd_phase = "waiting"
            else:
                self._cmd_phase = "waiting"
                self._cmd_left = RESPONSE_TIMEOUT
        elif self._cmd_phase == "nowait":
            self._cmd_complete(cmd)
        elif self._cmd_phase == "waiting":
            self._cmd_error(cmd, R.ERR_CMD_TIMEOUT, R.ACMD12_TIMEOUT)

    def _cmd_response(self, wire: bytes) -> None:
        cmd = self._cmd
        if cmd is None or self._cmd_phase != "waiting":
            return
        self._cmd_left = 0
        kind = ResponseKind.R2 if cmd.resp_type == R.CMD_RESP_136 else ResponseKind.R1
        self._trace("RESP", f"CMD{cmd.index} {wire.hex()}")
        if len(wire) * 8 != kind.bits:
            self._cmd_error(cmd, R.ERR_CMD_END_BIT, R.ACMD12_END_BIT)
            return
        if wire[-1] & 1 != 1:
            self._cmd_error(cmd, R.ERR_CMD_END_BIT, R.ACMD12_END_BIT)
            return
        if cmd.flags & R.CMD_CRC_CHECK:
            if kind is ResponseKind.R2:
                ok = protocol.crc7_bytes(wire[1:16]) == wire[16] >> 1
            else:
                ok = protocol.crc7(protocol.bits_of(wire, 40)) == wire[5] >> 1
            if not ok:
                self._cmd_error(cmd, R.ERR_CMD_CRC, R.ACMD12_CRC)
                return
        if cmd.flags & R.CMD_INDEX_CHECK and wire[0] & 0x3F != cmd.index:
            self._cmd_error(cmd, R.ERR_CMD_INDEX, R.ACMD12_INDEX)
            return
        if kind is ResponseKind.R2:
            value = int.from_bytes(wire[1:16], "big")  # register bits 127..8
            self._set_reg(R.RESPONSE, 16, value)
        elif cmd.auto:
            self._set_reg(R.RESPONSE + 12, 4, int.from_bytes(wire[1:5], "big"))
        else:
            self._set_reg(R.RESPONSE, 4, int.from_bytes(wire[1:5], "big"))
        self._cmd_complete(cmd)

    def _cmd_complete(self, cmd: _Command) -> None:
        self._cmd = None
        self._cmd_phase = "idle"
        self._cmd_left = 0
        self._cmd_inhibit = False
        if cmd.auto:
            self._auto12_done = True
        else:
            self._raise(R.INT_COMMAND_COMPLETE)
        if cmd.data:
            self._cmd_notice = True
        elif cmd.busy and not cmd.auto:
            self._busy_wait = True
        self._service()

    def _cmd_error(self, cmd: _Command, error: int, auto_error: int) -> None:
        self._cmd = None
        self._cmd_phase = "idle"
        self._cmd_left = 0
        self._cmd_inhibit = False
        if cmd.auto:
            self._auto12_done = True
            self._set_reg(R.AUTO_CMD12_ERROR_STATUS, 2, auto_error)
            self._raise(R.ERR_AUTO_CMD12, error=True)
        else:
            self._raise(error, error=True)
            self._busy_cmd = False
            if cmd.data:
                # the data phase will never start
                self._dat_inhibit = False
                self._transfer_active = False
                self._direction = None
                self._bwe = self._bre = False
        log.debug("CMD%d failed: error bits 0x%x", cmd.index, error)

    # ------------------------------------------------------------ data engine

    def _start_data(self, cmd: _Command) -> None:
        tm = self._reg(R.TRANSFER_MODE, 2)
        self._reset_dat()
        self._dat_inhibit = True
        self._transfer_active = True
        self._direction = "read" if tm & R.TM_READ else "write"
        self._multi = bool(tm & R.TM_MULTI_BLOCK)
        count = self._reg(R.BLOCK_COUNT, 2)
        self._blocks_expected = count if self._multi else 1
        self._auto12 = self._multi and bool(tm & R.TM_AUTO_CMD12)
        self._auto12_done = not self._auto12
        if self._direction == "write":
            self._open_tx_slot()
        else:
            self._arm_read_timeout()

    def _timeout_edges(self) -> int:
        return 1 << (13 + min(self.regs[R.TIMEOUT_CONTROL] & 0xF, 14))

    def _arm_read_timeout(self) -> None:
        self._dat_timeout = self._timeout_edges()

    def _data_timeout(self) -> None:
        self._raise(R.ERR_DATA_TIMEOUT, error=True)
        self._dat_timeout = 0

    def _count_block(self) -> None:
        if self._reg(R.TRANSFER_MODE, 2) & R.TM_BLOCK_COUNT_ENABLE:
            self._set_reg(R.BLOCK_COUNT, 2, max(self._reg(R.BLOCK_COUNT, 2) - 1, 0))

    def _card_event(self, event: BusEvent) -> None:
        kind = event.kind
        if kind == "response":
            self._cmd_response(event.payload)
        elif kind == "dat_ready":
            self._rx_block_pending()
        elif kind == "block":
            self._rx_block_end(event.payload)
        elif kind == "crc_status":
            if self._tx_await_card and not event.payload:
                self._raise(R.ERR_DATA_CRC, error=True)
                self._tx_await_card = False
        elif kind == "busy_end":
            self._trace("BUSY_END")
            if self._tx_await_card:
                self._tx_await_card = False
                self._tx_done += 1
                self._count_block()

    # read direction

    def _wants_block(self) -> bool:
        return (self._direction == "read"
                and self._rx_received + int(self._rx_incoming) < self._blocks_expected)

    def _rx_slots_used(self) -> int:
        return len(self._rx_ready) + int(self._rx_incoming)

    def _rx_block_pending(self) -> None:
        if not self._wants_block():
            return
        if self._rx_slots_used() >= self.config.rx_buffer_blocks:
            self._rx_pending_start = True
            if not self.gated:
                self.gated = True
                self._trace("GATE_ON", f"fill={self.fill_level}")
        else:
            self._rx_reserve()

    def _rx_reserve(self) -> None:
        self._rx_incoming = True
        self._rx_pending_start = False
        self._dat_timeout = 0
        self._trace("BLOCK_START", f"read {self._rx_received + 1}")

    def _rx_block_end(self, symbols: bytes) -> None:
        if not self._rx_incoming:
            return
        self._rx_incoming = False
        width = 4 if self.regs[R.HOST_CONTROL] & R.HC_4BIT else 1
        data, ok = protocol.decode_block_symbols(symbols, width)
        self._trace("BLOCK_END", f"read {self._rx_received + 1} {'ok' if ok else 'crc-error'}")
        if not ok or len(data) != BLOCK_SIZE:
            self._raise(R.ERR_DATA_CRC, error=True)
            return
        self._rx_received += 1
        self._count_block()
        self._rx_ready.append(bytearray(data))
        self.max_fill_level = max(self.max_fill_level, self.fill_level)
        if len(self._rx_ready) == 1:
            self._set_bre()
        if self._rx_received < self._blocks_expected:
            self._arm_read_timeout()
        elif self._auto12:
            self._pending_auto12 = True

    def _set_bre(self) -> None:
        self._bre = True
        self._raise(R.INT_BUFFER_READ_READY)

    def _port_read(self, nbytes: int) -> int:
        if not self._bre or not self._rx_ready:
            self.empty_port_reads += 1
            log.debug("read of empty buffer data port at cycle %d", self.now)
            return 0
        block = self._rx_ready[0]
        chunk = block[self._rx_pos:self._rx_pos + nbytes]
        self._rx_pos += len(chunk)
        if self._rx_pos >= BLOCK_SIZE:
            self._rx_ready.popleft()
            self._rx_pos = 0
            self._bre = False
            if self._rx_ready:
                self._set_bre()
            if self._rx_pending_start:
                self._rx_reserve()
            if self.gated:
                self.gated = False
                self._trace("GATE_OFF", f"fill={self.fill_level}")
            self._service()
        return int.from_bytes(bytes(chunk).ljust(nbytes, b"\0"), "little")

    # write direction

    def _tx_slots_used(self) -> int:
        return len(self._tx_queue) + int(self._tx_fill is not None) + int(self._tx_on_wire)

    def _open_tx_slot(self) -> None:
        if (self._direction == "write" and self._tx_fill is None
                and self._tx_accepted < self._blocks_expected
                and self._tx_slots_used() < self.config.tx_buffer_blocks):
            self._tx_fill = bytearray()
            self._bwe = True
            self._raise(R.INT_BUFFER_WRITE_READY)

    def _port_write(self, data: bytes) -> None:
        if self._tx_fill is None:
            self.dropped_port_writes += 1
            log.debug("write to full buffer data port at cycle %d", self.now)
            return
        self._tx_fill += data
        if len(self._tx_fill) >= BLOCK_SIZE:
            self._tx_queue.append(bytes(self._tx_fill[:BLOCK_SIZE]))
            self._tx_fill = None
            self._bwe = False
            self._tx_accepted += 1
            self.max_fill_level = max(self.max_fill_level, self.fill_level)
            self._open_tx_slot()
            self._service()

    def _tx_block_sent(self) -> None:
        self._tx_on_wire = False
        self._trace("BLOCK_END", f"write {self._tx_done + 1}")
        if self.card is not None:
            self.card.receive_block(self._tx_symbols)
        self._tx_await_card = True
        self._open_tx_slot()

    def _tx_try_start(self) -> None:
        if (self._direction != "write" or not self._cmd_notice or self._tx_on_wire
                or self._tx_await_card or not self._tx_queue
                or (self.card is not None and self.card.busy)):
            return
        width = 4 if self.regs[R.HOST_CONTROL] & R.HC_4BIT else 1
        self._tx_symbols = protocol.encode_block_symbols(self._tx_queue.popleft(), width)
        self._tx_on_wire = True
        self._tx_wait = self.config.n_wr

    # completion

    def _service(self) -> None:
        """Start whatever became possible after a state change."""
        if self._direction == "write":
            self._tx_try_start()
            if self._tx_done >= self._blocks_expected and self._auto12 and not self._pending_auto12 \
                    and not self._auto12_done and self._cmd is None and self._cmd_notice:
                self._pending_auto12 = True
        if self._pending_auto12 and not self._cmd_inhibit:
            self._pending_auto12 = False
            self._issue(_Command(12, 0, R.CMD_RESP_48_BUSY | R.CMD_CRC_CHECK | R.CMD_INDEX_CHECK
                                 | R.CMD_TYPE_ABORT, auto=True))
        card_busy = self.card is not None and self.card.busy
        if self._busy_wait and not card_busy:
            self._busy_wait = self._busy_cmd = False
            self._raise(R.INT_TRANSFER_COMPLETE)
        if self._transfer_active and self._auto12_done and not card_busy:
            if self._direction == "read":
                done = (self._rx_received >= self._blocks_expected and not self._rx_ready
                        and self._cmd_notice)
            else:
                done = self._tx_done >= self._blocks_expected and self._cmd_notice
            if done:
                self._transfer_active = False
                self._dat_inhibit = False
                self._dat_timeout = 0
                self._bwe = self._bre = False
                self._raise(R.INT_TRANSFER_COMPLETE)

    # ------------------------------------------------------------------- MMIO

    @staticmethod
    def _check_access(offset: int, width: int) -> None:
        if width not in (1, 2, 4):
            raise BusError(f"unsupported access width {width}")
        if offset < 0 or offset + width > 0x100 or offset % width:
            raise BusError(f"bad access at 0x{offset:02X} width {width}")

    def _present_state(self) -> int:
        ps = 0
        if self._cmd_inhibit:
            ps |= R.PS_CMD_INHIBIT
        if self._dat_inhibit or self._busy_cmd:
            ps |= R.PS_DAT_INHIBIT
        card = self.card
        card_busy = card is not None and card.busy
        if self._transfer_active or card_busy:
            ps |= R.PS_DAT_ACTIVE
        if self._transfer_active and self._direction == "write":
            ps |= R.PS_WRITE_ACTIVE
        if self._transfer_active and self._direction == "read":
            ps |= R.PS_READ_ACTIVE
        if self._bwe:
            ps |= R.PS_BUFFER_WRITE_ENABLE
        if self._bre:
            ps |= R.PS_BUFFER_READ_ENABLE
        if card is not None:
            ps |= R.PS_CARD_INSERTED | R.PS_CARD_STABLE | R.PS_CARD_DETECT
            if not card.image.read_only:
                ps |= R.PS_WRITE_ENABLED
        dat = 0xE if card_busy else 0xF
        ps |= dat << R.PS_DAT_LEVEL_SHIFT
        ps |= R.PS_CMD_LEVEL
        return ps

    def _refresh_dynamic(self) -> None:
        self._set_reg(R.PRESENT_STATE, 4, self._present_state())
        cc = self.regs[R.CLOCK_CONTROL] & ~R.CC_INTERNAL_STABLE
        if self.regs[R.CLOCK_CONTROL] & R.CC_INTERNAL_ENABLE and self._stable():
            cc |= R.CC_INTERNAL_STABLE
        self.regs[R.CLOCK_CONTROL] = cc
        hi = self.regs[R.NORMAL_INT_STATUS + 1] & 0x7F
        if self.error_status:
            hi |= 0x80
        self.regs[R.NORMAL_INT_STATUS + 1] = hi

    def mmio_read(self, offset: int, width: int) -> int:
        self._check_access(offset, width)
        if R.BUFFER_DATA_PORT <= offset < R.BUFFER_DATA_PORT + 4:
            return self._port_read(width)
        self._refresh_dynamic()
        return self._reg(offset, width)

    def mmio_write(self, offset: int, width: int, value: int) -> None:
        self._check_access(offset, width)
        data = (value & ((1 << (8 * width)) - 1)).to_bytes(width, "little")
        if R.BUFFER_DATA_PORT <= offset < R.BUFFER_DATA_PORT + 4:
            self._port_write(data)
            return
        touched = range(offset, offset + width)
        issue = R.COMMAND + 1 in touched
        saved_command = self._reg(R.COMMAND, 2)
        old_clock = self._reg(R.CLOCK_CONTROL, 2)
        old_power = self.regs[R.POWER_CONTROL]
        reset = 0
        for off, byte in zip(touched, data):
            if off == R.SOFTWARE_RESET:
                reset = byte & 0x07
            elif _W1C_MASK[off]:
                self.regs[off] &= ~(byte & _W1C_MASK[off]) & 0xFF
            elif _RW_MASK[off]:
                self.regs[off] = (self.regs[off] & ~_RW_MASK[off]) | (byte & _RW_MASK[off])
        if R.CLOCK_CONTROL in touched or R.CLOCK_CONTROL + 1 in touched:
            self._clock_written(old_clock)
        if R.POWER_CONTROL in touched:
            self._power_written(old_power)
        if issue:
            self._command_written(saved_command)
        if reset:
            self._software_reset(reset)
        if R.NORMAL_INT_STATUS in touched or R.NORMAL_INT_STATUS + 1 in touched:
            self._trace("IRQ_CLEAR", f"0x{int.from_bytes(data, 'little'):X}@0x{offset:02X}")

    def _clock_written(self, old: int) -> None:
        new = self._reg(R.CLOCK_CONTROL, 2)
        if new & R.CC_INTERNAL_ENABLE and not old & R.CC_INTERNAL_ENABLE:
            self._stable_at = self.now + self.config.settle_cycles
        elif not new & R.CC_INTERNAL_ENABLE:
            self._stable_at = None
        if (new >> 8) != (old >> 8):
            self._phase = 0
        self._trace("CLOCK", f"N={new >> 8} sd_en={int(bool(new & R.CC_SD_ENABLE))}")

    def _power_written(self, old: int) -> None:
        new = self.regs[R.POWER_CONTROL]
        if self.card is None or (new ^ old) & R.PC_BUS_POWER == 0:
            return
        if new & R.PC_BUS_POWER:
            self.card.power_on()
        else:
            self.card.power_off()

    def _command_written(self, previous: int) -> None:
        value = self._reg(R.COMMAND, 2)
        cmd = _Command((value >> 8) & 0x3F, self._reg(R.ARGUMENT, 4), value & 0xFF)
        abort = (value & R.CMD_TYPE_ABORT) == R.CMD_TYPE_ABORT
        blocked = self._cmd_inhibit or (
            (cmd.data or cmd.busy) and (self._dat_inhibit or self._busy_cmd) and not abort)
        if blocked:
            self._set_reg(R.COMMAND, 2, previous)
            self._trace("CMD_IGNORED", f"CMD{cmd.index}")
            log.debug("command CMD%d ignored: inhibit set", cmd.index)
            return
        if cmd.data:
            self._start_data(cmd)
        elif cmd.busy and not abort:
            self._busy_cmd = True
        self._issue(cmd)

    def _software_reset(self, bits: int) -> None:
        self._trace("RESET", f"0x{bits:X}")
        if bits & R.SR_ALL:
            self._power_on_reset()
            return
        if bits & R.SR_CMD:
            self._reset_cmd()
        if bits & R.SR_DAT:
            self._reset_dat()
