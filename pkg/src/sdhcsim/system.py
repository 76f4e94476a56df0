"""Host-side co-simulation: every register access is charged to the host
clock through the cost model and the controller is stepped in lockstep."""

from __future__ import annotations

from collections import Counter
from typing import Callable, TextIO

from . import registers as R
from .card import CardModel
from .controller import ControllerConfig, SDHostController
from .cost import CostModel, HostClock


class TraceLog:
    """Tab-separated event log: ``timestamp_cycles<TAB>kind<TAB>detail``."""

    def __init__(self, sink: TextIO | None = None):
        self.sink = sink
        self.records: list[tuple[int, str, str]] = []

    def __call__(self, timestamp: int, kind: str, detail: str = "") -> None:
        self.records.append((timestamp, kind, detail))
        if self.sink is not None:
            self.sink.write(f"{timestamp}\t{kind}\t{detail}\n")

    def kinds(self, kind: str) -> list[tuple[int, str, str]]:
        return [r for r in self.records if r[1] == kind]


class System:
    """Card + controller + host cost model sharing one system clock."""

    def __init__(self, card: CardModel | None, cost: CostModel | None = None,
                 controller_config: ControllerConfig | None = None,
                 trace: Callable[[int, str, str], None] | None = None,
                 fast_forward: bool = True):
        self.cost = cost or CostModel()
        self.clock = HostClock(self.cost.host_freq_hz)
        config = controller_config or ControllerConfig()
        if config.base_freq_hz != self.cost.host_freq_hz:
            config = ControllerConfig(**{**config.__dict__, "base_freq_hz": self.cost.host_freq_hz})
        self.card = card
        self.trace = trace
        self.controller = SDHostController(card, config, trace)
        self.fast_forward = fast_forward
        self.counts: Counter[str] = Counter()
        self.mmio_cycles = 0
        self.software_cycles = 0

    @property
    def now(self) -> int:
        return self.clock.now_cycles

    def _spend(self, cycles: int) -> None:
        self.clock.advance(cycles)
        self.controller.tick(cycles)

    def _access_kind(self, kind: str, offset: int) -> tuple[str, bool]:
        port = R.BUFFER_DATA_PORT <= offset < R.BUFFER_DATA_PORT + 4
        return (f"buffer_{kind}" if port else f"control_{kind}"), port

    def read(self, offset: int, width: int = 4) -> int:
        label, port = self._access_kind("read", offset)
        cost = self.cost.charge_mmio("read", port)
        self._spend(cost)
        value = self.controller.mmio_read(offset, width)
        self.counts[label] += 1
        self.mmio_cycles += cost
        if self.trace is not None:
            self.trace(self.now, "MMIO_R", f"off=0x{offset:02X} w={width} val=0x{value:0{2 * width}X}")
        return value

    def write(self, offset: int, width: int, value: int) -> None:
        label, port = self._access_kind("write", offset)
        cost = self.cost.charge_mmio("write", port)
        self._spend(cost)
        if self.trace is not None:
            self.trace(self.now, "MMIO_W", f"off=0x{offset:02X} w={width} val=0x{value:0{2 * width}X}")
        self.controller.mmio_write(offset, width, value)
        self.counts[label] += 1
        self.mmio_cycles += cost

    def poll(self, offset: int, width: int, mask: int, limit: int) -> int | None:
        """Read ``offset`` until ``value & mask`` is non-zero; None after ``limit`` reads.

        Reads that provably see an unchanged register are charged in bulk
        instead of being simulated one by one.
        """
        label, port = self._access_kind("read", offset)
        cost = self.cost.charge_mmio("read", port)
        done = 0
        while done < limit:
            value = self.read(offset, width)
            done += 1
            if value & mask:
                return value
            if not self.fast_forward or done >= limit:
                continue
            horizon = self.controller.cycles_to_next_event()
            skip = limit - done if horizon is None else (horizon - 1) // cost
            skip = min(skip, limit - done)
            if skip > 0:
                self._spend(skip * cost)
                self.counts[label] += skip
                self.mmio_cycles += skip * cost
                done += skip
                if self.trace is not None:
                    self.trace(self.now, "MMIO_R", f"off=0x{offset:02X} w={width} val=0x{value:0{2 * width}X} "
                                                   f"repeat={skip}")
        return None

    def delay(self, cycles: int) -> None:
        """Host busy-wait or software work that touches no register."""
        self._spend(cycles)
        self.software_cycles += cycles

    def total_mmio_accesses(self) -> int:
        return sum(self.counts.values())
