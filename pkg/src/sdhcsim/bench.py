"""Benchmark scenarios: assemble card, controller, cost model and driver,
run one transfer and report payload throughput."""

from __future__ import annotations

import csv
import io
import json
import os
import sys
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Any, Iterable

import numpy as np
import yaml

from .card import CardImage, CardModel, CardTiming
from .controller import ControllerConfig
from .cost import CostModel, Regime
from .driver import COMMAND_FLAGS as SUPPORTED_COMMANDS, SDHCDriver, divisor_for
from .protocol import BLOCK_SIZE
from .system import System, TraceLog

CSV_FIELDS = ("scenario", "direction", "bytes", "host_cycles", "throughput_Bps", "gated_sd_clocks")
DIRECTIONS = ("read", "write", "both")
DATA_SEED = 0x5D
APP_COMMANDS = (6, 41)


class ConfigError(ValueError):
    """Scenario description that cannot be simulated."""


@dataclass
class ScenarioConfig:
    name: str = "custom"
    regime: str = "bare"
    host_freq_hz: float = 50e6
    sd_freq_hz: float = 25e6
    block_count: int = 16
    block_size: int = BLOCK_SIZE
    direction: str = "read"
    lba: int = 0
    capacity_blocks: int = 8192
    image: str | None = None
    timing: dict = field(default_factory=dict)      # CardTiming overrides
    controller: dict = field(default_factory=dict)  # ControllerConfig overrides
    cost: dict = field(default_factory=dict)        # CostModel overrides
    repetitions: int = 1
    init: bool = True
    raw_commands: list = field(default_factory=list)  # [index, argument] pairs issued after init

    def validate(self) -> "ScenarioConfig":
        try:
            Regime(self.regime)
        except ValueError:
            raise ConfigError(f"unknown regime {self.regime!r}; choose from "
                              f"{', '.join(r.value for r in Regime)}") from None
        if self.direction not in DIRECTIONS:
            raise ConfigError(f"direction must be one of {DIRECTIONS}, not {self.direction!r}")
        if self.block_size != BLOCK_SIZE:
            raise ConfigError(f"block_size is fixed at {BLOCK_SIZE}")
        if self.block_count < 0 or self.lba < 0:
            raise ConfigError("block_count and lba must be >= 0")
        if self.repetitions < 1:
            raise ConfigError("repetitions must be >= 1")
        if self.host_freq_hz <= 0 or self.sd_freq_hz <= 0:
            raise ConfigError("frequencies must be positive")
        if self.sd_freq_hz > self.host_freq_hz / 2:
            raise ConfigError(f"sd_freq_hz {self.sd_freq_hz:g} exceeds host_freq_hz / 2 "
                              f"({self.host_freq_hz / 2:g}); the divider must be >= 1")
        try:
            divisor_for(self.host_freq_hz, self.sd_freq_hz)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.block_count and not self.init:
            raise ConfigError("data transfers need init: true")
        if self.image is None and self.lba + self.block_count > self.capacity_blocks:
            raise ConfigError("transfer runs past the end of the card")
        for name, cls in (("timing", CardTiming), ("controller", ControllerConfig), ("cost", CostModel)):
            known = {f.name for f in fields(cls)}
            unknown = set(getattr(self, name)) - known
            if unknown:
                raise ConfigError(f"unknown {name} keys: {', '.join(sorted(unknown))}")
        try:
            CardTiming(**self.timing)
            ControllerConfig(**self.controller)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None
        return self

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown scenario keys: {', '.join(sorted(unknown))}")
        return cls(**data)

    @classmethod
    def from_yaml(cls, path: str | os.PathLike) -> "ScenarioConfig":
        with open(path) as fh:
            data = yaml.safe_load(fh) or {}
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: expected a mapping at top level")
        data.setdefault("name", os.path.splitext(os.path.basename(path))[0])
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return asdict(self)

    def with_overrides(self, **overrides) -> "ScenarioConfig":
        return replace(self, **{k: v for k, v in overrides.items() if v is not None})


def _builtin() -> dict[str, ScenarioConfig]:
    out = {}
    for regime in ("ideal", "bare", "linux-unopt", "linux-opt"):
        for direction in ("read", "write"):
            name = f"{regime}-{direction}"
            out[name] = ScenarioConfig(name=name, regime=regime, direction=direction)
    for direction in ("read", "write"):
        name = f"scaled-{direction}"
        out[name] = ScenarioConfig(name=name, regime="bare", host_freq_hz=500e6, direction=direction)
    return out


BUILTIN_SCENARIOS = _builtin()


def builtin(name: str) -> ScenarioConfig:
    try:
        return BUILTIN_SCENARIOS[name]
    except KeyError:
        raise ConfigError(f"no built-in scenario {name!r}") from None


@dataclass
class BenchResult:
    scenario: str
    direction: str
    bytes: int
    host_cycles: int
    host_freq_hz: float
    init_cycles: int
    mmio_counts: dict = field(default_factory=dict)
    gated_sd_clocks: int = 0
    config: dict = field(default_factory=dict)

    @property
    def throughput_Bps(self) -> float:
        if self.host_cycles == 0:
            return 0.0
        return self.bytes * self.host_freq_hz / self.host_cycles

    @property
    def throughput_MBps(self) -> float:
        return self.throughput_Bps / 1e6

    def to_dict(self) -> dict:
        d = asdict(self)
        d["throughput_Bps"] = self.throughput_Bps
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "BenchResult":
        data = {k: v for k, v in data.items() if k != "throughput_Bps"}
        return cls(**data)


def pattern(nbytes: int, seed: int = DATA_SEED) -> bytes:
    return np.random.default_rng(seed).integers(0, 256, nbytes, dtype=np.uint8).tobytes()


def build_system(config: ScenarioConfig, trace=None) -> System:
    if config.image is not None:
        backing = CardImage.from_file(config.image) if os.path.exists(config.image) \
            else CardImage(config.capacity_blocks, config.image)
        card = CardModel(backing=backing, timing=CardTiming(**config.timing))
    else:
        card = CardModel(config.capacity_blocks, timing=CardTiming(**config.timing))
    cost = CostModel.for_regime(config.regime, config.host_freq_hz, config.sd_freq_hz, **config.cost)
    return System(card, cost, ControllerConfig(base_freq_hz=config.host_freq_hz, **config.controller),
                  trace=trace)


def _run_once(config: ScenarioConfig, direction: str, trace=None) -> BenchResult:
    system = build_system(config, trace)
    driver = SDHCDriver(system)
    if config.init:
        driver.init(config.sd_freq_hz)
    else:
        driver.power_up()
    for index, argument in config.raw_commands:
        if (index in APP_COMMANDS, index) not in SUPPORTED_COMMANDS:
            raise ConfigError(f"raw command CMD{index} is not supported")
        driver.command(int(index), int(argument), app=index in APP_COMMANDS)
    init_cycles = system.now
    nbytes = config.block_count * BLOCK_SIZE
    payload = pattern(nbytes)
    if direction == "read":
        for i in range(config.block_count):
            system.card.write_block(config.lba + i, payload[i * BLOCK_SIZE:(i + 1) * BLOCK_SIZE])
    counts0 = dict(system.counts)
    gated0 = system.controller.gated_cycles
    cycles = 0
    if config.block_count:
        if direction == "read":
            result = driver.read_blocks(config.lba, config.block_count)
            if result.data != payload:
                raise RuntimeError("read-back data does not match the card image")
        else:
            result = driver.write_blocks(config.lba, payload)
        cycles = result.cycles
    counts = {k: v - counts0.get(k, 0) for k, v in system.counts.items() if v - counts0.get(k, 0)}
    gated = (system.controller.gated_cycles - gated0) // system.controller.period
    system.card.image.flush()
    return BenchResult(config.name, direction, nbytes, cycles, config.host_freq_hz, init_cycles,
                       counts, gated, config.to_dict())


def run_scenario(config: ScenarioConfig, trace=None) -> list[BenchResult]:
    """Run ``config``; ``direction: both`` yields a read and a write result."""
    config.validate()
    directions = ("read", "write") if config.direction == "both" else (config.direction,)
    results = []
    for direction in directions:
        runs = [_run_once(config, direction, trace if i == 0 else None) for i in range(config.repetitions)]
        first = runs[0]
        first.host_cycles = round(sum(r.host_cycles for r in runs) / len(runs))
        results.append(first)
    return results


@contextmanager
def _open_sink(destination):
    if destination is None or destination == "-":
        yield sys.stdout
    elif hasattr(destination, "write"):
        yield destination
    else:
        with open(destination, "w", newline="") as fh:
            yield fh


def format_table(results: Iterable[BenchResult]) -> str:
    rows = [("scenario", "dir", "bytes", "host cycles", "MB/s", "init cycles", "gated SD clk")]
    for r in results:
        rows.append((r.scenario, r.direction, str(r.bytes), str(r.host_cycles),
                     f"{r.throughput_MBps:.3f}", str(r.init_cycles), str(r.gated_sd_clocks)))
    widths = [max(len(row[i]) for row in rows) for i in range(len(rows[0]))]
    lines = ["  ".join(c.ljust(w) if i < 2 else c.rjust(w) for i, (c, w) in enumerate(zip(row, widths)))
             for row in rows]
    return "\n".join(lines) + "\n"


def emit(results: list[BenchResult], fmt: str = "table", destination: Any = None) -> None:
    """Write results as an aligned table, CSV or JSON."""
    if fmt == "table":
        text = format_table(results)
    elif fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_FIELDS)
        for r in results:
            writer.writerow([r.scenario, r.direction, r.bytes, r.host_cycles,
                             repr(r.throughput_Bps), r.gated_sd_clocks])
        text = buf.getvalue()
    elif fmt == "json":
        text = json.dumps([r.to_dict() for r in results], indent=2) + "\n"
    else:
        raise ConfigError(f"unknown output format {fmt!r}")
    with _open_sink(destination) as fh:
        fh.write(text)


def load_results(text: str) -> list[BenchResult]:
    return [BenchResult.from_dict(d) for d in json.loads(text)]


def trace(config: ScenarioConfig, destination: Any = None) -> list[BenchResult]:
    """Run ``config`` writing a tab-separated event log to ``destination``."""
    with _open_sink(destination) as fh:
        fh.write("# timestamp_cycles\tkind\tdetail\n")
        return run_scenario(replace(config, repetitions=1), TraceLog(fh))
