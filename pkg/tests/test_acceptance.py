"""Acceptance criteria. Each test prints one PASS/FAIL line, repeated in the
terminal summary under "acceptance"."""

import random
import time

import pytest

from conftest import record_criterion
from oracles import command_ref, crc7_ref, crc16_ref
from sdhcsim import bench
from sdhcsim import registers as R
from sdhcsim.card import CardModel, CardTiming
from sdhcsim.controller import ControllerConfig
from sdhcsim.cost import CostModel
from sdhcsim.driver import SDHCDriver
from sdhcsim.protocol import (
    BLOCK_SIZE, CrcError, FramingError, bits_of, crc7, crc7_bytes, crc16, crc16_bytes, decode_command,
    encode_command,
)
from sdhcsim.system import System

INTERFACE_BPS = 12.5e6
MB = 1e6


def throughput(name):
    (result,) = bench.run_scenario(bench.builtin(name))
    return result.throughput_Bps


def within(value, target, tol):
    return abs(value - target) <= tol * target


def test_criterion_1_ideal_read():
    t0 = time.perf_counter()
    tp = throughput("ideal-read")
    wall = time.perf_counter() - t0
    ok = within(tp, 11.1 * MB, 0.10) and 0.88 <= tp / INTERFACE_BPS <= 1.0 and wall < 1.0
    record_criterion(1, ok, f"ideal read {tp / MB:.3f} MB/s (target 11.1 +-10%, "
                            f"{100 * tp / INTERFACE_BPS:.1f}% of 12.5 MB/s), wall {wall:.3f} s")
    assert ok


def test_criterion_2_ideal_write():
    tp = throughput("ideal-write")
    ok = within(tp, 11.4 * MB, 0.10) and 0.88 <= tp / INTERFACE_BPS <= 1.0
    record_criterion(2, ok, f"ideal write {tp / MB:.3f} MB/s (target 11.4 +-10%, "
                            f"{100 * tp / INTERFACE_BPS:.1f}% of 12.5 MB/s)")
    assert ok


def test_criterion_3_bare():
    rd, wr = throughput("bare-read"), throughput("bare-write")
    ceiling = 4 / 29 * 50e6
    ok = within(rd, 6.3 * MB, 0.15) and within(wr, 9.1 * MB, 0.15) and rd <= ceiling
    record_criterion(3, ok, f"bare read {rd / MB:.3f} MB/s (6.3 +-15%, ceiling {ceiling / MB:.2f}), "
                            f"bare write {wr / MB:.3f} MB/s (9.1 +-15%)")
    assert ok


def test_criterion_4_linux_ordering():
    tp = {n: throughput(n) for n in ("linux-unopt-read", "linux-opt-read", "bare-read",
                                     "linux-unopt-write", "linux-opt-write", "bare-write")}
    ordered = all(tp[f"linux-unopt-{d}"] < tp[f"linux-opt-{d}"] < tp[f"bare-{d}"] for d in ("read", "write"))
    ratio = tp["linux-opt-read"] / tp["linux-unopt-read"]
    ok = ordered and ratio >= 3
    record_criterion(4, ok, "read unopt/opt/bare {:.0f}/{:.0f}/{:.0f} KB/s, write {:.0f}/{:.0f}/{:.0f} KB/s, "
                            "opt/unopt read ratio {:.2f}".format(
                                *(tp[k] / 1e3 for k in tp), ratio))
    assert ok


def test_criterion_5_scaled():
    pairs = [(throughput(f"scaled-{d}"), throughput(f"ideal-{d}")) for d in ("read", "write")]
    ok = all(within(s, i, 0.10) for s, i in pairs)
    record_criterion(5, ok, "scaled read {:.3f} vs ideal {:.3f} MB/s, scaled write {:.3f} vs ideal {:.3f} MB/s".format(
        pairs[0][0] / MB, pairs[0][1] / MB, pairs[1][0] / MB, pairs[1][1] / MB))
    assert ok


def test_criterion_6_protocol():
    rng = random.Random(6)
    crc_ok = 0
    for _ in range(10_000):
        data = rng.randbytes(rng.randrange(1, 24))
        value, n = int.from_bytes(data, "big"), 8 * len(data)
        bits = bits_of(data)
        crc_ok += (crc7(bits) == crc7_bytes(data) == crc7_ref(value, n)
                   and crc16(bits) == crc16_bytes(data) == crc16_ref(value, n))
    frames_ok = 0
    for index in range(64):
        for _ in range(20):
            arg = rng.getrandbits(32)
            wire = encode_command(index, arg).to_bytes()
            frames_ok += wire == command_ref(index, arg) and decode_command(wire) == (index, arg)
    detected = 0
    bits = encode_command(17, 0x0BADF00D).to_bits()
    for pos in range(48):
        flipped = list(bits)
        flipped[pos] ^= 1
        try:
            decode_command(flipped)
        except (CrcError, FramingError):
            detected += 1
    ok = crc_ok == 10_000 and frames_ok == 64 * 20 and detected == 48
    record_criterion(6, ok, f"CRC oracle agreement {crc_ok}/10000, frame round trips {frames_ok}/1280, "
                            f"single-bit flips detected {detected}/48")
    assert ok


class GatingSystem(System):
    """Stops the SD clock for random stretches between host accesses."""

    def __init__(self, *args, rng, **kw):
        super().__init__(*args, **kw)
        self.rng = rng
        self.gated_intervals = 0

    def _spend(self, cycles):
        if self.rng.random() < 0.02:
            stall = self.rng.randrange(1, 3000)
            self.controller.force_gate = True
            self.clock.advance(stall)
            self.controller.tick(stall)
            self.controller.force_gate = False
            self.gated_intervals += 1
        super()._spend(cycles)


def test_criterion_7_integrity():
    rng = random.Random(7)
    mismatches = 0
    transfers = 0
    for regime in ("ideal", "bare", "linux-unopt", "linux-opt"):
        system = System(CardModel(8192), CostModel.for_regime(regime))
        driver = SDHCDriver(system)
        driver.init()
        shadow = {}
        for _ in range(12):
            lba = rng.randrange(0, 8192 - 16)
            count = rng.choice([1, 1, 2, 5, 16])
            data = rng.randbytes(count * BLOCK_SIZE)
            driver.write_blocks(lba, data)
            for i in range(count):
                shadow[lba + i] = data[i * BLOCK_SIZE:(i + 1) * BLOCK_SIZE]
            lba = rng.choice(list(shadow))
            count = rng.randrange(1, 9)
            got = driver.read_blocks(lba, min(count, 8192 - lba)).data
            for i in range(len(got) // BLOCK_SIZE):
                mismatches += got[i * BLOCK_SIZE:(i + 1) * BLOCK_SIZE] != shadow.get(lba + i, bytes(BLOCK_SIZE))
            transfers += 2
    gated_runs = 0
    for seed in range(8):
        grng = random.Random(seed)
        system = GatingSystem(CardModel(8192), CostModel.for_regime(grng.choice(["ideal", "bare"])), rng=grng)
        driver = SDHCDriver(system)
        driver.init()
        data = grng.randbytes(16 * BLOCK_SIZE)
        driver.write_blocks(100, data)
        mismatches += driver.read_blocks(100, 16).data != data
        gated_runs += system.gated_intervals > 0
    ok = mismatches == 0 and gated_runs == 8
    record_criterion(7, ok, f"{transfers} random transfers over a 4 MiB card in 4 regimes plus 8 randomly "
                            f"clock-gated runs, {mismatches} mismatches")
    assert ok


def _check_transfer(ctl, direction, count):
    log = ctl.irq_log
    names = [n for _, n in log]
    errors = []
    if names[0] != "CommandComplete" and not (direction == "write" and names[0] == "BufferWriteReady"):
        errors.append(f"first interrupt {names[0]}")
    if names[-1] != "TransferComplete" or names.count("TransferComplete") != 1:
        errors.append("TransferComplete not last/unique")
    ready = "BufferReadReady" if direction == "read" else "BufferWriteReady"
    if names.count(ready) != count:
        errors.append(f"{names.count(ready)} {ready} for {count} blocks")
    if direction == "read":
        t_cc = log[names.index("CommandComplete")][0]
        t_rdy = [t for t, n in log if n == ready]
        if not t_cc < t_rdy[0] or not t_rdy[-1] < log[-1][0]:
            errors.append("read interrupt timestamps out of order")
    if ctl.max_fill_level > max(ctl.config.rx_buffer_blocks, ctl.config.tx_buffer_blocks) * BLOCK_SIZE:
        errors.append(f"fill level {ctl.max_fill_level} over capacity")
    return errors


def test_criterion_8_ordering_and_buffer_safety():
    rng = random.Random(8)
    configs = 0
    failures = []
    for group in range(25):
        timing = CardTiming(n_cr=rng.randrange(2, 65), n_ac=rng.randrange(2, 200),
                            program_busy=rng.randrange(0, 400))
        ctl_cfg = ControllerConfig(rx_buffer_blocks=rng.randrange(1, 4), tx_buffer_blocks=rng.randrange(1, 3))
        regime = rng.choice(["ideal", "bare", "linux-opt"])
        cost = CostModel.for_regime(regime, stack_cycles_per_block=rng.choice([0, 0, 5000]))
        system = System(CardModel(512, timing=timing), cost, ctl_cfg)
        driver = SDHCDriver(system)
        driver.init()
        for _ in range(40):
            direction = rng.choice(["read", "write"])
            count = rng.randrange(1, 17)
            lba = rng.randrange(0, 512 - count)
            ctl = system.controller
            ctl.irq_log.clear()
            ctl.max_fill_level = 0
            if direction == "write":
                data = rng.randbytes(count * BLOCK_SIZE)
                driver.write_blocks(lba, data)
                if system.card.image.read_block(lba + count - 1) != data[-BLOCK_SIZE:]:
                    failures.append("write data mismatch")
            else:
                expect = b"".join(system.card.image.read_block(lba + i) for i in range(count))
                if driver.read_blocks(lba, count).data != expect:
                    failures.append("read data mismatch")
            failures += _check_transfer(ctl, direction, count)
            if system.read(R.NORMAL_INT_STATUS, 4) != 0:
                failures.append("status left set")
            configs += 1
    ok = configs >= 1000 and not failures
    record_criterion(8, ok, f"{configs} randomized transfer configurations, {len(failures)} violations"
                            + (f" (first: {failures[0]})" if failures else ""))
    assert ok


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q"]))
