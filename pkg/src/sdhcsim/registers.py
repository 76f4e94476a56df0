"""SDHCI 1.00 register map: offsets, widths, reset values, access masks."""

from __future__ import annotations

from dataclasses import dataclass

# register offsets
SDMA_ADDRESS = 0x00
BLOCK_SIZE = 0x04
BLOCK_COUNT = 0x06
ARGUMENT = 0x08
TRANSFER_MODE = 0x0C
COMMAND = 0x0E
RESPONSE = 0x10
BUFFER_DATA_PORT = 0x20
PRESENT_STATE = 0x24
HOST_CONTROL = 0x28
POWER_CONTROL = 0x29
BLOCK_GAP_CONTROL = 0x2A
WAKEUP_CONTROL = 0x2B
CLOCK_CONTROL = 0x2C
TIMEOUT_CONTROL = 0x2E
SOFTWARE_RESET = 0x2F
NORMAL_INT_STATUS = 0x30
ERROR_INT_STATUS = 0x32
NORMAL_INT_STATUS_ENABLE = 0x34
ERROR_INT_STATUS_ENABLE = 0x36
NORMAL_INT_SIGNAL_ENABLE = 0x38
ERROR_INT_SIGNAL_ENABLE = 0x3A
AUTO_CMD12_ERROR_STATUS = 0x3C
CAPABILITIES = 0x40
MAX_CURRENT_CAPABILITIES = 0x48
SLOT_INT_STATUS = 0xFC
HOST_CONTROLLER_VERSION = 0xFE

# TransferMode
TM_DMA_ENABLE = 1 << 0
TM_BLOCK_COUNT_ENABLE = 1 << 1
TM_AUTO_CMD12 = 1 << 2
TM_READ = 1 << 4
TM_MULTI_BLOCK = 1 << 5

# Command
CMD_RESP_NONE = 0b00
CMD_RESP_136 = 0b01
CMD_RESP_48 = 0b10
CMD_RESP_48_BUSY = 0b11
CMD_CRC_CHECK = 1 << 3
CMD_INDEX_CHECK = 1 << 4
CMD_DATA_PRESENT = 1 << 5
CMD_TYPE_ABORT = 0b11 << 6

# PresentState
PS_CMD_INHIBIT = 1 << 0
PS_DAT_INHIBIT = 1 << 1
PS_DAT_ACTIVE = 1 << 2
PS_WRITE_ACTIVE = 1 << 8
PS_READ_ACTIVE = 1 << 9
PS_BUFFER_WRITE_ENABLE = 1 << 10
PS_BUFFER_READ_ENABLE = 1 << 11
PS_CARD_INSERTED = 1 << 16
PS_CARD_STABLE = 1 << 17
PS_CARD_DETECT = 1 << 18
PS_WRITE_ENABLED = 1 << 19
PS_DAT_LEVEL_SHIFT = 20
PS_CMD_LEVEL = 1 << 24

# HostControl / PowerControl / ClockControl / SoftwareReset
HC_4BIT = 1 << 1
PC_BUS_POWER = 1 << 0
PC_3V3 = 0b111 << 1
CC_INTERNAL_ENABLE = 1 << 0
CC_INTERNAL_STABLE = 1 << 1
CC_SD_ENABLE = 1 << 2
SR_ALL = 1 << 0
SR_CMD = 1 << 1
SR_DAT = 1 << 2

# NormalInterruptStatus
INT_COMMAND_COMPLETE = 1 << 0
INT_TRANSFER_COMPLETE = 1 << 1
INT_BLOCK_GAP = 1 << 2
INT_DMA = 1 << 3
INT_BUFFER_WRITE_READY = 1 << 4
INT_BUFFER_READ_READY = 1 << 5
INT_CARD_INSERTION = 1 << 6
INT_CARD_REMOVAL = 1 << 7
INT_CARD = 1 << 8
INT_ERROR = 1 << 15

# ErrorInterruptStatus
ERR_CMD_TIMEOUT = 1 << 0
ERR_CMD_CRC = 1 << 1
ERR_CMD_END_BIT = 1 << 2
ERR_CMD_INDEX = 1 << 3
ERR_DATA_TIMEOUT = 1 << 4
ERR_DATA_CRC = 1 << 5
ERR_DATA_END_BIT = 1 << 6
ERR_CURRENT_LIMIT = 1 << 7
ERR_AUTO_CMD12 = 1 << 8

# AutoCMD12ErrorStatus
ACMD12_NOT_EXECUTED = 1 << 0
ACMD12_TIMEOUT = 1 << 1
ACMD12_CRC = 1 << 2
ACMD12_END_BIT = 1 << 3
ACMD12_INDEX = 1 << 4

NORMAL_INT_NAMES = {
    INT_COMMAND_COMPLETE: "CommandComplete",
    INT_TRANSFER_COMPLETE: "TransferComplete",
    INT_BLOCK_GAP: "BlockGapEvent",
    INT_DMA: "DMAInterrupt",
    INT_BUFFER_WRITE_READY: "BufferWriteReady",
    INT_BUFFER_READ_READY: "BufferReadReady",
    INT_CARD_INSERTION: "CardInsertion",
    INT_CARD_REMOVAL: "CardRemoval",
    INT_CARD: "CardInterrupt",
}
ERROR_INT_NAMES = {
    ERR_CMD_TIMEOUT: "CommandTimeout",
    ERR_CMD_CRC: "CommandCrc",
    ERR_CMD_END_BIT: "CommandEndBit",
    ERR_CMD_INDEX: "CommandIndex",
    ERR_DATA_TIMEOUT: "DataTimeout",
    ERR_DATA_CRC: "DataCrc",
    ERR_DATA_END_BIT: "DataEndBit",
    ERR_CURRENT_LIMIT: "CurrentLimit",
    ERR_AUTO_CMD12: "AutoCmd12",
}

SPEC_VERSION_1_00 = 0x00
VENDOR_VERSION = 0x01
VERSION_VALUE = (VENDOR_VERSION << 8) | SPEC_VERSION_1_00


@dataclass(frozen=True)
class Register:
    name: str
    offset: int
    width: int
    access: str          # rw | ro | w1c | special
    writable: int = 0    # bits software may set (rw) or clear (w1c)
    reset: int = 0
    fields: str = ""


REGISTERS: tuple[Register, ...] = (
    Register("SDMASystemAddress", 0x00, 4, "rw", 0xFFFFFFFF, 0, "unused: PIO only"),
    Register("BlockSize", 0x04, 2, "rw", 0x7FFF, 0, "[11:0] transfer block size; [14:12] SDMA boundary"),
    Register("BlockCount", 0x06, 2, "rw", 0xFFFF, 0, "[15:0] blocks left; decremented per block when enabled"),
    Register("Argument", 0x08, 4, "rw", 0xFFFFFFFF, 0, "[31:0] command argument"),
    Register("TransferMode", 0x0C, 2, "rw", 0x0037, 0,
             "0 DMA enable; 1 block count enable; 2 Auto CMD12; 4 read (card to host); 5 multi-block"),
    Register("Command", 0x0E, 2, "rw", 0x3FFB, 0,
             "[1:0] response type; 3 CRC check; 4 index check; 5 data present; [7:6] type; [13:8] index. "
             "Writing the upper byte issues the command"),
    Register("Response", 0x10, 16, "ro", 0, 0,
             "R1/R3/R6/R7: [31:0]; R2: [119:0] = CID/CSD[127:8]; Auto CMD12 R1b: [127:96]"),
    Register("BufferDataPort", 0x20, 4, "special", 0xFFFFFFFF, 0,
             "PIO data window; reads pop and writes push one byte per byte lane"),
    Register("PresentState", 0x24, 4, "ro", 0, 0,
             "0 CMD inhibit; 1 DAT inhibit; 2 DAT active; 8 write active; 9 read active; "
             "10 buffer write enable; 11 buffer read enable; 16 card inserted; 17 stable; 18 detect; "
             "19 write enabled; [23:20] DAT level; 24 CMD level"),
    Register("HostControl", 0x28, 1, "rw", 0x07, 0, "0 LED; 1 4-bit bus; 2 high speed"),
    Register("PowerControl", 0x29, 1, "rw", 0x0F, 0, "0 SD bus power; [3:1] voltage select"),
    Register("BlockGapControl", 0x2A, 1, "rw", 0x0F, 0, "not implemented beyond storage"),
    Register("WakeupControl", 0x2B, 1, "rw", 0x07, 0, "not implemented beyond storage"),
    Register("ClockControl", 0x2C, 2, "rw", 0xFF05, 0,
             "0 internal clock enable; 1 internal clock stable (RO); 2 SD clock enable; "
             "[15:8] divisor N: f_sd = f_base / (2N), N = 0 -> f_base. Any 8-bit N is accepted"),
    Register("TimeoutControl", 0x2E, 1, "rw", 0x0F, 0, "[3:0] data timeout = 2^(13+n) SD clocks"),
    Register("SoftwareReset", 0x2F, 1, "special", 0x07, 0, "0 reset all; 1 reset CMD line; 2 reset DAT line (self-clearing)"),
    Register("NormalInterruptStatus", 0x30, 2, "w1c", 0x01FF, 0,
             "0 command complete; 1 transfer complete; 4 buffer write ready; 5 buffer read ready; "
             "15 error interrupt (RO, OR of error status)"),
    Register("ErrorInterruptStatus", 0x32, 2, "w1c", 0x01FF, 0,
             "0 cmd timeout; 1 cmd CRC; 2 cmd end bit; 3 cmd index; 4 data timeout; 5 data CRC; "
             "6 data end bit; 8 Auto CMD12"),
    Register("NormalInterruptStatusEnable", 0x34, 2, "rw", 0x01FF, 0, "per-bit latch enable for 0x30"),
    Register("ErrorInterruptStatusEnable", 0x36, 2, "rw", 0x01FF, 0, "per-bit latch enable for 0x32"),
    Register("NormalInterruptSignalEnable", 0x38, 2, "rw", 0x01FF, 0, "per-bit interrupt line enable for 0x30"),
    Register("ErrorInterruptSignalEnable", 0x3A, 2, "rw", 0x01FF, 0, "per-bit interrupt line enable for 0x32"),
    Register("AutoCMD12ErrorStatus", 0x3C, 2, "ro", 0, 0, "0 not executed; 1 timeout; 2 CRC; 3 end bit; 4 index"),
    Register("Capabilities", 0x40, 4, "ro", 0, 0,
             "[5:0] timeout clock (MHz); 7 unit MHz; [13:8] base clock MHz (0 if > 63); [17:16] max block 512; "
             "22 DMA (0); 23 suspend/resume (0); 24 3.3 V"),
    Register("MaxCurrentCapabilities", 0x48, 4, "ro", 0, 0, "not reported"),
    Register("SlotInterruptStatus", 0xFC, 2, "ro", 0, 0, "slot 0 interrupt pending"),
    Register("HostControllerVersion", 0xFE, 2, "ro", 0, VERSION_VALUE, "[7:0] spec version (0 = 1.00); [15:8] vendor"),
)


def capabilities_value(base_freq_hz: float) -> int:
    mhz = int(base_freq_hz // 1_000_000)
    field = mhz if 1 <= mhz <= 63 else 0
    value = field | (1 << 7) | (field << 8)
    value |= 0 << 16          # max block length 512
    value |= 1 << 24          # 3.3 V
    return value


def register_map_markdown(base_freq_hz: float = 50e6) -> str:
    """Markdown table of the implemented register space."""
    lines = [
        "# SDHC register map (SDHCI 1.00, PIO only)",
        "",
        f"Reset values assume a {base_freq_hz / 1e6:g} MHz system clock. Offsets not listed are reserved: "
        "they read as zero and ignore writes.",
        "",
        "| Offset | Name | Width | Access | Reset | Bit fields |",
        "|--------|------|-------|--------|-------|------------|",
    ]
    for reg in REGISTERS:
        reset = capabilities_value(base_freq_hz) if reg.name == "Capabilities" else reg.reset
        lines.append(f"| 0x{reg.offset:02X} | {reg.name} | {reg.width} | {reg.access} | "
                     f"0x{reset:0{reg.width * 2 if reg.width <= 4 else 8}X} | {reg.fields} |")
    lines += [
        "",
        "## Notes",
        "",
        "- Interrupt status bits latch only when the matching StatusEnable bit is set; the interrupt line is "
        "asserted while (status AND signal enable) is non-zero.",
        "- Writing Command while CMD inhibit is set, or a data/busy command while DAT inhibit is set "
        "(except an abort-type CMD12), is ignored.",
        "- Reading BufferDataPort with no data buffered returns 0 and bumps a diagnostic counter; no error "
        "interrupt is raised (SDHCI 1.00 leaves this undefined).",
        "- Divider: SDHCI 1.00 restricts N to powers of two. This controller implements a plain integer "
        "divider and accepts any 8-bit N; a portable driver should still use powers of two.",
        "- Command Complete for a command without response is raised 48 + 8 SD clocks after issue.",
        "- For R1b commands Transfer Complete is raised when the card releases DAT0.",
        "- Auto CMD12 does not raise Command Complete; its response lands in Response[127:96].",
        "- Read buffer: two 512 B halves (ping-pong). When both are full at the start of the next block the SD "
        "clock is stopped until the host drains one half.",
        "- Write buffer: one 512 B block (store and forward). Buffer Write Ready for the next block is raised once "
        "the previous block has left for the card; host filling overlaps the card's CRC status and busy.",
        "- Command timeout: no response start bit within 64 SD clocks raises Command Timeout. TimeoutControl only "
        "governs the data timeout.",
    ]
    return "\n".join(lines) + "\n"
