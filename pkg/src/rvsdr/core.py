"""Single-hart instruction-accurate emulator with scoreboard timing.

Execution is exact at the architectural level (registers, memory) and
carries an approximate cycle estimate on the side: every instruction has a
static latency, a per-register scoreboard tracks when results become
available, and an instruction issues at

    issue = max(hart.cycle, scoreboard[src] for each source register)

after which hart.cycle = issue + 1 (single issue, in order) and
scoreboard[rd] = issue + latency. Loads use the memory system's latency
for the destination; the post-increment forms write the stride-advanced
address register back at issue + 1 (address generation is in-core, the
memory round trip only delays the loaded data). Stores occupy their issue
slot only. Stall cycles are attributed to memory when a binding source was
produced by a load (ties count as memory), to plain RAW otherwise.

Timing never feeds back into architectural state: runs with different
latency tables produce bit-identical registers and memory.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

from . import lowfp
from .asm import ProgramImage
from .isa import (
    CSR_CYCLE,
    CSR_MHARTID,
    Illegal,
    Instruction,
    MNEMONICS,
    TABLE,
    decode,
)
from .lowfp import FP8, FP16, FP32, MaskError

__all__ = [
    "Event",
    "Hart",
    "LatencyTable",
    "MemoryFault",
    "Program",
    "SparseMemory",
    "Status",
]

_MASK = 0xFFFFFFFF


class Status(enum.Enum):
    RUNNING = "running"
    AT_BARRIER = "at_barrier"
    HALTED = "halted"
    TRAPPED = "trapped"


class Event(enum.Enum):
    HALTED = "halted"
    AT_BARRIER = "at_barrier"
    TRAPPED = "trapped"
    BUDGET = "step_budget_exhausted"


class MemoryFault(Exception):
    """Misaligned or unmapped access; the core converts it to a trap."""

    def __init__(self, kind: str, addr: int):
        super().__init__(f"{kind} at address {addr:#010x}")
        self.kind = kind
        self.addr = addr


# ---------------------------------------------------------------------------
# latency table
# ---------------------------------------------------------------------------

_FP_LONG = {"fdiv.s", "fdiv.h", "fsqrt.s", "fsqrt.h"}
_MUL = {"mul", "mulh", "mulhsu", "mulhu"}
_DIV = {"div", "divu", "rem", "remu"}
_SIMD = {"wdotp.h", "wdotp.b", "cdotp.h", "shuffle.h", "shuffle.b"}
_LOADS = {"lb", "lh", "lw", "lbu", "lhu", "p.lw"}


def _default_latencies() -> dict[str, int]:
    lat = {}
    for m in MNEMONICS:
        if m in _FP_LONG:
            lat[m] = 10
        elif m in _DIV:
            lat[m] = 8
        elif m in _MUL:
            lat[m] = 2
        elif m in _SIMD:
            lat[m] = 3
        elif m.startswith("f"):
            lat[m] = 3          # FP add/sub/mul/fma/cvt pipeline
        else:
            lat[m] = 1          # integer ALU, branches, stores, system
    return lat


@dataclass
class LatencyTable:
    """Per-mnemonic issue latencies plus the memory timing mode.

    memory_mode 'uniform' charges uniform_latency cycles for every data
    access; 'region' defers to the cluster's address-region latencies.
    Loads take their destination-ready time from the memory system, so
    their per-mnemonic entries are ignored.
    """

    latencies: dict[str, int] = field(default_factory=_default_latencies)
    memory_mode: str = "uniform"
    uniform_latency: int = 9
    barrier_overhead: int = 10

    def __post_init__(self) -> None:
        for m, v in self.latencies.items():
            if m not in TABLE:
                raise ValueError(f"latency for unknown mnemonic {m!r}")
            if v < 1:
                raise ValueError(f"latency for {m} must be >= 1, got {v}")
        if self.memory_mode not in ("uniform", "region"):
            raise ValueError(f"unknown memory mode {self.memory_mode!r}")
        if self.uniform_latency < 1:
            raise ValueError("memory.uniform must be >= 1")
        if self.barrier_overhead < 0:
            raise ValueError("barrier.overhead must be >= 0")

    def latency(self, mnemonic: str) -> int:
        return self.latencies[mnemonic]

    @classmethod
    def parse(cls, text: str) -> "LatencyTable":
        """Line-oriented config: "mnemonic latency" plus the keys
        memory.mode, memory.uniform, barrier.overhead. '=' or whitespace
        separates key and value; '#' starts a comment. Unknown keys are
        rejected."""
        table = cls()
        lat = dict(table.latencies)
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.replace("=", " ").split()
            if len(parts) != 2:
                raise ValueError(f"line {lineno}: expected 'key value', got {raw!r}")
            key, value = parts
            if key == "memory.mode":
                if value not in ("uniform", "region"):
                    raise ValueError(f"line {lineno}: unknown memory mode {value!r}")
                table.memory_mode = value
            elif key == "memory.uniform":
                table.uniform_latency = int(value)
            elif key == "barrier.overhead":
                table.barrier_overhead = int(value)
            elif key in lat:
                lat[key] = int(value)
            else:
                raise ValueError(f"line {lineno}: unknown key {key!r}")
        return cls(lat, table.memory_mode, table.uniform_latency,
                   table.barrier_overhead)


# ---------------------------------------------------------------------------
# memory protocol and a standalone implementation for single-hart use
# ---------------------------------------------------------------------------


class SparseMemory:
    """Unbounded byte-addressable memory with a flat access latency.

    The cluster module provides the mapped, region-aware implementation;
    this one serves bare single-hart programs and tests. An optional
    range confines valid addresses so out-of-map traps can be exercised.
    """

    def __init__(self, latency: int = 9,
                 valid: tuple[int, int] | None = None):
        self._bytes: dict[int, int] = {}
        self._latency = latency
        self._valid = valid

    def _check(self, addr: int, width: int) -> None:
        if addr % width:
            raise MemoryFault("misaligned access", addr)
        if self._valid is not None:
            lo, hi = self._valid
            if not (lo <= addr and addr + width <= hi):
                raise MemoryFault("unmapped address", addr)

    def read(self, addr: int, width: int) -> int:
        self._check(addr, width)
        return int.from_bytes(
            bytes(self._bytes.get(addr + i, 0) for i in range(width)), "little"
        )

    def write(self, addr: int, width: int, value: int) -> None:
        self._check(addr, width)
        for i, b in enumerate(int(value & ((1 << (8 * width)) - 1)).to_bytes(width, "little")):
            self._bytes[addr + i] = b

    def latency(self, hart_id: int, addr: int) -> int:
        return self._latency

    def load_image(self, image: ProgramImage) -> None:
        for addr, run in [(image.text_base, image.text)] + image.data_runs:
            for i, b in enumerate(run):
                self._bytes[addr + i] = b


# ---------------------------------------------------------------------------
# pre-decoded program
# ---------------------------------------------------------------------------


def _source_regs(inst: Instruction) -> tuple[int, ...]:
    """Register numbers the instruction reads (x0 excluded: always ready)."""
    fmt = TABLE[inst.mnemonic].fmt
    if fmt == "r":
        srcs = (inst.rs1, inst.rs2, inst.rd) if TABLE[inst.mnemonic].opcode == 0x2B \
            else (inst.rs1, inst.rs2)
    elif fmt == "r4":
        srcs = (inst.rs1, inst.rs2, inst.rs3)
    elif fmt == "r2":
        srcs = (inst.rs1,)
    elif fmt in ("i", "shift", "load", "jalr"):
        srcs = (inst.rs1,)
    elif fmt in ("store", "branch"):
        srcs = (inst.rs1, inst.rs2)
    else:   # u, jal, csr, none
        srcs = ()
    return tuple(s for s in srcs if s)


class Program:
    """Text segment decoded once; execution dispatches on cached slots."""

    def __init__(self, image: ProgramImage):
        self.image = image
        self.base = image.text_base
        self.slots: list[tuple[Instruction | Illegal, tuple[int, ...]]] = []
        for _, word in image.text_words:
            inst = decode(word)
            srcs = () if isinstance(inst, Illegal) else _source_regs(inst)
            self.slots.append((inst, srcs))


# ---------------------------------------------------------------------------
# architectural helpers
# ---------------------------------------------------------------------------


def _sext32(v: int) -> int:
    v &= _MASK
    return v - (1 << 32) if v & 0x80000000 else v


def _div_signed(a: int, b: int) -> int:
    if b == 0:
        return _MASK
    if a == -(1 << 31) and b == -1:
        return 0x80000000
    q = abs(a) // abs(b)
    return (-q if (a < 0) != (b < 0) else q) & _MASK


def _rem_signed(a: int, b: int) -> int:
    if b == 0:
        return a & _MASK
    if a == -(1 << 31) and b == -1:
        return 0
    r = abs(a) % abs(b)
    return (-r if a < 0 else r) & _MASK


_LOAD_WIDTH = {"lb": 1, "lbu": 1, "lh": 2, "lhu": 2, "lw": 4, "p.lw": 4}
_STORE_WIDTH = {"sb": 1, "sh": 2, "sw": 4, "p.sw": 4}
_FP16_BIN = {"fadd.h": lowfp.fp_add, "fsub.h": lowfp.fp_sub,
             "fmul.h": lowfp.fp_mul, "fdiv.h": lowfp.fp_div}
_FP32_BIN = {"fadd.s": lowfp.fp_add, "fsub.s": lowfp.fp_sub,
             "fmul.s": lowfp.fp_mul, "fdiv.s": lowfp.fp_div}
_CVT = {"fcvt.s.h": (FP16, FP32), "fcvt.s.b": (FP8, FP32),
        "fcvt.h.s": (FP32, FP16), "fcvt.h.b": (FP8, FP16),
        "fcvt.b.s": (FP32, FP8), "fcvt.b.h": (FP16, FP8)}


class Hart:
    """One core: architectural state, scoreboard timing, step/run loop."""

    def __init__(self, program: Program, mem, table: LatencyTable,
                 hart_id: int = 0, sp: int | None = None):
        self.program = program
        self.mem = mem
        self.table = table
        self.hart_id = hart_id
        self.regs = [0] * 32
        if sp is not None:
            self.regs[2] = sp & _MASK
        self.pc = program.base
        self.cycle = 0
        self.status = Status.RUNNING
        self.trap_cause: str | None = None
        self.scoreboard = [0] * 32
        self._mem_writer = [False] * 32
        self.instret = 0
        self.raw_stalls = 0
        self.mem_stalls = 0
        self.barrier_wait = 0
        self._lat = [
            0 if isinstance(inst, Illegal) else table.latency(inst.mnemonic)
            for inst, _ in program.slots
        ]

    # -- register/memory plumbing

    def _write(self, rd: int, value: int, ready: int, *, mem: bool = False) -> None:
        if rd == 0:
            return
        self.regs[rd] = value & _MASK
        self.scoreboard[rd] = ready
        self._mem_writer[rd] = mem

    def _trap(self, cause: str) -> None:
        self.status = Status.TRAPPED
        self.trap_cause = cause

    # -- the step function

    def step(self) -> None:
        """Execute one instruction; updates state, timing, and status."""
        assert self.status == Status.RUNNING
        idx = (self.pc - self.program.base) >> 2
        if self.pc % 4 or not 0 <= idx < len(self.program.slots):
            self._trap(f"pc {self.pc:#010x} outside text segment")
            return
        inst, srcs = self.program.slots[idx]
        if isinstance(inst, Illegal):
            self._trap(f"illegal instruction {inst.word:#010x}")
            return

        # issue timing: wait for the latest source, note who produced it
        issue = self.cycle
        binding_mem = False
        sb = self.scoreboard
        for s in srcs:
            t = sb[s]
            if t > issue:
                issue = t
                binding_mem = self._mem_writer[s]
            elif t == issue and self._mem_writer[s]:
                binding_mem = True
        try:
            next_pc = self._execute(inst, issue, issue + self._lat[idx])
        except MemoryFault as exc:
            self._trap(str(exc))
            return
        except MaskError as exc:
            self._trap(f"shuffle mask: {exc}")
            return
        if issue > self.cycle:
            if binding_mem:
                self.mem_stalls += issue - self.cycle
            else:
                self.raw_stalls += issue - self.cycle
        self.cycle = issue + 1
        self.instret += 1
        self.pc = (self.pc + 4) & _MASK if next_pc is None else next_pc & _MASK

    # -- architectural execution; returns next pc or None for pc+4

    def _execute(self, inst: Instruction, issue: int, lat: int) -> int | None:
        m = inst.mnemonic
        regs = self.regs

        # integer register-register and register-immediate
        if m == "addi":
            self._write(inst.rd, regs[inst.rs1] + inst.imm, lat)
        elif m == "add":
            self._write(inst.rd, regs[inst.rs1] + regs[inst.rs2], lat)
        elif m == "sub":
            self._write(inst.rd, regs[inst.rs1] - regs[inst.rs2], lat)
        elif m in ("slti", "slt"):
            b = inst.imm if m == "slti" else _sext32(regs[inst.rs2])
            self._write(inst.rd, int(_sext32(regs[inst.rs1]) < b), lat)
        elif m in ("sltiu", "sltu"):
            b = inst.imm & _MASK if m == "sltiu" else regs[inst.rs2]
            self._write(inst.rd, int(regs[inst.rs1] < b), lat)
        elif m in ("xori", "ori", "andi"):
            im = inst.imm & _MASK
            a = regs[inst.rs1]
            v = a ^ im if m == "xori" else a | im if m == "ori" else a & im
            self._write(inst.rd, v, lat)
        elif m in ("xor", "or", "and"):
            a, b = regs[inst.rs1], regs[inst.rs2]
            v = a ^ b if m == "xor" else a | b if m == "or" else a & b
            self._write(inst.rd, v, lat)
        elif m in ("slli", "srli", "srai", "sll", "srl", "sra"):
            sh = inst.imm if m.endswith("i") else regs[inst.rs2] & 31
            a = regs[inst.rs1]
            if m.startswith("sll"):
                v = a << sh
            elif m.startswith("srl"):
                v = a >> sh
            else:
                v = _sext32(a) >> sh
            self._write(inst.rd, v, lat)
        elif m == "lui":
            self._write(inst.rd, inst.imm << 12, lat)
        elif m == "auipc":
            self._write(inst.rd, self.pc + (inst.imm << 12), lat)

        # multiply/divide
        elif m == "mul":
            self._write(inst.rd, regs[inst.rs1] * regs[inst.rs2], lat)
        elif m == "mulh":
            self._write(inst.rd, (_sext32(regs[inst.rs1]) * _sext32(regs[inst.rs2])) >> 32, lat)
        elif m == "mulhsu":
            self._write(inst.rd, (_sext32(regs[inst.rs1]) * regs[inst.rs2]) >> 32, lat)
        elif m == "mulhu":
            self._write(inst.rd, (regs[inst.rs1] * regs[inst.rs2]) >> 32, lat)
        elif m == "div":
            self._write(inst.rd, _div_signed(_sext32(regs[inst.rs1]), _sext32(regs[inst.rs2])), lat)
        elif m == "divu":
            a, b = regs[inst.rs1], regs[inst.rs2]
            self._write(inst.rd, _MASK if b == 0 else a // b, lat)
        elif m == "rem":
            self._write(inst.rd, _rem_signed(_sext32(regs[inst.rs1]), _sext32(regs[inst.rs2])), lat)
        elif m == "remu":
            a, b = regs[inst.rs1], regs[inst.rs2]
            self._write(inst.rd, a if b == 0 else a % b, lat)

        # control flow
        elif m == "jal":
            self._write(inst.rd, self.pc + 4, lat)
            return self.pc + inst.imm
        elif m == "jalr":
            target = (regs[inst.rs1] + inst.imm) & ~1
            self._write(inst.rd, self.pc + 4, lat)
            return target
        elif m in ("beq", "bne", "blt", "bge", "bltu", "bgeu"):
            a, b = regs[inst.rs1], regs[inst.rs2]
            taken = {
                "beq": a == b,
                "bne": a != b,
                "blt": _sext32(a) < _sext32(b),
                "bge": _sext32(a) >= _sext32(b),
                "bltu": a < b,
                "bgeu": a >= b,
            }[m]
            return self.pc + inst.imm if taken else None

        # memory
        elif m in _LOAD_WIDTH:
            addr = regs[inst.rs1] if inst.post_increment \
                else (regs[inst.rs1] + inst.imm) & _MASK
            width = _LOAD_WIDTH[m]
            raw = self.mem.read(addr, width)
            if m == "lb":
                raw = raw - 0x100 if raw & 0x80 else raw
            elif m == "lh":
                raw = raw - 0x10000 if raw & 0x8000 else raw
            ready = issue + self.mem.latency(self.hart_id, addr)
            if inst.post_increment and inst.rs1 != inst.rd:
                self._write(inst.rs1, addr + inst.imm, issue + 1)
            self._write(inst.rd, raw, ready, mem=True)
        elif m in _STORE_WIDTH:
            addr = regs[inst.rs1] if inst.post_increment \
                else (regs[inst.rs1] + inst.imm) & _MASK
            self.mem.write(addr, _STORE_WIDTH[m], regs[inst.rs2])
            if inst.post_increment:
                self._write(inst.rs1, addr + inst.imm, issue + 1)

        # scalar FP on integer registers
        elif m in _FP16_BIN:
            v = _FP16_BIN[m](regs[inst.rs1] & 0xFFFF, regs[inst.rs2] & 0xFFFF, FP16)
            self._write(inst.rd, v, lat)
        elif m in _FP32_BIN:
            v = _FP32_BIN[m](regs[inst.rs1], regs[inst.rs2], FP32)
            self._write(inst.rd, v, lat)
        elif m == "fsqrt.h":
            self._write(inst.rd, lowfp.fp_sqrt(regs[inst.rs1] & 0xFFFF, FP16), lat)
        elif m == "fsqrt.s":
            self._write(inst.rd, lowfp.fp_sqrt(regs[inst.rs1], FP32), lat)
        elif m in _CVT:
            src, dst = _CVT[m]
            bits = regs[inst.rs1] & ((1 << src.width) - 1)
            self._write(inst.rd, lowfp.fp_cast(bits, src, dst), lat)
        elif m in ("fmadd.h", "fmsub.h"):
            a, b = regs[inst.rs1] & 0xFFFF, regs[inst.rs2] & 0xFFFF
            c = regs[inst.rs3] & 0xFFFF
            if m == "fmsub.h":
                c ^= 0x8000
            self._write(inst.rd, lowfp.fp_fma(a, b, c, FP16), lat)
        elif m in ("fmadd.s", "fmsub.s"):
            a, b, c = regs[inst.rs1], regs[inst.rs2], regs[inst.rs3]
            if m == "fmsub.s":
                c ^= 0x80000000
            self._write(inst.rd, lowfp.fp_fma(a, b, c, FP32), lat)

        # packed SIMD, rd is read-modify-write for the dot products
        elif m == "wdotp.h":
            self._write(inst.rd, lowfp.widening_dotprod16(
                regs[inst.rd], regs[inst.rs1], regs[inst.rs2]), lat)
        elif m == "wdotp.b":
            self._write(inst.rd, lowfp.widening_dotprod8(
                regs[inst.rd], regs[inst.rs1], regs[inst.rs2]), lat)
        elif m == "cdotp.h":
            self._write(inst.rd, lowfp.complex_dotprod16(
                regs[inst.rd], regs[inst.rs1], regs[inst.rs2]), lat)
        elif m == "shuffle.h":
            self._write(inst.rd, lowfp.shuffle16(
                regs[inst.rs1], regs[inst.rd], regs[inst.rs2]), lat)
        elif m == "shuffle.b":
            self._write(inst.rd, lowfp.shuffle8(
                regs[inst.rs1], regs[inst.rd], regs[inst.rs2]), lat)

        # system
        elif m == "csrr":
            if inst.csr == CSR_CYCLE:
                value = issue & _MASK     # low 32 bits of the 64-bit counter
            else:
                assert inst.csr == CSR_MHARTID
                value = self.hart_id
            self._write(inst.rd, value, lat)
        elif m == "barrier":
            self.status = Status.AT_BARRIER
        elif m == "halt":
            self.status = Status.HALTED
        else:
            raise AssertionError(f"no semantics for {m}")
        return None

    def run_until_event(self, max_steps: int = 10_000_000) -> Event:
        """Step until halt, barrier, trap, or the step budget runs out."""
        steps = 0
        while self.status == Status.RUNNING:
            if steps >= max_steps:
                return Event.BUDGET
            self.step()
            steps += 1
        return {
            Status.HALTED: Event.HALTED,
            Status.AT_BARRIER: Event.AT_BARRIER,
            Status.TRAPPED: Event.TRAPPED,
        }[self.status]
