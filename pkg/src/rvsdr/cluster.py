"""Many-core cluster: hierarchy config, memory map, barriers, scheduler.

The machine is a four-level hierarchy (cores within a tile, tiles within a
subgroup, subgroups within a group, groups within the cluster). Each tile
owns a scratchpad slice of the shared L1 window; a flat L2 window and the
text window complete the map. Data accesses are functionally immediate,
and timing comes from the region between requester and target: same-tile
hits cost 1 cycle, each hierarchy boundary adds latency, L2 costs most.
A conservative mode charges a flat 9 cycles for every access instead.

Scheduling is deterministic: harts advance round-robin in fixed quanta of
instructions. Since harts never couple through timing (only through
barriers, whose release rule depends only on per-hart arrival cycles),
architectural state and cycle counts are independent of the quantum for
data-race-free programs.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from typing import Sequence

from .asm import ProgramImage
from .core import Hart, LatencyTable, MemoryFault, Program, Status

__all__ = [
    "Cluster",
    "ClusterConfig",
    "ClusterRunReport",
    "ClusterTrap",
    "DeadlockError",
    "HartReport",
    "Memory",
    "OutOfMap",
    "StepBudgetError",
    "TEXT_BASE",
    "L1_BASE",
    "L2_BASE",
    "classify_address",
    "run_cluster",
]

TEXT_BASE = 0x0001_0000
TEXT_BYTES = 0x000F_0000
L1_BASE = 0x1000_0000
L2_BASE = 0x8000_0000
BANKS_PER_TILE = 16


class OutOfMap(MemoryFault):
    def __init__(self, addr: int):
        super().__init__("unmapped address", addr)


class ClusterTrap(Exception):
    def __init__(self, hart_id: int, pc: int, cause: str):
        super().__init__(f"hart {hart_id} trapped at pc {pc:#010x}: {cause}")
        self.hart_id = hart_id
        self.pc = pc
        self.cause = cause


class DeadlockError(Exception):
    """Some harts wait at a barrier that can never release."""

    def __init__(self, waiting: list[int], missing: list[tuple[int, str]]):
        desc = ", ".join(f"hart {i} ({why})" for i, why in missing)
        super().__init__(
            f"barrier deadlock: harts {waiting} wait, never arrived: {desc}"
        )
        self.waiting = waiting
        self.missing = missing


class StepBudgetError(Exception):
    pass


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


@dataclass
class ClusterConfig:
    """Hierarchy shape, scratchpad sizes, and region access latencies."""

    cores_per_tile: int = 8
    tiles_per_subgroup: int = 8
    subgroups_per_group: int = 4
    groups: int = 4
    l1_bytes_per_tile: int = 32 * 1024
    l2_bytes: int = 8 * 1024 * 1024
    latency_same_tile: int = 1
    latency_same_subgroup: int = 5
    latency_same_group: int = 7
    latency_cross_group: int = 9
    latency_l2: int = 20
    dma_setup_cycles: int = 20
    dma_beat_bytes: int = 16

    def __post_init__(self) -> None:
        for f in fields(self):
            v = getattr(self, f.name)
            if not isinstance(v, int) or v < 1:
                raise ValueError(f"{f.name} must be a positive integer, got {v!r}")

    @property
    def tiles(self) -> int:
        return self.tiles_per_subgroup * self.subgroups_per_group * self.groups

    @property
    def total_cores(self) -> int:
        return self.cores_per_tile * self.tiles

    @property
    def l1_bytes(self) -> int:
        return self.l1_bytes_per_tile * self.tiles

    def tile_of_hart(self, hart_id: int) -> int:
        return hart_id // self.cores_per_tile

    def l1_tile_base(self, tile: int) -> int:
        return L1_BASE + tile * self.l1_bytes_per_tile

    def region_latency(self, region: str) -> int:
        return {
            "same_tile": self.latency_same_tile,
            "same_subgroup": self.latency_same_subgroup,
            "same_group": self.latency_same_group,
            "cross_group": self.latency_cross_group,
            "l2": self.latency_l2,
            "text": self.latency_l2,
        }[region]

    def to_text(self) -> str:
        return "".join(
            f"{f.name}={getattr(self, f.name)}\n" for f in fields(self)
        )

    @classmethod
    def parse(cls, text: str) -> "ClusterConfig":
        """key=value lines ('#' comments); keys are exactly the field
        names; unknown keys rejected."""
        known = {f.name for f in fields(cls)}
        overrides: dict[str, int] = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.replace("=", " ").split()
            if len(parts) != 2:
                raise ValueError(f"line {lineno}: expected 'key=value', got {raw!r}")
            key, value = parts
            if key not in known:
                raise ValueError(f"line {lineno}: unknown key {key!r}")
            try:
                overrides[key] = int(value, 0)
            except ValueError:
                raise ValueError(f"line {lineno}: bad value for {key}: {value!r}") from None
        return cls(**overrides)


def bank_of(addr: int, cfg: ClusterConfig) -> tuple[int, int]:
    """(tile, bank) owning an L1 word; words interleave across the banks."""
    if not L1_BASE <= addr < L1_BASE + cfg.l1_bytes:
        raise OutOfMap(addr)
    offset = addr - L1_BASE
    tile, within = divmod(offset, cfg.l1_bytes_per_tile)
    return tile, (within >> 2) % BANKS_PER_TILE


def classify_address(addr: int, requester_hart: int, cfg: ClusterConfig,
                     mode: str = "region", uniform_latency: int = 9
                     ) -> tuple[str, int]:
    """Map an address to its region relative to the requesting hart.

    Returns (region, latency). The region partition is total over the map:
    text, the four L1 proximity classes, or l2. In 'uniform' mode the
    region is still reported but the latency is the flat conservative
    figure.
    """
    if TEXT_BASE <= addr < TEXT_BASE + TEXT_BYTES:
        region = "text"
    elif L1_BASE <= addr < L1_BASE + cfg.l1_bytes:
        target_tile = (addr - L1_BASE) // cfg.l1_bytes_per_tile
        my_tile = cfg.tile_of_hart(requester_hart)
        if target_tile == my_tile:
            region = "same_tile"
        elif target_tile // cfg.tiles_per_subgroup == my_tile // cfg.tiles_per_subgroup:
            region = "same_subgroup"
        else:
            per_group = cfg.tiles_per_subgroup * cfg.subgroups_per_group
            region = "same_group" if target_tile // per_group == my_tile // per_group \
                else "cross_group"
    elif L2_BASE <= addr < L2_BASE + cfg.l2_bytes:
        region = "l2"
    else:
        raise OutOfMap(addr)
    if mode == "uniform":
        return region, uniform_latency
    return region, cfg.region_latency(region)


# ---------------------------------------------------------------------------
# shared functional memory
# ---------------------------------------------------------------------------


class Memory:
    """Flat byte-addressable storage over the three mapped windows.

    Reads and writes are immediate (coherence is trivial); the latency
    method supplies the timing side-channel the cores charge for loads.
    """

    def __init__(self, cfg: ClusterConfig, mode: str = "uniform",
                 uniform_latency: int = 9):
        if mode not in ("uniform", "region"):
            raise ValueError(f"unknown memory mode {mode!r}")
        self.cfg = cfg
        self.mode = mode
        self.uniform_latency = uniform_latency
        self._windows = [
            (TEXT_BASE, bytearray(TEXT_BYTES)),
            (L1_BASE, bytearray(cfg.l1_bytes)),
            (L2_BASE, bytearray(cfg.l2_bytes)),
        ]

    def _locate(self, addr: int, width: int) -> tuple[bytearray, int]:
        if addr % width:
            raise MemoryFault("misaligned access", addr)
        for base, buf in self._windows:
            if base <= addr and addr + width <= base + len(buf):
                return buf, addr - base
        raise OutOfMap(addr)

    def read(self, addr: int, width: int) -> int:
        buf, off = self._locate(addr, width)
        return int.from_bytes(buf[off:off + width], "little")

    def write(self, addr: int, width: int, value: int) -> None:
        buf, off = self._locate(addr, width)
        buf[off:off + width] = (value & ((1 << (8 * width)) - 1)).to_bytes(width, "little")

    def latency(self, hart_id: int, addr: int) -> int:
        if self.mode == "uniform":
            return self.uniform_latency
        return classify_address(addr, hart_id, self.cfg)[1]

    # bulk helpers used for image loading and host-side data staging

    def write_bytes(self, addr: int, data: bytes) -> None:
        if not data:
            return
        buf, off = self._locate_range(addr, len(data))
        buf[off:off + len(data)] = data

    def read_bytes(self, addr: int, length: int) -> bytes:
        if not length:
            return b""
        buf, off = self._locate_range(addr, length)
        return bytes(buf[off:off + length])

    def _locate_range(self, addr: int, length: int) -> tuple[bytearray, int]:
        for base, buf in self._windows:
            if base <= addr and addr + length <= base + len(buf):
                return buf, addr - base
        raise OutOfMap(addr)

    def load_image(self, image: ProgramImage) -> None:
        self.write_bytes(image.text_base, image.text)
        for addr, run in image.data_runs:
            self.write_bytes(addr, run)

    def bulk_copy(self, src: int, dst: int, length: int) -> int:
        """DMA-style copy; returns the cycle cost charged to the issuer."""
        if length < 0:
            raise ValueError("negative length")
        cfg = self.cfg
        cost = cfg.dma_setup_cycles + -(-length // cfg.dma_beat_bytes)
        if length == 0:
            return cost
        if src < dst < src + length or dst < src < dst + length or src == dst:
            raise ValueError(
                f"overlapping copy: src {src:#x} dst {dst:#x} len {length}"
            )
        self.write_bytes(dst, self.read_bytes(src, length))
        return cost


# ---------------------------------------------------------------------------
# run reports
# ---------------------------------------------------------------------------

_COLUMNS = ("hart_id", "instructions", "cycles", "raw_stalls",
            "mem_stalls", "barrier_wait")


@dataclass(frozen=True)
class HartReport:
    hart_id: int
    instructions: int
    cycles: int
    raw_stalls: int
    mem_stalls: int
    barrier_wait: int


@dataclass
class ClusterRunReport:
    rows: list[HartReport] = field(default_factory=list)

    @property
    def total_cycles(self) -> int:
        return max((r.cycles for r in self.rows), default=0)

    @property
    def total_instructions(self) -> int:
        return sum(r.instructions for r in self.rows)

    def to_text(self) -> str:
        lines = [f"total_cycles {self.total_cycles}",
                 f"harts {len(self.rows)}",
                 " ".join(_COLUMNS)]
        for r in self.rows:
            lines.append(" ".join(str(getattr(r, c)) for c in _COLUMNS))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ClusterRunReport":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if len(lines) < 3 or not lines[0].startswith("total_cycles ") \
                or not lines[1].startswith("harts "):
            raise ValueError("not a cluster run report")
        if tuple(lines[2].split()) != _COLUMNS:
            raise ValueError(f"unexpected columns {lines[2]!r}")
        n = int(lines[1].split()[1])
        rows = []
        for ln in lines[3:3 + n]:
            vals = [int(v) for v in ln.split()]
            if len(vals) != len(_COLUMNS):
                raise ValueError(f"bad report row {ln!r}")
            rows.append(HartReport(*vals))
        if len(rows) != n:
            raise ValueError("report truncated")
        report = cls(rows)
        if report.total_cycles != int(lines[0].split()[1]):
            raise ValueError("total_cycles does not match rows")
        return report


# ---------------------------------------------------------------------------
# the cluster itself
# ---------------------------------------------------------------------------


class Cluster:
    """Shared memory plus one hart per participating core.

    A single image is shared by all harts (the program reads mhartid to
    split work); a sequence of images gives each hart its own text. The
    decoded program is cached once per distinct image.
    """

    def __init__(self, cfg: ClusterConfig,
                 images: ProgramImage | Sequence[ProgramImage],
                 table: LatencyTable | None = None,
                 n_harts: int | None = None):
        self.cfg = cfg
        self.table = table or LatencyTable()
        self.memory = Memory(cfg, self.table.memory_mode,
                             self.table.uniform_latency)
        if isinstance(images, ProgramImage):
            if n_harts is None:
                n_harts = cfg.total_cores
            image_list = [images] * n_harts
            programs = [Program(images)] * n_harts
        else:
            image_list = list(images)
            if n_harts is None:
                n_harts = len(image_list)
            if n_harts != len(image_list):
                raise ValueError("n_harts disagrees with number of images")
            programs = [Program(im) for im in image_list]
        if not 1 <= n_harts <= cfg.total_cores:
            raise ValueError(
                f"n_harts must be in 1..{cfg.total_cores}, got {n_harts}"
            )
        seen = set()
        for im in image_list:
            if id(im) not in seen:
                seen.add(id(im))
                self.memory.load_image(im)
        self.harts = [
            Hart(programs[i], self.memory, self.table, hart_id=i)
            for i in range(n_harts)
        ]

    # -- barrier coordination

    def barrier_step(self) -> None:
        """Release every hart waiting at the barrier.

        Resume cycle is the latest arrival among the waiting harts plus
        the barrier overhead; halted harts are not participants. Raises
        DeadlockError when some hart can never arrive.
        """
        waiting = [h for h in self.harts if h.status == Status.AT_BARRIER]
        if not waiting:
            raise ValueError("no hart is waiting at a barrier")
        missing = [
            (h.hart_id, h.trap_cause if h.status == Status.TRAPPED
             else h.status.value)
            for h in self.harts
            if h.status not in (Status.AT_BARRIER, Status.HALTED)
        ]
        if missing:
            raise DeadlockError([h.hart_id for h in waiting], missing)
        resume = max(h.cycle for h in waiting) + self.table.barrier_overhead
        for h in waiting:
            h.barrier_wait += resume - h.cycle
            h.cycle = resume
            h.status = Status.RUNNING

    # -- DMA

    def bulk_copy(self, src: int, dst: int, length: int,
                  hart_id: int | None = None) -> int:
        """Copy bytes; the cycle cost lands on a hart only when one is
        named (host-side staging before cycle 0 names none)."""
        cost = self.memory.bulk_copy(src, dst, length)
        if hart_id is not None:
            self.harts[hart_id].cycle += cost
        return cost

    # -- deterministic scheduler

    def run(self, quantum: int = 100, max_steps: int = 1_000_000_000
            ) -> ClusterRunReport:
        """Round-robin the harts in quanta until all halt.

        Raises ClusterTrap when a hart traps with nobody at a barrier,
        DeadlockError when a barrier can never release, StepBudgetError
        when the instruction budget runs out with harts still running.
        """
        if quantum < 1:
            raise ValueError("quantum must be >= 1")
        steps = 0
        while True:
            ran_any = False
            for h in self.harts:
                if h.status != Status.RUNNING:
                    continue
                ran_any = True
                before = h.instret
                h.run_until_event(max_steps=quantum)
                steps += h.instret - before
            if not ran_any:
                statuses = {h.status for h in self.harts}
                if statuses == {Status.HALTED}:
                    break
                if Status.AT_BARRIER in statuses:
                    self.barrier_step()     # raises DeadlockError on traps
                    continue
                trapped = next(h for h in self.harts
                               if h.status == Status.TRAPPED)
                raise ClusterTrap(trapped.hart_id, trapped.pc,
                                  trapped.trap_cause or "trap")
            if steps > max_steps:
                waiting = [h.hart_id for h in self.harts
                           if h.status == Status.AT_BARRIER]
                if waiting:
                    missing = [
                        (h.hart_id, h.trap_cause if h.status == Status.TRAPPED
                         else h.status.value)
                        for h in self.harts
                        if h.status not in (Status.AT_BARRIER, Status.HALTED)
                    ]
                    raise DeadlockError(waiting, missing)
                raise StepBudgetError(
                    f"exceeded {max_steps} instructions with harts still running"
                )
        return self.report()

    def report(self) -> ClusterRunReport:
        return ClusterRunReport([
            HartReport(h.hart_id, h.instret, h.cycle, h.raw_stalls,
                       h.mem_stalls, h.barrier_wait)
            for h in self.harts
        ])


def run_cluster(cfg: ClusterConfig,
                images: ProgramImage | Sequence[ProgramImage],
                table: LatencyTable | None = None,
                *, n_harts: int | None = None, quantum: int = 100,
                max_steps: int = 1_000_000_000,
                mode: str = "deterministic") -> ClusterRunReport:
    """Build a cluster, run it to completion, return the per-hart report.

    'deterministic' is the round-robin reference semantics;
    'fast_parallel' runs each hart to its next event in one go (an
    unbounded quantum), which for data-race-free programs produces the
    same results with less scheduling overhead.
    """
    if mode == "fast_parallel":
        quantum = max_steps
    elif mode != "deterministic":
        raise ValueError(f"unsupported scheduler mode {mode!r}")
    return Cluster(cfg, images, table, n_harts).run(quantum, max_steps)
