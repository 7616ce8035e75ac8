"""Monte-Carlo driver: end-to-end BER sweeps (bits, QAM, channel,
quantization, detection, demap, error counts) and kernel cycle reports.

Every iteration is independently seeded through a fixed path
(master_seed, snr_index, iteration_index, stream tag), so any worker
can compute any iteration and the sweep result is byte-identical for
every worker count: workers race ahead speculatively, but results are
consumed strictly in iteration order and the consumed prefix is the one
a sequential run would consume.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from multiprocessing import get_context
from pathlib import Path

import numpy as np

from .cluster import Cluster, ClusterConfig, ClusterTrap, HartReport
from .core import LatencyTable
from .kernels import extract_results, generate_kernel, load_problems
from .mmse import QuantizedBatch, Variant, functional_mmse_batch, quantize_batch
from .phy import ChannelModel, ModulationScheme, philox_rng, qam_demodulate_hard, qam_modulate

__all__ = [
    "BerPoint",
    "CSV_HEADER",
    "CycleReport",
    "ENGINES",
    "SweepConfig",
    "ber_sweep",
    "cycle_report",
    "load_results",
    "persist_results",
    "run_iteration",
]

ENGINES = ("host_functional", "emulated", "golden_double")

CSV_HEADER = "snr_db,ber,bit_errors,bits_total,trials,erasures"

# stream tags under (master_seed, snr_index, iteration_index)
_TAG_BITS = 0
_TAG_CHANNEL = 1


@dataclass(frozen=True)
class SweepConfig:
    """Everything a BER sweep needs; immutable and picklable."""

    variant: Variant
    scheme: ModulationScheme
    channel_kind: str
    n_tx: int
    n_rx: int
    snr_db: tuple
    target_bit_errors: int = 100
    max_trials: int = 1000
    n_sc: int = 1638
    engine: str = "host_functional"
    master_seed: int = 0
    workers: int = 1
    snr_convention: str = "es_n0"

    def __post_init__(self):
        object.__setattr__(self, "snr_db", tuple(float(s) for s in self.snr_db))
        if not self.snr_db:
            raise ValueError("snr_db list must not be empty")
        if self.target_bit_errors < 1:
            raise ValueError("target_bit_errors must be at least 1")
        if self.max_trials < 1 or self.n_sc < 1 or self.workers < 1:
            raise ValueError("max_trials, n_sc, and workers must be positive")
        if self.engine not in ENGINES:
            raise ValueError(f"unknown engine {self.engine!r}")
        if self.engine == "golden_double" and self.variant is not Variant.DOUBLE64:
            raise ValueError("the golden_double engine runs the Double64 model")
        if self.engine == "emulated" and self.variant is Variant.DOUBLE64:
            raise ValueError("no kernel exists for Double64; use a host engine")
        # channel constraints (square identity, snr validity) checked here
        for snr in self.snr_db:
            ChannelModel(self.channel_kind, self.n_tx, self.n_rx, snr,
                         self.snr_convention)


@dataclass(frozen=True)
class BerPoint:
    """One SNR point of a sweep; ber derives from the counts."""

    snr_db: float
    bit_errors: int
    bits_total: int
    trials: int
    erasure_problems: int
    low_confidence: bool = False

    def __post_init__(self):
        if not 0 <= self.bit_errors <= self.bits_total:
            raise ValueError("bit_errors must lie in [0, bits_total]")
        if self.trials < 1 or self.erasure_problems < 0:
            raise ValueError("trials must be >= 1 and erasures >= 0")

    @property
    def ber(self) -> float:
        return self.bit_errors / self.bits_total

    @property
    def stderr(self) -> float:
        """Binomial standard error of the BER estimate."""
        p = self.ber
        return math.sqrt(p * (1.0 - p) / self.bits_total)


# ---------------------------------------------------------------------------
# one Monte-Carlo iteration
# ---------------------------------------------------------------------------


def _generate_problems(cfg: SweepConfig, snr_index: int, iteration_index: int):
    """Draw bits, symbols, channels, and noise for n_sc problems.

    Stream order is fixed: the bit tag feeds the transmit bits; the
    channel tag feeds H (all problems) and then the noise.
    """
    snr = cfg.snr_db[snr_index]
    ch = ChannelModel(cfg.channel_kind, cfg.n_tx, cfg.n_rx, snr,
                      cfg.snr_convention)
    k = cfg.scheme.bits_per_symbol
    n_bits = cfg.n_sc * cfg.n_tx * k
    tx_bits = philox_rng(cfg.master_seed, snr_index, iteration_index,
                         _TAG_BITS).integers(0, 2, size=n_bits, dtype=np.uint8)
    x = qam_modulate(tx_bits, cfg.scheme).reshape(cfg.n_sc, cfg.n_tx)
    rng = philox_rng(cfg.master_seed, snr_index, iteration_index,
                     _TAG_CHANNEL)
    if ch.kind == "flat_rayleigh":
        h = (rng.standard_normal((cfg.n_sc, cfg.n_rx, cfg.n_tx))
             + 1j * rng.standard_normal((cfg.n_sc, cfg.n_rx, cfg.n_tx))
             ) / np.sqrt(2)
    else:
        h = np.broadcast_to(np.eye(cfg.n_tx, dtype=np.complex128),
                            (cfg.n_sc, cfg.n_tx, cfg.n_tx)).copy()
    s2 = ch.sigma2(k)
    noise = math.sqrt(s2 / 2) * (rng.standard_normal((cfg.n_sc, cfg.n_rx))
                                 + 1j * rng.standard_normal((cfg.n_sc,
                                                             cfg.n_rx)))
    y = np.einsum("prt,pt->pr", h, x) + noise
    return tx_bits, quantize_batch(h, y, np.full(cfg.n_sc, s2), cfg.variant)


def _pad_batch(qb: QuantizedBatch, total: int) -> QuantizedBatch:
    """Repeat problem 0 to fill unused hart/batch slots."""
    pad = total - qb.n_problems
    if pad <= 0:
        return qb

    def ext(a):
        return np.concatenate([a, np.repeat(a[:1], pad, axis=0)])

    return QuantizedBatch(qb.variant, ext(qb.hr), ext(qb.hi), ext(qb.yr),
                          ext(qb.yi), ext(qb.sigma2))


def _detect_emulated(cfg: SweepConfig, qb: QuantizedBatch) -> np.ndarray:
    cl_cfg = ClusterConfig()
    n = qb.n_problems
    n_harts = min(n, cl_cfg.total_cores)
    batch = -(-n // n_harts)
    image, layout = generate_kernel(cfg.variant, cfg.n_tx, cfg.n_rx, batch,
                                    n_harts=n_harts, cfg=cl_cfg)
    cluster = Cluster(cl_cfg, image, n_harts=n_harts)
    load_problems(cluster, layout, _pad_batch(qb, n_harts * batch))
    try:
        cluster.run()
    except ClusterTrap as exc:
        lo = exc.hart_id * batch
        raise RuntimeError(
            f"emulated engine trapped on problems [{lo}, {lo + batch}): "
            f"{exc}") from exc
    return extract_results(cluster, layout).x_hat[:n]


def run_iteration(cfg: SweepConfig, snr_index: int,
                  iteration_index: int) -> tuple[int, int, int]:
    """One iteration of n_sc problems; returns (bit_errors, bits, erasures).

    A problem with any non-finite detected lane is an erasure and every
    one of its bits counts as an error; this is the value-level rule, so
    the emulated and host engines agree problem for problem.
    """
    tx_bits, qb = _generate_problems(cfg, snr_index, iteration_index)
    if cfg.engine == "emulated":
        x_hat = _detect_emulated(cfg, qb)
    else:
        x_hat = functional_mmse_batch(qb).x_hat
    rx_bits, erased_sym = qam_demodulate_hard(x_hat.ravel(), cfg.scheme)
    k = cfg.scheme.bits_per_symbol
    erased = erased_sym.reshape(cfg.n_sc, cfg.n_tx).any(axis=1)
    errs = (tx_bits.reshape(cfg.n_sc, -1)
            != rx_bits.reshape(cfg.n_sc, -1)).sum(axis=1)
    errs[erased] = cfg.n_tx * k
    return int(errs.sum()), tx_bits.size, int(erased.sum())


# ---------------------------------------------------------------------------
# the sweep
# ---------------------------------------------------------------------------


def ber_sweep(cfg: SweepConfig) -> list[BerPoint]:
    """Run every SNR point to the target error count or max_trials.

    Iterations are farmed out in waves of cfg.workers, but the counts
    are reduced strictly in iteration order and any result past the
    stopping index is discarded, so the output never depends on the
    worker count or scheduling.
    """
    pool = None
    if cfg.workers > 1:
        pool = ProcessPoolExecutor(max_workers=cfg.workers,
                                   mp_context=get_context("fork"))
    try:
        points = []
        for si, snr in enumerate(cfg.snr_db):
            errors = bits = erasures = trials = 0
            while errors < cfg.target_bit_errors and trials < cfg.max_trials:
                wave = range(trials, trials + min(cfg.workers,
                                                  cfg.max_trials - trials))
                if pool is None:
                    results = [run_iteration(cfg, si, j) for j in wave]
                else:
                    futures = [pool.submit(run_iteration, cfg, si, j)
                               for j in wave]
                    results = [f.result() for f in futures]
                for e, b, r in results:
                    errors += e
                    bits += b
                    erasures += r
                    trials += 1
                    if errors >= cfg.target_bit_errors:
                        break
            points.append(BerPoint(snr, errors, bits, trials, erasures,
                                   low_confidence=errors
                                   < cfg.target_bit_errors))
        return points
    finally:
        if pool is not None:
            pool.shutdown()


# ---------------------------------------------------------------------------
# cycle reports
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CycleReport:
    """Timing of one emulated kernel run plus host-side throughput."""

    variant: str
    n_tx: int
    n_rx: int
    batch: int
    n_harts: int
    rows: tuple
    wall_seconds: float

    @property
    def total_cycles(self) -> int:
        return max(r.cycles for r in self.rows)

    @property
    def total_instructions(self) -> int:
        return sum(r.instructions for r in self.rows)

    @property
    def mips(self) -> float:
        return self.total_instructions / self.wall_seconds / 1e6

    _COLUMNS = ("hart_id", "instructions", "cycles", "raw_stalls",
                "mem_stalls", "barrier_wait")

    def to_text(self) -> str:
        lines = [
            "cycle report",
            f"variant {self.variant}",
            f"n_tx {self.n_tx}",
            f"n_rx {self.n_rx}",
            f"batch {self.batch}",
            f"n_harts {self.n_harts}",
            f"total_cycles {self.total_cycles}",
            f"total_instructions {self.total_instructions}",
            f"wall_seconds {self.wall_seconds!r}",
            f"emulated_mips {self.mips!r}",
            " ".join(self._COLUMNS),
        ]
        for r in self.rows:
            lines.append(" ".join(str(getattr(r, c)) for c in self._COLUMNS))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "CycleReport":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines or lines[0] != "cycle report":
            raise ValueError("not a cycle report")
        kv = {}
        for ln in lines[1:10]:
            key, value = ln.split(None, 1)
            kv[key] = value
        if tuple(lines[10].split()) != cls._COLUMNS:
            raise ValueError(f"unexpected columns {lines[10]!r}")
        rows = tuple(HartReport(*map(int, ln.split())) for ln in lines[11:])
        report = cls(kv["variant"], int(kv["n_tx"]), int(kv["n_rx"]),
                     int(kv["batch"]), int(kv["n_harts"]), rows,
                     float(kv["wall_seconds"]))
        if report.total_cycles != int(kv["total_cycles"]):
            raise ValueError("total_cycles does not match rows")
        return report


def cycle_report(variant: Variant, n_tx: int, n_rx: int, batch: int = 1, *,
                 n_harts: int = 1, cfg: ClusterConfig | None = None,
                 table: LatencyTable | None = None, seed: int = 0,
                 quantum: int = 100) -> CycleReport:
    """Time one kernel run on representative random data.

    wall_seconds covers only the emulation loop, so emulated MIPS
    measures the emulator itself, not code generation or data loading.
    """
    cfg = cfg or ClusterConfig()
    image, layout = generate_kernel(variant, n_tx, n_rx, batch,
                                    n_harts=n_harts, cfg=cfg)
    rng = philox_rng(seed)
    n = n_harts * batch
    h = (rng.standard_normal((n, n_rx, n_tx))
         + 1j * rng.standard_normal((n, n_rx, n_tx))) / np.sqrt(2)
    y = (rng.standard_normal((n, n_rx)) + 1j * rng.standard_normal((n, n_rx)))
    qb = quantize_batch(h, y, np.full(n, 0.1), variant)
    cluster = Cluster(cfg, image, table, n_harts=n_harts)
    load_problems(cluster, layout, qb)
    t0 = time.perf_counter()
    report = cluster.run(quantum)
    wall = time.perf_counter() - t0
    return CycleReport(variant.value, n_tx, n_rx, batch, n_harts,
                       tuple(report.rows), wall)


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------


def persist_results(obj, path) -> None:
    """Write BerPoints as CSV or a CycleReport as structured text."""
    path = Path(path)
    if isinstance(obj, CycleReport):
        path.write_text(obj.to_text())
        return
    lines = [CSV_HEADER]
    for p in obj:
        lines.append(f"{p.snr_db!r},{p.ber!r},{p.bit_errors},"
                     f"{p.bits_total},{p.trials},{p.erasure_problems}")
    path.write_text("\n".join(lines) + "\n")


def load_results(path) -> list[BerPoint]:
    """Exact inverse of the CSV writer for the numeric fields.

    The low-confidence flag is not recorded in the CSV, so loaded
    points carry the default False.
    """
    path = Path(path)
    lines = path.read_text().splitlines()
    if not lines or lines[0] != CSV_HEADER:
        raise ValueError(f"{path}: missing header {CSV_HEADER!r}")
    points = []
    for lineno, raw in enumerate(lines[1:], start=2):
        if not raw.strip():
            continue
        parts = raw.split(",")
        if len(parts) != 6:
            raise ValueError(f"{path} line {lineno}: expected 6 fields, "
                             f"got {len(parts)}")
        try:
            snr = float(parts[0])
            ber = float(parts[1])
            errors, bits, trials, erasures = (int(v) for v in parts[2:])
        except ValueError as exc:
            raise ValueError(f"{path} line {lineno}: {exc}") from None
        point = BerPoint(snr, errors, bits, trials, erasures)
        if ber != point.ber:
            raise ValueError(f"{path} line {lineno}: ber column {ber!r} "
                             f"does not equal bit_errors/bits_total")
        points.append(point)
    return points
