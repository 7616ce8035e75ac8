"""Command-line front end: assemble and disassemble programs, run them on
a configured cluster, generate detection kernels, and drive BER sweeps and
cycle reports from manifest files.

Manifests and the config files they reference are line-oriented
"key value" text; '#' starts a comment and referenced paths resolve
relative to the file that names them. Output files are deterministic for
a fixed manifest: wall-clock figures (and the MIPS derived from them) go
to a *_meta.txt sidecar so the primary reports compare byte-identical
across invocations.

Exit codes: 0 success, 1 operational errors (missing files, assembler
diagnostics, traps), 2 usage and config errors, 3 step-budget
exhaustion.
"""

from __future__ import annotations

import argparse
import sys
import time
from dataclasses import fields
from pathlib import Path

from .asm import AsmError, ProgramImage, assemble, disassemble
from .cluster import (
    Cluster,
    ClusterConfig,
    ClusterRunReport,
    ClusterTrap,
    DeadlockError,
    StepBudgetError,
)
from .core import LatencyTable
from .kernels import emit_kernel_source, generate_kernel
from .mmse import Variant
from .montecarlo import (
    CycleReport,
    SweepConfig,
    ber_sweep,
    cycle_report,
    persist_results,
)
from .phy import ModulationScheme

__all__ = ["main", "build_parser",
           "EXIT_OK", "EXIT_ERROR", "EXIT_USAGE", "EXIT_BUDGET"]

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_BUDGET = 3


class CliError(Exception):
    """Diagnostic with an exit code; main prints it to stderr."""

    def __init__(self, message: str, exit_code: int = EXIT_ERROR):
        super().__init__(message)
        self.exit_code = exit_code


# ---------------------------------------------------------------------------
# manifest plumbing
# ---------------------------------------------------------------------------


def _read_kv(path: Path) -> dict[str, str]:
    """Parse "key value" lines; comments and blanks skipped."""
    if not path.is_file():
        raise CliError(f"{path}: no such file")
    out: dict[str, str] = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split(None, 1)
        if len(parts) != 2:
            raise CliError(f"{path} line {lineno}: expected 'key value', "
                           f"got {raw!r}", EXIT_USAGE)
        key, value = parts
        if key in out:
            raise CliError(f"{path} line {lineno}: duplicate key {key!r}",
                           EXIT_USAGE)
        out[key] = value.strip()
    return out


def _check_keys(man: dict[str, str], allowed: set[str], where: Path) -> None:
    unknown = sorted(set(man) - allowed)
    if unknown:
        raise CliError(f"{where}: unknown key(s) {', '.join(unknown)}; "
                       f"allowed: {', '.join(sorted(allowed))}", EXIT_USAGE)


def _resolve(base: Path, value: str) -> Path:
    p = Path(value)
    return p if p.is_absolute() else base.parent / p


def _int_key(man: dict[str, str], key: str, default: int,
             where: Path) -> int:
    if key not in man:
        return default
    try:
        return int(man[key])
    except ValueError:
        raise CliError(f"{where}: key {key!r} must be an integer, "
                       f"got {man[key]!r}", EXIT_USAGE) from None


def _parse_variant(name: str, where: Path) -> Variant:
    try:
        return Variant(name)
    except ValueError:
        choices = ", ".join(v.value for v in Variant)
        raise CliError(f"{where}: unknown variant {name!r}; choose from "
                       f"{choices}", EXIT_USAGE) from None


def _load_cluster_config(man: dict[str, str], manifest: Path
                         ) -> ClusterConfig:
    if "cluster" not in man:
        return ClusterConfig()
    path = _resolve(manifest, man["cluster"])
    kv = _read_kv(path)
    names = {f.name for f in fields(ClusterConfig)}
    _check_keys(kv, names, path)
    try:
        return ClusterConfig(**{k: int(v) for k, v in kv.items()})
    except ValueError as exc:
        raise CliError(f"{path}: {exc}", EXIT_USAGE) from None


def _load_latency_table(man: dict[str, str], manifest: Path
                        ) -> LatencyTable | None:
    if "latency" not in man:
        return None
    path = _resolve(manifest, man["latency"])
    if not path.is_file():
        raise CliError(f"{path}: no such file")
    try:
        return LatencyTable.parse(path.read_text())
    except ValueError as exc:
        raise CliError(f"{path}: {exc}", EXIT_USAGE) from None


def _kernel_spec(man: dict[str, str], manifest: Path
                 ) -> tuple[Variant, int, int, int, int]:
    for key in ("kernel.variant", "kernel.n_tx", "kernel.n_rx"):
        if key not in man:
            raise CliError(f"{manifest}: missing key {key!r}", EXIT_USAGE)
    variant = _parse_variant(man["kernel.variant"], manifest)
    n_tx = _int_key(man, "kernel.n_tx", 0, manifest)
    n_rx = _int_key(man, "kernel.n_rx", 0, manifest)
    batch = _int_key(man, "kernel.batch", 1, manifest)
    n_harts = _int_key(man, "n_harts", 1, manifest)
    return variant, n_tx, n_rx, batch, n_harts


def _out_dir(args, man: dict[str, str], manifest: Path) -> Path:
    if args.out is not None:
        out = Path(args.out)
    elif "out" in man:
        out = _resolve(manifest, man["out"])
    else:
        out = Path.cwd()
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_assemble(args) -> int:
    manifest = Path(args.config)
    man = _read_kv(manifest)
    _check_keys(man, {"source", "out"}, manifest)
    if "source" not in man:
        raise CliError(f"{manifest}: missing key 'source'", EXIT_USAGE)
    src = _resolve(manifest, man["source"])
    if not src.is_file():
        raise CliError(f"{src}: no such file")
    image = assemble(src.read_text())
    out = _out_dir(args, man, manifest) / (src.stem + ".img")
    image.save(out)
    print(f"assembled {len(image.text) // 4} instructions -> {out}")
    return EXIT_OK


def cmd_disassemble(args) -> int:
    manifest = Path(args.config)
    man = _read_kv(manifest)
    _check_keys(man, {"image", "out"}, manifest)
    if "image" not in man:
        raise CliError(f"{manifest}: missing key 'image'", EXIT_USAGE)
    path = _resolve(manifest, man["image"])
    if not path.is_file():
        raise CliError(f"{path}: no such file")
    image = ProgramImage.load(path)
    out = _out_dir(args, man, manifest) / (path.stem + ".s")
    out.write_text(disassemble(image))
    print(f"disassembled {len(image.text) // 4} instructions -> {out}")
    return EXIT_OK


def cmd_kernel_gen(args) -> int:
    manifest = Path(args.config)
    man = _read_kv(manifest)
    _check_keys(man, {"kernel.variant", "kernel.n_tx", "kernel.n_rx",
                      "kernel.batch", "n_harts", "cluster", "out"}, manifest)
    variant, n_tx, n_rx, batch, n_harts = _kernel_spec(man, manifest)
    cfg = _load_cluster_config(man, manifest)
    try:
        image, layout = generate_kernel(variant, n_tx, n_rx, batch,
                                        n_harts=n_harts, cfg=cfg)
        source = emit_kernel_source(variant, n_tx, n_rx, batch,
                                    n_harts=n_harts, cfg=cfg)
    except ValueError as exc:
        raise CliError(f"{manifest}: {exc}", EXIT_USAGE) from None
    out = _out_dir(args, man, manifest)
    (out / "kernel.s").write_text(source)
    (out / "layout.txt").write_text(layout.to_text())
    print(f"{variant.value} {n_tx}x{n_rx} batch {batch} on {n_harts} "
          f"hart(s): {len(image.text) // 4} instructions, "
          f"{layout.required_bytes} arena bytes")
    print(f"wrote {out / 'kernel.s'} and {out / 'layout.txt'}")
    return EXIT_OK


def _run_program(args, man: dict[str, str], manifest: Path):
    src = _resolve(manifest, man["program"])
    if not src.is_file():
        raise CliError(f"{src}: no such file")
    if src.suffix == ".img":
        image = ProgramImage.load(src)
    else:
        image = assemble(src.read_text())
    cfg = _load_cluster_config(man, manifest)
    table = _load_latency_table(man, manifest)
    n_harts = _int_key(man, "n_harts", 1, manifest)
    max_steps = _int_key(man, "max_steps", 1_000_000_000, manifest)
    quantum = max_steps if args.mode == "fast" else 100
    cluster = Cluster(cfg, image, table, n_harts=n_harts)
    t0 = time.perf_counter()
    report = cluster.run(quantum, max_steps)
    wall = time.perf_counter() - t0
    return report, wall


def cmd_run(args) -> int:
    manifest = Path(args.config)
    man = _read_kv(manifest)
    _check_keys(man, {"program", "kernel.variant", "kernel.n_tx",
                      "kernel.n_rx", "kernel.batch", "n_harts", "cluster",
                      "latency", "max_steps", "seed", "out"}, manifest)
    seed = args.seed if args.seed is not None else _int_key(
        man, "seed", 0, manifest)
    if "program" in man:
        report, wall = _run_program(args, man, manifest)
        rows = report.rows
        text = report.to_text()
    elif "kernel.variant" in man:
        variant, n_tx, n_rx, batch, n_harts = _kernel_spec(man, manifest)
        cfg = _load_cluster_config(man, manifest)
        table = _load_latency_table(man, manifest)
        quantum = 1_000_000_000 if args.mode == "fast" else 100
        try:
            rep = cycle_report(variant, n_tx, n_rx, batch, n_harts=n_harts,
                               cfg=cfg, table=table, seed=seed,
                               quantum=quantum)
        except ValueError as exc:
            raise CliError(f"{manifest}: {exc}", EXIT_USAGE) from None
        rows, wall = rep.rows, rep.wall_seconds
        text = ClusterRunReport(list(rows)).to_text()
    else:
        raise CliError(f"{manifest}: needs either a 'program' path or a "
                       f"kernel.* spec", EXIT_USAGE)
    total_cycles = max(r.cycles for r in rows)
    total_instructions = sum(r.instructions for r in rows)
    mips = total_instructions / wall / 1e6
    out = _out_dir(args, man, manifest)
    (out / "run_report.txt").write_text(text)
    (out / "run_meta.txt").write_text(
        f"wall_seconds {wall!r}\nemulated_mips {mips!r}\n")
    print(f"total cycles {total_cycles}")
    print(f"total instructions {total_instructions}")
    print(f"emulated MIPS {mips:.3f}")
    print(f"wrote {out / 'run_report.txt'}")
    return EXIT_OK


def _sweep_from_file(path: Path, seed: int, workers: int) -> SweepConfig:
    kv = _read_kv(path)
    allowed = {"variant", "engine", "modulation", "channel", "n_tx", "n_rx",
               "snr_db", "target_bit_errors", "max_trials", "n_sc",
               "snr_convention"}
    _check_keys(kv, allowed, path)
    for key in ("variant", "channel", "n_tx", "n_rx", "snr_db"):
        if key not in kv:
            raise CliError(f"{path}: missing key {key!r}", EXIT_USAGE)
    variant = _parse_variant(kv["variant"], path)
    try:
        scheme = ModulationScheme.qam(int(kv.get("modulation", "16")))
        snr = tuple(float(s) for s in kv["snr_db"].split())
        return SweepConfig(
            variant, scheme, kv["channel"],
            int(kv["n_tx"]), int(kv["n_rx"]), snr,
            target_bit_errors=_int_key(kv, "target_bit_errors", 100, path),
            max_trials=_int_key(kv, "max_trials", 1000, path),
            n_sc=_int_key(kv, "n_sc", 1638, path),
            engine=kv.get("engine", "host_functional"),
            master_seed=seed, workers=workers,
            snr_convention=kv.get("snr_convention", "es_n0"))
    except ValueError as exc:
        raise CliError(f"{path}: {exc}", EXIT_USAGE) from None


def cmd_ber(args) -> int:
    manifest = Path(args.config)
    man = _read_kv(manifest)
    _check_keys(man, {"sweep", "seed", "workers", "out"}, manifest)
    if "sweep" not in man:
        raise CliError(f"{manifest}: missing key 'sweep'", EXIT_USAGE)
    seed = args.seed if args.seed is not None else _int_key(
        man, "seed", 0, manifest)
    workers = args.workers if args.workers is not None else _int_key(
        man, "workers", 1, manifest)
    cfg = _sweep_from_file(_resolve(manifest, man["sweep"]), seed, workers)
    points = ber_sweep(cfg)
    out = _out_dir(args, man, manifest)
    persist_results(points, out / "ber.csv")
    print(f"{'snr_db':>8} {'ber':>12} {'bit_errors':>10} {'bits_total':>12} "
          f"{'trials':>6} {'erasures':>8}")
    for p in points:
        flag = "  low-confidence" if p.low_confidence else ""
        print(f"{p.snr_db:8.2f} {p.ber:12.5e} {p.bit_errors:10d} "
              f"{p.bits_total:12d} {p.trials:6d} {p.erasure_problems:8d}"
              f"{flag}")
    print(f"wrote {out / 'ber.csv'}")
    weak = sum(p.low_confidence for p in points)
    if weak:
        print(f"warning: {weak} point(s) stopped at max_trials below the "
              f"target error count", file=sys.stderr)
        if args.strict:
            return EXIT_ERROR
    return EXIT_OK


def cmd_cycles(args) -> int:
    manifest = Path(args.config)
    man = _read_kv(manifest)
    _check_keys(man, {"kernel.variant", "kernel.n_tx", "kernel.n_rx",
                      "kernel.batch", "n_harts", "cluster", "latency",
                      "seed", "out"}, manifest)
    variant, n_tx, n_rx, batch, n_harts = _kernel_spec(man, manifest)
    cfg = _load_cluster_config(man, manifest)
    table = _load_latency_table(man, manifest)
    seed = args.seed if args.seed is not None else _int_key(
        man, "seed", 0, manifest)
    quantum = 1_000_000_000 if args.mode == "fast" else 100
    try:
        report = cycle_report(variant, n_tx, n_rx, batch, n_harts=n_harts,
                              cfg=cfg, table=table, seed=seed,
                              quantum=quantum)
    except ValueError as exc:
        raise CliError(f"{manifest}: {exc}", EXIT_USAGE) from None
    # the deterministic table; wall time and MIPS go to the sidecar
    lines = [ln for ln in report.to_text().splitlines()
             if not ln.startswith(("cycle report", "wall_seconds",
                                   "emulated_mips"))]
    text = "\n".join(lines) + "\n"
    out = _out_dir(args, man, manifest)
    (out / "cycles.txt").write_text(text)
    (out / "cycles_meta.txt").write_text(report.to_text())
    print(text, end="")
    print(f"emulated MIPS {report.mips:.3f}")
    print(f"wrote {out / 'cycles.txt'}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _add_command(sub, name: str, func, help_text: str, *, seed=False,
                 workers=False, strict=False, mode=False):
    p = sub.add_parser(name, help=help_text, description=help_text)
    p.add_argument("--config", metavar="PATH", required=True,
                   help="manifest file for this command")
    p.add_argument("--out", metavar="DIR", default=None,
                   help="output directory (overrides the manifest)")
    if seed:
        p.add_argument("--seed", metavar="N", type=int, default=None,
                       help="master seed (overrides the manifest)")
    if workers:
        p.add_argument("--workers", metavar="N", type=int, default=None,
                       help="worker process count (overrides the manifest)")
    if strict:
        p.add_argument("--strict", action="store_true",
                       help="exit nonzero when any point is low-confidence")
    if mode:
        p.add_argument("--mode", choices=("deterministic", "fast"),
                       default="deterministic",
                       help="scheduler: round-robin quanta or "
                            "run-to-next-event")
    p.set_defaults(func=func)
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rvsdr",
        description="Many-core RV32IM cluster emulator with low-precision "
                    "FP SIMD, MMSE detection kernels, and Monte-Carlo BER "
                    "analysis.")
    sub = parser.add_subparsers(dest="command", required=True,
                                metavar="command")
    _add_command(sub, "assemble", cmd_assemble,
                 "assemble a source file to a program image")
    _add_command(sub, "disassemble", cmd_disassemble,
                 "disassemble a program image back to source")
    _add_command(sub, "run", cmd_run,
                 "run a program or kernel on the cluster and report timing",
                 seed=True, mode=True)
    _add_command(sub, "kernel-gen", cmd_kernel_gen,
                 "generate a detection kernel and its memory layout")
    _add_command(sub, "ber", cmd_ber,
                 "run a BER sweep from a sweep config and write CSV",
                 seed=True, workers=True, strict=True)
    _add_command(sub, "cycles", cmd_cycles,
                 "run one kernel and write per-hart cycle reports",
                 seed=True, mode=True)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"rvsdr: {exc}", file=sys.stderr)
        return exc.exit_code
    except AsmError as exc:
        print(f"rvsdr: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except ClusterTrap as exc:
        print(f"rvsdr: trap: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except DeadlockError as exc:
        print(f"rvsdr: deadlock: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except StepBudgetError as exc:
        print(f"rvsdr: step budget exhausted: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except OSError as exc:
        print(f"rvsdr: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
