"""Many-core RV32IM cluster emulator with low-precision FP SIMD extensions,
MMSE detection kernels, and Monte-Carlo link-level analysis."""

from .asm import AsmError, ProgramImage, assemble, disassemble
from .cluster import (
    Cluster,
    ClusterConfig,
    ClusterRunReport,
    ClusterTrap,
    run_cluster,
)
from .core import LatencyTable
from .kernels import (
    CapacityError,
    LayoutDescriptor,
    emit_kernel_source,
    extract_results,
    generate_kernel,
    load_problems,
)
from .mmse import (
    Variant,
    functional_mmse,
    functional_mmse_batch,
    golden_mmse,
    quantize_batch,
)
from .montecarlo import (
    BerPoint,
    CycleReport,
    SweepConfig,
    ber_sweep,
    cycle_report,
    load_results,
    persist_results,
    run_iteration,
)
from .phy import (
    ChannelModel,
    ModulationScheme,
    apply_channel,
    philox_rng,
    qam_demodulate_hard,
    qam_modulate,
)

__version__ = "0.1.0"

__all__ = [
    "AsmError",
    "BerPoint",
    "CapacityError",
    "ChannelModel",
    "Cluster",
    "ClusterConfig",
    "ClusterRunReport",
    "ClusterTrap",
    "CycleReport",
    "LatencyTable",
    "LayoutDescriptor",
    "ModulationScheme",
    "ProgramImage",
    "SweepConfig",
    "Variant",
    "apply_channel",
    "assemble",
    "ber_sweep",
    "cycle_report",
    "disassemble",
    "emit_kernel_source",
    "extract_results",
    "functional_mmse",
    "functional_mmse_batch",
    "generate_kernel",
    "golden_mmse",
    "load_problems",
    "load_results",
    "persist_results",
    "philox_rng",
    "qam_demodulate_hard",
    "qam_modulate",
    "quantize_batch",
    "run_cluster",
    "run_iteration",
]
