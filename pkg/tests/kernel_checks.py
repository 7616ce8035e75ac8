"""Cluster-level drivers shared by the kernel tests and the acceptance
suite: generate a kernel, run it on random problems, and compare every
result bit against the functional model."""

from __future__ import annotations

import numpy as np

from rvsdr.cluster import Cluster, ClusterConfig
from rvsdr.kernels import extract_results, generate_kernel, load_problems
from rvsdr.lowfp import f16_bits
from rvsdr.mmse import Variant, functional_mmse_batch, quantize_batch


def random_quantized(variant: Variant, n_tx: int, n_rx: int,
                     n_problems: int, seed: int, sigma2=0.1):
    """Random circularly symmetric problems quantized for the variant."""
    rng = np.random.default_rng(seed)
    h = (rng.standard_normal((n_problems, n_rx, n_tx))
         + 1j * rng.standard_normal((n_problems, n_rx, n_tx))) / np.sqrt(2)
    y = (rng.standard_normal((n_problems, n_rx))
         + 1j * rng.standard_normal((n_problems, n_rx)))
    s2 = np.broadcast_to(np.asarray(sigma2, dtype=np.float64),
                         (n_problems,)).copy()
    return quantize_batch(h, y, s2, variant)


def emulate_batch(variant: Variant, n_tx: int, n_rx: int, batch: int,
                  n_harts: int, qb, *, table=None, quantum: int = 100,
                  cfg: ClusterConfig | None = None):
    """Run the generated kernel; returns (results, run report, layout)."""
    cfg = cfg or ClusterConfig()
    image, layout = generate_kernel(variant, n_tx, n_rx, batch,
                                    n_harts=n_harts, cfg=cfg)
    cluster = Cluster(cfg, image, table, n_harts=n_harts)
    load_problems(cluster, layout, qb)
    report = cluster.run(quantum)
    return extract_results(cluster, layout), report, layout


def equivalence_mismatches(variant: Variant, n_tx: int, n_rx: int,
                           batch: int, n_harts: int, seed: int, *,
                           sigma2=0.1, table=None, quantum: int = 100):
    """Half-lane mismatches between the emulated kernel and the model.

    Erased problems are compared too: both routes must leave the same
    canonical quiet-NaN bits. Returns (bad_lanes, total_lanes, erased,
    run report).
    """
    qb = random_quantized(variant, n_tx, n_rx, batch * n_harts, seed,
                          sigma2)
    got, report, _ = emulate_batch(variant, n_tx, n_rx, batch, n_harts,
                                   qb, table=table, quantum=quantum)
    ref = functional_mmse_batch(qb)
    bad = int((got.re_bits != f16_bits(ref.x_re)).sum()
              + (got.im_bits != f16_bits(ref.x_im)).sum())
    return bad, 2 * got.re_bits.size, int(ref.erased.sum()), report
