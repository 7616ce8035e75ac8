"""Transmission-side physical layer: seeded bit streams, Gray-coded QAM,
AWGN and flat Rayleigh MIMO channels, and hard-decision demapping.

All randomness is counter-based (numpy Philox keyed through
SeedSequence), so streams are platform-stable and fully determined by
the explicit seeds; there is no global state anywhere in this module.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "ChannelModel",
    "ModulationScheme",
    "apply_channel",
    "constellation_csv",
    "philox_rng",
    "qam_demodulate_hard",
    "qam_modulate",
    "random_bits",
]


def philox_rng(seed: int, *path: int) -> np.random.Generator:
    """Philox generator keyed by a master seed and an index path."""
    ss = np.random.SeedSequence(seed, spawn_key=path)
    return np.random.Generator(np.random.Philox(ss))


def random_bits(seed: int, count: int) -> np.ndarray:
    """Deterministic 0/1 vector; disjoint seeds give disjoint streams."""
    if count < 0:
        raise ValueError("count must be non-negative")
    return philox_rng(seed).integers(0, 2, size=count, dtype=np.uint8)


# ---------------------------------------------------------------------------
# modulation
# ---------------------------------------------------------------------------


def _gray_levels(axis_bits: int) -> np.ndarray:
    """Level per Gray code, walking codes i ^ (i >> 1) left to right.

    Two bits: 00,01,11,10 -> -3,-1,+1,+3. Three bits extend the same
    reflected walk over -7..+7.
    """
    n = 1 << axis_bits
    levels = np.empty(n)
    for i in range(n):
        levels[i ^ (i >> 1)] = 2 * i - (n - 1)
    return levels


@dataclass(frozen=True)
class ModulationScheme:
    """Square Gray-coded QAM with unit mean symbol energy.

    The first half of a label's bits selects the I level, the second
    half the Q level, each through the reflected Gray code above.
    points[label] is the complex constellation point for that label.
    """

    order: int
    bits_per_symbol: int
    points: np.ndarray
    scale: float

    def __post_init__(self):
        if self.order != 1 << self.bits_per_symbol:
            raise ValueError("order must be 2**bits_per_symbol")
        if self.points.shape != (self.order,):
            raise ValueError("constellation size must equal the order")
        energy = float(np.mean(np.abs(self.points) ** 2))
        if abs(energy - 1.0) > 1e-12:
            raise ValueError(f"mean symbol energy {energy} is not 1")

    @classmethod
    def qam(cls, order: int) -> "ModulationScheme":
        if order not in (16, 64):
            raise ValueError("supported QAM orders are 16 and 64")
        bits = order.bit_length() - 1
        half = bits // 2
        axis = _gray_levels(half)
        scale = 1.0 / math.sqrt(2.0 * (order - 1) / 3.0)
        labels = np.arange(order)
        points = (axis[labels >> half]
                  + 1j * axis[labels & ((1 << half) - 1)]) * scale
        return cls(order, bits, points, scale)


def qam_modulate(bits: np.ndarray, scheme: ModulationScheme) -> np.ndarray:
    """Map a bit vector to constellation points, one label per symbol."""
    bits = np.asarray(bits)
    k = scheme.bits_per_symbol
    if bits.ndim != 1 or bits.size % k:
        raise ValueError(f"bit count {bits.size} is not a multiple of {k}")
    if bits.size == 0:
        return np.empty(0, dtype=np.complex128)
    weights = 1 << np.arange(k - 1, -1, -1)
    labels = bits.reshape(-1, k).astype(np.int64) @ weights
    return scheme.points[labels]


def qam_demodulate_hard(x_hat: np.ndarray,
                        scheme: ModulationScheme) -> tuple[np.ndarray,
                                                           np.ndarray]:
    """Nearest-point hard decisions; returns (bits, erased mask).

    Exact distance ties resolve to the smallest label value (argmin
    takes the first minimum and points are label-ordered). A symbol
    with a non-finite component gets the all-zero label and its entry
    in the erased mask set.
    """
    x = np.asarray(x_hat, dtype=np.complex128).ravel()
    finite = np.isfinite(x)
    with np.errstate(invalid="ignore"):
        dr = x.real[:, None] - scheme.points.real[None, :]
        di = x.imag[:, None] - scheme.points.imag[None, :]
        labels = np.argmin(dr * dr + di * di, axis=1)
    labels[~finite] = 0
    k = scheme.bits_per_symbol
    shifts = np.arange(k - 1, -1, -1)
    bits = ((labels[:, None] >> shifts[None, :]) & 1).astype(np.uint8)
    return bits.ravel(), ~finite


def constellation_csv(scheme: ModulationScheme) -> str:
    """Audit dump, one 'label_bits,I,Q' row per point; repr round-trips."""
    lines = ["label_bits,I,Q"]
    k = scheme.bits_per_symbol
    for label in range(scheme.order):
        p = scheme.points[label]
        lines.append(f"{label:0{k}b},{float(p.real)!r},{float(p.imag)!r}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# channels
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ChannelModel:
    """Channel kind, antenna counts, and SNR bookkeeping.

    snr_db is Es/N0 per transmit symbol by default: with unit-energy
    symbols, sigma2 = 10**(-snr_db/10). The eb_n0 convention divides
    that by bits_per_symbol. +inf is the noiseless sentinel.
    """

    kind: str
    n_tx: int
    n_rx: int
    snr_db: float
    snr_convention: str = "es_n0"

    def __post_init__(self):
        if self.kind not in ("awgn_identity", "flat_rayleigh"):
            raise ValueError(f"unknown channel kind {self.kind!r}")
        if not (self.n_rx >= self.n_tx >= 1):
            raise ValueError("need n_rx >= n_tx >= 1")
        if self.kind == "awgn_identity" and self.n_rx != self.n_tx:
            raise ValueError("the identity channel is square")
        if math.isnan(self.snr_db) or self.snr_db == -math.inf:
            raise ValueError("snr_db must be finite or +inf")
        if self.snr_convention not in ("es_n0", "eb_n0"):
            raise ValueError(
                f"unknown SNR convention {self.snr_convention!r}")

    def sigma2(self, bits_per_symbol: int | None = None) -> float:
        if self.snr_db == math.inf:
            return 0.0
        s2 = 10.0 ** (-self.snr_db / 10.0)
        if self.snr_convention == "eb_n0":
            if bits_per_symbol is None:
                raise ValueError("the eb_n0 convention needs bits_per_symbol")
            s2 /= bits_per_symbol
        return s2


def apply_channel(x: np.ndarray, ch: ChannelModel, seed: int,
                  bits_per_symbol: int | None = None
                  ) -> tuple[np.ndarray, np.ndarray, float]:
    """One transmission: draw H, then noise, from a stream keyed by seed.

    Returns (h, y, sigma2) under perfect channel knowledge: h is the
    true channel and sigma2 the true per-antenna noise power. Rayleigh
    entries are unit-variance circular Gaussian (each component variance
    one half); noise components have variance sigma2 / 2.
    """
    x = np.asarray(x, dtype=np.complex128)
    if x.shape != (ch.n_tx,):
        raise ValueError(f"x must have shape ({ch.n_tx},)")
    rng = philox_rng(seed)
    if ch.kind == "flat_rayleigh":
        h = (rng.standard_normal((ch.n_rx, ch.n_tx))
             + 1j * rng.standard_normal((ch.n_rx, ch.n_tx))) / np.sqrt(2)
    else:
        h = np.eye(ch.n_tx, dtype=np.complex128)
    s2 = ch.sigma2(bits_per_symbol)
    noise = math.sqrt(s2 / 2) * (rng.standard_normal(ch.n_rx)
                                 + 1j * rng.standard_normal(ch.n_rx))
    return h, h @ x + noise, s2
