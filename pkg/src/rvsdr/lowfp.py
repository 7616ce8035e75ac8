"""Bit-exact low-precision float formats and packed SIMD arithmetic.

Three storage formats, all IEEE-style (sign, biased exponent, mantissa with
a hidden bit, subnormals, signed zero and infinity, NaN at exponent
all-ones):

    FP32  1 / 8 / 23   bias 127   binary32
    FP16  1 / 5 / 10   bias 15    binary16
    FP8   1 / 5 / 2    bias 15    binary16 with the mantissa cut to 2 bits

FP8 shares the FP16 exponent system, so every FP8 value is exactly
representable in FP16 and the 256 FP8 codes embed into FP16 reversibly.

Rounding is round-to-nearest-even everywhere. Subnormals are never flushed.
Any operation whose result is NaN returns the canonical quiet NaN of the
target format: exponent all-ones, mantissa MSB set, remaining bits zero,
sign zero. `fp_cast` is the one exception; it transports NaN sign and
payload so the FP8/FP16 embedding stays a bijection on all 256 codes.

Scalar operations take and return encodings (plain ints), not floats.
They compute through float64 and round once at the end, which is exact for
+, -, *, /, sqrt: every value of these formats converts to float64 without
error, float64 arithmetic is correctly rounded at 53 bits of precision, and
narrowing a 53-bit correctly rounded result to p <= 24 bits gives the same
answer as rounding the exact result directly (innocuous double rounding,
valid whenever the wide precision has at least 2p + 2 bits). fp_fma is the
exception: a*b + c can need more than 53 bits before its first rounding, so
it is summed exactly in integer arithmetic. The complex MAC's three-term
sums get the same integer treatment.

The vectorized helpers at the bottom mirror the scalar rounding bit for bit
over numpy arrays; the host-side functional models are built on them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "FP32",
    "FP16",
    "FP8",
    "FpFormat",
    "MaskError",
    "decode_fp",
    "encode_fp",
    "fp_add",
    "fp_sub",
    "fp_mul",
    "fp_div",
    "fp_sqrt",
    "fp_fma",
    "fp_cast",
    "widening_dotprod16",
    "widening_dotprod8",
    "complex_dotprod16",
    "shuffle16",
    "shuffle8",
    "r16",
    "r32",
    "r8",
    "f16_bits",
    "bits_f16",
    "f8_bits",
    "bits_f8",
    "round3_f16",
]


@dataclass(frozen=True)
class FpFormat:
    """Storage layout of an IEEE-style binary float format."""

    name: str
    exp_bits: int
    mant_bits: int

    @property
    def width(self) -> int:
        return 1 + self.exp_bits + self.mant_bits

    @property
    def bias(self) -> int:
        return (1 << (self.exp_bits - 1)) - 1

    @property
    def emax(self) -> int:
        """Unbiased exponent of the largest finite binade."""
        return self.bias

    @property
    def emin(self) -> int:
        """Unbiased exponent of the smallest normal binade."""
        return 1 - self.bias

    @property
    def sign_mask(self) -> int:
        return 1 << (self.width - 1)

    @property
    def exp_mask(self) -> int:
        return ((1 << self.exp_bits) - 1) << self.mant_bits

    @property
    def mant_mask(self) -> int:
        return (1 << self.mant_bits) - 1

    @property
    def inf_bits(self) -> int:
        return self.exp_mask

    @property
    def qnan_bits(self) -> int:
        return self.exp_mask | (1 << (self.mant_bits - 1))

    @property
    def max_finite_bits(self) -> int:
        return self.exp_mask - 1


FP32 = FpFormat("fp32", 8, 23)
FP16 = FpFormat("fp16", 5, 10)
FP8 = FpFormat("fp8", 5, 2)


class MaskError(ValueError):
    """A shuffle mask nibble uses a reserved bit."""


def decode_fp(bits: int, fmt: FpFormat) -> float:
    """Exact float64 value of an encoding (float NaN for any NaN code)."""
    if not 0 <= bits < (1 << fmt.width):
        raise ValueError(f"{bits:#x} out of range for {fmt.name}")
    sign = -1.0 if bits & fmt.sign_mask else 1.0
    e = (bits & fmt.exp_mask) >> fmt.mant_bits
    m = bits & fmt.mant_mask
    if e == (1 << fmt.exp_bits) - 1:
        return math.nan if m else sign * math.inf
    if e == 0:
        return sign * math.ldexp(m, fmt.emin - fmt.mant_bits)
    return sign * math.ldexp((1 << fmt.mant_bits) + m, e - fmt.bias - fmt.mant_bits)


def _round_dyadic(mant: int, exp2: int, fmt: FpFormat) -> int:
    """Round the positive value mant * 2**exp2 to fmt (RNE), magnitude bits only."""
    e = exp2 + mant.bit_length() - 1
    grid = max(e, fmt.emin) - fmt.mant_bits
    shift = grid - exp2
    if shift <= 0:
        m = mant << -shift
    else:
        rest = mant & ((1 << shift) - 1)
        m = mant >> shift
        half = 1 << (shift - 1)
        if rest > half or (rest == half and m & 1):
            m += 1
    if e >= fmt.emin and m >> (fmt.mant_bits + 1):
        # carry into the next binade; mantissa is exactly 2**(mant_bits+1)
        m >>= 1
        e += 1
    if m >> fmt.mant_bits == 0:
        return m  # subnormal (or zero after rounding down)
    if e < fmt.emin:
        e = fmt.emin  # subnormal rounded up to the smallest normal
    if e > fmt.emax:
        return fmt.inf_bits
    return ((e - fmt.emin + 1) << fmt.mant_bits) | (m & fmt.mant_mask)


def encode_fp(value: float, fmt: FpFormat) -> int:
    """Encode a real value with one round-to-nearest-even; NaN encodes canonical."""
    value = float(value)
    if math.isnan(value):
        return fmt.qnan_bits
    sign = fmt.sign_mask if math.copysign(1.0, value) < 0.0 else 0
    if math.isinf(value):
        return sign | fmt.inf_bits
    if value == 0.0:
        return sign
    num, den = abs(value).as_integer_ratio()
    return sign | _round_dyadic(num, 1 - den.bit_length(), fmt)


def _decompose(bits: int, fmt: FpFormat) -> tuple[bool, int, int]:
    """Finite encoding -> (negative, mant, exp) with |value| = mant * 2**exp."""
    neg = bool(bits & fmt.sign_mask)
    e = (bits & fmt.exp_mask) >> fmt.mant_bits
    m = bits & fmt.mant_mask
    if e == 0:
        return neg, m, fmt.emin - fmt.mant_bits
    return neg, m | (1 << fmt.mant_bits), e - fmt.bias - fmt.mant_bits


def fp_cast(bits: int, src: FpFormat, dst: FpFormat) -> int:
    """Convert between formats with one rounding; NaN keeps sign and payload."""
    v = decode_fp(bits, src)
    if math.isnan(v):
        sign = dst.sign_mask if bits & src.sign_mask else 0
        payload = bits & src.mant_mask
        if dst.mant_bits >= src.mant_bits:
            p = payload << (dst.mant_bits - src.mant_bits)
        else:
            p = payload >> (src.mant_bits - dst.mant_bits)
        if p == 0:
            p = 1 << (dst.mant_bits - 1)  # quiet bit, payload drained
        return sign | dst.inf_bits | p
    return encode_fp(v, dst)


def fp_add(a: int, b: int, fmt: FpFormat) -> int:
    return encode_fp(decode_fp(a, fmt) + decode_fp(b, fmt), fmt)


def fp_sub(a: int, b: int, fmt: FpFormat) -> int:
    return encode_fp(decode_fp(a, fmt) - decode_fp(b, fmt), fmt)


def fp_mul(a: int, b: int, fmt: FpFormat) -> int:
    # products of two <= 24 bit mantissas are exact in float64
    return encode_fp(decode_fp(a, fmt) * decode_fp(b, fmt), fmt)


def fp_div(a: int, b: int, fmt: FpFormat) -> int:
    x = decode_fp(a, fmt)
    y = decode_fp(b, fmt)
    if y == 0.0:
        if math.isnan(x) or x == 0.0:
            return fmt.qnan_bits
        return ((a ^ b) & fmt.sign_mask) | fmt.inf_bits
    return encode_fp(x / y, fmt)


def fp_sqrt(a: int, fmt: FpFormat) -> int:
    x = decode_fp(a, fmt)
    if math.isnan(x) or x < 0.0:
        return fmt.qnan_bits
    if x == 0.0 or math.isinf(x):
        return a  # +-0 and +inf pass through
    return encode_fp(math.sqrt(x), fmt)


def fp_fma(a: int, b: int, c: int, fmt: FpFormat) -> int:
    """a*b + c with a single rounding of the exact result."""
    x = decode_fp(a, fmt)
    y = decode_fp(b, fmt)
    z = decode_fp(c, fmt)
    if math.isnan(x) or math.isnan(y) or math.isnan(z):
        return fmt.qnan_bits
    if math.isinf(x) or math.isinf(y):
        if x == 0.0 or y == 0.0:
            return fmt.qnan_bits  # 0 * inf
        pneg = (a ^ b) & fmt.sign_mask
        if math.isinf(z) and bool(c & fmt.sign_mask) != bool(pneg):
            return fmt.qnan_bits  # inf - inf
        return pneg | fmt.inf_bits
    if math.isinf(z):
        return (c & fmt.sign_mask) | fmt.inf_bits
    sa, ma, ea = _decompose(a, fmt)
    sb, mb, eb = _decompose(b, fmt)
    sc, mc, ec = _decompose(c, fmt)
    e0 = min(ea + eb, ec)
    s = (ma * mb) << (ea + eb - e0)
    if sa != sb:
        s = -s
    s += (-mc if sc else mc) << (ec - e0)
    if s == 0:
        # exact zero: negative only when product and addend are both -0
        both_zero = (ma == 0 or mb == 0) and mc == 0
        if both_zero and sa != sb and sc:
            return fmt.sign_mask
        return 0
    sign = fmt.sign_mask if s < 0 else 0
    return sign | _round_dyadic(abs(s), e0, fmt)


# ---------------------------------------------------------------------------
# packed (register-word) operations
# ---------------------------------------------------------------------------


def _lane16(word: int, lane: int) -> int:
    return (word >> (16 * lane)) & 0xFFFF


def _lane8(word: int, lane: int) -> int:
    return (word >> (8 * lane)) & 0xFF


def widening_dotprod16(acc: int, a: int, b: int) -> int:
    """FP16 pairwise products accumulated into an FP32 word.

    acc += a.h0 * b.h0, then acc += a.h1 * b.h1, one rounding per step.
    Each fp16 product is exact in fp32 (22 significant bits), so every step
    is a correctly rounded fp32 addition.
    """
    for lane in (0, 1):
        p = decode_fp(_lane16(a, lane), FP16) * decode_fp(_lane16(b, lane), FP16)
        acc = encode_fp(decode_fp(acc, FP32) + p, FP32)
    return acc


def widening_dotprod8(acc: int, a: int, b: int) -> int:
    """FP8 pairwise products accumulated into two FP16 lanes.

    Byte lanes 0,1 accumulate into halfword 0 and byte lanes 2,3 into
    halfword 1, in lane order, one rounding per step. fp8 products span at
    most 6 significant bits, exact in fp16 range.
    """
    out = 0
    for half in (0, 1):
        lane_acc = _lane16(acc, half)
        for k in (2 * half, 2 * half + 1):
            p = decode_fp(_lane8(a, k), FP8) * decode_fp(_lane8(b, k), FP8)
            lane_acc = encode_fp(decode_fp(lane_acc, FP16) + p, FP16)
        out |= lane_acc << (16 * half)
    return out


def _scaled24(bits: int) -> int:
    """Finite fp16 encoding as an exact integer multiple of 2**-24."""
    neg, m, e = _decompose(bits, FP16)
    v = m << (e + 24)  # e >= -24 for every finite fp16
    return -v if neg else v


def _cmac_lane(c: int, x1: int, y1: int, x2: int, y2: int, sub: bool) -> int:
    """RN to fp16 of the exact sum c + x1*y1 +- x2*y2 (fp16 encodings)."""
    t0 = decode_fp(c, FP16)
    t1 = decode_fp(x1, FP16) * decode_fp(y1, FP16)
    t2 = decode_fp(x2, FP16) * decode_fp(y2, FP16)
    if sub:
        t2 = -t2
    if not (math.isfinite(t0) and math.isfinite(t1) and math.isfinite(t2)):
        terms = (t0, t1, t2)
        if any(math.isnan(t) for t in terms):
            return FP16.qnan_bits
        pos = any(t == math.inf for t in terms)
        neg = any(t == -math.inf for t in terms)
        if pos and neg:
            return FP16.qnan_bits
        return FP16.inf_bits | (FP16.sign_mask if neg else 0)
    s = (_scaled24(c) << 24) + _scaled24(x1) * _scaled24(y1)
    p2 = _scaled24(x2) * _scaled24(y2)
    s = s - p2 if sub else s + p2
    if s == 0:
        # all three addends -0 is the only way to a negative zero
        allneg = all(math.copysign(1.0, t) < 0.0 for t in (t0, t1, t2))
        return FP16.sign_mask if allneg else 0
    sign = FP16.sign_mask if s < 0 else 0
    return sign | _round_dyadic(abs(s), -48, FP16)


def complex_dotprod16(acc: int, a: int, b: int) -> int:
    """Packed complex fp16 MAC: acc += a * b, re in lane 0, im in lane 1.

    Each output lane is one rounding of the exact three-term sum:
        re' = RN(acc.re + a.re*b.re - a.im*b.im)
        im' = RN(acc.im + a.re*b.im + a.im*b.re)
    """
    ar, ai = _lane16(a, 0), _lane16(a, 1)
    br, bi = _lane16(b, 0), _lane16(b, 1)
    re = _cmac_lane(_lane16(acc, 0), ar, br, ai, bi, sub=True)
    im = _cmac_lane(_lane16(acc, 1), ar, bi, ai, br, sub=False)
    return (im << 16) | re


def shuffle16(a: int, b: int, mask: int) -> int:
    """Build two fp16 lanes from the lanes of a (sel 0,1) and b (sel 2,3).

    One mask nibble per output lane (lane k = mask bits [4k+3:4k]):
    bits [1:0] select the source lane, bit [2] flips the sign bit of the
    selected lane, bit [3] is reserved and must be zero. Mask bits above
    the used nibbles are ignored.
    """
    out = 0
    for lane in (0, 1):
        nib = (mask >> (4 * lane)) & 0xF
        if nib & 0x8:
            raise MaskError(f"halfword shuffle lane {lane}: reserved mask bit set")
        sel = nib & 0x3
        h = _lane16(a if sel < 2 else b, sel & 1)
        if nib & 0x4:
            h ^= 0x8000
        out |= h << (16 * lane)
    return out


def shuffle8(a: int, b: int, mask: int) -> int:
    """Build four fp8 lanes from the lanes of a (sel 0-3) and b (sel 4-7).

    One mask nibble per output lane: bits [2:0] select the source lane,
    bit [3] flips the sign bit. Every nibble value is valid.
    """
    out = 0
    for lane in range(4):
        nib = (mask >> (4 * lane)) & 0xF
        sel = nib & 0x7
        v = _lane8(a if sel < 4 else b, sel & 3)
        if nib & 0x8:
            v ^= 0x80
        out |= v << (8 * lane)
    return out


# ---------------------------------------------------------------------------
# vectorized helpers (float64 arrays carrying exactly-representable values)
# ---------------------------------------------------------------------------

_F8_DECODE = np.array([decode_fp(i, FP8) for i in range(256)], dtype=np.float64)


def r16(x: np.ndarray) -> np.ndarray:
    """Round float64 values to the fp16 grid (result stays float64)."""
    with np.errstate(over="ignore"):
        return np.asarray(x, dtype=np.float64).astype(np.float16).astype(np.float64)


def r32(x: np.ndarray) -> np.ndarray:
    """Round float64 values to the fp32 grid (result stays float64)."""
    with np.errstate(over="ignore"):
        return np.asarray(x, dtype=np.float64).astype(np.float32).astype(np.float64)


def f16_bits(x: np.ndarray) -> np.ndarray:
    """fp16 encodings (uint16) of float64 values, NaN canonicalized."""
    with np.errstate(over="ignore"):
        u = np.asarray(x, dtype=np.float64).astype(np.float16).view(np.uint16)
    return np.where(np.isnan(np.asarray(x)), np.uint16(FP16.qnan_bits), u)


def bits_f16(u: np.ndarray) -> np.ndarray:
    """Exact float64 values of fp16 encodings."""
    return np.asarray(u, dtype=np.uint16).view(np.float16).astype(np.float64)


def f8_bits(x: np.ndarray) -> np.ndarray:
    """fp8 encodings (uint8) of float64 values, one rounding, NaN canonical.

    Rounds straight from float64. Going through an fp16 cast first would
    double round: a float64 just below an fp8 tie can land exactly on the
    tie after fp16 rounding and then break toward the wrong neighbor.
    """
    x = np.asarray(x, dtype=np.float64)
    sign = np.where(np.signbit(x), 0x80, 0).astype(np.uint32)
    nan = np.isnan(x)
    over = np.zeros(x.shape, dtype=bool)
    a = np.abs(x)
    with np.errstate(invalid="ignore"):
        over = a >= 61440.0  # max normal 57344 plus half its ulp
    a = np.where(nan | over, 0.0, a)
    _, e2 = np.frexp(a)
    g = np.clip(e2 - 1, -14, 15) - 2  # quantum exponent; -16 in the subnormal range
    n = np.rint(np.ldexp(a, -g)).astype(np.int64)  # RNE, scaling by 2**-g is exact
    carry = n == 8
    g = g + carry
    n = np.where(carry, 4, n)
    bits = np.where(n < 4, n, ((g + 17) << 2) + (n - 4)).astype(np.uint32)
    bits = np.where(over, np.uint32(FP8.inf_bits), bits)
    out = sign | bits
    return np.where(nan, np.uint32(FP8.qnan_bits), out).astype(np.uint8)


def bits_f8(u: np.ndarray) -> np.ndarray:
    """Exact float64 values of fp8 encodings."""
    return _F8_DECODE[np.asarray(u, dtype=np.uint8)]


def r8(x: np.ndarray) -> np.ndarray:
    """Round float64 values to the fp8 grid (result stays float64)."""
    return bits_f8(f8_bits(x))


_SCALE48 = float(1 << 48)
_to_int = np.frompyfunc(int, 1, 1)


def _round_s48(s: int) -> int:
    if s == 0:
        return 0
    sign = FP16.sign_mask if s < 0 else 0
    return sign | _round_dyadic(abs(s), -48, FP16)


_round_s48_u = np.frompyfunc(_round_s48, 1, 1)


def round3_f16(t0: np.ndarray, t1: np.ndarray, t2: np.ndarray) -> np.ndarray:
    """Elementwise fp16 encodings of RN(t0 + t1 + t2), sums taken exactly.

    t0 must be fp16-valued and t1, t2 each an exact product of two fp16
    values (all float64). Lanewise identical to complex_dotprod16. The
    exact sums run in big-integer arithmetic (about 2**81 worst case), so
    this path costs Python-level time per element; every other model step
    fits float64 exactly.
    """
    t0 = np.asarray(t0, dtype=np.float64)
    t1 = np.asarray(t1, dtype=np.float64)
    t2 = np.asarray(t2, dtype=np.float64)
    finite = np.isfinite(t0) & np.isfinite(t1) & np.isfinite(t2)
    z = np.where(finite, t0, 0.0), np.where(finite, t1, 0.0), np.where(finite, t2, 0.0)
    # scaling by 2**48 makes every term an exact integer-valued float64
    s = _to_int(z[0] * _SCALE48) + _to_int(z[1] * _SCALE48) + _to_int(z[2] * _SCALE48)
    bits = _round_s48_u(s).astype(np.uint16)
    allneg = np.signbit(z[0]) & np.signbit(z[1]) & np.signbit(z[2])
    bits = np.where((s == 0).astype(bool) & allneg, np.uint16(FP16.sign_mask), bits)
    if not finite.all():
        nan = np.isnan(t0) | np.isnan(t1) | np.isnan(t2)
        pos = (t0 == np.inf) | (t1 == np.inf) | (t2 == np.inf)
        neg = (t0 == -np.inf) | (t1 == -np.inf) | (t2 == -np.inf)
        bits = np.where(pos & ~neg & ~nan, np.uint16(FP16.inf_bits), bits)
        bits = np.where(neg & ~pos & ~nan, np.uint16(FP16.sign_mask | FP16.inf_bits), bits)
        bits = np.where(nan | (pos & neg), np.uint16(FP16.qnan_bits), bits)
    return bits.astype(np.uint16)
