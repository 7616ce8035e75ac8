"""Exact rational reference models for the low-precision float operations.

Deliberately written against a different representation than the package
(fractions.Fraction and quotient/remainder grid rounding instead of float64
fast paths and bit shifting), so the two routes check each other. Finite
values are Fractions; specials are handled by explicit case tables.
"""

from __future__ import annotations

import math
from fractions import Fraction
from functools import lru_cache
from typing import NamedTuple


class OFmt(NamedTuple):
    exp_bits: int
    mant_bits: int

    @property
    def width(self):
        return 1 + self.exp_bits + self.mant_bits

    @property
    def bias(self):
        return 2 ** (self.exp_bits - 1) - 1

    @property
    def emin(self):
        return 1 - self.bias

    @property
    def emax(self):
        return self.bias

    @property
    def sign_bit(self):
        return 1 << (self.width - 1)

    @property
    def inf(self):
        return ((1 << self.exp_bits) - 1) << self.mant_bits

    @property
    def qnan(self):
        return self.inf | (1 << (self.mant_bits - 1))


O8 = OFmt(5, 2)
O16 = OFmt(5, 10)
O32 = OFmt(8, 23)


class OVal(NamedTuple):
    """Decoded value: kind in {'nan', 'inf', 'fin'}; fin carries a Fraction.

    neg tracks the sign bit separately so signed zero survives.
    """

    kind: str
    neg: bool
    frac: Fraction


@lru_cache(maxsize=None)
def o_decode(bits: int, fmt: OFmt) -> OVal:
    neg = bool(bits & fmt.sign_bit)
    e = (bits >> fmt.mant_bits) & ((1 << fmt.exp_bits) - 1)
    m = bits & ((1 << fmt.mant_bits) - 1)
    if e == (1 << fmt.exp_bits) - 1:
        if m:
            return OVal("nan", neg, Fraction(0))
        return OVal("inf", neg, Fraction(0))
    if e == 0:
        v = Fraction(m, 1) * Fraction(2) ** (fmt.emin - fmt.mant_bits)
    else:
        v = Fraction(m + (1 << fmt.mant_bits), 1) * Fraction(2) ** (e - fmt.bias - fmt.mant_bits)
    return OVal("fin", neg, -v if neg else v)


def o_round(x: Fraction, fmt: OFmt) -> int:
    """Round a nonzero rational magnitude to fmt, RNE; returns magnitude bits."""
    assert x > 0
    # leading exponent via bit lengths, corrected by direct comparison
    e = x.numerator.bit_length() - x.denominator.bit_length()
    if Fraction(2) ** e > x:
        e -= 1
    elif Fraction(2) ** (e + 1) <= x:
        e += 1
    grid = max(e, fmt.emin) - fmt.mant_bits
    q = x / Fraction(2) ** grid
    n = q.numerator // q.denominator
    rem = q - n
    if rem > Fraction(1, 2) or (rem == Fraction(1, 2) and n % 2 == 1):
        n += 1
    if n == 0:
        return 0
    # renormalize a carry out of the mantissa
    if n >= 1 << (fmt.mant_bits + 1):
        n //= 2
        grid += 1
    exp_of_value = grid + fmt.mant_bits
    if n < 1 << fmt.mant_bits:
        return n  # subnormal by construction
    if exp_of_value > fmt.emax:
        return fmt.inf
    biased = exp_of_value - fmt.emin + 1
    return (biased << fmt.mant_bits) | (n - (1 << fmt.mant_bits))


def o_encode(v: OVal, fmt: OFmt) -> int:
    sign = fmt.sign_bit if v.neg else 0
    if v.kind == "nan":
        return fmt.qnan
    if v.kind == "inf":
        return sign | fmt.inf
    if v.frac == 0:
        return sign
    return (fmt.sign_bit if v.frac < 0 else 0) | o_round(abs(v.frac), fmt)


def _sum_terms(terms: list[OVal], fmt: OFmt) -> int:
    """One rounding of the exact sum of decoded terms, extended-real rules."""
    if any(t.kind == "nan" for t in terms):
        return fmt.qnan
    pos = any(t.kind == "inf" and not t.neg for t in terms)
    neg = any(t.kind == "inf" and t.neg for t in terms)
    if pos and neg:
        return fmt.qnan
    if pos or neg:
        return (fmt.sign_bit if neg else 0) | fmt.inf
    s = sum(t.frac for t in terms)
    if s == 0:
        allneg = all(t.neg for t in terms)
        return fmt.sign_bit if allneg else 0
    return (fmt.sign_bit if s < 0 else 0) | o_round(abs(s), fmt)


def _neg(t: OVal) -> OVal:
    return OVal(t.kind, not t.neg, -t.frac)


def _prod(a: OVal, b: OVal) -> OVal:
    """Exact product as a term (inf*0 -> nan)."""
    neg = a.neg != b.neg
    if a.kind == "nan" or b.kind == "nan":
        return OVal("nan", False, Fraction(0))
    if a.kind == "inf" or b.kind == "inf":
        if (a.kind == "fin" and a.frac == 0) or (b.kind == "fin" and b.frac == 0):
            return OVal("nan", False, Fraction(0))
        return OVal("inf", neg, Fraction(0))
    return OVal("fin", neg, a.frac * b.frac)


def o_add(a: int, b: int, fmt: OFmt) -> int:
    return _sum_terms([o_decode(a, fmt), o_decode(b, fmt)], fmt)


def o_sub(a: int, b: int, fmt: OFmt) -> int:
    return _sum_terms([o_decode(a, fmt), _neg(o_decode(b, fmt))], fmt)


def o_mul(a: int, b: int, fmt: OFmt) -> int:
    p = _prod(o_decode(a, fmt), o_decode(b, fmt))
    if p.kind == "fin" and p.frac == 0:
        return (fmt.sign_bit if p.neg else 0) | 0
    return o_encode(p, fmt)


def o_div(a: int, b: int, fmt: OFmt) -> int:
    x = o_decode(a, fmt)
    y = o_decode(b, fmt)
    if x.kind == "nan" or y.kind == "nan":
        return fmt.qnan
    neg = x.neg != y.neg
    sign = fmt.sign_bit if neg else 0
    if x.kind == "inf":
        if y.kind == "inf":
            return fmt.qnan
        return sign | fmt.inf
    if y.kind == "inf":
        return sign
    if y.frac == 0:
        if x.frac == 0:
            return fmt.qnan
        return sign | fmt.inf
    if x.frac == 0:
        return sign
    return sign | o_round(abs(x.frac / y.frac), fmt)


def o_sqrt(a: int, fmt: OFmt) -> int:
    x = o_decode(a, fmt)
    if x.kind == "nan":
        return fmt.qnan
    if x.kind == "fin" and x.frac == 0:
        return a
    if x.neg:
        return fmt.qnan
    if x.kind == "inf":
        return a
    # result exponent, then integer sqrt with an exact tie test
    v = x.frac
    e = v.numerator.bit_length() - v.denominator.bit_length()
    if Fraction(2) ** e > v:
        e -= 1
    elif Fraction(2) ** (e + 1) <= v:
        e += 1
    er = e // 2
    grid = er - fmt.mant_bits  # sqrt of these formats is never subnormal
    m = v / Fraction(2) ** (2 * grid)
    n = math.isqrt(m.numerator // m.denominator)
    # candidates n, n+1; decide against (n + 1/2)^2 exactly
    d = 4 * m.numerator - (2 * n + 1) ** 2 * m.denominator
    if d > 0 or (d == 0 and n % 2 == 1):
        n += 1
    if n >= 1 << (fmt.mant_bits + 1):
        n //= 2
        grid += 1
    # sqrt(v) always lands in [2^er, 2^(er+1)) for er = floor(e/2)
    assert (1 << fmt.mant_bits) <= n < (1 << (fmt.mant_bits + 1))
    exp_of_value = grid + fmt.mant_bits
    biased = exp_of_value - fmt.emin + 1
    return (biased << fmt.mant_bits) | (n - (1 << fmt.mant_bits))


def o_fma(a: int, b: int, c: int, fmt: OFmt) -> int:
    x, y, z = o_decode(a, fmt), o_decode(b, fmt), o_decode(c, fmt)
    p = _prod(x, y)
    if p.kind == "nan" or z.kind == "nan":
        return fmt.qnan
    return _sum_terms([p, z], fmt)


def o_cast(bits: int, src: OFmt, dst: OFmt) -> int:
    v = o_decode(bits, src)
    if v.kind == "nan":
        sign = dst.sign_bit if v.neg else 0
        payload = bits & ((1 << src.mant_bits) - 1)
        if dst.mant_bits >= src.mant_bits:
            p = payload << (dst.mant_bits - src.mant_bits)
        else:
            p = payload >> (src.mant_bits - dst.mant_bits)
        if p == 0:
            p = 1 << (dst.mant_bits - 1)
        return sign | dst.inf | p
    return o_encode(v, dst)


# --- packed reference models ------------------------------------------------


def o_wdotp16(acc: int, a: int, b: int) -> int:
    for lane in (0, 1):
        al = (a >> (16 * lane)) & 0xFFFF
        bl = (b >> (16 * lane)) & 0xFFFF
        p = _prod(o_decode(al, O16), o_decode(bl, O16))
        acc = _sum_terms([o_decode(acc, O32), p], O32)
    return acc


def o_wdotp8(acc: int, a: int, b: int) -> int:
    out = 0
    for half in (0, 1):
        lane_acc = (acc >> (16 * half)) & 0xFFFF
        for k in (2 * half, 2 * half + 1):
            al = (a >> (8 * k)) & 0xFF
            bl = (b >> (8 * k)) & 0xFF
            p = _prod(o_decode(al, O8), o_decode(bl, O8))
            lane_acc = _sum_terms([o_decode(lane_acc, O16), p], O16)
        out |= lane_acc << (16 * half)
    return out


def o_cdotp16(acc: int, a: int, b: int) -> int:
    ar = o_decode(a & 0xFFFF, O16)
    ai = o_decode((a >> 16) & 0xFFFF, O16)
    br = o_decode(b & 0xFFFF, O16)
    bi = o_decode((b >> 16) & 0xFFFF, O16)
    cr = o_decode(acc & 0xFFFF, O16)
    ci = o_decode((acc >> 16) & 0xFFFF, O16)
    re = _sum_terms([cr, _prod(ar, br), _neg(_prod(ai, bi))], O16)
    im = _sum_terms([ci, _prod(ar, bi), _prod(ai, br)], O16)
    return (im << 16) | re


def o_shuffle16(a: int, b: int, mask: int):
    halves = [a & 0xFFFF, (a >> 16) & 0xFFFF, b & 0xFFFF, (b >> 16) & 0xFFFF]
    out = []
    for lane in (0, 1):
        nib = (mask >> (4 * lane)) & 0xF
        if nib & 8:
            return None  # reserved bit: implementation must refuse
        h = halves[nib & 3]
        if nib & 4:
            h ^= 0x8000
        out.append(h)
    return out[0] | (out[1] << 16)


def o_shuffle8(a: int, b: int, mask: int) -> int:
    lanes = [(a >> (8 * i)) & 0xFF for i in range(4)] + [(b >> (8 * i)) & 0xFF for i in range(4)]
    out = 0
    for lane in range(4):
        nib = (mask >> (4 * lane)) & 0xF
        v = lanes[nib & 7]
        if nib & 8:
            v ^= 0x80
        out |= v << (8 * lane)
    return out


# ---------------------------------------------------------------------------
# direct linear-system oracle for the MMSE golden model
# ---------------------------------------------------------------------------

def gauss_solve(a, b):
    """Solve A x = b by Gaussian elimination with partial pivoting.

    Complex double precision, plain row operations on Python-indexed numpy
    arrays; shares no code path with the package's Cholesky route or with
    np.linalg, so either side can convict the other.
    """
    import numpy as np

    a = np.array(a, dtype=complex)
    x = np.array(b, dtype=complex)
    n = a.shape[0]
    assert a.shape == (n, n) and x.shape == (n,)
    for col in range(n):
        piv = col + max(range(n - col), key=lambda r: abs(a[col + r, col]))
        if abs(a[piv, col]) == 0:
            raise ZeroDivisionError(f"singular at column {col}")
        if piv != col:
            a[[col, piv]] = a[[piv, col]]
            x[[col, piv]] = x[[piv, col]]
        for row in range(col + 1, n):
            f = a[row, col] / a[col, col]
            a[row, col:] -= f * a[col, col:]
            x[row] -= f * x[col]
    for col in range(n - 1, -1, -1):
        x[col] = (x[col] - a[col, col + 1:] @ x[col + 1:]) / a[col, col]
    return x
