"""Shared verification routines for the arithmetic layer.

Both the unit tests and the acceptance suite drive these; each routine
raises AssertionError with the first mismatching operands on failure.
"""

from __future__ import annotations

import random

import numpy as np

import oracle
from oracle import O8, O16, O32
from rvsdr import lowfp
from rvsdr.lowfp import FP8, FP16, FP32

# format-spanning edge codes: zeros, subnormal ends, 1.0 neighborhood,
# max finite, infinities, canonical and payload NaN, a couple of normals
EDGE16 = [
    0x0000, 0x8000, 0x0001, 0x8001, 0x03FF, 0x0400, 0x0401, 0x3BFF,
    0x3C00, 0x3C01, 0xBC00, 0x7BFF, 0xFBFF, 0x7C00, 0xFC00, 0x7E00,
    0x7D55, 0x4248, 0xC921,
]
EDGE32 = [
    0x00000000, 0x80000000, 0x00000001, 0x80000001, 0x007FFFFF, 0x00800000,
    0x3F7FFFFF, 0x3F800000, 0x3F800001, 0xBF800000, 0x7F7FFFFF, 0xFF7FFFFF,
    0x7F800000, 0xFF800000, 0x7FC00000, 0x7FA00001, 0x40490FDB,
]

_BINARY = {
    "add": (lowfp.fp_add, oracle.o_add),
    "sub": (lowfp.fp_sub, oracle.o_sub),
    "mul": (lowfp.fp_mul, oracle.o_mul),
    "div": (lowfp.fp_div, oracle.o_div),
}

_OF = {id(FP8): O8, id(FP16): O16, id(FP32): O32}


def _check_binary(name, a, b, fmt, ofmt):
    got = _BINARY[name][0](a, b, fmt)
    want = _BINARY[name][1](a, b, ofmt)
    assert got == want, f"{name} {fmt.name}({a:#x}, {b:#x}): impl {got:#x} != oracle {want:#x}"


def check_fp8_binary_exhaustive(name: str) -> int:
    for a in range(256):
        for b in range(256):
            _check_binary(name, a, b, FP8, O8)
    return 256 * 256


def check_fp8_fma_exhaustive() -> int:
    cs = [0x00, 0x80, 0x3C, 0x01, 0x7B, 0xC8, 0x7C, 0x7E]
    for c in cs:
        for a in range(256):
            for b in range(256):
                got = lowfp.fp_fma(a, b, c, FP8)
                want = oracle.o_fma(a, b, c, O8)
                assert got == want, (
                    f"fma fp8({a:#x}, {b:#x}, {c:#x}): impl {got:#x} != oracle {want:#x}"
                )
    return 256 * 256 * len(cs)


def check_fp8_unary_exhaustive() -> int:
    for a in range(256):
        got = lowfp.fp_sqrt(a, FP8)
        want = oracle.o_sqrt(a, O8)
        assert got == want, f"sqrt fp8({a:#x}): impl {got:#x} != oracle {want:#x}"
        for dst, odst in ((FP16, O16), (FP32, O32)):
            got = lowfp.fp_cast(a, FP8, dst)
            want = oracle.o_cast(a, O8, odst)
            assert got == want, f"cast fp8->{dst.name}({a:#x}): {got:#x} != {want:#x}"
    return 256 * 3


def check_fp8_cast_invertible() -> int:
    """Every fp8 code survives the round trip through fp16 and fp32."""
    for a in range(256):
        via16 = lowfp.fp_cast(lowfp.fp_cast(a, FP8, FP16), FP16, FP8)
        via32 = lowfp.fp_cast(lowfp.fp_cast(a, FP8, FP32), FP32, FP8)
        assert via16 == a, f"fp8 {a:#x} -> fp16 -> fp8 gave {via16:#x}"
        assert via32 == a, f"fp8 {a:#x} -> fp32 -> fp8 gave {via32:#x}"
    return 256


def check_fp16_exhaustive_unary() -> int:
    for a in range(1 << 16):
        got = lowfp.fp_sqrt(a, FP16)
        want = oracle.o_sqrt(a, O16)
        assert got == want, f"sqrt fp16({a:#x}): impl {got:#x} != oracle {want:#x}"
        got = lowfp.fp_cast(a, FP16, FP8)
        want = oracle.o_cast(a, O16, O8)
        assert got == want, f"cast fp16->fp8({a:#x}): {got:#x} != {want:#x}"
        got = lowfp.fp_cast(a, FP16, FP32)
        want = oracle.o_cast(a, O16, O32)
        assert got == want, f"cast fp16->fp32({a:#x}): {got:#x} != {want:#x}"
    return (1 << 16) * 3


def check_roundtrip_codes(fmt, ofmt, codes) -> int:
    """encode(decode(u)) == u for non-NaN codes; NaN codes canonicalize."""
    for u in codes:
        v = lowfp.decode_fp(u, fmt)
        got = lowfp.encode_fp(v, fmt)
        if v != v:  # NaN
            assert got == fmt.qnan_bits
        else:
            assert got == u, f"roundtrip {fmt.name}({u:#x}) gave {got:#x}"
        o = oracle.o_decode(u, ofmt)
        if o.kind == "fin":
            assert float(o.frac) == v or (o.frac == 0 and v == 0.0)
    return len(codes)


def check_random_binary(fmt, ofmt, name: str, n: int, seed: int) -> int:
    rng = random.Random(seed)
    top = 1 << fmt.width
    edges = EDGE16 if fmt is FP16 else EDGE32
    for a in edges:
        for b in edges:
            _check_binary(name, a, b, fmt, ofmt)
    for _ in range(n):
        _check_binary(name, rng.randrange(top), rng.randrange(top), fmt, ofmt)
    return n + len(edges) ** 2


def check_random_fma(fmt, ofmt, n: int, seed: int) -> int:
    rng = random.Random(seed)
    top = 1 << fmt.width
    edges = EDGE16 if fmt is FP16 else EDGE32
    cases = [(a, b, c) for a in edges for b in edges for c in (edges[0], edges[8], edges[13])]
    cases += [(rng.randrange(top), rng.randrange(top), rng.randrange(top)) for _ in range(n)]
    for a, b, c in cases:
        got = lowfp.fp_fma(a, b, c, fmt)
        want = oracle.o_fma(a, b, c, ofmt)
        assert got == want, (
            f"fma {fmt.name}({a:#x}, {b:#x}, {c:#x}): impl {got:#x} != oracle {want:#x}"
        )
    return len(cases)


def check_random_sqrt_cast32(n: int, seed: int) -> int:
    rng = random.Random(seed)
    cases = EDGE32 + [rng.randrange(1 << 32) for _ in range(n)]
    for a in cases:
        got = lowfp.fp_sqrt(a, FP32)
        want = oracle.o_sqrt(a, O32)
        assert got == want, f"sqrt fp32({a:#x}): {got:#x} != {want:#x}"
        for dst, odst in ((FP16, O16), (FP8, O8)):
            got = lowfp.fp_cast(a, FP32, dst)
            want = oracle.o_cast(a, O32, odst)
            assert got == want, f"cast fp32->{dst.name}({a:#x}): {got:#x} != {want:#x}"
    return len(cases) * 3


def _word16(rng):
    return rng.randrange(1 << 32)


def _edge_word16(rng):
    return rng.choice(EDGE16) | (rng.choice(EDGE16) << 16)


def check_wdotp16(n: int, seed: int) -> int:
    rng = random.Random(seed)
    for i in range(n):
        acc = rng.randrange(1 << 32)
        a = _edge_word16(rng) if i % 7 == 0 else _word16(rng)
        b = _edge_word16(rng) if i % 11 == 0 else _word16(rng)
        got = lowfp.widening_dotprod16(acc, a, b)
        want = oracle.o_wdotp16(acc, a, b)
        assert got == want, f"wdotp16({acc:#x}, {a:#x}, {b:#x}): {got:#x} != {want:#x}"
    return n


def check_wdotp16_lane_order() -> None:
    """Accumulation is lane 0 first; swapping the lanes changes the result.

    With acc = 2**-24: adding 1.0 first absorbs the accumulator (half-ulp
    tie to even) and then 2**-25 is lost; adding 2**-25 first gives
    3 * 2**-25, which pushes the final sum past the tie to 1 + 2**-23.
    """
    one = 0x3C00
    tiny_a = 0x0400  # 2**-14
    tiny_b = 0x1000  # 2**-11, product 2**-25
    a = one | (tiny_a << 16)
    b = one | (tiny_b << 16)
    acc0 = lowfp.encode_fp(2.0**-24, FP32)
    fwd = lowfp.widening_dotprod16(acc0, a, b)
    swapped = lowfp.widening_dotprod16(acc0, (a >> 16) | ((a & 0xFFFF) << 16),
                                       (b >> 16) | ((b & 0xFFFF) << 16))
    assert fwd == oracle.o_wdotp16(acc0, a, b)
    assert fwd == 0x3F800000
    assert swapped == 0x3F800001
    assert fwd != swapped, "lane order is architecturally visible and must be fixed"


def check_wdotp8(n: int, seed: int) -> int:
    rng = random.Random(seed)
    for _ in range(n):
        acc = rng.randrange(1 << 32)
        a = rng.randrange(1 << 32)
        b = rng.randrange(1 << 32)
        got = lowfp.widening_dotprod8(acc, a, b)
        want = oracle.o_wdotp8(acc, a, b)
        assert got == want, f"wdotp8({acc:#x}, {a:#x}, {b:#x}): {got:#x} != {want:#x}"
    return n


def check_cdotp16(n: int, seed: int) -> int:
    rng = random.Random(seed)
    directed = [
        # giant products with a tiny accumulator: the exact sum spans far
        # beyond float64's 53 bits, forcing the integer path to matter
        (0x0001_0001, 0x7BFF_7BFF, 0x7BFF_7BDF),
        (0x8001_0001, 0x7BFF_7BFF, 0xFBFF_7BFF),
        (0x0000_0000, 0x7BFF_0400, 0x7BFF_8400),
        # exact cancellation to zero
        (0x0000_0000, 0x3C00_3C00, 0x3C00_3C00),
        (0x8000_8000, 0x8000_8000, 0x3C00_3C00),
        # specials in single lanes
        (0x0000_7C00, 0x3C00_3C00, 0x3C00_3C00),
        (0x0000_0000, 0x7C00_3C00, 0x0000_3C00),
        (0x7E00_0000, 0x3C00_3C00, 0x3C00_3C00),
    ]
    for acc, a, b in directed:
        got = lowfp.complex_dotprod16(acc, a, b)
        want = oracle.o_cdotp16(acc, a, b)
        assert got == want, f"cdotp16({acc:#x}, {a:#x}, {b:#x}): {got:#x} != {want:#x}"
    for i in range(n):
        acc = _edge_word16(rng) if i % 5 == 0 else _word16(rng)
        a = _word16(rng)
        b = _edge_word16(rng) if i % 9 == 0 else _word16(rng)
        got = lowfp.complex_dotprod16(acc, a, b)
        want = oracle.o_cdotp16(acc, a, b)
        assert got == want, f"cdotp16({acc:#x}, {a:#x}, {b:#x}): {got:#x} != {want:#x}"
    return n + len(directed)


def check_shuffle(n: int, seed: int) -> int:
    rng = random.Random(seed)
    count = 0
    for mask in range(256):
        a, b = _word16(rng), _word16(rng)
        want = oracle.o_shuffle16(a, b, mask)
        if want is None:
            try:
                lowfp.shuffle16(a, b, mask)
            except lowfp.MaskError:
                pass
            else:
                raise AssertionError(f"shuffle16 mask {mask:#x} must be refused")
        else:
            got = lowfp.shuffle16(a, b, mask)
            assert got == want, f"shuffle16({a:#x}, {b:#x}, {mask:#x}): {got:#x} != {want:#x}"
        count += 1
    for _ in range(n):
        a, b, mask = rng.randrange(1 << 32), rng.randrange(1 << 32), rng.randrange(1 << 16)
        got = lowfp.shuffle8(a, b, mask)
        want = oracle.o_shuffle8(a, b, mask)
        assert got == want, f"shuffle8({a:#x}, {b:#x}, {mask:#x}): {got:#x} != {want:#x}"
        count += 1
    return count


def check_vector_bits_roundtrip() -> int:
    codes = np.arange(1 << 16, dtype=np.uint16)
    vals = lowfp.bits_f16(codes)
    scalar = np.array([lowfp.decode_fp(int(u), FP16) for u in codes])
    nan = np.isnan(scalar)
    assert np.isnan(vals[nan]).all()
    assert (vals[~nan] == scalar[~nan]).all()
    back = lowfp.f16_bits(vals)
    assert (back[~nan] == codes[~nan]).all()
    assert (back[nan] == FP16.qnan_bits).all()

    codes8 = np.arange(256, dtype=np.uint8)
    vals8 = lowfp.bits_f8(codes8)
    scalar8 = np.array([lowfp.decode_fp(int(u), FP8) for u in codes8])
    nan8 = np.isnan(scalar8)
    assert np.isnan(vals8[nan8]).all()
    assert (vals8[~nan8] == scalar8[~nan8]).all()
    return (1 << 16) + 256


def check_vector_round_fp8_from_fp16() -> int:
    """f8_bits agrees with the scalar cast over every fp16 value.

    fp16 values hit every fp8 rounding boundary (the grids nest), so this
    sweep covers ties, overflow to inf, and the subnormal range exactly.
    """
    codes = np.arange(1 << 16, dtype=np.uint16)
    vals = lowfp.bits_f16(codes)
    got = lowfp.f8_bits(vals)
    nan = np.isnan(vals)
    want = np.array([lowfp.encode_fp(float(v), FP8) for v in vals], dtype=np.uint8)
    assert (got[~nan] == want[~nan]).all(), "f8_bits diverges from scalar rounding"
    assert (got[nan] == FP8.qnan_bits).all()
    return 1 << 16


def check_vector_round_random(n: int, seed: int) -> int:
    rng = np.random.Generator(np.random.Philox(seed))
    m = rng.integers(0, 1 << 53, size=n, dtype=np.int64).astype(np.float64)
    e = rng.integers(-80, 40, size=n)
    x = np.ldexp(m, e - 53) * np.where(rng.random(n) < 0.5, -1.0, 1.0)
    got16 = lowfp.f16_bits(x)
    got8 = lowfp.f8_bits(x)
    got32 = lowfp.r32(x)
    for i in range(n):
        want16 = lowfp.encode_fp(float(x[i]), FP16)
        assert int(got16[i]) == want16, f"r16({x[i]!r}): {int(got16[i]):#x} != {want16:#x}"
        want8 = lowfp.encode_fp(float(x[i]), FP8)
        assert int(got8[i]) == want8, f"r8({x[i]!r}): {int(got8[i]):#x} != {want8:#x}"
        want32 = lowfp.decode_fp(lowfp.encode_fp(float(x[i]), FP32), FP32)
        assert got32[i] == want32 or (np.isnan(got32[i]) and np.isnan(want32))
    return n


def check_round3_vector(n: int, seed: int) -> int:
    rng = random.Random(seed)
    cs, x1s, y1s, x2s, y2s = [], [], [], [], []
    for i in range(n):
        pick = (lambda: rng.choice(EDGE16)) if i % 6 == 0 else (lambda: rng.randrange(1 << 16))
        cs.append(pick())
        x1s.append(pick())
        y1s.append(pick())
        x2s.append(pick())
        y2s.append(pick())
    cu = np.array(cs, dtype=np.uint16)
    t0 = lowfp.bits_f16(cu)
    with np.errstate(invalid="ignore"):
        t1 = lowfp.bits_f16(np.array(x1s, dtype=np.uint16)) * lowfp.bits_f16(np.array(y1s, dtype=np.uint16))
        t2 = -(lowfp.bits_f16(np.array(x2s, dtype=np.uint16)) * lowfp.bits_f16(np.array(y2s, dtype=np.uint16)))
    got = lowfp.round3_f16(t0, t1, t2)
    for i in range(n):
        want = lowfp._cmac_lane(cs[i], x1s[i], y1s[i], x2s[i], y2s[i], sub=True)
        assert int(got[i]) == want, (
            f"round3_f16 case {i} ({cs[i]:#x}, {x1s[i]:#x}*{y1s[i]:#x}, -{x2s[i]:#x}*{y2s[i]:#x}):"
            f" {int(got[i]):#x} != {want:#x}"
        )
    return n
