"""MMSE detection engines: a double-precision golden path and bit-true
reduced-precision functional models.

The detector solves x̂ = (ĤᴴĤ + σ²I)⁻¹ Ĥᴴy via the Cholesky route:
G = ĤᴴĤ + σ²I and z = Ĥᴴy, factor G = L·Lᴴ (L lower triangular with real
positive diagonal), then solve L·u = z forward and Lᴴ·x̂ = u backward.

The functional models reproduce, rounding step by rounding step, the
arithmetic of the generated device kernels. Shared conventions (the
kernel emitter follows the same table):

  - A complex MAC in the scalar fp16 idiom splits its four real products
    between a positive and a negative accumulator chain by sign; each
    chain is a sequence of fused multiply-adds (one rounding per step,
    k ascending), and one subtraction per component combines the chains
    at end-of-dot (skipped when the negative chain is empty). Products
    are emitted per k in the order: re first operand pair, re second,
    im first, im second.
  - The widening idiom accumulates in fp32, two sequentially rounded
    products per dot-product step; operand negations come from lane
    shuffles and are exact.
  - The complex idiom rounds each output lane once per MAC (a three-term
    exact sum); conjugation/negation again via exact shuffles.
  - The byte idiom processes two consecutive k per step into separate
    even/odd fp16 lane chains, combined by one fp16 add at end-of-dot.
  - sigma² joins the Gram diagonal in the dot's native accumulator
    precision, right before the value is stored.
  - Divisions and square roots cast up to fp32, use the exact-rounded
    fp32 operation, and cast the result back to fp16. Divisors are the
    *stored* fp16 diagonal.
  - All intermediates (G, z, L, u, x̂) are stored as fp16 components;
    only the lower triangle of G and L exists.
  - The 8-bit variants use their reduced idiom for G and z only, then
    run the factor/solve phases in the scalar fp16 idiom.

Values travel as float64 numpy arrays lying exactly on the target format
grid; each rounding step uses the grid-rounding helpers, which match the
scalar bit-level ops (the equivalence tests against the emulated kernels
cross-check the two routes instruction by instruction).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .lowfp import bits_f16, r8, r16, r32, round3_f16


def _c3(t0, t1, t2):
    """Value-level single rounding of the exact three-term sum."""
    return bits_f16(round3_f16(t0, t1, t2))

__all__ = [
    "DetectionProblem",
    "MmseBatchResult",
    "NonPositiveDiagonal",
    "Variant",
    "QuantizedBatch",
    "cholesky",
    "functional_mmse",
    "functional_mmse_batch",
    "golden_mmse",
    "gram_and_matched_filter",
    "quantize_batch",
    "quantize_problem",
    "tri_solve_lower",
    "tri_solve_upper",
]


class Variant(enum.Enum):
    DOUBLE64 = "Double64"
    HALF16 = "Half16"
    WDOTP16 = "WDotp16"
    CDOTP16 = "CDotp16"
    QUARTER8 = "Quarter8"
    WDOTP8 = "WDotp8"

    @classmethod
    def from_name(cls, name: str) -> "Variant":
        for v in cls:
            if v.value.lower() == name.lower():
                return v
        raise ValueError(f"unknown precision variant {name!r}")

    @property
    def storage_bits(self) -> int:
        if self in (Variant.QUARTER8, Variant.WDOTP8):
            return 8
        if self is Variant.DOUBLE64:
            return 64
        return 16


class NonPositiveDiagonal(Exception):
    """Cholesky pivot <= 0 (or NaN); carries the failing column index."""

    def __init__(self, index: int):
        super().__init__(f"non-positive diagonal at column {index}")
        self.index = index


@dataclass(frozen=True)
class DetectionProblem:
    """One detection instance: Ĥ (n_rx x n_tx), received y, noise sigma2."""

    h: np.ndarray
    y: np.ndarray
    sigma2: float

    def __post_init__(self) -> None:
        h = np.asarray(self.h, dtype=np.complex128)
        y = np.asarray(self.y, dtype=np.complex128)
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "y", y)
        if h.ndim != 2:
            raise ValueError("channel matrix must be 2-D")
        if y.shape != (h.shape[0],):
            raise ValueError("received vector length must equal n_rx")
        if not self.n_rx >= self.n_tx >= 1:
            raise ValueError("need n_rx >= n_tx >= 1")
        # zero is allowed as the noiseless sanity point; with a
        # well-conditioned channel the gram stays positive definite
        if not (np.isfinite(self.sigma2) and self.sigma2 >= 0):
            raise ValueError("sigma2 must be finite and non-negative")

    @property
    def n_rx(self) -> int:
        return self.h.shape[0]

    @property
    def n_tx(self) -> int:
        return self.h.shape[1]


# ---------------------------------------------------------------------------
# golden double-precision path
# ---------------------------------------------------------------------------


def gram_and_matched_filter(p: DetectionProblem) -> tuple[np.ndarray, np.ndarray]:
    """G = ĤᴴĤ + sigma2·I (Hermitian) and z = Ĥᴴy, in double precision."""
    hh = p.h.conj().T
    g = hh @ p.h + p.sigma2 * np.eye(p.n_tx)
    return g, hh @ p.y


def cholesky(g: np.ndarray) -> np.ndarray:
    """Factor G = L·Lᴴ, L lower triangular with real positive diagonal.

    Raises NonPositiveDiagonal with the failing column if a pivot is not
    strictly positive (impossible for ĤᴴĤ + sigma2·I with sigma2 > 0 in
    double precision, but reduced-precision G matrices can get here).
    """
    g = np.asarray(g, dtype=np.complex128)
    n = g.shape[0]
    low = np.zeros_like(g)
    for j in range(n):
        pivot = g[j, j].real - np.sum(low[j, :j] * low[j, :j].conj()).real
        if not pivot > 0 or np.isnan(pivot):
            raise NonPositiveDiagonal(j)
        d = np.sqrt(pivot)
        low[j, j] = d
        for i in range(j + 1, n):
            s = np.sum(low[i, :j] * low[j, :j].conj())
            low[i, j] = (g[i, j] - s) / d
    return low


def tri_solve_lower(low: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve L·u = b for lower-triangular L by forward substitution."""
    n = b.shape[0]
    u = np.zeros(n, dtype=np.complex128)
    for i in range(n):
        u[i] = (b[i] - np.sum(low[i, :i] * u[:i])) / low[i, i]
    return u


def tri_solve_upper(up: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve U·x = b for upper-triangular U by backward substitution."""
    n = b.shape[0]
    x = np.zeros(n, dtype=np.complex128)
    for i in reversed(range(n)):
        x[i] = (b[i] - np.sum(up[i, i + 1:] * x[i + 1:])) / up[i, i]
    return x


def golden_mmse(p: DetectionProblem) -> np.ndarray:
    """x̂ = (ĤᴴĤ + sigma2·I)⁻¹Ĥᴴy via gram, Cholesky, and two solves."""
    g, z = gram_and_matched_filter(p)
    low = cholesky(g)
    u = tri_solve_lower(low, z)
    return tri_solve_upper(low.conj().T, u)


# ---------------------------------------------------------------------------
# quantization
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QuantizedBatch:
    """Problem batch with components on the variant's storage grid.

    hr/hi: (P, n_rx, n_tx); yr/yi: (P, n_rx); sigma2: (P,). All float64
    arrays whose values lie exactly on the fp16 or fp8 grid (or raw
    doubles for Double64).
    """

    variant: Variant
    hr: np.ndarray
    hi: np.ndarray
    yr: np.ndarray
    yi: np.ndarray
    sigma2: np.ndarray

    @property
    def n_problems(self) -> int:
        return self.hr.shape[0]

    @property
    def n_rx(self) -> int:
        return self.hr.shape[1]

    @property
    def n_tx(self) -> int:
        return self.hr.shape[2]


def _storage_round(variant: Variant):
    if variant.storage_bits == 8:
        return r8
    if variant.storage_bits == 16:
        return r16
    return lambda x: np.asarray(x, dtype=np.float64)


def quantize_batch(h: np.ndarray, y: np.ndarray, sigma2: np.ndarray,
                   variant: Variant) -> QuantizedBatch:
    """Round-to-nearest-even each component onto the storage grid."""
    h = np.asarray(h, dtype=np.complex128)
    y = np.asarray(y, dtype=np.complex128)
    sigma2 = np.asarray(sigma2, dtype=np.float64)
    if h.ndim != 3 or y.shape != h.shape[:2] or sigma2.shape != h.shape[:1]:
        raise ValueError("expected h (P,n_rx,n_tx), y (P,n_rx), sigma2 (P,)")
    if variant is Variant.WDOTP8 and h.shape[1] % 2:
        raise ValueError("the byte-dotp variant needs an even antenna count")
    q = _storage_round(variant)
    return QuantizedBatch(variant, q(h.real), q(h.imag),
                          q(y.real), q(y.imag), q(sigma2))


def quantize_problem(p: DetectionProblem, variant: Variant) -> DetectionProblem:
    qb = quantize_batch(p.h[None], p.y[None], np.array([p.sigma2]), variant)
    return DetectionProblem(qb.hr[0] + 1j * qb.hi[0],
                            qb.yr[0] + 1j * qb.yi[0], float(qb.sigma2[0]))


# ---------------------------------------------------------------------------
# per-variant arithmetic strategies
#
# Every method consumes and returns float64 arrays on the storage grid;
# k-axis operands arrive as (P, K) slices and are reduced k-ascending.
# ---------------------------------------------------------------------------


def _div32(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        return r16(r32(num / den))


def _sqrt32(x: np.ndarray) -> np.ndarray:
    with np.errstate(invalid="ignore"):
        return r16(r32(np.sqrt(x)))


class _HalfOps:
    """Scalar fused multiply-add idiom; optional per-step fp8 rounding."""

    def __init__(self, eight_bit: bool = False):
        if eight_bit:
            self._fma = lambda a, b, acc: r8(r16(acc + a * b))
            self._sub = lambda x, y: r8(r16(x - y))
            self._sigma = lambda x, s: r8(r16(x + s))
        else:
            self._fma = lambda a, b, acc: r16(acc + a * b)
            self._sub = lambda x, y: r16(x - y)
            self._sigma = lambda x, s: r16(x + s)

    def real_norm_sigma(self, ar, ai, s2):
        acc = np.zeros_like(s2)
        for k in range(ar.shape[1]):
            acc = self._fma(ar[:, k], ar[:, k], acc)
            acc = self._fma(ai[:, k], ai[:, k], acc)
        return self._sigma(acc, s2)

    def conj_first(self, ar, ai, br, bi):
        zero = np.zeros(ar.shape[0])
        rp, ip, im_n = zero, zero, zero
        for k in range(ar.shape[1]):
            rp = self._fma(ar[:, k], br[:, k], rp)
            rp = self._fma(ai[:, k], bi[:, k], rp)
            ip = self._fma(ar[:, k], bi[:, k], ip)
            im_n = self._fma(ai[:, k], br[:, k], im_n)
        return rp, self._sub(ip, im_n)

    def chol_diag(self, g_re, lr, li):
        neg = np.zeros_like(g_re)
        for k in range(lr.shape[1]):
            neg = self._fma(lr[:, k], lr[:, k], neg)
            neg = self._fma(li[:, k], li[:, k], neg)
        return self._sub(g_re, neg)

    def sqrt(self, x):
        return _sqrt32(x)

    def chol_offdiag(self, g_re, g_im, air, aii, bjr, bji, d):
        # G[i,j] - sum a.conj(b): re products both negative; im has
        # +ar.bi and -ai.br
        rn = np.zeros_like(g_re)
        ip, im_n = g_im, np.zeros_like(g_im)
        for k in range(air.shape[1]):
            rn = self._fma(air[:, k], bjr[:, k], rn)
            rn = self._fma(aii[:, k], bji[:, k], rn)
            ip = self._fma(air[:, k], bji[:, k], ip)
            im_n = self._fma(aii[:, k], bjr[:, k], im_n)
        return _div32(self._sub(g_re, rn), d), _div32(self._sub(ip, im_n), d)

    def solve_forward(self, z_re, z_im, lr, li, ur, ui, d):
        # z[i] - sum l.u: re has -lr.ur and +li.ui; im both negative
        rp, rn = z_re, np.zeros_like(z_re)
        im_n = np.zeros_like(z_im)
        for k in range(lr.shape[1]):
            rn = self._fma(lr[:, k], ur[:, k], rn)
            rp = self._fma(li[:, k], ui[:, k], rp)
            im_n = self._fma(lr[:, k], ui[:, k], im_n)
            im_n = self._fma(li[:, k], ur[:, k], im_n)
        return _div32(self._sub(rp, rn), d), _div32(self._sub(z_im, im_n), d)

    def solve_backward(self, u_re, u_im, ar, ai, xr, xi, d):
        # u[i] - sum conj(a).x: re both negative; im has +ai.xr, -ar.xi
        rn = np.zeros_like(u_re)
        ip, im_n = u_im, np.zeros_like(u_im)
        for k in range(ar.shape[1]):
            rn = self._fma(ar[:, k], xr[:, k], rn)
            rn = self._fma(ai[:, k], xi[:, k], rn)
            ip = self._fma(ai[:, k], xr[:, k], ip)
            im_n = self._fma(ar[:, k], xi[:, k], im_n)
        return _div32(self._sub(u_re, rn), d), _div32(self._sub(ip, im_n), d)


class _WdotOps:
    """Widening dot-product idiom: fp32 accumulators, fp16 stores."""

    @staticmethod
    def _step(acc, a0, b0, a1, b1):
        acc = r32(acc + a0 * b0)
        return r32(acc + a1 * b1)

    def real_norm_sigma(self, ar, ai, s2):
        acc = np.zeros_like(s2)
        for k in range(ar.shape[1]):
            acc = self._step(acc, ar[:, k], ar[:, k], ai[:, k], ai[:, k])
        return r16(r32(acc + s2))

    def conj_first(self, ar, ai, br, bi):
        re = np.zeros(ar.shape[0])
        im = np.zeros(ar.shape[0])
        for k in range(ar.shape[1]):
            re = self._step(re, ar[:, k], br[:, k], ai[:, k], bi[:, k])
            im = self._step(im, ar[:, k], bi[:, k], ai[:, k], -br[:, k])
        return r16(re), r16(im)

    def chol_diag(self, g_re, lr, li):
        acc = g_re.copy()
        for k in range(lr.shape[1]):
            acc = self._step(acc, -lr[:, k], lr[:, k], -li[:, k], li[:, k])
        return acc                      # stays on the fp32 grid for sqrt

    def sqrt(self, x):
        return _sqrt32(x)

    def chol_offdiag(self, g_re, g_im, air, aii, bjr, bji, d):
        re, im = g_re.copy(), g_im.copy()
        for k in range(air.shape[1]):
            re = self._step(re, -air[:, k], bjr[:, k], -aii[:, k], bji[:, k])
            im = self._step(im, air[:, k], bji[:, k], aii[:, k], -bjr[:, k])
        return _div32(re, d), _div32(im, d)

    def solve_forward(self, z_re, z_im, lr, li, ur, ui, d):
        re, im = z_re.copy(), z_im.copy()
        for k in range(lr.shape[1]):
            re = self._step(re, lr[:, k], -ur[:, k], li[:, k], ui[:, k])
            im = self._step(im, lr[:, k], -ui[:, k], li[:, k], -ur[:, k])
        return _div32(re, d), _div32(im, d)

    def solve_backward(self, u_re, u_im, ar, ai, xr, xi, d):
        re, im = u_re.copy(), u_im.copy()
        for k in range(ar.shape[1]):
            re = self._step(re, -ar[:, k], xr[:, k], -ai[:, k], xi[:, k])
            im = self._step(im, -ar[:, k], xi[:, k], ai[:, k], xr[:, k])
        return _div32(re, d), _div32(im, d)


class _CdotOps:
    """Complex dot-product idiom: one rounding per output lane per MAC."""

    def real_norm_sigma(self, ar, ai, s2):
        acc = np.zeros_like(s2)
        for k in range(ar.shape[1]):
            acc = _c3(acc, ar[:, k] * ar[:, k], ai[:, k] * ai[:, k])
        return r16(acc + s2)

    def conj_first(self, ar, ai, br, bi):
        re = np.zeros(ar.shape[0])
        im = np.zeros(ar.shape[0])
        for k in range(ar.shape[1]):
            re = _c3(re, ar[:, k] * br[:, k], ai[:, k] * bi[:, k])
            im = _c3(im, ar[:, k] * bi[:, k], -(ai[:, k] * br[:, k]))
        return re, im

    def chol_diag(self, g_re, lr, li):
        acc = g_re.copy()
        for k in range(lr.shape[1]):
            acc = _c3(acc, -(lr[:, k] * lr[:, k]),
                             -(li[:, k] * li[:, k]))
        return acc

    def sqrt(self, x):
        return _sqrt32(x)

    def chol_offdiag(self, g_re, g_im, air, aii, bjr, bji, d):
        re, im = g_re.copy(), g_im.copy()
        for k in range(air.shape[1]):
            re = _c3(re, -(air[:, k] * bjr[:, k]),
                            -(aii[:, k] * bji[:, k]))
            im = _c3(im, air[:, k] * bji[:, k],
                            -(aii[:, k] * bjr[:, k]))
        return _div32(re, d), _div32(im, d)

    def solve_forward(self, z_re, z_im, lr, li, ur, ui, d):
        re, im = z_re.copy(), z_im.copy()
        for k in range(lr.shape[1]):
            re = _c3(re, -(lr[:, k] * ur[:, k]), li[:, k] * ui[:, k])
            im = _c3(im, -(lr[:, k] * ui[:, k]),
                            -(li[:, k] * ur[:, k]))
        return _div32(re, d), _div32(im, d)

    def solve_backward(self, u_re, u_im, ar, ai, xr, xi, d):
        re, im = u_re.copy(), u_im.copy()
        for k in range(ar.shape[1]):
            re = _c3(re, -(ar[:, k] * xr[:, k]),
                            -(ai[:, k] * xi[:, k]))
            im = _c3(im, -(ar[:, k] * xi[:, k]), ai[:, k] * xr[:, k])
        return _div32(re, d), _div32(im, d)


class _Wdot8Ops:
    """Byte dot-product idiom for G and z: two k per step, fp16 lanes."""

    @staticmethod
    def _step(acc, a0, b0, a1, b1):
        acc = r16(acc + a0 * b0)
        return r16(acc + a1 * b1)

    def real_norm_sigma(self, ar, ai, s2):
        even = np.zeros_like(s2)
        odd = np.zeros_like(s2)
        for k in range(0, ar.shape[1], 2):
            even = self._step(even, ar[:, k], ar[:, k], ai[:, k], ai[:, k])
            odd = self._step(odd, ar[:, k + 1], ar[:, k + 1],
                             ai[:, k + 1], ai[:, k + 1])
        return r16(r16(even + odd) + s2)

    def conj_first(self, ar, ai, br, bi):
        zero = np.zeros(ar.shape[0])
        re_e, re_o, im_e, im_o = zero, zero, zero, zero
        for k in range(0, ar.shape[1], 2):
            re_e = self._step(re_e, ar[:, k], br[:, k], ai[:, k], bi[:, k])
            re_o = self._step(re_o, ar[:, k + 1], br[:, k + 1],
                              ai[:, k + 1], bi[:, k + 1])
            im_e = self._step(im_e, ar[:, k], bi[:, k], ai[:, k], -br[:, k])
            im_o = self._step(im_o, ar[:, k + 1], bi[:, k + 1],
                              ai[:, k + 1], -br[:, k + 1])
        return r16(re_e + re_o), r16(im_e + im_o)


class _DoubleOps(_HalfOps):
    """Raw float64 arithmetic through the same loop structure."""

    def __init__(self):
        self._fma = lambda a, b, acc: acc + a * b
        self._sub = lambda x, y: x - y
        self._sigma = lambda x, s: x + s

    def sqrt(self, x):
        with np.errstate(invalid="ignore"):
            return np.sqrt(x)

    @staticmethod
    def _div(num, den):
        with np.errstate(divide="ignore", invalid="ignore"):
            return num / den

    def chol_offdiag(self, g_re, g_im, air, aii, bjr, bji, d):
        rn = np.zeros_like(g_re)
        ip, im_n = g_im, np.zeros_like(g_im)
        for k in range(air.shape[1]):
            rn = self._fma(air[:, k], bjr[:, k], rn)
            rn = self._fma(aii[:, k], bji[:, k], rn)
            ip = self._fma(air[:, k], bji[:, k], ip)
            im_n = self._fma(aii[:, k], bjr[:, k], im_n)
        return self._div(g_re - rn, d), self._div(ip - im_n, d)

    def solve_forward(self, z_re, z_im, lr, li, ur, ui, d):
        rp, rn = z_re, np.zeros_like(z_re)
        im_n = np.zeros_like(z_im)
        for k in range(lr.shape[1]):
            rn = self._fma(lr[:, k], ur[:, k], rn)
            rp = self._fma(li[:, k], ui[:, k], rp)
            im_n = self._fma(lr[:, k], ui[:, k], im_n)
            im_n = self._fma(li[:, k], ur[:, k], im_n)
        return self._div(rp - rn, d), self._div(z_im - im_n, d)

    def solve_backward(self, u_re, u_im, ar, ai, xr, xi, d):
        rn = np.zeros_like(u_re)
        ip, im_n = u_im, np.zeros_like(u_im)
        for k in range(ar.shape[1]):
            rn = self._fma(ar[:, k], xr[:, k], rn)
            rn = self._fma(ai[:, k], xi[:, k], rn)
            ip = self._fma(ai[:, k], xr[:, k], ip)
            im_n = self._fma(ar[:, k], xi[:, k], im_n)
        return self._div(u_re - rn, d), self._div(ip - im_n, d)


# ---------------------------------------------------------------------------
# generic phases over a strategy
# ---------------------------------------------------------------------------


def _gram_z(ops, hr, hi, yr, yi, s2):
    np_, _, n_tx = hr.shape
    g_re = np.zeros((np_, n_tx, n_tx))
    g_im = np.zeros((np_, n_tx, n_tx))
    for i in range(n_tx):
        g_re[:, i, i] = ops.real_norm_sigma(hr[:, :, i], hi[:, :, i], s2)
        for j in range(i):
            re, im = ops.conj_first(hr[:, :, i], hi[:, :, i],
                                    hr[:, :, j], hi[:, :, j])
            g_re[:, i, j] = re
            g_im[:, i, j] = im
    z_re = np.zeros((np_, n_tx))
    z_im = np.zeros((np_, n_tx))
    for i in range(n_tx):
        z_re[:, i], z_im[:, i] = ops.conj_first(hr[:, :, i], hi[:, :, i],
                                                yr, yi)
    return g_re, g_im, z_re, z_im


def _cholesky_phase(ops, g_re, g_im):
    np_, n, _ = g_re.shape
    l_re = np.zeros_like(g_re)
    l_im = np.zeros_like(g_im)
    erased = np.zeros(np_, dtype=bool)
    fail = np.full(np_, -1, dtype=np.int64)
    for j in range(n):
        dsq = ops.chol_diag(g_re[:, j, j], l_re[:, j, :j], l_im[:, j, :j])
        with np.errstate(invalid="ignore"):
            bad = ~(dsq > 0)
        newly = bad & ~erased
        fail[newly] = j
        erased |= newly
        d = ops.sqrt(dsq)
        l_re[:, j, j] = d
        for i in range(j + 1, n):
            re, im = ops.chol_offdiag(
                g_re[:, i, j], g_im[:, i, j],
                l_re[:, i, :j], l_im[:, i, :j],
                l_re[:, j, :j], l_im[:, j, :j], d)
            l_re[:, i, j] = re
            l_im[:, i, j] = im
    return l_re, l_im, erased, fail


def _solve_phase(ops, l_re, l_im, z_re, z_im):
    np_, n, _ = l_re.shape
    u_re = np.zeros((np_, n))
    u_im = np.zeros((np_, n))
    for i in range(n):
        u_re[:, i], u_im[:, i] = ops.solve_forward(
            z_re[:, i], z_im[:, i], l_re[:, i, :i], l_im[:, i, :i],
            u_re[:, :i], u_im[:, :i], l_re[:, i, i])
    x_re = np.zeros((np_, n))
    x_im = np.zeros((np_, n))
    for i in reversed(range(n)):
        x_re[:, i], x_im[:, i] = ops.solve_backward(
            u_re[:, i], u_im[:, i], l_re[:, i + 1:, i], l_im[:, i + 1:, i],
            x_re[:, i + 1:], x_im[:, i + 1:], l_re[:, i, i])
    return u_re, u_im, x_re, x_im


_GRAM_OPS = {
    Variant.DOUBLE64: _DoubleOps,
    Variant.HALF16: _HalfOps,
    Variant.WDOTP16: _WdotOps,
    Variant.CDOTP16: _CdotOps,
    Variant.QUARTER8: lambda: _HalfOps(eight_bit=True),
    Variant.WDOTP8: _Wdot8Ops,
}


def _linear_ops(variant: Variant):
    if variant is Variant.DOUBLE64:
        return _DoubleOps()
    if variant in (Variant.HALF16, Variant.QUARTER8, Variant.WDOTP8):
        return _HalfOps()
    if variant is Variant.WDOTP16:
        return _WdotOps()
    return _CdotOps()


@dataclass
class MmseBatchResult:
    """Detected symbols on the fp16 grid plus per-problem erasure flags."""

    x_re: np.ndarray
    x_im: np.ndarray
    erased: np.ndarray
    fail_index: np.ndarray
    intermediates: dict = field(default_factory=dict)

    @property
    def x_hat(self) -> np.ndarray:
        # erased problems carry NaN lanes; silence the complex-assembly warning
        with np.errstate(invalid="ignore"):
            return self.x_re + 1j * self.x_im


def functional_mmse_batch(qb: QuantizedBatch,
                          keep_intermediates: bool = False) -> MmseBatchResult:
    """Run the bit-true pipeline for a quantized problem batch.

    Erased problems (non-positive Cholesky pivot) still carry whatever
    NaN/inf pattern the arithmetic produced; the flags tell the caller
    to discard them.
    """
    gram_ops = _GRAM_OPS[qb.variant]()
    lin_ops = _linear_ops(qb.variant)
    with np.errstate(over="ignore", invalid="ignore"):
        g_re, g_im, z_re, z_im = _gram_z(gram_ops, qb.hr, qb.hi,
                                         qb.yr, qb.yi, qb.sigma2)
        l_re, l_im, erased, fail = _cholesky_phase(lin_ops, g_re, g_im)
        u_re, u_im, x_re, x_im = _solve_phase(lin_ops, l_re, l_im, z_re, z_im)
    result = MmseBatchResult(x_re, x_im, erased, fail)
    if keep_intermediates:
        result.intermediates = {
            "g_re": g_re, "g_im": g_im, "z_re": z_re, "z_im": z_im,
            "l_re": l_re, "l_im": l_im, "u_re": u_re, "u_im": u_im,
        }
    return result


def functional_mmse(p: DetectionProblem, variant: Variant) -> np.ndarray:
    """Single-problem front end; expects inputs already on the storage
    grid (see quantize_problem). Raises NonPositiveDiagonal for an
    erased problem."""
    if variant is Variant.DOUBLE64:
        return golden_mmse(p)
    qb = QuantizedBatch(variant,
                        np.ascontiguousarray(p.h.real)[None],
                        np.ascontiguousarray(p.h.imag)[None],
                        p.y.real[None], p.y.imag[None],
                        np.array([p.sigma2]))
    res = functional_mmse_batch(qb)
    if res.erased[0]:
        raise NonPositiveDiagonal(int(res.fail_index[0]))
    return res.x_hat[0]
