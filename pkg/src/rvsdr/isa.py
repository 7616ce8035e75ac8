"""RV32IM instruction set with post-increment memory ops, low-precision FP,
and packed SIMD extensions: declarative encodings, decoder, encoder.

Encoding map (little-endian 32-bit words, RV32 field layout):

  base RV32I (no fence/ecall/ebreak) plus RV32M
  custom-0 (0x0B): p.lw (I-form, funct3 2), p.sw (S-form, funct3 3),
                   barrier (funct3 0, imm 0), halt (funct3 0, imm 1)
  custom-1 (0x2B): wdotp.h / wdotp.b / cdotp.h / shuffle.h / shuffle.b
                   (R-form, funct3 0, funct7 0 / 1 / 2 / 4 / 5)
  OP-FP  (0x53):   fadd, fsub, fmul, fdiv, fsqrt in .s/.h and fcvt between
                   every pair of s/h/b; the format sits in funct7 bits [1:0]
                   (S=00, H=10, B=11; B only for fcvt) and the rounding-mode
                   field (funct3) must be 000, round-to-nearest-even
  MADD/MSUB (0x43/0x47): fmadd / fmsub in .s/.h, format in bits [26:25]
  SYSTEM (0x73):   csrr rd, {cycle, mhartid}, i.e. csrrs with rs1 = x0

FP instructions use the integer register file. decode is total: any word
outside the table, including a nonzero rounding mode or an unknown CSR,
maps to an Illegal marker; the core traps when one is executed.
"""

from __future__ import annotations

from dataclasses import dataclass

from .lowfp import FP8, FP16, FP32, FpFormat

__all__ = [
    "CSR_CYCLE",
    "CSR_MHARTID",
    "CSR_NAMES",
    "Illegal",
    "Instruction",
    "MNEMONICS",
    "REG_NAMES",
    "decode",
    "encode",
    "reg_index",
]

CSR_CYCLE = 0xC00
CSR_MHARTID = 0xF14
CSR_NAMES = {CSR_CYCLE: "cycle", CSR_MHARTID: "mhartid"}

REG_NAMES = [
    "zero", "ra", "sp", "gp", "tp", "t0", "t1", "t2",
    "s0", "s1", "a0", "a1", "a2", "a3", "a4", "a5",
    "a6", "a7", "s2", "s3", "s4", "s5", "s6", "s7",
    "s8", "s9", "s10", "s11", "t3", "t4", "t5", "t6",
]
_REG_LOOKUP = {name: i for i, name in enumerate(REG_NAMES)}
_REG_LOOKUP.update({f"x{i}": i for i in range(32)})
_REG_LOOKUP["fp"] = 8


def reg_index(name: str) -> int:
    """Register number for an ABI or xN name."""
    try:
        return _REG_LOOKUP[name]
    except KeyError:
        raise ValueError(f"unknown register {name!r}") from None


@dataclass(frozen=True)
class Illegal:
    """Marker for a word with no defined decoding; traps when executed."""

    word: int


# The lane format is determined by the mnemonic suffix; for fcvt the
# suffix pair names destination then source and the tag reports the
# source, the kind of value the operand register holds.
_FMT_BY_SUFFIX = {"s": FP32, "h": FP16, "b": FP8}


@dataclass(frozen=True)
class Instruction:
    mnemonic: str
    rd: int = 0
    rs1: int = 0
    rs2: int = 0
    rs3: int = 0
    imm: int = 0
    csr: int = 0

    @property
    def fmt(self) -> FpFormat | None:
        """Lane format of FP/SIMD operands; None for integer/system ops."""
        head, _, tail = self.mnemonic.rpartition(".")
        if head.startswith(("f", "wdotp", "cdotp", "shuffle")):
            return _FMT_BY_SUFFIX[tail]
        return None

    @property
    def post_increment(self) -> bool:
        return self.mnemonic in ("p.lw", "p.sw")


@dataclass(frozen=True)
class _Enc:
    """One table row: operand format plus the fixed encoding fields.

    fmt picks both the bit layout and the assembly operand shape. funct7
    doubles as the 2-bit format field for the r4 layouts. rs2f pins the
    rs2 field of unary FP ops (fsqrt, fcvt); imm pins the immediate of the
    operand-less custom-0 ops.
    """

    fmt: str
    opcode: int
    funct3: int | None = None
    funct7: int | None = None
    rs2f: int | None = None
    imm: int | None = None


TABLE: dict[str, _Enc] = {
    # RV32I
    "lui": _Enc("u", 0x37),
    "auipc": _Enc("u", 0x17),
    "jal": _Enc("jal", 0x6F),
    "jalr": _Enc("jalr", 0x67, funct3=0),
    "beq": _Enc("branch", 0x63, funct3=0),
    "bne": _Enc("branch", 0x63, funct3=1),
    "blt": _Enc("branch", 0x63, funct3=4),
    "bge": _Enc("branch", 0x63, funct3=5),
    "bltu": _Enc("branch", 0x63, funct3=6),
    "bgeu": _Enc("branch", 0x63, funct3=7),
    "lb": _Enc("load", 0x03, funct3=0),
    "lh": _Enc("load", 0x03, funct3=1),
    "lw": _Enc("load", 0x03, funct3=2),
    "lbu": _Enc("load", 0x03, funct3=4),
    "lhu": _Enc("load", 0x03, funct3=5),
    "sb": _Enc("store", 0x23, funct3=0),
    "sh": _Enc("store", 0x23, funct3=1),
    "sw": _Enc("store", 0x23, funct3=2),
    "addi": _Enc("i", 0x13, funct3=0),
    "slti": _Enc("i", 0x13, funct3=2),
    "sltiu": _Enc("i", 0x13, funct3=3),
    "xori": _Enc("i", 0x13, funct3=4),
    "ori": _Enc("i", 0x13, funct3=6),
    "andi": _Enc("i", 0x13, funct3=7),
    "slli": _Enc("shift", 0x13, funct3=1, funct7=0x00),
    "srli": _Enc("shift", 0x13, funct3=5, funct7=0x00),
    "srai": _Enc("shift", 0x13, funct3=5, funct7=0x20),
    "add": _Enc("r", 0x33, funct3=0, funct7=0x00),
    "sub": _Enc("r", 0x33, funct3=0, funct7=0x20),
    "sll": _Enc("r", 0x33, funct3=1, funct7=0x00),
    "slt": _Enc("r", 0x33, funct3=2, funct7=0x00),
    "sltu": _Enc("r", 0x33, funct3=3, funct7=0x00),
    "xor": _Enc("r", 0x33, funct3=4, funct7=0x00),
    "srl": _Enc("r", 0x33, funct3=5, funct7=0x00),
    "sra": _Enc("r", 0x33, funct3=5, funct7=0x20),
    "or": _Enc("r", 0x33, funct3=6, funct7=0x00),
    "and": _Enc("r", 0x33, funct3=7, funct7=0x00),
    # RV32M
    "mul": _Enc("r", 0x33, funct3=0, funct7=0x01),
    "mulh": _Enc("r", 0x33, funct3=1, funct7=0x01),
    "mulhsu": _Enc("r", 0x33, funct3=2, funct7=0x01),
    "mulhu": _Enc("r", 0x33, funct3=3, funct7=0x01),
    "div": _Enc("r", 0x33, funct3=4, funct7=0x01),
    "divu": _Enc("r", 0x33, funct3=5, funct7=0x01),
    "rem": _Enc("r", 0x33, funct3=6, funct7=0x01),
    "remu": _Enc("r", 0x33, funct3=7, funct7=0x01),
    # custom-0: post-increment memory ops and cluster control
    "p.lw": _Enc("load", 0x0B, funct3=2),
    "p.sw": _Enc("store", 0x0B, funct3=3),
    "barrier": _Enc("none", 0x0B, funct3=0, imm=0),
    "halt": _Enc("none", 0x0B, funct3=0, imm=1),
    # custom-1: packed SIMD
    "wdotp.h": _Enc("r", 0x2B, funct3=0, funct7=0x00),
    "wdotp.b": _Enc("r", 0x2B, funct3=0, funct7=0x01),
    "cdotp.h": _Enc("r", 0x2B, funct3=0, funct7=0x02),
    "shuffle.h": _Enc("r", 0x2B, funct3=0, funct7=0x04),
    "shuffle.b": _Enc("r", 0x2B, funct3=0, funct7=0x05),
    # scalar FP (fmt in funct7[1:0]: S=00, H=10, B=11)
    "fadd.s": _Enc("r", 0x53, funct3=0, funct7=0x00),
    "fadd.h": _Enc("r", 0x53, funct3=0, funct7=0x02),
    "fsub.s": _Enc("r", 0x53, funct3=0, funct7=0x04),
    "fsub.h": _Enc("r", 0x53, funct3=0, funct7=0x06),
    "fmul.s": _Enc("r", 0x53, funct3=0, funct7=0x08),
    "fmul.h": _Enc("r", 0x53, funct3=0, funct7=0x0A),
    "fdiv.s": _Enc("r", 0x53, funct3=0, funct7=0x0C),
    "fdiv.h": _Enc("r", 0x53, funct3=0, funct7=0x0E),
    "fsqrt.s": _Enc("r2", 0x53, funct3=0, funct7=0x2C, rs2f=0),
    "fsqrt.h": _Enc("r2", 0x53, funct3=0, funct7=0x2E, rs2f=0),
    # fcvt.<dst>.<src>: funct7 = 0x20 | dstfmt, rs2 field = srcfmt
    "fcvt.s.h": _Enc("r2", 0x53, funct3=0, funct7=0x20, rs2f=2),
    "fcvt.s.b": _Enc("r2", 0x53, funct3=0, funct7=0x20, rs2f=3),
    "fcvt.h.s": _Enc("r2", 0x53, funct3=0, funct7=0x22, rs2f=0),
    "fcvt.h.b": _Enc("r2", 0x53, funct3=0, funct7=0x22, rs2f=3),
    "fcvt.b.s": _Enc("r2", 0x53, funct3=0, funct7=0x23, rs2f=0),
    "fcvt.b.h": _Enc("r2", 0x53, funct3=0, funct7=0x23, rs2f=2),
    # fused multiply-add (fmt in bits [26:25])
    "fmadd.s": _Enc("r4", 0x43, funct3=0, funct7=0),
    "fmadd.h": _Enc("r4", 0x43, funct3=0, funct7=2),
    "fmsub.s": _Enc("r4", 0x47, funct3=0, funct7=0),
    "fmsub.h": _Enc("r4", 0x47, funct3=0, funct7=2),
    # SYSTEM
    "csrr": _Enc("csr", 0x73, funct3=2),
}

MNEMONICS = tuple(TABLE)

_BY_OPCODE: dict[int, list[str]] = {}
for _m, _e in TABLE.items():
    _BY_OPCODE.setdefault(_e.opcode, []).append(_m)


def _sext(value: int, bits: int) -> int:
    mask = (1 << bits) - 1
    value &= mask
    return value - (1 << bits) if value & (1 << (bits - 1)) else value


def _imm_i(word: int) -> int:
    return _sext(word >> 20, 12)


def _imm_s(word: int) -> int:
    return _sext(((word >> 25) << 5) | ((word >> 7) & 0x1F), 12)


def _imm_b(word: int) -> int:
    v = (((word >> 31) & 1) << 12) | (((word >> 7) & 1) << 11)
    v |= (((word >> 25) & 0x3F) << 5) | (((word >> 8) & 0xF) << 1)
    return _sext(v, 13)


def _imm_j(word: int) -> int:
    v = (((word >> 31) & 1) << 20) | (((word >> 12) & 0xFF) << 12)
    v |= (((word >> 20) & 1) << 11) | (((word >> 21) & 0x3FF) << 1)
    return _sext(v, 21)


def decode(word: int) -> Instruction | Illegal:
    """Decode a 32-bit word; total, an undecodable word yields Illegal."""
    if not 0 <= word < (1 << 32):
        raise ValueError(f"word {word:#x} is not 32-bit")
    opcode = word & 0x7F
    funct3 = (word >> 12) & 0x7
    funct7 = word >> 25
    rd = (word >> 7) & 0x1F
    rs1 = (word >> 15) & 0x1F
    rs2 = (word >> 20) & 0x1F
    for m in _BY_OPCODE.get(opcode, ()):
        e = TABLE[m]
        if e.funct3 is not None and funct3 != e.funct3:
            continue
        f = e.fmt
        if f == "u":
            return Instruction(m, rd=rd, imm=(word >> 12) & 0xFFFFF)
        if f == "jal":
            return Instruction(m, rd=rd, imm=_imm_j(word))
        if f == "jalr" or f == "load" or f == "i":
            return Instruction(m, rd=rd, rs1=rs1, imm=_imm_i(word))
        if f == "branch":
            return Instruction(m, rs1=rs1, rs2=rs2, imm=_imm_b(word))
        if f == "store":
            return Instruction(m, rs1=rs1, rs2=rs2, imm=_imm_s(word))
        if f == "shift":
            if funct7 != e.funct7:
                continue
            return Instruction(m, rd=rd, rs1=rs1, imm=rs2)
        if f == "r":
            if funct7 != e.funct7:
                continue
            return Instruction(m, rd=rd, rs1=rs1, rs2=rs2)
        if f == "r2":
            if funct7 != e.funct7 or rs2 != e.rs2f:
                continue
            return Instruction(m, rd=rd, rs1=rs1)
        if f == "r4":
            if (funct7 & 0x3) != e.funct7:
                continue
            return Instruction(m, rd=rd, rs1=rs1, rs2=rs2, rs3=word >> 27)
        if f == "csr":
            csr = word >> 20
            if rs1 != 0 or csr not in CSR_NAMES:
                continue
            return Instruction(m, rd=rd, csr=csr)
        if f == "none":
            if rd == 0 and rs1 == 0 and _imm_i(word) == e.imm:
                return Instruction(m)
            continue
        raise AssertionError(f"unhandled format {f}")
    return Illegal(word)


def _check_reg(name: str, v: int) -> int:
    if not 0 <= v < 32:
        raise ValueError(f"{name} {v} out of range")
    return v


def _check_imm(m: str, v: int, bits: int, *, even: bool = False) -> int:
    lo, hi = -(1 << (bits - 1)), (1 << (bits - 1)) - 1
    if not lo <= v <= hi:
        raise ValueError(f"{m}: immediate {v} does not fit {bits} bits")
    if even and v & 1:
        raise ValueError(f"{m}: immediate {v} must be even")
    return v


def encode(inst: Instruction) -> int:
    """Encode back to a 32-bit word; inverse of decode on valid words."""
    m = inst.mnemonic
    try:
        e = TABLE[m]
    except KeyError:
        raise ValueError(f"unknown mnemonic {m!r}") from None
    f = e.fmt
    rd = _check_reg("rd", inst.rd)
    rs1 = _check_reg("rs1", inst.rs1)
    rs2 = _check_reg("rs2", inst.rs2)
    op = e.opcode
    f3 = (e.funct3 or 0) << 12
    if f == "u":
        if not 0 <= inst.imm <= 0xFFFFF:
            raise ValueError(f"{m}: immediate {inst.imm:#x} does not fit 20 bits")
        return (inst.imm << 12) | (rd << 7) | op
    if f == "jal":
        v = _check_imm(m, inst.imm, 21, even=True) & 0x1FFFFF
        w = ((v >> 20) & 1) << 31 | ((v >> 1) & 0x3FF) << 21 | ((v >> 11) & 1) << 20
        w |= ((v >> 12) & 0xFF) << 12
        return w | (rd << 7) | op
    if f in ("jalr", "load", "i"):
        v = _check_imm(m, inst.imm, 12) & 0xFFF
        return (v << 20) | (rs1 << 15) | f3 | (rd << 7) | op
    if f == "branch":
        v = _check_imm(m, inst.imm, 13, even=True) & 0x1FFF
        w = ((v >> 12) & 1) << 31 | ((v >> 5) & 0x3F) << 25
        w |= ((v >> 1) & 0xF) << 8 | ((v >> 11) & 1) << 7
        return w | (rs2 << 20) | (rs1 << 15) | f3 | op
    if f == "store":
        v = _check_imm(m, inst.imm, 12) & 0xFFF
        return ((v >> 5) << 25) | (rs2 << 20) | (rs1 << 15) | f3 | ((v & 0x1F) << 7) | op
    if f == "shift":
        if not 0 <= inst.imm < 32:
            raise ValueError(f"{m}: shift amount {inst.imm} out of range")
        return (e.funct7 << 25) | (inst.imm << 20) | (rs1 << 15) | f3 | (rd << 7) | op
    if f == "r":
        return (e.funct7 << 25) | (rs2 << 20) | (rs1 << 15) | f3 | (rd << 7) | op
    if f == "r2":
        return (e.funct7 << 25) | (e.rs2f << 20) | (rs1 << 15) | f3 | (rd << 7) | op
    if f == "r4":
        rs3 = _check_reg("rs3", inst.rs3)
        return (rs3 << 27) | (e.funct7 << 25) | (rs2 << 20) | (rs1 << 15) | f3 | (rd << 7) | op
    if f == "csr":
        if inst.csr not in CSR_NAMES:
            raise ValueError(f"{m}: unknown CSR {inst.csr:#x}")
        return (inst.csr << 20) | f3 | (rd << 7) | op
    if f == "none":
        return ((e.imm & 0xFFF) << 20) | f3 | op
    raise AssertionError(f"unhandled format {f}")
