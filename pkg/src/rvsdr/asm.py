"""Two-pass assembler, disassembler, and the ProgramImage container.

Source syntax, one statement per line:

    label:              # labels may share a line with a statement
    addi a0, zero, 5    # '#' starts a comment
    lw   a1, 8(sp)
    beq  a0, a1, done   # branch targets: label or numeric pc offset
    .data
    table: .word 1, 2, 0x30

Sections are .text (instructions and data directives) and .data (data
directives only). Supported directives: .text, .data, .word, .half,
.byte, .align, .space. Pseudo-instructions: nop, mv, j, li (li expands
to addi, lui, or lui+addi depending on the value).

disassemble() emits assembly that reassembles to the identical text and
data bytes (given the same base addresses): ABI register names, numeric
pc-relative branch targets, CSR names, labels recovered from the symbol
table, undecodable words as .word directives. format_listing() is the
human-oriented variant with address and word columns.
"""

from __future__ import annotations

import json
import re
import struct
from dataclasses import dataclass, field
from pathlib import Path

from .isa import (
    CSR_NAMES,
    Illegal,
    Instruction,
    REG_NAMES,
    TABLE,
    decode,
    encode,
    reg_index,
)

__all__ = [
    "AsmError",
    "ProgramImage",
    "assemble",
    "disassemble",
    "disassemble_text",
    "disassemble_word",
    "format_listing",
]

TEXT_BASE = 0x0001_0000
DATA_BASE = 0x8000_0000

_CSR_BY_NAME = {name: num for num, name in CSR_NAMES.items()}


class AsmError(ValueError):
    """Assembly failure; the message carries the 1-based source line."""

    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass
class ProgramImage:
    """Assembled program: text and data blobs plus the symbol table."""

    text: bytes
    data: bytes = b""
    text_base: int = TEXT_BASE
    data_base: int = DATA_BASE
    symbols: dict[str, int] = field(default_factory=dict)

    @property
    def entry(self) -> int:
        return self.text_base

    @property
    def text_words(self) -> list[tuple[int, int]]:
        """(address, instruction word) pairs of the text segment."""
        n = len(self.text) // 4
        ws = struct.unpack(f"<{n}I", self.text[: 4 * n])
        return [(self.text_base + 4 * i, w) for i, w in enumerate(ws)]

    @property
    def data_runs(self) -> list[tuple[int, bytes]]:
        """(address, byte run) pairs; one contiguous run per segment."""
        runs = []
        if self.data:
            runs.append((self.data_base, self.data))
        return runs

    # Binary layout: magic, entry, run count, per-run (address, length)
    # headers, then the raw run payloads in order. Text is the run whose
    # address equals entry. Symbols go to a sidecar of "name hexaddr" lines.
    _MAGIC = b"RVIMG\x01"

    def save(self, path: str | Path) -> None:
        """Write the binary image plus a .sym symbol sidecar."""
        path = Path(path)
        runs = [(self.text_base, self.text)]
        if self.data:
            runs.append((self.data_base, self.data))
        blob = self._MAGIC + struct.pack("<II", self.entry, len(runs))
        for addr, payload in runs:
            blob += struct.pack("<II", addr, len(payload))
        for _, payload in runs:
            blob += payload
        path.write_bytes(blob)
        sidecar = path.with_suffix(path.suffix + ".sym")
        lines = [f"{name} {addr:08x}" for name, addr in self.symbols.items()]
        sidecar.write_text("\n".join(lines) + ("\n" if lines else ""))

    @classmethod
    def load(cls, path: str | Path) -> "ProgramImage":
        path = Path(path)
        blob = path.read_bytes()
        base = len(cls._MAGIC) + 8
        if len(blob) < base or blob[: len(cls._MAGIC)] != cls._MAGIC:
            raise ValueError(f"{path}: not a program image")
        entry, nruns = struct.unpack_from("<II", blob, len(cls._MAGIC))
        if not 1 <= nruns <= 2 or len(blob) < base + 8 * nruns:
            raise ValueError(f"{path}: corrupt run table")
        runs = []
        offset = base + 8 * nruns
        for i in range(nruns):
            addr, length = struct.unpack_from("<II", blob, base + 8 * i)
            runs.append((addr, blob[offset:offset + length]))
            offset += length
        if offset != len(blob):
            raise ValueError(f"{path}: truncated image")
        if runs[0][0] != entry:
            raise ValueError(f"{path}: entry does not address the text run")
        symbols: dict[str, int] = {}
        sidecar = path.with_suffix(path.suffix + ".sym")
        if sidecar.exists():
            for line in sidecar.read_text().splitlines():
                if line.strip():
                    name, addr = line.split()
                    symbols[name] = int(addr, 16)
        img = cls(text=runs[0][1], text_base=runs[0][0], symbols=symbols)
        if len(runs) > 1:
            img.data, img.data_base = runs[1][1], runs[1][0]
        return img


_LABEL_RE = re.compile(r"^([A-Za-z_.$][\w.$]*):")
_SYMBOL_RE = re.compile(r"^([A-Za-z_.$][\w.$]*)([+-]\d+)?$")
_MEM_RE = re.compile(r"^(.+)\(\s*(\w+)\s*\)$")


def _parse_int(tok: str) -> int:
    return int(tok, 0)


@dataclass
class _Stmt:
    line: int
    kind: str            # "inst" or directive name
    mnemonic: str = ""
    args: list[str] = field(default_factory=list)
    section: str = ""
    offset: int = 0
    size: int = 0


def _li_parts(value: int) -> list[tuple[str, int]]:
    """Split a 32-bit value into (mnemonic, imm) steps: addi / lui / both."""
    value &= 0xFFFFFFFF
    signed = value - (1 << 32) if value >> 31 else value
    if -2048 <= signed <= 2047:
        return [("addi", signed)]
    lo = ((value & 0xFFF) ^ 0x800) - 0x800
    hi = ((value - lo) >> 12) & 0xFFFFF
    if lo == 0:
        return [("lui", hi)]
    return [("lui", hi), ("addi", lo)]


class _Assembler:
    def __init__(self, source: str, text_base: int, data_base: int):
        self.source = source
        self.text_base = text_base
        self.data_base = data_base
        self.symbols: dict[str, int] = {}
        self.stmts: list[_Stmt] = []

    def run(self) -> ProgramImage:
        self._pass1()
        text, data = self._pass2()
        return ProgramImage(
            text=bytes(text), data=bytes(data),
            text_base=self.text_base, data_base=self.data_base,
            symbols=dict(self.symbols),
        )

    # pass 1: split statements, size them, place labels

    def _pass1(self) -> None:
        offsets = {"text": 0, "data": 0}
        section = "text"
        label_lines: dict[str, int] = {}
        for lineno, raw in enumerate(self.source.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            while True:
                m = _LABEL_RE.match(line)
                if not m:
                    break
                name = m.group(1)
                if name in self.symbols:
                    raise AsmError(
                        lineno,
                        f"duplicate label {name!r} (first defined on line "
                        f"{label_lines[name]})",
                    )
                base = self.text_base if section == "text" else self.data_base
                self.symbols[name] = base + offsets[section]
                label_lines[name] = lineno
                line = line[m.end():].strip()
            if not line:
                continue
            head, _, rest = line.partition(" ")
            head = head.lower()
            args = [a.strip() for a in rest.strip().split(",")] if rest.strip() else []
            if head.startswith("."):
                section = self._directive(lineno, head, args, section, offsets)
                continue
            if head not in TABLE and head not in ("nop", "mv", "j", "li"):
                raise AsmError(lineno, f"unknown mnemonic {head!r}")
            if section != "text":
                raise AsmError(lineno, "instructions are only allowed in .text")
            size = 4
            if head == "li":
                if len(args) != 2:
                    raise AsmError(lineno, "li takes rd, value")
                try:
                    size = 4 * len(_li_parts(self._int_only(lineno, args[1])))
                except AsmError:
                    size = 8  # symbol value, resolved in pass 2
            st = _Stmt(lineno, "inst", head, args, section, offsets[section], size)
            self.stmts.append(st)
            offsets[section] += size

    def _directive(self, lineno: int, head: str, args: list[str],
                   section: str, offsets: dict[str, int]) -> str:
        if head == ".text":
            return "text"
        if head == ".data":
            return "data"
        if head in (".word", ".half", ".byte"):
            unit = {".word": 4, ".half": 2, ".byte": 1}[head]
            if not args:
                raise AsmError(lineno, f"{head} needs at least one value")
            st = _Stmt(lineno, head, "", args, section, offsets[section], unit * len(args))
            self.stmts.append(st)
            offsets[section] += st.size
            return section
        if head in (".align", ".space"):
            if len(args) != 1:
                raise AsmError(lineno, f"{head} takes one argument")
            n = self._int_only(lineno, args[0])
            if head == ".align":
                step = 1 << n
                pad = -offsets[section] % step
            else:
                pad = n
            if pad:
                st = _Stmt(lineno, ".space", "", [str(pad)], section,
                           offsets[section], pad)
                self.stmts.append(st)
                offsets[section] += pad
            return section
        raise AsmError(lineno, f"unknown directive {head!r}")

    def _int_only(self, lineno: int, tok: str) -> int:
        try:
            return _parse_int(tok)
        except ValueError:
            raise AsmError(lineno, f"expected a number, got {tok!r}") from None

    # pass 2: encode

    def _value(self, lineno: int, tok: str) -> int:
        """Integer literal or label (plus optional +N/-N)."""
        try:
            return _parse_int(tok)
        except ValueError:
            pass
        m = _SYMBOL_RE.match(tok)
        if m and m.group(1) in self.symbols:
            return self.symbols[m.group(1)] + int(m.group(2) or 0)
        raise AsmError(lineno, f"undefined label {tok!r}")

    def _reg(self, lineno: int, tok: str) -> int:
        try:
            return reg_index(tok)
        except ValueError as exc:
            raise AsmError(lineno, str(exc)) from None

    def _mem(self, lineno: int, tok: str) -> tuple[int, int]:
        m = _MEM_RE.match(tok)
        if not m:
            raise AsmError(lineno, f"expected imm(reg), got {tok!r}")
        return self._value(lineno, m.group(1).strip()), self._reg(lineno, m.group(2))

    def _target(self, lineno: int, tok: str, pc: int) -> int:
        """Branch/jump offset: a label becomes target - pc, a number is
        taken as the pc-relative offset itself."""
        try:
            return _parse_int(tok)
        except ValueError:
            pass
        return self._value(lineno, tok) - pc

    def _nargs(self, st: _Stmt, n: int) -> None:
        if len(st.args) != n:
            raise AsmError(st.line, f"{st.mnemonic} takes {n} operand(s), "
                                    f"got {len(st.args)}")

    def _pass2(self) -> tuple[bytearray, bytearray]:
        out = {"text": bytearray(), "data": bytearray()}
        for st in self.stmts:
            buf = out[st.section]
            assert len(buf) == st.offset, f"line {st.line}: phase error"
            if st.kind == "inst":
                for word in self._encode_stmt(st):
                    buf += struct.pack("<I", word)
            elif st.kind in (".word", ".half", ".byte"):
                unit = {".word": 4, ".half": 2, ".byte": 1}[st.kind]
                limit = 1 << (8 * unit)
                for tok in st.args:
                    v = self._value(st.line, tok) % limit
                    buf += v.to_bytes(unit, "little")
            elif st.kind == ".space":
                buf += bytes(int(st.args[0]))
            else:
                raise AssertionError(st.kind)
        return out["text"], out["data"]

    def _encode_stmt(self, st: _Stmt) -> list[int]:
        line, m = st.line, st.mnemonic
        pc = self.text_base + st.offset
        # pseudo-instructions first
        if m == "nop":
            self._nargs(st, 0)
            return [encode(Instruction("addi"))]
        if m == "mv":
            self._nargs(st, 2)
            rd, rs = (self._reg(line, a) for a in st.args)
            return [encode(Instruction("addi", rd=rd, rs1=rs))]
        if m == "j":
            self._nargs(st, 1)
            off = self._target(line, st.args[0], pc)
            return [self._enc(line, Instruction("jal", imm=off))]
        if m == "li":
            rd = self._reg(line, st.args[0])
            value = self._value(line, st.args[1])
            parts = _li_parts(value)
            # a symbol is sized at 8 bytes in pass 1; if its value turns
            # out to fit a shorter form, pad with addi rd, rd, 0
            parts += [("addi", 0)] * (st.size // 4 - len(parts))
            words = []
            for op, imm in parts:
                if op == "lui":
                    words.append(self._enc(line, Instruction("lui", rd=rd, imm=imm)))
                else:
                    src = rd if words else 0
                    words.append(self._enc(line, Instruction("addi", rd=rd, rs1=src, imm=imm)))
            return words
        fmt = TABLE[m].fmt
        if fmt == "u":
            self._nargs(st, 2)
            rd = self._reg(line, st.args[0])
            return [self._enc(line, Instruction(m, rd=rd, imm=self._value(line, st.args[1])))]
        if fmt == "jal":
            self._nargs(st, 2)
            rd = self._reg(line, st.args[0])
            off = self._target(line, st.args[1], pc)
            return [self._enc(line, Instruction(m, rd=rd, imm=off))]
        if fmt in ("jalr", "load"):
            self._nargs(st, 2)
            rd = self._reg(line, st.args[0])
            imm, rs1 = self._mem(line, st.args[1])
            return [self._enc(line, Instruction(m, rd=rd, rs1=rs1, imm=imm))]
        if fmt == "store":
            self._nargs(st, 2)
            rs2 = self._reg(line, st.args[0])
            imm, rs1 = self._mem(line, st.args[1])
            return [self._enc(line, Instruction(m, rs1=rs1, rs2=rs2, imm=imm))]
        if fmt == "branch":
            self._nargs(st, 3)
            rs1 = self._reg(line, st.args[0])
            rs2 = self._reg(line, st.args[1])
            off = self._target(line, st.args[2], pc)
            return [self._enc(line, Instruction(m, rs1=rs1, rs2=rs2, imm=off))]
        if fmt in ("i", "shift"):
            self._nargs(st, 3)
            rd = self._reg(line, st.args[0])
            rs1 = self._reg(line, st.args[1])
            imm = self._value(line, st.args[2])
            return [self._enc(line, Instruction(m, rd=rd, rs1=rs1, imm=imm))]
        if fmt == "r":
            self._nargs(st, 3)
            rd, rs1, rs2 = (self._reg(line, a) for a in st.args)
            return [self._enc(line, Instruction(m, rd=rd, rs1=rs1, rs2=rs2))]
        if fmt == "r2":
            self._nargs(st, 2)
            rd, rs1 = (self._reg(line, a) for a in st.args)
            return [self._enc(line, Instruction(m, rd=rd, rs1=rs1))]
        if fmt == "r4":
            self._nargs(st, 4)
            rd, rs1, rs2, rs3 = (self._reg(line, a) for a in st.args)
            return [self._enc(line, Instruction(m, rd=rd, rs1=rs1, rs2=rs2, rs3=rs3))]
        if fmt == "csr":
            self._nargs(st, 2)
            rd = self._reg(line, st.args[0])
            tok = st.args[1]
            csr = _CSR_BY_NAME.get(tok)
            if csr is None:
                csr = self._int_only(line, tok)
            return [self._enc(line, Instruction(m, rd=rd, csr=csr))]
        if fmt == "none":
            self._nargs(st, 0)
            return [self._enc(line, Instruction(m))]
        raise AssertionError(fmt)

    def _enc(self, line: int, inst: Instruction) -> int:
        try:
            return encode(inst)
        except ValueError as exc:
            raise AsmError(line, str(exc)) from None


def assemble(source: str, *, text_base: int = TEXT_BASE,
             data_base: int = DATA_BASE) -> ProgramImage:
    """Assemble source text into a ProgramImage."""
    return _Assembler(source, text_base, data_base).run()


def disassemble_word(word: int) -> str:
    """One instruction word to canonical assembly text; total, an
    undecodable word renders as a .word directive."""
    inst = decode(word)
    if isinstance(inst, Illegal):
        return f".word {word:#010x}"
    if word == 0x00000013:
        return "nop"
    m = inst.mnemonic
    fmt = TABLE[m].fmt
    r = REG_NAMES
    if fmt == "u":
        return f"{m} {r[inst.rd]}, {inst.imm:#x}"
    if fmt == "jal":
        return f"{m} {r[inst.rd]}, {inst.imm}"
    if fmt in ("jalr", "load"):
        return f"{m} {r[inst.rd]}, {inst.imm}({r[inst.rs1]})"
    if fmt == "store":
        return f"{m} {r[inst.rs2]}, {inst.imm}({r[inst.rs1]})"
    if fmt == "branch":
        return f"{m} {r[inst.rs1]}, {r[inst.rs2]}, {inst.imm}"
    if fmt in ("i", "shift"):
        return f"{m} {r[inst.rd]}, {r[inst.rs1]}, {inst.imm}"
    if fmt == "r":
        return f"{m} {r[inst.rd]}, {r[inst.rs1]}, {r[inst.rs2]}"
    if fmt == "r2":
        return f"{m} {r[inst.rd]}, {r[inst.rs1]}"
    if fmt == "r4":
        return f"{m} {r[inst.rd]}, {r[inst.rs1]}, {r[inst.rs2]}, {r[inst.rs3]}"
    if fmt == "csr":
        return f"{m} {r[inst.rd]}, {CSR_NAMES[inst.csr]}"
    if fmt == "none":
        return m
    raise AssertionError(fmt)


def disassemble_text(image: ProgramImage) -> list[str]:
    """Text segment as plain instruction lines, one per word, no labels."""
    return [disassemble_word(w) for _, w in image.text_words]


def _labels_by_address(image: ProgramImage) -> dict[int, list[str]]:
    by_addr: dict[int, list[str]] = {}
    for name, addr in image.symbols.items():
        by_addr.setdefault(addr, []).append(name)
    return by_addr


def disassemble(image: ProgramImage) -> str:
    """Full image as assembly source; reassembling it with the same base
    addresses reproduces the text and data bytes exactly."""
    by_addr = _labels_by_address(image)
    lines = [".text"]
    for addr, word in image.text_words:
        for name in by_addr.get(addr, ()):
            lines.append(f"{name}:")
        lines.append(f"    {disassemble_word(word)}")
    if image.data:
        lines.append(".data")
        # break byte runs at labeled addresses so labels stay attached
        cuts = sorted(
            {0, len(image.data)}
            | {a - image.data_base for a in by_addr
               if image.data_base <= a < image.data_base + len(image.data)}
        )
        for lo, hi in zip(cuts, cuts[1:]):
            for name in by_addr.get(image.data_base + lo, ()):
                lines.append(f"{name}:")
            chunk = image.data[lo:hi]
            for i in range(0, len(chunk), 8):
                row = ", ".join(f"{b:#04x}" for b in chunk[i:i + 8])
                lines.append(f"    .byte {row}")
        end = image.data_base + len(image.data)
        for name in by_addr.get(end, ()):
            lines.append(f"{name}:")
    return "\n".join(lines) + "\n"


def format_listing(image: ProgramImage) -> str:
    """Human-oriented listing with address and word columns."""
    by_addr = _labels_by_address(image)
    lines = []
    for addr, word in image.text_words:
        for name in by_addr.get(addr, ()):
            lines.append(f"{name}:")
        lines.append(f"    {addr:08x}: {word:08x}  {disassemble_word(word)}")
    return "\n".join(lines) + ("\n" if lines else "")
