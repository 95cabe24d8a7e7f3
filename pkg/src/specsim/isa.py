"""Toy ISA: instruction model, text assembler and disassembler.

Instructions are a fixed 4 bytes wide and live in a text segment addressed
by virtual address. There is no binary encoding; a Program carries decoded
instructions directly.
"""
from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field

INSTR_WIDTH = 4
NUM_REGS = 32
LINK_REG = 31
MASK64 = (1 << 64) - 1


class Op(enum.Enum):
    ADD = "ADD"
    SUB = "SUB"
    MUL = "MUL"
    AND = "AND"
    OR = "OR"
    XOR = "XOR"
    SHL = "SHL"
    SHR = "SHR"
    MOVI = "MOVI"
    LOAD = "LOAD"
    STORE = "STORE"
    BEQ = "BEQ"
    BLT = "BLT"
    JMP = "JMP"
    JMPR = "JMPR"
    JMPM = "JMPM"
    CALL = "CALL"
    RET = "RET"
    CLFLUSH = "CLFLUSH"
    RDCYCLE = "RDCYCLE"
    FENCE = "FENCE"
    YIELD = "YIELD"
    HALT = "HALT"


ALU_OPS = frozenset({Op.ADD, Op.SUB, Op.MUL, Op.AND, Op.OR, Op.XOR, Op.SHL, Op.SHR})
CONDITIONAL = frozenset({Op.BEQ, Op.BLT})
INDIRECT = frozenset({Op.JMPR, Op.JMPM})
DIRECT = frozenset({Op.JMP, Op.CALL})
BRANCHES = CONDITIONAL | INDIRECT | DIRECT | {Op.RET}


def branch_class(op: Op) -> str | None:
    """Predictor class of a control-transfer opcode, None for everything else."""
    if op in CONDITIONAL:
        return "conditional"
    if op in INDIRECT:
        return "indirect"
    if op is Op.CALL:
        return "call"
    if op is Op.RET:
        return "return"
    if op is Op.JMP:
        return "direct"
    return None


@dataclass(frozen=True)
class Reg:
    num: int

    def __post_init__(self):
        if not 0 <= self.num < NUM_REGS:
            raise ValueError(f"register r{self.num} out of range")

    def __str__(self):
        return f"r{self.num}"


@dataclass(frozen=True)
class Imm:
    value: int
    label: str | None = None

    def __str__(self):
        if self.label is None:
            return str(self.value)
        return self.label


@dataclass(frozen=True)
class Mem:
    base: int | None = None
    index: int | None = None
    scale: int = 1
    disp: int = 0
    label: str | None = None
    label_offset: int = 0

    def __post_init__(self):
        if self.scale not in (1, 2, 4, 8):
            raise ValueError(f"bad scale {self.scale}")
        for r in (self.base, self.index):
            if r is not None and not 0 <= r < NUM_REGS:
                raise ValueError(f"register r{r} out of range")

    def address(self, regs) -> int:
        a = self.disp
        if self.base is not None:
            a += regs[self.base]
        if self.index is not None:
            a += regs[self.index] * self.scale
        return a & MASK64

    def regs(self) -> tuple[int, ...]:
        return tuple(r for r in (self.base, self.index) if r is not None)

    def __str__(self):
        s = " + ".join(t for t in (
            None if self.base is None else f"r{self.base}",
            None if self.index is None else f"r{self.index}*{self.scale}",
            self.label,
        ) if t)
        num = self.label_offset if self.label is not None else self.disp
        if num < 0:
            s = f"{s} - {_hex(-num)}" if s else f"-{_hex(-num)}"
        elif num > 0 or not s:
            s = f"{s} + {_hex(num)}" if s else _hex(num)
        return f"[{s}]"


def _hex(v: int) -> str:
    return f"0x{v:X}"


R, I, M = "R", "I", "M"
RM = (R, M)
RI = (R, I)

# operand kinds per opcode; a tuple entry means "one of"
SIGNATURES: dict[Op, tuple] = {
    **{op: (R, R, RI) for op in ALU_OPS},
    Op.MOVI: (R, I),
    Op.LOAD: (R, M),
    Op.STORE: (R, M),
    Op.BEQ: (R, RM, I),
    Op.BLT: (R, RM, I),
    Op.JMP: (I,),
    Op.JMPR: (R,),
    Op.JMPM: (M,),
    Op.CALL: (I,),
    Op.RET: (),
    Op.CLFLUSH: (M,),
    Op.RDCYCLE: (R,),
    Op.FENCE: (),
    Op.YIELD: (),
    Op.HALT: (),
}

_KIND = {Reg: R, Imm: I, Mem: M}


@dataclass(frozen=True)
class Instruction:
    op: Op
    operands: tuple = ()

    def __post_init__(self):
        sig = SIGNATURES[self.op]
        if len(sig) != len(self.operands):
            raise ValueError(f"{self.op.value} takes {len(sig)} operands, got {len(self.operands)}")
        for want, got in zip(sig, self.operands):
            kind = _KIND.get(type(got))
            if kind is None or (kind not in want if isinstance(want, tuple) else kind != want):
                raise ValueError(f"{self.op.value}: operand {got!s} has wrong kind")

    @property
    def mem(self) -> Mem | None:
        for o in self.operands:
            if isinstance(o, Mem):
                return o
        return None

    @property
    def dest(self) -> int | None:
        """Register written by this instruction (0 means none)."""
        if self.op in ALU_OPS or self.op in (Op.MOVI, Op.LOAD, Op.RDCYCLE):
            return self.operands[0].num
        if self.op is Op.CALL:
            return LINK_REG
        return None

    def sources(self) -> tuple[int, ...]:
        """Registers read, in a fixed order."""
        op, ops = self.op, self.operands
        if op in ALU_OPS:
            return tuple(o.num for o in ops[1:] if isinstance(o, Reg))
        if op is Op.LOAD:
            return ops[1].regs()
        if op is Op.STORE:
            return (ops[0].num,) + ops[1].regs()
        if op in CONDITIONAL:
            second = ops[1]
            return (ops[0].num,) + ((second.num,) if isinstance(second, Reg) else second.regs())
        if op is Op.JMPR:
            return (ops[0].num,)
        if op in (Op.JMPM, Op.CLFLUSH):
            return ops[0].regs()
        if op is Op.RET:
            return (LINK_REG,)
        return ()

    @property
    def target(self) -> int | None:
        """Statically known branch target, if any."""
        if self.op in CONDITIONAL:
            return self.operands[2].value & MASK64
        if self.op in DIRECT:
            return self.operands[0].value & MASK64
        return None

    def __str__(self):
        if not self.operands:
            return self.op.value
        return f"{self.op.value} " + ", ".join(str(o) for o in self.operands)


class AsmError(ValueError):
    def __init__(self, msg: str, line: int = 0, col: int = 0):
        super().__init__(f"line {line}, col {col}: {msg}" if line else msg)
        self.line = line
        self.col = col


@dataclass
class Program:
    """Assembled code and data.

    ``text`` and ``data`` are kept sorted by address, which for the usual
    monotone ``.org`` layout is also source order.
    """
    text: tuple = ()
    data: tuple = ()
    labels: dict = field(default_factory=dict)
    entry: int = 0
    _by_addr: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        self.text = tuple(sorted(self.text, key=lambda t: t[0]))
        self.data = tuple(sorted(self.data, key=lambda t: t[0]))
        self._by_addr = dict(self.text)

    def at(self, addr: int) -> Instruction | None:
        return self._by_addr.get(addr)

    def addr(self, label: str) -> int:
        return self.labels[label]

    def pages(self, page_size: int = 4096) -> set[int]:
        """Page numbers touched by text or data."""
        out = set()
        for a, _ in self.text:
            out.add(a // page_size)
        for a, b in self.data:
            for p in range(a // page_size, (a + max(len(b), 1) - 1) // page_size + 1):
                out.add(p)
        return out


_LABEL_RE = re.compile(r"\s*([A-Za-z_.][\w.]*)\s*:")
_IDENT_RE = re.compile(r"[A-Za-z_.][\w.]*$")
_REG_RE = re.compile(r"[rR](\d+)$")


def _strip_comment(line: str) -> str:
    i = line.find(";")
    return line if i < 0 else line[:i]


def _split_operands(s: str, lineno: int, col0: int) -> list[tuple[str, int]]:
    out, depth, start = [], 0, 0
    for i, ch in enumerate(s):
        if ch == "[":
            depth += 1
        elif ch == "]":
            depth -= 1
            if depth < 0:
                raise AsmError("unbalanced ']'", lineno, col0 + i + 1)
        elif ch == "," and depth == 0:
            out.append((s[start:i], col0 + start))
            start = i + 1
    if depth:
        raise AsmError("unbalanced '['", lineno, col0 + len(s))
    out.append((s[start:], col0 + start))
    res = []
    for tok, c in out:
        lead = len(tok) - len(tok.lstrip())
        res.append((tok.strip(), c + lead + 1))
    if len(res) == 1 and res[0][0] == "":
        return []
    return res


def _parse_number(tok: str) -> int | None:
    t = tok.strip().replace("_", "")
    neg = t.startswith("-")
    if neg:
        t = t[1:].strip()
    try:
        if t.lower().startswith("0x"):
            v = int(t, 16)
        elif t.isdigit():
            v = int(t, 10)
        else:
            return None
    except ValueError:
        return None
    return -v if neg else v


class _Assembler:
    def __init__(self, source: str):
        self.lines = source.splitlines()
        self.labels: dict[str, int] = {}

    def run(self) -> Program:
        stmts = self._layout()
        text, data = [], {}
        first_instr = None
        for lineno, col, addr, kind, body in stmts:
            if kind == "instr":
                ins = self._instruction(body, lineno, col)
                text.append((addr, ins))
                if first_instr is None:
                    first_instr = addr
            elif kind == "data":
                for i, b in enumerate(body):
                    data[addr + i] = b
        if not text:
            raise AsmError("program has no instructions")
        entry = self.labels.get("start", first_instr)
        if entry not in {a for a, _ in text}:
            raise AsmError("entry label 'start' does not point at an instruction")
        return Program(tuple(text), _runs(data), dict(self.labels), entry)

    def _layout(self):
        """First pass: addresses, labels, overlap check."""
        loc = 0
        stmts = []
        owner: dict[int, int] = {}

        def claim(start, n, lineno, col):
            for a in range(start, start + n):
                if a in owner:
                    raise AsmError(f"overlapping segments at 0x{a:X} (also line {owner[a]})", lineno, col)
                owner[a] = lineno

        for lineno, raw in enumerate(self.lines, 1):
            line = _strip_comment(raw)
            pos = 0
            while True:
                m = _LABEL_RE.match(line, pos)
                if not m:
                    break
                name = m.group(1)
                if name in self.labels:
                    raise AsmError(f"duplicate label '{name}'", lineno, m.start(1) + 1)
                self.labels[name] = loc
                pos = m.end()
            rest = line[pos:]
            if not rest.strip():
                continue
            col = pos + len(rest) - len(rest.lstrip()) + 1
            body = rest.strip()
            head, _, args = body.partition(" ")
            head_l = head.lower()
            if head_l == ".org":
                v = _parse_number(args)
                if v is None or v < 0:
                    raise AsmError(f"bad .org address '{args.strip()}'", lineno, col)
                loc = v
            elif head_l == ".byte":
                vals = []
                for tok, c in _split_operands(args, lineno, col + len(head)):
                    v = _parse_number(tok)
                    if v is None or not 0 <= v <= 255:
                        raise AsmError(f"bad byte value '{tok}'", lineno, c)
                    vals.append(v)
                if not vals:
                    raise AsmError(".byte needs at least one value", lineno, col)
                claim(loc, len(vals), lineno, col)
                stmts.append((lineno, col, loc, "data", vals))
                loc += len(vals)
            elif head_l == ".fill":
                ops = _split_operands(args, lineno, col + len(head))
                if len(ops) != 2:
                    raise AsmError(".fill takes <count>, <byte>", lineno, col)
                n, b = _parse_number(ops[0][0]), _parse_number(ops[1][0])
                if n is None or n < 0:
                    raise AsmError(f"bad fill count '{ops[0][0]}'", lineno, ops[0][1])
                if b is None or not 0 <= b <= 255:
                    raise AsmError(f"bad fill byte '{ops[1][0]}'", lineno, ops[1][1])
                claim(loc, n, lineno, col)
                stmts.append((lineno, col, loc, "data", [b] * n))
                loc += n
            elif head_l.startswith("."):
                raise AsmError(f"unknown directive '{head}'", lineno, col)
            else:
                if loc % INSTR_WIDTH:
                    raise AsmError(f"instruction at unaligned address 0x{loc:X}", lineno, col)
                claim(loc, INSTR_WIDTH, lineno, col)
                stmts.append((lineno, col, loc, "instr", body))
                loc += INSTR_WIDTH
        return stmts

    def _instruction(self, body: str, lineno: int, col: int) -> Instruction:
        head, _, args = body.partition(" ")
        try:
            op = Op(head.upper())
        except ValueError:
            raise AsmError(f"unknown mnemonic '{head}'", lineno, col) from None
        toks = _split_operands(args, lineno, col + len(head)) if args.strip() else []
        sig = SIGNATURES[op]
        if len(toks) != len(sig):
            raise AsmError(f"{op.value} takes {len(sig)} operands, got {len(toks)}", lineno, col)
        operands = []
        for (tok, c), want in zip(toks, sig):
            o = self._operand(tok, lineno, c)
            kind = _KIND[type(o)]
            allowed = want if isinstance(want, tuple) else (want,)
            if kind not in allowed:
                raise AsmError(f"operand '{tok}' has wrong kind for {op.value}", lineno, c)
            operands.append(o)
        return Instruction(op, tuple(operands))

    def _operand(self, tok: str, lineno: int, col: int):
        if not tok:
            raise AsmError("empty operand", lineno, col)
        if tok.startswith("["):
            if not tok.endswith("]"):
                raise AsmError(f"bad memory operand '{tok}'", lineno, col)
            return self._mem(tok[1:-1], lineno, col)
        m = _REG_RE.match(tok)
        if m:
            n = int(m.group(1))
            if n >= NUM_REGS:
                raise AsmError(f"register '{tok}' out of range", lineno, col)
            return Reg(n)
        value, label, off = self._expr(tok, lineno, col)
        if label is not None and off:
            raise AsmError("label offsets are only allowed in memory operands", lineno, col)
        return Imm(value, label)

    def _expr(self, tok: str, lineno: int, col: int):
        """Number or label (optionally label +/- number)."""
        v = _parse_number(tok)
        if v is not None:
            return v, None, 0
        name = tok.strip()
        if _IDENT_RE.match(name):
            if name not in self.labels:
                raise AsmError(f"unresolved label '{name}'", lineno, col)
            return self.labels[name], name, 0
        raise AsmError(f"syntax error in operand '{tok}'", lineno, col)

    def _mem(self, inner: str, lineno: int, col: int) -> Mem:
        terms = re.findall(r"\s*([+-]?)\s*([^+\-\s][^+\-]*?)\s*(?=[+-]|$)", inner)
        if not terms and inner.strip():
            raise AsmError(f"syntax error in memory operand '[{inner}]'", lineno, col)
        base = index = label = None
        scale, disp, label_off = 1, 0, 0
        for sign, term in terms:
            term = term.strip()
            neg = sign == "-"
            rm = re.match(r"[rR](\d+)\s*(?:\*\s*(\w+))?$", term)
            if rm:
                if neg:
                    raise AsmError("registers cannot be subtracted", lineno, col)
                n = int(rm.group(1))
                if n >= NUM_REGS:
                    raise AsmError(f"register 'r{n}' out of range", lineno, col)
                if rm.group(2) is not None:
                    s = _parse_number(rm.group(2))
                    if s not in (1, 2, 4, 8):
                        raise AsmError(f"scale must be 1, 2, 4 or 8, got '{rm.group(2)}'", lineno, col)
                    if index is not None:
                        raise AsmError("two index registers", lineno, col)
                    index, scale = n, s
                elif base is None:
                    base = n
                elif index is None:
                    index = n
                else:
                    raise AsmError("too many registers in memory operand", lineno, col)
                continue
            v = _parse_number(term)
            if v is not None:
                disp += -v if neg else v
                label_off += -v if neg else v
                continue
            if _IDENT_RE.match(term):
                if term not in self.labels:
                    raise AsmError(f"unresolved label '{term}'", lineno, col)
                if label is not None or neg:
                    raise AsmError("at most one (added) label per memory operand", lineno, col)
                label = term
                disp += self.labels[term]
                continue
            raise AsmError(f"syntax error in memory operand term '{term}'", lineno, col)
        if label is None:
            label_off = 0
        return Mem(base, index, scale, disp, label, label_off)


def _runs(data: dict[int, int]) -> tuple:
    out = []
    cur_start, cur = None, bytearray()
    for a in sorted(data):
        if cur_start is not None and a == cur_start + len(cur):
            cur.append(data[a])
        else:
            if cur_start is not None:
                out.append((cur_start, bytes(cur)))
            cur_start, cur = a, bytearray([data[a]])
    if cur_start is not None:
        out.append((cur_start, bytes(cur)))
    return tuple(out)


def assemble(source: str) -> Program:
    return _Assembler(source).run()


def _fmt_operand(o) -> str:
    if isinstance(o, Imm) and o.label is None:
        return str(o.value)
    return str(o)


def disassemble(program: Program) -> str:
    """Render a Program as source that reassembles to an equal Program."""
    items = []  # (addr, order, line, size)
    for a, ins in program.text:
        ops = ", ".join(_fmt_operand(o) for o in ins.operands)
        items.append((a, 1, f"    {ins.op.value}" + (f" {ops}" if ops else ""), INSTR_WIDTH))
    by_addr: dict[int, list[str]] = {}
    for name, a in program.labels.items():
        by_addr.setdefault(a, []).append(name)
    for a, blob in program.data:
        # split data runs at label boundaries so labels land on the right byte
        cuts = sorted({a, a + len(blob)} | {x for x in by_addr if a < x < a + len(blob)})
        for s, e in zip(cuts, cuts[1:]):
            chunk = blob[s - a:e - a]
            for i in range(0, len(chunk), 16):
                part = chunk[i:i + 16]
                items.append((s + i, 1, "    .byte " + ", ".join(f"0x{b:02X}" for b in part), len(part)))
    for a, names in by_addr.items():
        for n in sorted(names):
            items.append((a, 0, f"{n}:", 0))
    items.sort(key=lambda t: (t[0], t[1], t[2]))

    # group into contiguous chunks, each introduced by .org
    chunks: list[tuple[int, list[str]]] = []
    loc = None
    for a, _, line, size in items:
        if loc is None or a != loc:
            chunks.append((a, [f".org 0x{a:X}"]))
            loc = a
        chunks[-1][1].append(line)
        loc += size
    if "start" not in program.labels:
        first = min(a for a, _ in program.text)
        if program.entry != first:
            # entry defaults to the first instruction in source order
            idx = max(i for i, (a, _) in enumerate(chunks) if a <= program.entry)
            chunks.insert(0, chunks.pop(idx))
    return "\n".join(line for _, lines in chunks for line in lines) + "\n"
