"""Random terminating programs for differential testing of the core.

Programs mix ALU work, byte loads and stores inside a sandbox page, forward
conditional branches (register and memory compares), counted loops, calls,
register-indirect jumps and guarded loads from an unmapped page. RDCYCLE is
never emitted, so the in-order interpreter is an exact oracle.
"""
from __future__ import annotations

import random

from .isa import Program, assemble

CODE_BASE = 0x1000
SANDBOX = 0x8000
UNMAPPED = 0x900000
WORK_REGS = list(range(1, 13))
BASE_REG = 13    # holds SANDBOX
TMP_REG = 14     # masked index
LOOP_REG = 15
JUMP_REG = 16
ALU = ["ADD", "SUB", "MUL", "AND", "OR", "XOR", "SHL", "SHR"]


class _Gen:
    def __init__(self, rng: random.Random, size: int):
        self.rng = rng
        self.size = size
        self.lines: list[str] = []
        self.nlabels = 0
        self.pending: list[tuple[int, str]] = []   # (emit at line count, label)

    def label(self) -> str:
        self.nlabels += 1
        return f"L{self.nlabels}"

    def reg(self) -> str:
        return f"r{self.rng.choice(WORK_REGS)}"

    def emit(self, s: str) -> None:
        self.lines.append("    " + s)
        self._flush_labels()

    def _flush_labels(self) -> None:
        due = [lb for at, lb in self.pending if at <= len(self.lines)]
        self.pending = [(at, lb) for at, lb in self.pending if at > len(self.lines)]
        for lb in due:
            self.lines.append(f"{lb}:")

    def forward(self, skip: int = 1) -> str:
        """New label placed 1..6 lines after the next ``skip`` lines."""
        lb = self.label()
        self.pending.append((len(self.lines) + skip + self.rng.randint(0, 5), lb))
        return lb

    def mem(self) -> str:
        r = self.rng
        if r.random() < 0.5:
            return f"[r{BASE_REG} + {r.randrange(256)}]"
        self.emit(f"AND r{TMP_REG}, {self.reg()}, 255")
        return f"[r{BASE_REG} + r{TMP_REG}*1]"

    def simple(self, allow_branch: bool = True) -> None:
        r = self.rng
        k = r.random()
        if k < 0.35:
            op = r.choice(ALU)
            src2 = self.reg() if r.random() < 0.5 else str(r.randrange(-50, 300))
            if op in ("SHL", "SHR") and not src2.startswith("r"):
                src2 = str(r.randrange(64))
            self.emit(f"{op} {self.reg()}, {self.reg()}, {src2}")
        elif k < 0.45:
            self.emit(f"MOVI {self.reg()}, {r.randrange(-1000, 1 << 20)}")
        elif k < 0.6:
            m = self.mem()
            self.emit(f"LOAD {self.reg()}, {m}")
        elif k < 0.72:
            m = self.mem()
            self.emit(f"STORE {self.reg()}, {m}")
        elif k < 0.85 and allow_branch:
            op = r.choice(["BEQ", "BLT"])
            second = self.reg() if r.random() < 0.6 else self.mem()
            self.emit(f"{op} {self.reg()}, {second}, {self.forward()}")
        elif k < 0.88:
            lb = self.label()
            self.lines.append(f"    BEQ r0, r0, {lb}")
            self.emit(f"LOAD {self.reg()}, [{UNMAPPED + r.randrange(4096)}]")
            self.lines.append(f"{lb}:")
        elif k < 0.91 and allow_branch:
            # no label may land between the pair
            self.lines.append(f"    MOVI r{JUMP_REG}, {self.forward(skip=2)}")
            self.emit(f"JMPR r{JUMP_REG}")
        elif k < 0.94:
            self.emit("CALL sub")
        elif k < 0.96:
            self.emit(r.choice(["FENCE", f"CLFLUSH [r{BASE_REG} + {r.randrange(256)}]"]))
        else:
            self.emit(f"ADD {self.reg()}, {self.reg()}, 1")

    def loop(self) -> None:
        r = self.rng
        top = self.label()
        # land every open forward branch before the loop, never inside it
        for _, lb in self.pending:
            self.lines.append(f"{lb}:")
        self.pending = []
        self.emit(f"MOVI r{LOOP_REG}, {r.randint(1, 5)}")
        self.lines.append(f"{top}:")
        for _ in range(r.randint(1, 5)):
            self.simple(allow_branch=False)
        self.emit(f"SUB r{LOOP_REG}, r{LOOP_REG}, 1")
        self.emit(f"BLT r0, r{LOOP_REG}, {top}")

    def build(self) -> str:
        r = self.rng
        head = [f".org 0x{CODE_BASE:X}", "start:", f"    MOVI r{BASE_REG}, 0x{SANDBOX:X}"]
        for reg in WORK_REGS:
            head.append(f"    MOVI r{reg}, {r.randrange(-5, 300)}")
        self.lines = head
        while len(self.lines) < self.size:
            if r.random() < 0.08:
                self.loop()
            else:
                self.simple()
        self.emit("HALT")
        for _, lb in self.pending:
            self.lines.append(f"{lb}:")
        if self.lines[-1].endswith(":"):
            self.lines.append("    HALT")
        self.lines += ["sub:", f"    ADD r{r.choice(WORK_REGS)}, r{r.choice(WORK_REGS)}, 7", "    RET"]
        data = ", ".join(str(r.randrange(256)) for _ in range(256))
        self.lines += [f".org 0x{SANDBOX:X}", f"    .byte {data}"]
        return "\n".join(self.lines) + "\n"


def random_source(seed: int, size: int = 40) -> str:
    return _Gen(random.Random(seed), size).build()


def random_program(seed: int, size: int = 40) -> Program:
    return assemble(random_source(seed, size))
