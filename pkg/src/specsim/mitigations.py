"""Countermeasure toggles and the fence-insertion program transform."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, replace

from .isa import CONDITIONAL, INSTR_WIDTH, Imm, Instruction, Mem, Op, Program


@dataclass(frozen=True)
class MitigationOptions:
    fence_after_branches: bool = False
    flush_on_switch: bool = False
    no_spec_fill: bool = False

    def as_dict(self) -> dict:
        return {"fence_after_branches": self.fence_after_branches,
                "flush_on_switch": self.flush_on_switch,
                "no_spec_fill": self.no_spec_fill}


FENCE = Instruction(Op.FENCE)


def _chunks(text) -> list[list]:
    out: list[list] = []
    for a, ins in text:
        if out and out[-1][-1][0] + INSTR_WIDTH == a:
            out[-1].append((a, ins))
        else:
            out.append([(a, ins)])
    return out


def insert_fences(program: Program) -> Program:
    """Put a FENCE right after every conditional branch and at every
    conditional-branch target (one FENCE where the two coincide).

    Each contiguous run of instructions grows in place; labels, branch
    targets and label-relative operands are moved with their instruction.
    Code addresses stored as data bytes are not rewritten.
    """
    text = program.text
    targets = {ins.target for _, ins in text if ins.op in CONDITIONAL}
    branch_pcs = {a for a, ins in text if ins.op in CONDITIONAL}
    if not branch_pcs:
        return program

    remap: dict[int, int] = {}
    new_text = []
    extents = []
    for chunk in _chunks(text):
        start = loc = chunk[0][0]
        for a, ins in chunk:
            lead = a in targets or (a - INSTR_WIDTH) in branch_pcs
            remap[a] = loc
            if lead:
                new_text.append((loc, FENCE))
                loc += INSTR_WIDTH
            new_text.append((loc, ins))
            loc += INSTR_WIDTH
        end_old = chunk[-1][0] + INSTR_WIDTH
        if chunk[-1][0] in branch_pcs or end_old in targets:
            # the fall-through leaves the chunk; keep its fence inside
            new_text.append((loc, FENCE))
            loc += INSTR_WIDTH
        remap[end_old] = loc
        extents.append((start, end_old, loc))

    # growth must not run into anything else
    occupied = [(a, a + len(b)) for a, b in program.data]
    occupied += [(s, e) for s, e, _ in extents]
    for s, e_old, e_new in extents:
        for o_s, o_e in occupied:
            if (o_s, o_e) != (s, e_old) and o_s < e_new and s < o_e:
                raise ValueError(f"fence insertion at 0x{s:X} overflows into 0x{o_s:X}")

    def mv(addr: int) -> int:
        return remap.get(addr, addr)

    labels = {k: mv(v) for k, v in program.labels.items()}

    def fix(o):
        if isinstance(o, Imm):
            if o.label is not None:
                return Imm(labels[o.label], o.label)
            return o
        if isinstance(o, Mem) and o.label is not None:
            delta = labels[o.label] - program.labels[o.label]
            return replace(o, disp=o.disp + delta)
        return o

    out = []
    for a, ins in new_text:
        ops = tuple(fix(o) for o in ins.operands)
        if ins.op in CONDITIONAL or ins.op in (Op.JMP, Op.CALL):
            t = ops[-1]
            if t.label is None:
                ops = ops[:-1] + (Imm(mv(t.value)),)
        out.append((a, Instruction(ins.op, ops) if ops != ins.operands else ins))
    return Program(tuple(out), program.data, labels, mv(program.entry))


def overhead_report(scenario, options_grid: list) -> list[dict]:
    """Run ``scenario`` under each options entry.

    Rows carry accuracy, simulated cycles and slowdown against the all-off
    baseline (run separately when it is not part of the grid).
    """
    from . import attacks

    base_opts = MitigationOptions()
    cache: dict = {}

    def measure(opts):
        if opts not in cache:
            cache[opts] = attacks.run_scenario(scenario, opts)
        return cache[opts]

    base = measure(base_opts)
    rows = []
    for opts in options_grid:
        rep = measure(opts)
        rows.append({"fence": opts.fence_after_branches, "flush": opts.flush_on_switch,
                     "nofill": opts.no_spec_fill, "accuracy": rep.accuracy,
                     "cycles": rep.simulated_cycles,
                     "slowdown": rep.simulated_cycles / base.simulated_cycles})
    return rows


def overhead_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["fence", "flush", "nofill", "accuracy", "cycles", "slowdown"])
    for r in rows:
        w.writerow([int(r["fence"]), int(r["flush"]), int(r["nofill"]), f"{r['accuracy']:.4f}",
                    r["cycles"], f"{r['slowdown']:.4f}"])
    return buf.getvalue()
