"""Speculative out-of-order core and the in-order reference interpreter.

The core fetches one instruction per cycle along the predicted path into a
reorder buffer of ``rob_size`` entries, issues each entry once its operands
are ready, resolves branches at completion and retires in order. A
mispredicted branch squashes everything younger and restores the register
map from its checkpoint; memory requests already sent keep going and still
fill the cache when their data arrives.

Cooperative multitasking: a context runs until its YIELD or HALT retires.
"""
from __future__ import annotations

import heapq
import json
from dataclasses import dataclass, field

from .branchpred import PredictorState
from .isa import (ALU_OPS, CONDITIONAL, INSTR_WIDTH, LINK_REG, MASK64, NUM_REGS, Imm, Op,
                  Program, Reg, branch_class)
from .memsys import AccessFault, AddressSpace, CacheHierarchy, Level, MemoryImage
from .mitigations import MitigationOptions

FAULT_PC_REG = 30

DEFAULT_LATENCIES = {op: 1 for op in Op}
DEFAULT_LATENCIES[Op.MUL] = 4


class SimulationError(Exception):
    pass


class SimulationTimeout(SimulationError):
    pass


@dataclass(frozen=True)
class Fault:
    ctx: int
    pc: int
    kind: str
    addr: int | None = None


@dataclass
class Context:
    """One address space plus its starting register file.

    Two contexts may map different virtual pages onto one physical page;
    that is how shared libraries and shared probe arrays are modelled.
    """
    id: int
    space: AddressSpace
    entry: int | None = None
    regs: dict = field(default_factory=dict)
    fault_handler: int | None = None


@dataclass
class SimConfig:
    rob_size: int = 192
    latencies: dict = field(default_factory=lambda: dict(DEFAULT_LATENCIES))
    fetch_width: int = 1
    contexts: list = field(default_factory=list)
    max_cycles: int = 50_000_000
    speculate: bool = True    # False: fetch waits for every branch to resolve
    dram_serial: bool = True  # one DRAM transfer at a time
    log_events: bool = True

    def __post_init__(self):
        if self.rob_size < 1:
            raise ValueError("rob_size must be >= 1")
        if self.fetch_width != 1:
            raise ValueError("only fetch_width = 1 is modelled")


@dataclass
class ArchState:
    regs: list = field(default_factory=lambda: [0] * NUM_REGS)
    pc: int = 0
    cycle: int = 0
    halted: bool = False
    faulted: Fault | None = None

    def same_as(self, other: ArchState) -> bool:
        """Architectural equality, ignoring the cycle counter."""
        return (self.regs == other.regs and self.pc == other.pc and self.halted == other.halted
                and self.faulted == other.faulted)


@dataclass
class Checkpoint:
    rat: list
    pc: int
    history: int
    cycle: int
    branch_seq: int


@dataclass
class Trace:
    states: dict
    cycles: int
    retired: int
    squashed: int
    events: list
    fault: Fault | None
    memory: MemoryImage
    max_spec_inflight: int = 0
    # (cycle, seq, vaddr, paddr, hit level, speculative, under unresolved conditional)
    loads: list = field(default_factory=list)

    def events_jsonl(self) -> str:
        return "".join(json.dumps(e, sort_keys=True) + "\n" for e in self.events)


class RobEntry:
    __slots__ = ("seq", "pc", "inst", "srcs", "status", "done_at", "value", "paddr", "level",
                 "store_val", "next_pc", "taken", "pred", "pred_next", "checkpoint", "fault",
                 "deferred_fill", "resolved", "spec")

    def __init__(self, seq, pc, inst):
        self.seq = seq
        self.pc = pc
        self.inst = inst
        self.srcs = {}
        self.status = "waiting"
        self.done_at = None
        self.value = 0
        self.paddr = None
        self.level = None
        self.store_val = None
        self.next_pc = pc + INSTR_WIDTH
        self.taken = False
        self.pred = None
        self.pred_next = None
        self.checkpoint = None
        self.fault = None
        self.deferred_fill = None
        self.resolved = True
        self.spec = False


# shared semantics ------------------------------------------------------------------------

def alu(op: Op, a: int, b: int) -> int:
    if op is Op.ADD:
        r = a + b
    elif op is Op.SUB:
        r = a - b
    elif op is Op.MUL:
        r = a * b
    elif op is Op.AND:
        r = a & b
    elif op is Op.OR:
        r = a | b
    elif op is Op.XOR:
        r = a ^ b
    elif op is Op.SHL:
        r = a << (b & 63)
    elif op is Op.SHR:
        r = (a & MASK64) >> (b & 63)
    else:
        raise ValueError(op)
    return r & MASK64


def branch_taken(op: Op, a: int, b: int) -> bool:
    """BEQ: equal. BLT: unsigned less-than."""
    return a == b if op is Op.BEQ else a < b


def identity_context(programs, ctx_id: int = 0, perms: str = "rwx", extra_pages=()) -> Context:
    """Context mapping every page a program touches onto the same physical page."""
    if isinstance(programs, Program):
        programs = [programs]
    space = AddressSpace()
    for p in programs:
        for pg in p.pages(space.page_size):
            space.map(pg, pg, perms)
    for pg in extra_pages:
        space.map(pg, pg, perms)
    return Context(ctx_id, space)


def _normalize(programs, config: SimConfig):
    if isinstance(programs, Program):
        programs = [programs]
    if isinstance(programs, dict):
        progs = programs
    else:
        progs = {i: p for i, p in enumerate(programs)}
    contexts = list(config.contexts) or [identity_context(p, i) for i, p in progs.items()]
    for c in contexts:
        if c.id not in progs:
            raise SimulationError(f"no program for context {c.id}")
    return progs, contexts


def load_programs(memory: MemoryImage, programs: dict, contexts: list) -> None:
    """Write each program's data segments through its context's page table."""
    for c in contexts:
        ps = c.space.page_size
        for addr, blob in programs[c.id].data:
            pos = 0
            while pos < len(blob):
                va = addr + pos
                n = min(len(blob) - pos, ps - va % ps)
                memory.write(_phys(c.space, va), blob[pos:pos + n])
                pos += n


def _phys(space: AddressSpace, vaddr: int) -> int:
    vp, off = divmod(vaddr, space.page_size)
    entry = space.pages.get(vp)
    if entry is None:
        raise SimulationError(f"data at 0x{vaddr:X} is not mapped")
    return entry[0] * space.page_size + off


def _initial_state(c: Context, prog: Program) -> ArchState:
    st = ArchState(pc=prog.entry if c.entry is None else c.entry)
    for r, v in c.regs.items():
        if r:
            st.regs[r] = v & MASK64
    return st


# out-of-order core ---------------------------------------------------------------------

class Core:
    def __init__(self, programs, config: SimConfig, hierarchy: CacheHierarchy,
                 predictors: PredictorState, options: MitigationOptions):
        self.progs, self.contexts = _normalize(programs, config)
        self.cfg = config
        self.h = hierarchy
        self.bp = predictors
        self.opt = options
        self.lat = config.latencies
        self.states = {c.id: _initial_state(c, self.progs[c.id]) for c in self.contexts}
        self.cycle = 0
        self.seq = 0
        self.rob: list[RobEntry] = []
        self.waiting: list[RobEntry] = []
        self.inflight: list[RobEntry] = []   # issued, not yet complete
        self.unresolved: list[RobEntry] = []
        self.fences: list[int] = []
        self.rat: list = [None] * NUM_REGS
        self.pending_fills: list = []
        self.dram_free = 0
        self.events: list = []
        self.loads: list = []
        self.retired = 0
        self.squashed = 0
        self.max_spec = 0
        self.fault: Fault | None = None
        self.cur = 0
        self.fetch_pc = self.states[self.contexts[0].id].pc
        self.fetch_stalled = False
        self.done = False
        self.activity = False

    @property
    def ctx(self) -> Context:
        return self.contexts[self.cur]

    @property
    def state(self) -> ArchState:
        return self.states[self.ctx.id]

    def log(self, event: str, e: RobEntry | None, **detail) -> None:
        if self.cfg.log_events:
            self.events.append({"cycle": self.cycle, "ctx": self.ctx.id,
                                "seq": None if e is None else e.seq,
                                "event": event, "pc": None if e is None else e.pc,
                                "detail": detail})

    # main loop

    def run(self) -> Trace:
        load_programs(self.h.memory, self.progs, self.contexts)
        while not self.done:
            if self.cycle > self.cfg.max_cycles:
                raise SimulationTimeout(f"no completion within {self.cfg.max_cycles} cycles")
            self.activity = False
            self._apply_fills(self.cycle)
            self._complete()
            if not self.done:
                self._retire()
            if not self.done:
                self._issue()
                self._fetch()
                self._track_window()
            if self.done:
                break
            self._advance()
        while self.pending_fills:
            _, _, pa, lvl = heapq.heappop(self.pending_fills)
            self.h.install(pa, lvl)
        return Trace(self.states, self.cycle, self.retired, self.squashed, self.events,
                     self.fault, self.h.memory, self.max_spec, self.loads)

    def _advance(self) -> None:
        if self.activity:
            self.cycle += 1
            return
        # nothing changed this cycle; the next change is the next completion
        nxt = [e.done_at for e in self.inflight]
        if not nxt:
            if not self.rob and self.fetch_stalled:
                raise SimulationError("pipeline deadlock")
            self.cycle += 1
            return
        self.cycle = max(self.cycle + 1, min(nxt))

    def _apply_fills(self, now: int) -> None:
        while self.pending_fills and self.pending_fills[0][0] <= now:
            _, _, pa, lvl = heapq.heappop(self.pending_fills)
            self.h.install(pa, lvl)

    def _track_window(self) -> None:
        if not self.unresolved:
            return
        oldest = self.unresolved[0].seq
        n = sum(1 for e in self.rob if e.seq > oldest)
        if n > self.max_spec:
            self.max_spec = n

    # operands

    def _src(self, e: RobEntry, reg: int) -> int:
        if reg == 0:
            return 0
        p = e.srcs[reg]
        return p if isinstance(p, int) else p.value

    def _regview(self, e: RobEntry) -> dict:
        return {r: self._src(e, r) for r in e.srcs} | {0: 0}

    def _ready(self, e: RobEntry) -> bool:
        for p in e.srcs.values():
            if not isinstance(p, int) and p.status != "done":
                return False
        return True

    # fetch

    def _fetch(self) -> None:
        if self.fetch_stalled or len(self.rob) >= self.cfg.rob_size:
            return
        pc = self.fetch_pc
        e = RobEntry(self.seq, pc, None)
        self.seq += 1
        self.activity = True
        try:
            self.ctx.space.translate(pc, "x")
            inst = self.progs[self.ctx.id].at(pc)
            if inst is None:
                raise AccessFault(pc, "no-instruction")
        except AccessFault as f:
            e.fault = Fault(self.ctx.id, pc, f"fetch:{f.kind}", pc)
            e.status = "done"
            e.done_at = self.cycle
            self.rob.append(e)
            self.fetch_stalled = True
            self.log("fetch", e, op=None, fault=e.fault.kind)
            return
        e.inst = inst
        for r in inst.sources():
            if r and r not in e.srcs:
                p = self.rat[r]
                e.srcs[r] = self.state.regs[r] if p is None else p
        cls = branch_class(inst.op)
        nxt = pc + INSTR_WIDTH
        if cls is not None and cls not in ("direct", "call"):
            e.resolved = False
            if self.cfg.speculate:
                hist = self.bp.spec_ghr
                e.pred = self.bp.predict(pc, cls, nxt)
                e.pred_next = e.pred.target
                e.checkpoint = Checkpoint(list(self.rat), pc, hist, self.cycle, e.seq)
                nxt = e.pred_next
            else:
                self.fetch_stalled = True
            self.unresolved.append(e)
        elif cls is not None:
            nxt = inst.target
            e.pred_next = nxt
        d = inst.dest
        if d:
            self.rat[d] = e
        if inst.op is Op.FENCE:
            self.fences.append(e.seq)
        if inst.op in (Op.HALT, Op.YIELD):
            self.fetch_stalled = True
        self.rob.append(e)
        self.waiting.append(e)
        self.fetch_pc = nxt
        self.log("fetch", e, op=inst.op.value, pred_next=e.pred_next)

    # issue / execute

    def _issue(self) -> None:
        if not self.waiting:
            return
        fence = self.fences[0] if self.fences else None
        oldest_unres = self.unresolved[0].seq if self.unresolved else None
        oldest_cond = next((b.seq for b in self.unresolved if b.inst.op in CONDITIONAL), None)
        store_pending = None
        still = []
        for e in self.waiting:
            op = e.inst.op
            blocked = fence is not None and e.seq > fence
            if not blocked and not self._ready(e):
                blocked = True
            if not blocked and store_pending is not None and e.inst.mem is not None \
                    and op is not Op.STORE and op is not Op.CLFLUSH:
                blocked = True
            if blocked:
                if op is Op.STORE and store_pending is None:
                    store_pending = e.seq
                still.append(e)
                continue
            e.spec = oldest_unres is not None and oldest_unres < e.seq
            spec_cond = oldest_cond is not None and oldest_cond < e.seq
            self._execute(e, spec_cond)
            e.status = "issued"
            self.inflight.append(e)
            self.activity = True
        self.waiting = still

    def _translate(self, e: RobEntry, vaddr: int, perm: str) -> int | None:
        try:
            return self.ctx.space.translate(vaddr, perm)
        except AccessFault as f:
            e.fault = Fault(self.ctx.id, e.pc, f.kind, vaddr)
            return None

    def _forwarded(self, e: RobEntry, pa: int) -> int | None:
        for s in reversed(self.rob):
            if s.seq >= e.seq or s.inst is None or s.inst.op is not Op.STORE:
                continue
            if s.paddr == pa and s.fault is None:
                return s.store_val
        return None

    def _mem_read(self, e: RobEntry, vaddr: int, size: int, spec_cond: bool) -> tuple[int, int]:
        """Timed read; returns (value, latency). Faults yield 0 and no access."""
        if (vaddr % self.h.config.line_size) + size > self.h.config.line_size:
            e.fault = Fault(self.ctx.id, e.pc, "misaligned", vaddr)
            pa = None
        else:
            pa = self._translate(e, vaddr, "r")
        if pa is None:
            self.log("issue", e, op=e.inst.op.value, addr=vaddr, fault=e.fault.kind,
                     speculative=e.spec, spec_cond=spec_cond)
            return 0, 1
        res = self.h.access(pa, size, "read", fill=False)
        lat = res.latency
        if res.hit_level is Level.DRAM and self.cfg.dram_serial:
            start = max(self.cycle, self.dram_free)
            self.dram_free = start + lat
            lat = self.dram_free - self.cycle
        if self.opt.no_spec_fill and e.spec:
            e.deferred_fill = (pa, res.hit_level)
        else:
            heapq.heappush(self.pending_fills, (self.cycle + lat, e.seq, pa, res.hit_level))
        data = bytearray(res.value)
        for i in range(size):
            fwd = self._forwarded(e, pa + i)
            if fwd is not None:
                data[i] = fwd
        e.paddr, e.level = pa, res.hit_level
        self.loads.append((self.cycle, e.seq, vaddr, pa, res.hit_level.name, e.spec, spec_cond))
        self.log("issue", e, op=e.inst.op.value, addr=vaddr, level=res.hit_level.name,
                 speculative=e.spec, spec_cond=spec_cond, fill=e.deferred_fill is None)
        return int.from_bytes(bytes(data), "little"), lat

    def _execute(self, e: RobEntry, spec_cond: bool) -> None:
        inst, op = e.inst, e.inst.op
        ops = inst.operands
        lat = self.lat.get(op, 1)
        logged = False
        if op in ALU_OPS:
            b = ops[2]
            bv = self._src(e, b.num) if isinstance(b, Reg) else b.value & MASK64
            e.value = alu(op, self._src(e, ops[1].num), bv)
        elif op is Op.MOVI:
            e.value = ops[1].value & MASK64
        elif op is Op.LOAD:
            e.value, lat = self._mem_read(e, ops[1].address(self._regview(e)), 1, spec_cond)
            logged = True
        elif op is Op.STORE:
            va = ops[1].address(self._regview(e))
            e.paddr = self._translate(e, va, "w")
            e.store_val = self._src(e, ops[0].num) & 0xFF
        elif op in CONDITIONAL:
            a = self._src(e, ops[0].num)
            second = ops[1]
            if isinstance(second, Reg):
                b = self._src(e, second.num)
            else:
                b, lat = self._mem_read(e, second.address(self._regview(e)), 1, spec_cond)
                logged = True
            e.taken = branch_taken(op, a, b)
            e.next_pc = ops[2].value & MASK64 if e.taken else e.pc + INSTR_WIDTH
        elif op is Op.JMP:
            e.next_pc, e.taken = inst.target, True
        elif op is Op.CALL:
            e.next_pc, e.taken = inst.target, True
            e.value = e.pc + INSTR_WIDTH
        elif op is Op.JMPR:
            e.next_pc, e.taken = self._src(e, ops[0].num), True
        elif op is Op.RET:
            e.next_pc, e.taken = self._src(e, LINK_REG), True
        elif op is Op.JMPM:
            e.next_pc, lat = self._mem_read(e, ops[0].address(self._regview(e)), 8, spec_cond)
            e.taken = True
            logged = True
        elif op is Op.CLFLUSH:
            e.paddr = self._translate(e, ops[0].address(self._regview(e)), "r")
        elif op is Op.RDCYCLE:
            e.value = self.cycle
        e.done_at = self.cycle + max(lat, 1)
        if not logged:
            self.log("issue", e, op=op.value, speculative=e.spec)

    # completion / branch resolution

    def _complete(self) -> None:
        if not self.inflight:
            return
        now = self.cycle
        ready = [e for e in self.inflight if e.done_at <= now]
        if not ready:
            return
        self.inflight = [e for e in self.inflight if e.done_at > now]
        ready.sort(key=lambda e: e.seq)
        self.activity = True
        squashed_from = None
        for e in ready:
            if squashed_from is not None and e.seq > squashed_from:
                continue
            e.status = "done"
            self.log("complete", e, next_pc=e.next_pc if not e.resolved else None)
            if not e.resolved:
                if self._resolve(e):
                    squashed_from = e.seq
            elif e.inst is not None and e.inst.op is Op.CALL and self.cfg.speculate:
                self.bp.update(e.pc, True, e.next_pc, "call")

    def _resolve(self, e: RobEntry) -> bool:
        e.resolved = True
        self.unresolved.remove(e)
        cls = branch_class(e.inst.op)
        if not self.cfg.speculate:
            if e.fault is None:
                self.fetch_pc = e.next_pc
            self.fetch_stalled = e.fault is not None
            return False
        if e.fault is not None:
            return False
        self.bp.update(e.pc, e.taken, e.next_pc, cls, history=e.pred.history)
        wrong = e.next_pc != e.pred_next or (cls == "conditional" and e.taken != e.pred.taken)
        if not wrong:
            return False
        self._squash_after(e.seq)
        self.rat = list(e.checkpoint.rat)
        hist = e.checkpoint.history
        if cls == "conditional":
            hist = (hist << 1) | int(e.taken)
        self.bp.restore_history(hist)
        self.fetch_pc = e.next_pc
        self.fetch_stalled = False
        return True

    def _squash_after(self, seq: int) -> None:
        keep = [e for e in self.rob if e.seq <= seq]
        gone = [e for e in self.rob if e.seq > seq]
        if not gone:
            return
        self.rob = keep
        self.waiting = [e for e in self.waiting if e.seq <= seq]
        self.inflight = [e for e in self.inflight if e.seq <= seq]
        self.unresolved = [e for e in self.unresolved if e.seq <= seq]
        self.fences = [s for s in self.fences if s <= seq]
        self.squashed += len(gone)
        if self.cfg.log_events:
            for g in gone:
                self.log("squash", g)

    # retirement

    def _retire(self) -> None:
        while self.rob and self.rob[0].status == "done" and not self.done:
            e = self.rob[0]
            if e.fault is not None:
                self._take_fault(e)
                return
            self.rob.pop(0)
            self.activity = True
            self.retired += 1
            st = self.state
            inst = e.inst
            d = inst.dest
            if d:
                st.regs[d] = e.value
                if self.rat[d] is e:
                    self.rat[d] = None
            op = inst.op
            if op is Op.STORE:
                self.h.access(e.paddr, 1, "write", fill=True, data=bytes([e.store_val]))
            elif op is Op.CLFLUSH:
                self.h.flush_line(e.paddr)
            elif op is Op.FENCE:
                self.fences.remove(e.seq)
            if e.deferred_fill is not None:
                self.h.install(*e.deferred_fill)
            st.pc = e.next_pc
            self.log("retire", e)
            if op is Op.HALT:
                st.pc = e.pc
                st.halted = True
                st.cycle = self.cycle
                self._switch()
            elif op is Op.YIELD:
                self._switch()

    def _take_fault(self, e: RobEntry) -> None:
        st = self.state
        handler = self.ctx.fault_handler
        self.log("retire", e, fault=e.fault.kind, addr=e.fault.addr)
        self._squash_after(e.seq - 1)
        self.rat = [None] * NUM_REGS
        self.activity = True
        if handler is None:
            st.pc = e.pc
            st.faulted = e.fault
            st.halted = True
            st.cycle = self.cycle
            self.fault = e.fault
            self.done = True
            return
        st.regs[FAULT_PC_REG] = e.pc
        st.pc = handler
        self.fetch_pc = handler
        self.fetch_stalled = False

    def _switch(self) -> None:
        self._squash_after(-1)
        n = len(self.contexts)
        nxt = None
        for k in range(1, n + 1):
            i = (self.cur + k) % n
            if not self.states[self.contexts[i].id].halted:
                nxt = i
                break
        if nxt is None:
            self.done = True
            return
        prev = self.ctx.id
        if nxt != self.cur:
            if self.opt.flush_on_switch:
                self.bp.flush()
            self.cur = nxt
        self.rat = [None] * NUM_REGS
        self.fetch_pc = self.state.pc
        self.fetch_stalled = False
        self.log("switch", None, prev=prev, next=self.ctx.id)


def run(programs, config: SimConfig | None = None, hierarchy: CacheHierarchy | None = None,
        predictors: PredictorState | None = None, options: MitigationOptions | None = None) -> Trace:
    config = config or SimConfig()
    hierarchy = hierarchy if hierarchy is not None else CacheHierarchy()
    predictors = predictors if predictors is not None else PredictorState()
    options = options or MitigationOptions()
    return Core(programs, config, hierarchy, predictors, options).run()


# in-order reference -----------------------------------------------------------------------

def interpret_in_order(programs, config: SimConfig | None = None,
                       memory: MemoryImage | None = None) -> dict:
    """Execute strictly in program order with functional memory.

    RDCYCLE reads 0. ``config.max_cycles`` bounds the number of executed
    instructions. Pass ``memory`` to inspect the final memory image.
    """
    config = config or SimConfig()
    progs, contexts = _normalize(programs, config)
    mem = memory if memory is not None else MemoryImage()
    load_programs(mem, progs, contexts)
    states = {c.id: _initial_state(c, progs[c.id]) for c in contexts}
    cur = 0
    steps = 0
    line = 64

    def read(space, va, size):
        if (va % line) + size > line:
            raise AccessFault(va, "misaligned")
        return int.from_bytes(mem.read(space.translate(va, "r"), size), "little")

    while True:
        c = contexts[cur]
        st = states[c.id]
        regs = st.regs
        switch = False
        while not st.halted:
            steps += 1
            if steps > config.max_cycles:
                raise SimulationTimeout(f"no completion within {config.max_cycles} steps")
            pc = st.pc
            try:
                c.space.translate(pc, "x")
                inst = progs[c.id].at(pc)
                if inst is None:
                    raise AccessFault(pc, "no-instruction")
            except AccessFault as f:
                fault = Fault(c.id, pc, f"fetch:{f.kind}", pc)
                if not _oracle_fault(st, c, fault):
                    return states
                continue
            op, ops = inst.op, inst.operands
            nxt = pc + INSTR_WIDTH

            def r(n):
                return regs[n] if n else 0
            try:
                if op in ALU_OPS:
                    b = ops[2]
                    val = alu(op, r(ops[1].num), r(b.num) if isinstance(b, Reg) else b.value & MASK64)
                    _wr(regs, ops[0].num, val)
                elif op is Op.MOVI:
                    _wr(regs, ops[0].num, ops[1].value & MASK64)
                elif op is Op.LOAD:
                    _wr(regs, ops[0].num, read(c.space, ops[1].address(regs), 1))
                elif op is Op.STORE:
                    pa = c.space.translate(ops[1].address(regs), "w")
                    mem.write(pa, bytes([r(ops[0].num) & 0xFF]))
                elif op in CONDITIONAL:
                    second = ops[1]
                    b = r(second.num) if isinstance(second, Reg) else read(c.space, second.address(regs), 1)
                    if branch_taken(op, r(ops[0].num), b):
                        nxt = ops[2].value & MASK64
                elif op is Op.JMP:
                    nxt = inst.target
                elif op is Op.CALL:
                    _wr(regs, LINK_REG, pc + INSTR_WIDTH)
                    nxt = inst.target
                elif op is Op.JMPR:
                    nxt = r(ops[0].num)
                elif op is Op.RET:
                    nxt = r(LINK_REG)
                elif op is Op.JMPM:
                    nxt = read(c.space, ops[0].address(regs), 8)
                elif op is Op.CLFLUSH:
                    c.space.translate(ops[0].address(regs), "r")
                elif op is Op.RDCYCLE:
                    _wr(regs, ops[0].num, 0)
                elif op is Op.HALT:
                    st.halted = True
                    switch = True
                    break
                elif op is Op.YIELD:
                    st.pc = nxt
                    switch = True
                    break
            except AccessFault as f:
                fault = Fault(c.id, pc, f.kind, f.vaddr)
                if not _oracle_fault(st, c, fault):
                    return states
                continue
            st.pc = nxt
        n = len(contexts)
        nxt_ctx = None
        for k in range(1, n + 1):
            i = (cur + k) % n
            if not states[contexts[i].id].halted:
                nxt_ctx = i
                break
        if nxt_ctx is None:
            return states
        cur = nxt_ctx


def _wr(regs, n, v):
    if n:
        regs[n] = v & MASK64


def _oracle_fault(st: ArchState, c: Context, fault: Fault) -> bool:
    """Apply a fault; True if execution continues in a handler."""
    if c.fault_handler is None:
        st.faulted = fault
        st.halted = True
        return False
    st.regs[FAULT_PC_REG] = fault.pc
    st.pc = c.fault_handler
    return True


def squash_depth_report(trace: Trace) -> int:
    """Largest number of in-flight instructions younger than an unresolved
    branch, recomputed from the event log."""
    inflight: dict[int, bool] = {}  # seq -> is unresolved predicted branch
    best = 0
    for ev in trace.events:
        kind, seq = ev["event"], ev["seq"]
        if kind == "fetch":
            inflight[seq] = ev["detail"].get("pred_next") is not None and \
                ev["detail"].get("op") not in ("JMP", "CALL")
        elif kind == "complete" and seq in inflight:
            if ev["detail"].get("next_pc") is not None:
                inflight[seq] = False
        elif kind in ("squash", "retire"):
            inflight.pop(seq, None)
        elif kind == "switch":
            inflight.clear()
        unresolved = [s for s, u in inflight.items() if u]
        if unresolved:
            oldest = min(unresolved)
            best = max(best, sum(1 for s in inflight if s > oldest))
    return best
