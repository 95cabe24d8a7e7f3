"""End-to-end bounds-check-bypass and branch-target-injection scenarios.

Each scenario assembles victim and attacker code, drives the three attack
phases (setup, transient leak, recovery) through repeated simulator runs that
share one cache hierarchy and one predictor state, and scores the recovered
bytes against the planted secret.
"""
from __future__ import annotations

import json
import random
from dataclasses import dataclass, field, replace

from .branchpred import PredictorConfig, PredictorState
from .channels import (ProbeConfig, evict_line, evict_probe_array, eviction_set_size,
                       evict_time, flush_probe_array, reload_and_classify,
                       resident_indices)
from .isa import assemble
from .memsys import AddressSpace, CacheConfig, CacheHierarchy, congruent_addresses, eviction_walk
from .mitigations import MitigationOptions, insert_fences
from .pipeline import Context, SimConfig, interpret_in_order, run

V1_FLUSH = "V1_flush"
V1_EVICT = "V1_evict"
V1_EVICTTIME = "V1_evicttime"
V2_BTB = "V2_btb"
VARIANTS = (V1_FLUSH, V1_EVICT, V1_EVICTTIME, V2_BTB)

DEFAULT_SECRET = b"The Magic Words are Squeamish Ossifrage."

PAGE = 4096
ARRAY1_LEN = 16
PRIME_DEPTH = 8           # always-taken branches run before each victim call
SPEC_SLACK = 1            # the bounds-check branch itself occupies a ROB slot
LEAK_CHAIN = 3            # LOAD array1[x]; SHL; LOAD probe

# v1 layout (single address space, identity mapped)
V1 = dict(victim=0x10000, array1_size=0x20000, array1=0x21000, secret=0x22000,
          join=0x23000, attacker=0x400800, arena=0x10000000, arena_pages=1664)

# v2 layout
V2 = dict(victim=0x250000, fptr=0x20000, secret=0x22000, gadget_page=0x300000,
          attacker=0x400000, attacker_data=0x410000, victim_probe=0x500000,
          arena=0x10000000, arena_pages=1664, alias_bit=20, attacker_phys_pages=0x40000)


@dataclass(frozen=True)
class GadgetSpec:
    """Two-load leak gadget: fold [R1-addressed byte] into an index, then
    read memory at R2 plus that index."""
    r1_reg: int = 1
    r2_reg: int = 2
    address: int = 0x300040
    index_reg: int = 5
    index_value: int = 3
    displacement: int = 0x13BE13BD


@dataclass
class ScenarioConfig:
    variant: str = V1_FLUSH
    secret: bytes = DEFAULT_SECRET
    training_passes: int = 5
    attempts_per_byte: int = 3
    probe: ProbeConfig = field(default_factory=ProbeConfig)
    sim: SimConfig = field(default_factory=lambda: SimConfig(log_events=False))
    cache: CacheConfig = field(default_factory=CacheConfig)
    predictor: PredictorConfig = field(default_factory=PredictorConfig)
    mitigations: MitigationOptions = field(default_factory=MitigationOptions)
    seed: int = 0
    pad: int = 0               # filler instructions between bounds check and leak
    evict_target: bool = True  # v2: evict the victim's jump-target word
    gadget: GadgetSpec = field(default_factory=GadgetSpec)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if not self.secret:
            raise ValueError("secret must be non-empty")
        if self.training_passes < 1:
            raise ValueError("training_passes must be >= 1")
        if self.attempts_per_byte < 1:
            raise ValueError("attempts_per_byte must be >= 1")
        if self.pad < 0:
            raise ValueError("pad must be >= 0")
        s = self.probe.stride
        if s & (s - 1):
            raise ValueError("probe stride must be a power of two")
        if self.probe.entries < 256:
            raise ValueError("probe array needs 256 entries to encode a byte")


@dataclass
class Scenario:
    config: ScenarioConfig
    programs: dict
    contexts: dict
    layout: dict


@dataclass
class ByteResult:
    addr: int
    value: int
    correct: bool
    attempts: int


@dataclass
class AttackReport:
    variant: str
    recovered: bytes
    per_byte: list
    accuracy: float
    simulated_cycles: int
    bandwidth: float
    mitigations: dict
    extra: dict = field(default_factory=dict)
    attempt_log: list = field(default_factory=list)  # not serialized
    artifacts: dict = field(default_factory=dict)    # last probe/trace, final predictor; not serialized

    def to_dict(self) -> dict:
        d = {"variant": self.variant, "accuracy": self.accuracy,
             "bytes": [{"addr": b.addr, "value": b.value, "correct": b.correct,
                        "attempts": b.attempts} for b in self.per_byte],
             "simulated_cycles": self.simulated_cycles, "bandwidth": self.bandwidth,
             "mitigations": self.mitigations}
        d.update(self.extra)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def _shift(stride: int) -> int:
    return stride.bit_length() - 1


def _prime_block(prefix: str) -> list[str]:
    return [f"{prefix}{i}: BEQ r0, r0, {prefix}{i + 1}" for i in range(PRIME_DEPTH)] + [f"{prefix}{PRIME_DEPTH}:"]


def _map_pages(space: AddressSpace, vaddr: int, size: int, perms: str, phys: int | None = None) -> None:
    space.map_range(vaddr, size, vaddr if phys is None else phys, perms)


# variant 1 -----------------------------------------------------------------------------

def _v1_source(cfg: ScenarioConfig) -> str:
    L, p = V1, cfg.probe
    flush_bound = cfg.variant == V1_FLUSH
    join = cfg.variant == V1_EVICTTIME
    body = [f"    ADD r9, r9, 1" for _ in range(cfg.pad)]
    src = [f".org 0x{L['victim']:X}",
           "victim:",
           f"    BLT r2, [0x{L['array1_size']:X}], v_body",
           ]
    if join:
        src += ["v_join:", f"    LOAD r6, [0x{L['join']:X}]"]
    src += ["    RET", "v_body:"] + body + [
        f"    LOAD r3, [r2 + 0x{L['array1']:X}]",
        f"    SHL r3, r3, {_shift(p.stride)}",
        f"    LOAD r4, [r3 + 0x{p.probe_base:X}]",
        "    JMP v_join" if join else "    RET",
        "use_secret:",
        f"    LOAD r7, [r8 + 0x{L['secret']:X}]",
        "    RET",
        f".org 0x{L['attacker']:X}",
        "malicious:",
    ]
    if flush_bound:
        src += [f"    CLFLUSH [0x{L['array1_size']:X}]", "    FENCE"]
    src += _prime_block("mp") + ["    CALL victim", "    HALT", "train:"]
    src += _prime_block("tp") + ["    CALL victim", "    HALT",
                                 "warm:", "    CALL use_secret", "    HALT"]
    src += [f".org 0x{L['array1_size']:X}", f"    .byte {ARRAY1_LEN}",
            f".org 0x{L['array1']:X}", "    .byte " + ", ".join(str(i + 1) for i in range(ARRAY1_LEN)),
            f".org 0x{L['secret']:X}", "secret:",
            "    .byte " + ", ".join(str(b) for b in cfg.secret),
            f".org 0x{L['join']:X}", "    .byte 0"]
    return "\n".join(src) + "\n"


def build_v1(config: ScenarioConfig) -> Scenario:
    if config.variant not in (V1_FLUSH, V1_EVICT, V1_EVICTTIME):
        raise ValueError(f"build_v1 cannot build variant {config.variant}")
    L = V1
    if len(config.secret) > PAGE:
        raise ValueError("secret must fit in one victim page")
    prog = assemble(_v1_source(config))
    if config.mitigations.fence_after_branches:
        prog = insert_fences(prog)
    space = AddressSpace()
    for pg in prog.pages(PAGE):
        space.map(pg, pg, "rwx")
    _map_pages(space, config.probe.probe_base, config.probe.size, "rw")
    _map_pages(space, L["arena"], L["arena_pages"] * PAGE, "r")
    space.arena = [L["arena"] // PAGE + i for i in range(L["arena_pages"])]
    if not space.can(L["secret"] + len(config.secret) - 1, "r"):
        raise ValueError("secret lies outside victim-readable pages")
    layout = dict(L, probe_base=config.probe.probe_base, stride=config.probe.stride,
                  malicious=prog.addr("malicious"), train=prog.addr("train"),
                  warm=prog.addr("warm"), pad=config.pad)
    return Scenario(config, {0: prog}, {0: Context(0, space)}, layout)


class _Machine:
    """Hierarchy, predictors and cycle accounting shared by a scenario's runs."""

    def __init__(self, sc: Scenario):
        cfg = sc.config
        self.sc = sc
        self.h = CacheHierarchy(cfg.cache)
        self.bp = PredictorState(cfg.predictor)
        self.opts = cfg.mitigations
        self.cycles = 0
        self.last_trace = None
        self.last_probe = None

    def artifacts(self) -> dict:
        return {"probe": self.last_probe, "trace": self.last_trace, "predictor": self.bp}

    def sim_config(self, contexts, log_events=None) -> SimConfig:
        sim = self.sc.config.sim
        return replace(sim, contexts=contexts,
                       log_events=sim.log_events if log_events is None else log_events)

    def run(self, contexts, h=None, bp=None, log_events=None):
        tr = run(self.sc.programs, self.sim_config(contexts, log_events),
                 self.h if h is None else h, self.bp if bp is None else bp, self.opts)
        if h is None:
            self.cycles += tr.cycles
        self.last_trace = tr
        return tr


def _score(cfg: ScenarioConfig, values: list, attempts: list, addrs: list, cycles: int,
           extra=None, log=None, machine=None) -> AttackReport:
    per = [ByteResult(a, v, v == s, n) for a, v, s, n in zip(addrs, values, cfg.secret, attempts)]
    acc = sum(b.correct for b in per) / len(cfg.secret)
    bw = len(cfg.secret) / (cycles / 1e6) if cycles else 0.0
    return AttackReport(cfg.variant, bytes(values), per, acc, cycles, bw,
                        cfg.mitigations.as_dict(), extra or {}, log or [],
                        machine.artifacts() if machine else {})


def _arch_matches(sc: Scenario, ctxs: list, trace) -> bool:
    ref = interpret_in_order(sc.programs, replace(sc.config.sim, contexts=ctxs))
    return all(trace.states[i].same_as(ref[i]) for i in ref)


def run_v1(sc: Scenario, check_arch: bool = True) -> AttackReport:
    """Recover the secret one byte at a time through the bounds-check bypass."""
    cfg, L = sc.config, sc.layout
    if cfg.variant == V1_EVICTTIME:
        return _run_v1_evicttime(sc)
    m = _Machine(sc)
    rng = random.Random(cfg.seed)
    probe, space = cfg.probe, sc.contexts[0].space
    evict = cfg.variant == V1_EVICT
    values, attempts, addrs, log = [], [], [], []

    def train():
        for _ in range(cfg.training_passes):
            m.run([Context(0, space, L["train"], {2: rng.randrange(ARRAY1_LEN)})])

    train()   # so that even the first warm-up call runs transiently
    for j, s in enumerate(cfg.secret):
        target = L["secret"] + j
        x_mal = target - L["array1"]
        addrs.append(target)
        best, used = None, 0
        for a in range(cfg.attempts_per_byte):
            used = a + 1
            if evict:
                m.cycles += evict_line(m.h, L["array1_size"], space)
            m.run([Context(0, space, L["malicious"], {2: x_mal})])   # warms the secret's line
            train()
            if evict:
                m.cycles += evict_probe_array(m.h, probe, space)
                m.cycles += evict_line(m.h, L["array1_size"], space)
            else:
                flush_probe_array(m.h, probe, space)
            leak_ctx = [Context(0, space, L["malicious"], {2: x_mal})]
            tr = m.run(leak_ctx)
            entry = {"byte": j, "attempt": used, "expected": s,
                     "secret_line_level": m.h.lookup(space.translate(probe.addr(s))).name}
            if check_arch:
                entry["arch_match"] = _arch_matches(sc, leak_ctx, tr)
            truth = resident_indices(m.h, probe, space)
            res = m.last_probe = reload_and_classify(m.h, probe, space)
            m.cycles += sum(res.latencies)
            entry["hot"] = sorted(res.hot_indices)
            entry["classified_ok"] = res.hot_indices == truth
            log.append(entry)
            best = res.best
            if best is not None:
                break
        values.append(0 if best is None else best)
        attempts.append(used)
    return _score(cfg, values, attempts, addrs, m.cycles, log=log, machine=m)


def _run_v1_evicttime(sc: Scenario) -> AttackReport:
    """Flush+Reload and Evict+Time against the same transient access.

    Per byte the victim is trained, uses its secret once (architecturally),
    and then has the bound, the join line and the probe array flushed. From
    that snapshot a Flush+Reload leg and, for every candidate value, an
    Evict+Time pair are run.
    """
    cfg, L = sc.config, sc.layout
    m = _Machine(sc)
    rng = random.Random(cfg.seed)
    probe, space = cfg.probe, sc.contexts[0].space
    values, attempts, addrs, log, et = [], [], [], [], []

    for j, s in enumerate(cfg.secret):
        target = L["secret"] + j
        x_mal = target - L["array1"]
        addrs.append(target)
        for _ in range(cfg.training_passes):
            m.run([Context(0, space, L["train"], {2: rng.randrange(ARRAY1_LEN)})])
        m.run([Context(0, space, L["warm"], {8: j})])
        m.h.flush_line(L["array1_size"])
        m.h.flush_line(L["join"])
        flush_probe_array(m.h, probe, space)
        base_h, base_bp = m.h, m.bp
        leak_ctx = [Context(0, space, L["malicious"], {2: x_mal})]

        def victim(h, _bp=base_bp, _ctx=leak_ctx):
            return m.run(_ctx, h=h, bp=_bp.copy()).cycles

        # Flush+Reload leg on a copy of the snapshot
        fr_h = base_h.copy()
        fr = m.run(leak_ctx, h=fr_h, bp=base_bp.copy())
        m.cycles += fr.cycles
        truth = resident_indices(fr_h, probe, space)
        res = m.last_probe = reload_and_classify(fr_h, probe, space)
        m.cycles += sum(res.latencies)
        values.append(0 if res.best is None else res.best)
        attempts.append(1)
        log.append({"byte": j, "attempt": 1, "expected": s, "hot": sorted(res.hot_indices),
                    "classified_ok": res.hot_indices == truth})

        deltas = []
        for v in range(probe.entries):
            te, tp = evict_time(victim, probe.addr(v), base_h)
            m.cycles += te + tp
            deltas.append(te - tp)
        pos = [v for v, d in enumerate(deltas) if d > 0]
        guess = pos[0] if len(pos) == 1 else None
        et.append({"addr": target, "value": 0 if guess is None else guess, "correct": guess == s,
                   "delta_match": deltas[s],
                   "max_delta_other": max(abs(d) for v, d in enumerate(deltas) if v != s)})
        # continue from the Flush+Reload leg's end state
        m.h = fr_h
        m.bp = base_bp
    et_acc = sum(e["correct"] for e in et) / len(cfg.secret)
    extra = {"evict_time": {"accuracy": et_acc, "bytes": et}}
    return _score(cfg, values, attempts, addrs, m.cycles, extra=extra, log=log, machine=m)


# variant 2 -----------------------------------------------------------------------------

def _le8(v: int) -> str:
    return ", ".join(str(b) for b in v.to_bytes(8, "little"))


def build_v2(config: ScenarioConfig, gadget: GadgetSpec | None = None) -> Scenario:
    if config.variant != V2_BTB:
        raise ValueError(f"build_v2 cannot build variant {config.variant}")
    g = gadget or config.gadget
    L, p = V2, config.probe
    if g.address // PAGE != L["gadget_page"] // PAGE:
        raise ValueError("gadget must sit in the shared gadget page")
    if len(config.secret) > PAGE:
        raise ValueError("secret must fit in one victim page")

    victim_src = "\n".join([
        f".org 0x{L['victim']:X}",
        "start:",
        f"    JMPM [0x{L['fptr']:X}]",
        "    HALT",
        "vdone:",
        "    HALT",
        f".org 0x{g.address:X}",
        "gadget:",
        f"    LOAD r3, [r{g.r1_reg} + r{g.index_reg}*1 + 0x{g.displacement:X}]",
        f"    SHL r3, r3, {_shift(p.stride)}",
        f"    LOAD r4, [r{g.r2_reg} + r3*1]",
        "    HALT",
        f".org 0x{L['fptr']:X}",
        f"    .byte {_le8(L['victim'] + 8)}",
        f".org 0x{L['secret']:X}",
        "secret:",
        "    .byte " + ", ".join(str(b) for b in config.secret),
    ]) + "\n"
    victim = assemble(victim_src)
    jump_pc = victim.entry
    vdone = victim.addr("vdone")
    if vdone != L["victim"] + 8:
        raise AssertionError("victim layout drifted")

    # address spaces
    vspace = AddressSpace()
    for pg in victim.pages(PAGE):
        vspace.map(pg, pg, "rwx" if pg != L["gadget_page"] // PAGE else "rx")
    _map_pages(vspace, L["victim_probe"], p.size, "r", phys=p.probe_base)

    aspace = AddressSpace()
    off = L["attacker_phys_pages"]
    train_pc = jump_pc + (1 << L["alias_bit"])
    regions = [(L["attacker"], PAGE, "rwx", None), (train_pc, 4, "rwx", None),
               (L["attacker_data"], PAGE, "rwx", None),
               (L["gadget_page"], PAGE, "r", L["gadget_page"]),
               (p.probe_base, p.size, "r", p.probe_base),
               (L["arena"], L["arena_pages"] * PAGE, "r", L["arena"])]
    for base, size, perms, phys in regions:
        first, last = base // PAGE, (base + size - 1) // PAGE
        if any(pg in aspace.pages for pg in range(first, last + 1)):
            raise ValueError(f"attacker mapping at 0x{base:X} overlaps another region")
        _map_pages(aspace, base, size, perms, phys=(first + off) * PAGE if phys is None else phys)
    aspace.arena = [L["arena"] // PAGE + i for i in range(L["arena_pages"])]

    hier = CacheHierarchy(config.cache)
    walk = []
    if config.evict_target:
        addrs = congruent_addresses(hier, L["fptr"], eviction_set_size(hier), aspace, vspace)
        walk = eviction_walk(addrs)

    att_src = [
        f".org 0x{L['attacker']:X}",
        "start:",
        f"    MOVI r20, {config.training_passes}",
        "train_loop:",
        "    MOVI r29, train_cont",
        "    JMP tramp",
        "train_cont:",
        "    SUB r20, r20, 1",
        "    BEQ r20, r0, evict",
        "    JMP train_loop",
        "evict:",
    ] + [f"    LOAD r21, [0x{a:X}]" for a in walk] + [
        "    YIELD",
        "    HALT",
        "handler:",
        "    JMPR r29",
        f".org 0x{train_pc:X}",
        "tramp:",
        f"    JMPM [0x{L['attacker_data']:X}]",
        f".org 0x{L['attacker_data']:X}",
        f"    .byte {_le8(g.address)}",
    ]
    attacker = assemble("\n".join(att_src) + "\n")
    programs = {0: attacker, 1: victim}
    if config.mitigations.fence_after_branches:
        programs = {k: insert_fences(v) for k, v in programs.items()}
        attacker = programs[0]

    if not vspace.can(g.address, "x"):
        raise ValueError("gadget address is not executable in the victim context")
    if not vspace.can(L["secret"] + len(config.secret) - 1, "r"):
        raise ValueError("secret lies outside victim-readable pages")
    contexts = {0: Context(0, aspace, fault_handler=attacker.addr("handler")),
                1: Context(1, vspace)}
    layout = dict(L, probe_base=p.probe_base, stride=p.stride, victim_jump_pc=jump_pc,
                  train_pc=train_pc, gadget=g.address, evicted=bool(walk))
    return Scenario(config, programs, contexts, layout)


def v2_victim_regs(sc: Scenario, target: int) -> dict:
    """Register seeds that point the gadget's first load at ``target``."""
    g = sc.config.gadget
    r1 = target - g.displacement - g.index_value
    return {g.r1_reg: r1, g.index_reg: g.index_value, g.r2_reg: sc.layout["victim_probe"]}


def run_v2(sc: Scenario, check_arch: bool = True) -> AttackReport:
    cfg, L = sc.config, sc.layout
    m = _Machine(sc)
    probe, aspace = cfg.probe, sc.contexts[0].space
    att = sc.contexts[0]
    values, attempts, addrs, log = [], [], [], []
    for j, s in enumerate(cfg.secret):
        target = L["secret"] + j
        addrs.append(target)
        vic = Context(1, sc.contexts[1].space, None, v2_victim_regs(sc, target))
        ctxs = [att, vic]
        best, used = None, 0
        for a in range(cfg.attempts_per_byte):
            used = a + 1
            m.run(ctxs)                       # warm-up pass
            flush_probe_array(m.h, probe, aspace)
            tr = m.run(ctxs)
            entry = {"byte": j, "attempt": used, "expected": s,
                     "secret_line_level": m.h.lookup(aspace.translate(probe.addr(s))).name}
            if check_arch:
                entry["arch_match"] = _arch_matches(sc, ctxs, tr)
            truth = resident_indices(m.h, probe, aspace)
            res = m.last_probe = reload_and_classify(m.h, probe, aspace)
            m.cycles += sum(res.latencies)
            entry["hot"] = sorted(res.hot_indices)
            entry["classified_ok"] = res.hot_indices == truth
            log.append(entry)
            best = res.best
            if best is not None:
                break
        values.append(0 if best is None else best)
        attempts.append(used)
    extra = {"layout": {"victim_jump_pc": L["victim_jump_pc"], "train_pc": L["train_pc"],
                        "gadget": L["gadget"]}}
    return _score(cfg, values, attempts, addrs, m.cycles, extra=extra, log=log, machine=m)


# dispatch --------------------------------------------------------------------------------

def build(config: ScenarioConfig) -> Scenario:
    return build_v2(config) if config.variant == V2_BTB else build_v1(config)


def run_scenario(scenario, options: MitigationOptions | None = None, check_arch: bool = False) -> AttackReport:
    """Build (if given a config) and run a scenario, optionally under other mitigations."""
    cfg = scenario.config if isinstance(scenario, Scenario) else scenario
    if options is not None and options != cfg.mitigations:
        cfg = replace(cfg, mitigations=options)
        scenario = cfg
    sc = scenario if isinstance(scenario, Scenario) else build(cfg)
    if cfg.variant == V2_BTB:
        return run_v2(sc, check_arch)
    return run_v1(sc, check_arch)


def sweep_speculation_window(config: ScenarioConfig, windows: list, pads: list | None = None,
                             jobs: int = 1) -> list[dict]:
    """Accuracy of the v1 attack for each (window, pad) pair.

    With pad n the leak needs a window of n + LEAK_CHAIN + SPEC_SLACK.
    """
    if config.variant == V2_BTB:
        raise ValueError("the window sweep applies to variant 1")
    pads = [config.pad] if pads is None else list(pads)
    grid = [(w, n) for n in pads for w in windows]

    def one(item):
        w, n = item
        cfg = replace(config, pad=n, sim=replace(config.sim, rob_size=w))
        rep = run_scenario(cfg)
        return {"window": w, "pad": n, "accuracy": rep.accuracy, "cycles": rep.simulated_cycles,
                "threshold_window": n + LEAK_CHAIN + SPEC_SLACK}

    if jobs > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(jobs) as ex:
            return list(ex.map(one, grid))
    return [one(it) for it in grid]
