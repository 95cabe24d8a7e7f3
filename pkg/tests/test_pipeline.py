import pytest
from hypothesis import given, settings, strategies as st

from specsim.branchpred import PredictorState
from specsim.isa import assemble
from specsim.memsys import CacheHierarchy, Level, MemoryImage
from specsim.mitigations import MitigationOptions, insert_fences
from specsim.pipeline import (FAULT_PC_REG, SimConfig, SimulationTimeout,
                              identity_context, interpret_in_order, run, squash_depth_report)
from specsim.randprog import random_program

ARRAY2 = 0x100000
SECRET = 0x41

# bounds-checked victim: train in bounds, then call once with x past the bound
LISTING = """
.org 0x1000
start:  LOAD r9, [size]
        LOAD r9, [0x2100]
        FENCE
        MOVI r10, 8
train:  AND r2, r10, 3
        CALL victim
        SUB r10, r10, 1
        BLT r0, r10, train
        FENCE
        CLFLUSH [size]
        CLFLUSH [0x108200]
        FENCE
""" + "".join(f"        BEQ r0, r0, p{i}\np{i}:\n" for i in range(8)) + """
        MOVI r2, 0x100
        CALL victim
        HALT
victim: BLT r2, [size], body
        RET
body:   LOAD r3, [r2 + array1]
        SHL r3, r3, 9
        LOAD r4, [r3 + 0x100000]
        RET
.org 0x2000
array1: .byte 200, 201, 202, 203
.org 0x2100
        .byte 0x41
.org 0x3000
size:   .byte 16
"""


def _listing(fenced=False, **kw):
    p = assemble(LISTING)
    if fenced:
        p = insert_fences(p)
    cfg = SimConfig(contexts=[identity_context(p, extra_pages=range(0x100, 0x120))], **kw)
    return p, cfg


def test_straight_line_matches_oracle():
    p = assemble("MOVI r1, 7\nMUL r2, r1, r1\nSUB r3, r2, 50\nSHL r4, r3, 60\nXOR r5, r4, r1\nHALT")
    tr = run(p)
    ref = interpret_in_order(p)[0]
    assert tr.states[0].same_as(ref)
    assert tr.squashed == 0
    assert ref.regs[3] == (49 - 50) & ((1 << 64) - 1)


def test_loop_sum():
    src = "MOVI r1, 10\nloop: ADD r2, r2, r1\nSUB r1, r1, 1\nBLT r0, r1, loop\nHALT"
    p = assemble(src)
    assert interpret_in_order(p)[0].regs[2] == 55
    assert run(p).states[0].regs[2] == 55


def test_transient_load_leaves_residue():
    p, cfg = _listing()
    h = CacheHierarchy()
    tr = run(p, cfg, h, PredictorState())
    assert tr.fault is None
    assert tr.states[0].same_as(interpret_in_order(p, cfg)[0])
    assert tr.states[0].regs[4] == 0          # the leaked value never reaches a register
    assert h.lookup(ARRAY2 + SECRET * 512) is Level.L1
    assert tr.squashed > 0


def test_residue_absent_when_prediction_cannot_run_ahead():
    p, cfg = _listing(speculate=False)
    h = CacheHierarchy()
    tr = run(p, cfg, h, PredictorState())
    assert tr.states[0].same_as(interpret_in_order(p, cfg)[0])
    assert h.lookup(ARRAY2 + SECRET * 512) is Level.DRAM


def test_fence_after_branch_blocks_residue():
    p, cfg = _listing(fenced=True)
    h = CacheHierarchy()
    tr = run(p, cfg, h, PredictorState())
    assert tr.states[0].same_as(interpret_in_order(p, cfg)[0])
    assert h.lookup(ARRAY2 + SECRET * 512) is Level.DRAM
    assert not any(ld[6] for ld in tr.loads)


def test_no_spec_fill_blocks_residue():
    p, cfg = _listing()
    h = CacheHierarchy()
    run(p, cfg, h, PredictorState(), MitigationOptions(no_spec_fill=True))
    assert h.lookup(ARRAY2 + SECRET * 512) is Level.DRAM


def test_squash_depth_branch_free():
    assert squash_depth_report(run(assemble("MOVI r1, 1\nADD r1, r1, 1\nHALT"))) == 0


def test_squash_depth_covers_leak_chain():
    p, cfg = _listing()
    tr = run(p, cfg, CacheHierarchy(), PredictorState())
    assert squash_depth_report(tr) >= 3


def test_small_window_never_issues_padded_leak():
    src = LISTING.replace("body:   LOAD r3", "body:" + "   ADD r20, r20, 1\n" * 20 + "        LOAD r3")
    p = assemble(src)
    cfg = SimConfig(rob_size=8, contexts=[identity_context(p, extra_pages=range(0x100, 0x120))])
    h = CacheHierarchy()
    tr = run(p, cfg, h, PredictorState())
    assert squash_depth_report(tr) <= 8
    assert h.lookup(ARRAY2 + SECRET * 512) is Level.DRAM
    assert not any(ld[2] == 0x2100 and ld[5] for ld in tr.loads)


# same victim, but the out-of-bounds index points into an unmapped page
SPEC_FAULT = LISTING.replace("MOVI r2, 0x100", f"MOVI r2, {0x900040 - 0x2000}")


def test_speculative_fault_is_suppressed_and_never_fills():
    p = assemble(SPEC_FAULT)
    cfg = SimConfig(contexts=[identity_context(p, extra_pages=range(0x100, 0x120))])
    h = CacheHierarchy()
    tr = run(p, cfg, h, PredictorState())
    assert tr.fault is None
    assert tr.states[0].same_as(interpret_in_order(p, cfg)[0])
    faulting = [e for e in tr.events if e["event"] == "issue" and e["detail"].get("addr") == 0x900040]
    assert faulting and all(e["detail"]["speculative"] for e in faulting)
    assert h.lookup(0x900040) is Level.DRAM


def test_architectural_fault_ends_run():
    p = assemble("MOVI r1, 1\nLOAD r2, [0x900000]\nMOVI r3, 3\nHALT")
    tr = run(p)
    assert tr.fault is not None and tr.fault.kind == "unmapped" and tr.fault.addr == 0x900000
    assert tr.states[0].regs[3] == 0
    assert interpret_in_order(p)[0].faulted == tr.fault


def test_fault_handler_receives_pc():
    p = assemble("start: LOAD r2, [0x900000]\nHALT\nh: MOVI r3, 1\nHALT")
    ctx = identity_context(p)
    ctx.fault_handler = p.addr("h")
    cfg = SimConfig(contexts=[ctx])
    st_ = run(p, cfg).states[0]
    assert st_.regs[3] == 1 and st_.regs[FAULT_PC_REG] == p.addr("start")
    assert st_.same_as(interpret_in_order(p, cfg)[0])


def test_store_forwarding_and_memory():
    src = "start: MOVI r1, 0x8000\nMOVI r2, 77\nSTORE r2, [r1 + 3]\nLOAD r3, [r1 + 3]\nHALT\n.org 0x8000\n.byte 0"
    p = assemble(src)
    tr = run(p)
    assert tr.states[0].regs[3] == 77
    assert tr.memory.read(0x8003, 1) == bytes([77])


def test_watchdog():
    with pytest.raises(SimulationTimeout):
        run(assemble("L: JMP L"), SimConfig(max_cycles=1000))
    with pytest.raises(SimulationTimeout):
        interpret_in_order(assemble("L: JMP L"), SimConfig(max_cycles=1000))


def test_yield_switches_round_robin():
    a = assemble(".org 0x1000\nstart: MOVI r1, 1\nYIELD\nMOVI r1, 3\nHALT")
    b = assemble(".org 0x2000\nstart: MOVI r1, 2\nHALT")
    cfg = SimConfig(contexts=[identity_context(a, 0), identity_context(b, 1)])
    tr = run({0: a, 1: b}, cfg)
    ref = interpret_in_order({0: a, 1: b}, cfg)
    assert tr.states[0].regs[1] == 3 and tr.states[1].regs[1] == 2
    assert all(tr.states[i].same_as(ref[i]) for i in (0, 1))
    assert any(e["event"] == "switch" for e in tr.events)


def test_rdcycle_reads_the_clock():
    tr = run(assemble("MOVI r1, 1\nRDCYCLE r2\nHALT"))
    assert tr.states[0].regs[2] > 0


def test_bad_config():
    with pytest.raises(ValueError):
        SimConfig(rob_size=0)
    with pytest.raises(ValueError):
        SimConfig(fetch_width=2)


# properties ------------------------------------------------------------------------------

@given(st.integers(0, 100_000), st.sampled_from([1, 2, 5, 16, 192]))
@settings(max_examples=150)
def test_differential_against_in_order(seed, rob):
    p = random_program(seed)
    cfg = SimConfig(rob_size=rob, log_events=False)
    tr = run(p, cfg, CacheHierarchy(), PredictorState())
    mem = MemoryImage()
    ref = interpret_in_order(p, cfg, mem)
    assert tr.states[0].same_as(ref[0])
    assert tr.memory == mem


@given(st.integers(0, 100_000), st.integers(1, 24))
@settings(max_examples=60)
def test_window_bound(seed, rob):
    tr = run(random_program(seed), SimConfig(rob_size=rob))
    inflight = 0
    for ev in tr.events:
        if ev["event"] == "fetch":
            inflight += 1
        elif ev["event"] in ("retire", "squash"):
            inflight -= 1
        assert inflight <= rob


@given(st.integers(0, 100_000))
@settings(max_examples=60)
def test_determinism(seed):
    p = random_program(seed)
    a = run(p, SimConfig(), CacheHierarchy(), PredictorState())
    b = run(p, SimConfig(), CacheHierarchy(), PredictorState())
    assert a.events == b.events and a.cycles == b.cycles
