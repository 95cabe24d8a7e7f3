import pytest
from hypothesis import given, strategies as st

from specsim.channels import (ProbeConfig, calibrate_threshold, check_probe, evict_line,
                              evict_reload, evict_time, eviction_set_size, flush_probe_array,
                              probe_order, reload_and_classify, resident_indices)
from specsim.memsys import AddressSpace, CacheConfig, CacheHierarchy, Level, LevelConfig

PROBE = ProbeConfig()


def _space():
    s = AddressSpace()
    s.map_range(0, 0x200000, 0)
    base = 0x10000000 // 4096
    for i in range(1664):
        s.map(base + i, 0x40000 + i)
        s.arena.append(base + i)
    return s


def test_default_threshold():
    assert calibrate_threshold(CacheHierarchy()) == 102


def test_threshold_follows_dram_latency():
    assert calibrate_threshold(CacheHierarchy(CacheConfig(dram_latency=300))) == 152


def test_explicit_threshold_wins():
    assert calibrate_threshold(CacheHierarchy(), ProbeConfig(threshold=90)) == 90


def test_flush_only_is_cold():
    h = CacheHierarchy()
    flush_probe_array(h, PROBE)
    res = reload_and_classify(h, PROBE)
    assert res.hot_indices == frozenset() and res.best is None
    assert set(res.latencies) == {200}


def test_single_touch():
    h = CacheHierarchy()
    flush_probe_array(h, PROBE)
    h.access(PROBE.addr(0x41))
    res = reload_and_classify(h, PROBE)
    assert res.hot_indices == {0x41} and res.best == 0x41
    assert res.latencies[0x41] in (4, 12)  # earlier reloads may push it down to L2


def test_double_touch_has_no_best():
    h = CacheHierarchy()
    flush_probe_array(h, PROBE)
    h.access(PROBE.addr(3))
    h.access(PROBE.addr(7))
    res = reload_and_classify(h, PROBE)
    assert res.hot_indices == {3, 7} and res.best is None


def test_probe_csv():
    h = CacheHierarchy()
    h.access(PROBE.addr(1))
    lines = reload_and_classify(h, ProbeConfig(entries=2)).csv().splitlines()
    assert lines == ["index,latency,hot", "0,200,0", "1,4,1"]


def test_stride_below_line_rejected():
    with pytest.raises(ValueError):
        check_probe(CacheHierarchy(), ProbeConfig(stride=32))


def test_probe_order_is_a_permutation():
    assert sorted(probe_order(256)) == list(range(256))
    assert probe_order(256) != list(range(256))


def test_eviction_set_size():
    assert eviction_set_size(CacheHierarchy()) == 16 + 8 + 1


def test_evict_line_even_when_walk_lines_are_warm():
    h = CacheHierarchy()
    s = _space()
    for _ in range(3):
        h.access(PROBE.addr(9))
        evict_line(h, PROBE.addr(9), s)
        assert h.lookup(PROBE.addr(9)) is Level.DRAM


def test_evict_reload_matches_flush_reload():
    s = _space()
    touched = [5, 77, 200]

    def victim(h):
        for i in touched:
            h.access(PROBE.addr(i))

    hf = CacheHierarchy()
    flush_probe_array(hf, PROBE)
    victim(hf)
    flushed = reload_and_classify(hf, PROBE)
    he = CacheHierarchy()
    for i in range(256):
        he.access(PROBE.addr(i))
    evicted = evict_reload(he, PROBE, s, victim)
    assert evicted.hot_indices == flushed.hot_indices == set(touched)


def test_evict_time_on_touched_and_untouched_lines():
    def victim(h):
        return h.access(PROBE.addr(0x20)).latency

    te, tp = evict_time(victim, PROBE.addr(0x20), CacheHierarchy())
    assert te - tp == 200 - 4
    te, tp = evict_time(victim, PROBE.addr(0x21), CacheHierarchy())
    assert te == tp


def test_evict_time_leaves_input_untouched():
    h = CacheHierarchy()
    h.access(PROBE.addr(1))
    before = h.contents()
    evict_time(lambda hh: hh.access(PROBE.addr(1)).latency, PROBE.addr(1), h, _space())
    assert h.contents() == before


@given(st.sets(st.integers(0, 255), max_size=20))
def test_classification_exact_and_self_pure(touched):
    h = CacheHierarchy()
    flush_probe_array(h, PROBE)
    for i in touched:
        h.access(PROBE.addr(i))
    truth = resident_indices(h, PROBE)
    res = reload_and_classify(h, PROBE)
    thr = res.threshold
    assert truth == set(touched) == res.hot_indices
    assert all(t != thr for t in res.latencies)
    # reloading never pushed another probe entry out of the hierarchy
    assert resident_indices(h, PROBE) == frozenset(range(256))


@given(st.sampled_from([64, 128, 256, 512, 1024, 4096]), st.sets(st.integers(0, 255), max_size=8))
def test_reload_self_purity_over_strides(stride, touched):
    probe = ProbeConfig(stride=stride)
    h = CacheHierarchy()
    flush_probe_array(h, probe)
    for i in touched:
        h.access(probe.addr(i))
    assert reload_and_classify(h, probe).hot_indices == set(touched)


def test_small_llc_breaks_self_purity_by_design():
    # a 4-way, 4-set LLC cannot hold the probe array: the reload must miss entries
    cfg = CacheConfig(l1=LevelConfig(1, 1, 4), l2=LevelConfig(2, 2, 12), llc=LevelConfig(4, 4, 40))
    h = CacheHierarchy(cfg)
    reload_and_classify(h, PROBE)
    assert len(resident_indices(h, PROBE)) < 256
