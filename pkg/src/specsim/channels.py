"""Cache covert-channel primitives over a simulated hierarchy.

All probe addresses are virtual and go through the caller's address space,
so the same helpers serve single-context and cross-context scenarios.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

from .memsys import AddressSpace, CacheHierarchy, Level, congruent_addresses, eviction_walk


@dataclass(frozen=True)
class ProbeConfig:
    probe_base: int = 0x100000
    stride: int = 512
    entries: int = 256
    threshold: int | None = None

    def __post_init__(self):
        if self.entries < 1:
            raise ValueError("entries must be positive")
        if self.stride <= 0:
            raise ValueError("stride must be positive")

    def addr(self, i: int) -> int:
        return self.probe_base + i * self.stride

    @property
    def size(self) -> int:
        return self.entries * self.stride


@dataclass(frozen=True)
class ProbeResult:
    latencies: tuple
    hot_indices: frozenset
    best: int | None
    threshold: int

    def csv(self) -> str:
        rows = ["index,latency,hot"]
        for i, lat in enumerate(self.latencies):
            rows.append(f"{i},{lat},{int(i in self.hot_indices)}")
        return "\n".join(rows) + "\n"


class _Identity:
    page_size = 4096

    def translate(self, vaddr: int, perm: str = "r") -> int:
        return vaddr


IDENTITY = _Identity()


def check_probe(hierarchy: CacheHierarchy, probe: ProbeConfig) -> None:
    if probe.stride < hierarchy.config.line_size:
        raise ValueError("probe stride must be at least one cache line")


def calibrate_threshold(hierarchy: CacheHierarchy, probe: ProbeConfig | None = None) -> int:
    """Midpoint of L1 hit and DRAM latency, or the probe's explicit threshold."""
    if probe is not None and probe.threshold is not None:
        return probe.threshold
    c = hierarchy.config
    return (c.latency(Level.L1) + c.latency(Level.DRAM)) // 2


def probe_order(entries: int) -> list[int]:
    """Scrambled visiting order (a fixed affine permutation of the indices)."""
    mult = 167
    if math.gcd(mult, entries) != 1:
        return list(range(entries))
    return [(i * mult + 13) % entries for i in range(entries)]


def flush_probe_array(hierarchy: CacheHierarchy, probe: ProbeConfig, space=None) -> None:
    check_probe(hierarchy, probe)
    space = space or IDENTITY
    for i in range(probe.entries):
        hierarchy.flush_line(space.translate(probe.addr(i), "r"))


def eviction_set_size(hierarchy: CacheHierarchy) -> int:
    """Congruent lines needed to push a line out of the LLC even when the
    walk's own lines already sit in L2 (hits there leave LLC recency alone)."""
    c = hierarchy.config
    return c.llc.ways + c.l2.ways + 1


def evict_line(hierarchy: CacheHierarchy, vaddr: int, space: AddressSpace,
               target_space: AddressSpace | None = None) -> int:
    """Evict one line by walking a congruent eviction set from the arena.

    Returns the cycles the walk's loads cost.
    """
    addrs = congruent_addresses(hierarchy, vaddr, eviction_set_size(hierarchy), space, target_space)
    cycles = 0
    for va in eviction_walk(addrs):
        cycles += hierarchy.access(space.translate(va, "r")).latency
    return cycles


def evict_probe_array(hierarchy: CacheHierarchy, probe: ProbeConfig, space: AddressSpace) -> int:
    check_probe(hierarchy, probe)
    return sum(evict_line(hierarchy, probe.addr(i), space) for i in range(probe.entries))


def resident_indices(hierarchy: CacheHierarchy, probe: ProbeConfig, space=None) -> frozenset:
    """Entries whose line is cached at any level: the ground truth a reload should report as hot."""
    space = space or IDENTITY
    return frozenset(i for i in range(probe.entries)
                     if hierarchy.lookup(space.translate(probe.addr(i), "r")) != Level.DRAM)


def reload_and_classify(hierarchy: CacheHierarchy, probe: ProbeConfig, space=None) -> ProbeResult:
    """Time one read of every probe entry and classify it against the threshold."""
    check_probe(hierarchy, probe)
    space = space or IDENTITY
    thr = calibrate_threshold(hierarchy, probe)
    lat = [0] * probe.entries
    for i in probe_order(probe.entries):
        lat[i] = hierarchy.access(space.translate(probe.addr(i), "r")).latency
    hot = frozenset(i for i, t in enumerate(lat) if t < thr)
    best = next(iter(hot)) if len(hot) == 1 else None
    return ProbeResult(tuple(lat), hot, best, thr)


def evict_reload(hierarchy: CacheHierarchy, probe: ProbeConfig, arena: AddressSpace,
                 victim=None) -> ProbeResult:
    """Evict+Reload: contention-based setup, optional victim step, timed reload."""
    evict_probe_array(hierarchy, probe, arena)
    if victim is not None:
        victim(hierarchy)
    return reload_and_classify(hierarchy, probe, arena)


def evict_time(victim_runner, target_line: int, hierarchy: CacheHierarchy,
               space: AddressSpace | None = None) -> tuple[int, int]:
    """Time the victim with ``target_line`` evicted and with it primed.

    Both legs start from copies of ``hierarchy``; ``victim_runner(h)`` runs
    the victim against ``h`` and returns its cycle count. Eviction walks the
    eviction arena of ``space`` when it has one, else flushes the line.
    """
    ev = hierarchy.copy()
    if space is not None and space.arena:
        evict_line(ev, target_line, space)
    else:
        ev.flush_line((space or IDENTITY).translate(target_line, "r"))
    t_evicted = victim_runner(ev)

    pr = hierarchy.copy()
    pr.access((space or IDENTITY).translate(target_line, "r"))
    t_primed = victim_runner(pr)
    return t_evicted, t_primed
