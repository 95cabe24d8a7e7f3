"""Sparse memory, page-table address spaces and a strict-LRU cache hierarchy.

Latencies are deterministic: an access costs exactly the hit latency of the
highest level holding its line.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

PAGE_SIZE = 4096


class Level(enum.IntEnum):
    L1 = 0
    L2 = 1
    LLC = 2
    DRAM = 3


@dataclass(frozen=True)
class LevelConfig:
    sets: int
    ways: int
    hit_latency: int


@dataclass(frozen=True)
class CacheConfig:
    l1: LevelConfig = LevelConfig(64, 8, 4)
    l2: LevelConfig = LevelConfig(512, 8, 12)
    llc: LevelConfig = LevelConfig(4096, 16, 40)
    line_size: int = 64
    dram_latency: int = 200
    inclusive: bool = True

    def __post_init__(self):
        if self.line_size <= 0 or self.line_size & (self.line_size - 1):
            raise ValueError("line_size must be a power of two")
        for lv in self.levels:
            if lv.sets <= 0 or lv.sets & (lv.sets - 1):
                raise ValueError("set counts must be powers of two")
            if lv.ways <= 0:
                raise ValueError("ways must be positive")
        lat = [lv.hit_latency for lv in self.levels] + [self.dram_latency]
        if any(a >= b for a, b in zip(lat, lat[1:])):
            raise ValueError("latencies must strictly increase L1 < L2 < LLC < DRAM")

    @property
    def levels(self) -> tuple[LevelConfig, LevelConfig, LevelConfig]:
        return (self.l1, self.l2, self.llc)

    def latency(self, level: Level) -> int:
        if level is Level.DRAM:
            return self.dram_latency
        return self.levels[level].hit_latency

    def capacity(self, level: Level) -> int:
        lv = self.levels[level]
        return lv.sets * lv.ways * self.line_size


class MemoryImage:
    """Sparse byte-addressable physical memory; unwritten bytes read as zero."""

    def __init__(self, page_size: int = PAGE_SIZE):
        self.page_size = page_size
        self.pages: dict[int, bytearray] = {}

    def read(self, addr: int, size: int) -> bytes:
        out = bytearray()
        while size:
            pn, off = divmod(addr, self.page_size)
            n = min(size, self.page_size - off)
            page = self.pages.get(pn)
            out += page[off:off + n] if page is not None else bytes(n)
            addr += n
            size -= n
        return bytes(out)

    def write(self, addr: int, data: bytes) -> None:
        pos = 0
        while pos < len(data):
            pn, off = divmod(addr + pos, self.page_size)
            n = min(len(data) - pos, self.page_size - off)
            page = self.pages.get(pn)
            if page is None:
                page = self.pages[pn] = bytearray(self.page_size)
            page[off:off + n] = data[pos:pos + n]
            pos += n

    def copy(self) -> MemoryImage:
        m = MemoryImage(self.page_size)
        m.pages = {k: bytearray(v) for k, v in self.pages.items()}
        return m

    def __eq__(self, other):
        if not isinstance(other, MemoryImage):
            return NotImplemented
        zero = bytes(self.page_size)
        a = {k: bytes(v) for k, v in self.pages.items() if v != zero}
        b = {k: bytes(v) for k, v in other.pages.items() if v != zero}
        return a == b


class AccessFault(Exception):
    """Translation failure: unmapped page or missing permission."""

    def __init__(self, vaddr: int, kind: str):
        super().__init__(f"{kind} at 0x{vaddr:X}")
        self.vaddr = vaddr
        self.kind = kind


@dataclass
class AddressSpace:
    """Per-context page table: virtual page -> (physical page, perms).

    ``perms`` is a subset of "rwx". ``arena`` lists virtual page numbers the
    owner may use for eviction walks.
    """
    pages: dict = field(default_factory=dict)
    arena: list = field(default_factory=list)
    page_size: int = PAGE_SIZE
    # congruence search results; valid while pages and arena are unchanged
    _congruent: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def map(self, vpage: int, ppage: int, perms: str = "rw") -> None:
        self.pages[vpage] = (ppage, perms)
        self._congruent.clear()

    def map_range(self, vaddr: int, size: int, paddr: int, perms: str = "rw") -> None:
        first = vaddr // self.page_size
        last = (vaddr + max(size, 1) - 1) // self.page_size
        pfirst = paddr // self.page_size
        for i in range(last - first + 1):
            self.map(first + i, pfirst + i, perms)

    def translate(self, vaddr: int, perm: str = "r") -> int:
        vp, off = divmod(vaddr, self.page_size)
        entry = self.pages.get(vp)
        if entry is None:
            raise AccessFault(vaddr, "unmapped")
        if perm not in entry[1]:
            raise AccessFault(vaddr, f"no-{perm}")
        return entry[0] * self.page_size + off

    def can(self, vaddr: int, perm: str) -> bool:
        entry = self.pages.get(vaddr // self.page_size)
        return entry is not None and perm in entry[1]


@dataclass(frozen=True)
class AccessResult:
    value: bytes
    latency: int
    hit_level: Level


class CacheHierarchy:
    """Inclusive (by default) three-level cache in front of a MemoryImage.

    Each set is a list of line tags ordered LRU first, MRU last. Tags are full
    line numbers (address // line_size), which keeps back-invalidation simple.
    """

    def __init__(self, config: CacheConfig | None = None, memory: MemoryImage | None = None):
        self.config = config or CacheConfig()
        self.memory = memory if memory is not None else MemoryImage()
        self.sets: list[dict[int, list[int]]] = [{}, {}, {}]
        self.hits = [0, 0, 0, 0]
        self.misses = [0, 0, 0, 0]

    # geometry

    def line(self, addr: int) -> int:
        return addr // self.config.line_size

    def set_index(self, level: Level, addr: int) -> int:
        return self.line(addr) & (self.config.levels[level].sets - 1)

    def _holds(self, level: int, line: int) -> bool:
        s = self.sets[level].get(line & (self.config.levels[level].sets - 1))
        return s is not None and line in s

    def lookup(self, addr: int) -> Level:
        """Highest level holding addr's line. Pure."""
        ln = self.line(addr)
        for lv in (Level.L1, Level.L2, Level.LLC):
            if self._holds(lv, ln):
                return lv
        return Level.DRAM

    # state changes

    def _touch(self, level: int, line: int) -> None:
        """Make line MRU at level, inserting and evicting the LRU if needed."""
        cfg = self.config.levels[level]
        idx = line & (cfg.sets - 1)
        s = self.sets[level].setdefault(idx, [])
        if line in s:
            s.remove(line)
        elif len(s) >= cfg.ways:
            victim = s.pop(0)
            if level == Level.LLC and self.config.inclusive:
                self._drop(Level.L1, victim)
                self._drop(Level.L2, victim)
        s.append(line)

    def _drop(self, level: int, line: int) -> None:
        idx = line & (self.config.levels[level].sets - 1)
        s = self.sets[level].get(idx)
        if s and line in s:
            s.remove(line)
            if not s:
                del self.sets[level][idx]

    def install(self, addr: int, source: Level = Level.DRAM) -> None:
        """Fill addr's line as MRU into every level at or above ``source``
        (the level the data came from). No stats."""
        ln = self.line(addr)
        for lv in (Level.LLC, Level.L2, Level.L1):
            if lv <= source:
                self._touch(lv, ln)

    def access(self, addr: int, size: int = 1, kind: str = "read", fill: bool = True,
               data: bytes | None = None) -> AccessResult:
        if size <= 0:
            raise ValueError("zero-size access")
        ls = self.config.line_size
        if addr // ls != (addr + size - 1) // ls:
            raise ValueError(f"access at 0x{addr:X} size {size} straddles a line")
        level = self.lookup(addr)
        for lv in range(level):
            self.misses[lv] += 1
        self.hits[level] += 1
        if kind == "write":
            if data is None or len(data) != size:
                raise ValueError("write needs data of the access size")
            self.memory.write(addr, data)
            value = bytes(data)
        elif kind == "read":
            value = self.memory.read(addr, size)
        else:
            raise ValueError(f"unknown access kind {kind!r}")
        if fill:
            self.install(addr, level)
        return AccessResult(value, self.config.latency(level), level)

    def flush_line(self, addr: int) -> None:
        ln = self.line(addr)
        for lv in (Level.L1, Level.L2, Level.LLC):
            self._drop(lv, ln)

    # inspection

    def contents(self) -> tuple:
        """Hashable snapshot of every level's sets (stats excluded)."""
        return tuple(tuple(sorted((k, tuple(v)) for k, v in lv.items() if v)) for lv in self.sets)

    def copy(self) -> CacheHierarchy:
        h = CacheHierarchy(self.config, self.memory.copy())
        h.sets = [{k: list(v) for k, v in lv.items()} for lv in self.sets]
        h.hits = list(self.hits)
        h.misses = list(self.misses)
        return h

    def stats_csv(self) -> str:
        rows = ["level,hits,misses"]
        for lv in Level:
            rows.append(f"{lv.name},{self.hits[lv]},{self.misses[lv]}")
        return "\n".join(rows) + "\n"


def congruent_addresses(hierarchy: CacheHierarchy, addr: int, count: int, space: AddressSpace,
                        target_space: AddressSpace | None = None) -> list[int]:
    """Virtual addresses in ``space``'s eviction arena that share every cache
    set with ``addr`` (translated through ``target_space``, default ``space``).
    """
    if count <= 0:
        return []
    target = (target_space or space).translate(addr)
    tline = hierarchy.line(target)
    want = [hierarchy.set_index(lv, target) for lv in (Level.L1, Level.L2, Level.LLC)]
    off = addr % space.page_size
    key = (hierarchy.config, target, count, tuple(space.arena))
    hit = space._congruent.get(key)
    if hit is not None:
        return list(hit)
    out = []
    for vp in space.arena:
        va = vp * space.page_size + off
        try:
            pa = space.translate(va)
        except AccessFault:
            continue
        if hierarchy.line(pa) == tline:
            continue
        if [hierarchy.set_index(lv, pa) for lv in (Level.L1, Level.L2, Level.LLC)] == want:
            out.append(va)
            if len(out) == count:
                space._congruent[key] = tuple(out)
                return out
    raise ValueError(f"eviction arena too small: found {len(out)} of {count} congruent addresses")


def eviction_walk(addrs: list[int], trail: int = 2) -> list[int]:
    """Access order for an eviction pass: a leading index plus a second index
    trailing it by ``trail`` steps, which re-touches recent lines so the
    target stays the least recently used."""
    order = []
    for i in range(len(addrs) + trail):
        if i < len(addrs):
            order.append(addrs[i])
        if i >= trail:
            order.append(addrs[i - trail])
    return order
