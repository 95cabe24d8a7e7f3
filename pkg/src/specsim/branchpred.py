"""Branch prediction state shared by every context on the core.

Direct-mapped BTB tagged by truncated virtual pc, gshare direction predictor
over 2-bit counters, and a bounded return stack. Nothing in here knows which
context a branch came from.
"""
from __future__ import annotations

from dataclasses import dataclass, field

CLASSES = ("conditional", "indirect", "call", "return", "direct")


@dataclass(frozen=True)
class PredictorConfig:
    btb_entries: int = 4096
    btb_index_bits: int = 12
    btb_tag_bits: int = 8
    history_bits: int = 8
    pht_entries: int = 4096
    rsb_depth: int = 16
    observe_bits: int = 20

    def __post_init__(self):
        if self.btb_entries != 1 << self.btb_index_bits:
            raise ValueError("btb_entries must equal 2**btb_index_bits")
        if self.btb_index_bits + self.btb_tag_bits > self.observe_bits:
            raise ValueError("btb_index_bits + btb_tag_bits must not exceed observe_bits")
        if self.pht_entries <= 0 or self.pht_entries & (self.pht_entries - 1):
            raise ValueError("pht_entries must be a power of two")
        if self.history_bits < 0 or self.rsb_depth < 1:
            raise ValueError("bad history_bits / rsb_depth")


@dataclass(frozen=True)
class Prediction:
    taken: bool
    target: int
    source: str  # BTB | PHT_fallthrough | RSB | static_not_taken | decoded
    history: int = 0


@dataclass
class PredictorState:
    config: PredictorConfig = field(default_factory=PredictorConfig)
    btb: list = field(init=False)
    pht: list = field(init=False)
    ghr: int = field(init=False, default=0)
    spec_ghr: int = field(init=False, default=0)
    rsb: list = field(init=False)

    def __post_init__(self):
        self.btb = [None] * self.config.btb_entries
        self.pht = [1] * self.config.pht_entries
        self.rsb = []

    # indexing

    def _observed(self, pc: int) -> int:
        return pc & ((1 << self.config.observe_bits) - 1)

    def btb_index(self, pc: int) -> int:
        return (self._observed(pc) >> 2) & (self.config.btb_entries - 1)

    def btb_tag(self, pc: int) -> int:
        c = self.config
        return (self._observed(pc) >> (2 + c.btb_index_bits)) & ((1 << c.btb_tag_bits) - 1)

    def pht_index(self, pc: int, history: int) -> int:
        return ((self._observed(pc) >> 2) ^ history) & (self.config.pht_entries - 1)

    def _hist_mask(self) -> int:
        return (1 << self.config.history_bits) - 1

    def btb_lookup(self, pc: int) -> int | None:
        e = self.btb[self.btb_index(pc)]
        if e is not None and e[0] == self.btb_tag(pc):
            return e[1]
        return None

    # prediction / training

    def predict(self, pc: int, opclass: str, fallthrough: int | None = None,
                target: int | None = None) -> Prediction:
        """Predict the next pc after the branch at ``pc``.

        Conditional predictions shift the predicted direction into the
        speculative history; everything else leaves state untouched.
        """
        ft = pc + 4 if fallthrough is None else fallthrough
        if opclass == "conditional":
            hist = self.spec_ghr
            taken = self.pht[self.pht_index(pc, hist)] >= 2
            tgt = self.btb_lookup(pc) if taken else None
            self.spec_ghr = ((hist << 1) | int(taken)) & self._hist_mask()
            if tgt is None:
                # a taken counter without a BTB target still falls through
                self.spec_ghr = (hist << 1) & self._hist_mask()
                return Prediction(False, ft, "PHT_fallthrough", hist)
            return Prediction(True, tgt, "BTB", hist)
        if opclass == "indirect":
            tgt = self.btb_lookup(pc)
            if tgt is None:
                return Prediction(False, ft, "static_not_taken", self.spec_ghr)
            return Prediction(True, tgt, "BTB", self.spec_ghr)
        if opclass == "return":
            if not self.rsb:
                return Prediction(False, ft, "static_not_taken", self.spec_ghr)
            return Prediction(True, self.rsb[-1], "RSB", self.spec_ghr)
        if opclass in ("direct", "call"):
            if target is None:
                raise ValueError("direct branches need their decoded target")
            return Prediction(True, target, "decoded", self.spec_ghr)
        raise ValueError(f"unknown branch class {opclass!r}")

    def update(self, pc: int, taken: bool, actual_target: int, opclass: str,
               history: int | None = None) -> None:
        """Train on a resolved branch.

        ``history`` is the global history the branch was predicted with;
        it defaults to the committed history register.
        """
        if opclass == "conditional":
            hist = self.ghr if history is None else history
            i = self.pht_index(pc, hist)
            if taken:
                self.pht[i] = min(3, self.pht[i] + 1)
            else:
                self.pht[i] = max(0, self.pht[i] - 1)
            self.ghr = ((self.ghr << 1) | int(taken)) & self._hist_mask()
            if taken:
                self._install(pc, actual_target)
        elif opclass == "indirect":
            self._install(pc, actual_target)
        elif opclass == "call":
            self._install(pc, actual_target)
            self.rsb.append(pc + 4)
            if len(self.rsb) > self.config.rsb_depth:
                self.rsb.pop(0)
        elif opclass == "return":
            if self.rsb:
                self.rsb.pop()
        elif opclass != "direct":
            raise ValueError(f"unknown branch class {opclass!r}")

    def _install(self, pc: int, target: int) -> None:
        self.btb[self.btb_index(pc)] = (self.btb_tag(pc), target)

    def restore_history(self, history: int) -> None:
        """Reset the speculative history (squash recovery)."""
        self.spec_ghr = history & self._hist_mask()

    def flush(self) -> None:
        self.btb = [None] * self.config.btb_entries
        self.pht = [1] * self.config.pht_entries
        self.ghr = 0
        self.spec_ghr = 0
        self.rsb = []

    def copy(self) -> PredictorState:
        p = PredictorState(self.config)
        p.btb = list(self.btb)
        p.pht = list(self.pht)
        p.ghr, p.spec_ghr = self.ghr, self.spec_ghr
        p.rsb = list(self.rsb)
        return p

    def snapshot(self) -> tuple:
        return (tuple(self.btb), tuple(self.pht), self.ghr, self.spec_ghr, tuple(self.rsb))

    def btb_csv(self) -> str:
        rows = ["index,tag,target"]
        for i, e in enumerate(self.btb):
            if e is not None:
                rows.append(f"{i},0x{e[0]:X},0x{e[1]:X}")
        return "\n".join(rows) + "\n"


def flush_predictors(state: PredictorState) -> None:
    state.flush()
