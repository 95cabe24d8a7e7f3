"""Scenario configuration files and the built-in presets.

A scenario file is flat ``section.key = value`` text. Blank lines and lines
starting with ``#`` are ignored; a later assignment overrides an earlier one.
Every key in ``KEYS`` can also be given on the command line with ``--set``.
"""
from __future__ import annotations

from dataclasses import replace
from pathlib import Path

from .attacks import V1_EVICT, V1_EVICTTIME, V1_FLUSH, V2_BTB, VARIANTS, ScenarioConfig
from .isa import Op


class ConfigError(ValueError):
    pass


VARIANT_NAMES = {"v1": V1_FLUSH, "v1-evict": V1_EVICT, "v1-evicttime": V1_EVICTTIME, "v2": V2_BTB}
for _v in VARIANTS:
    VARIANT_NAMES[_v] = _v
    VARIANT_NAMES[_v.lower()] = _v


def _bool(s: str) -> bool:
    t = s.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _int(s: str) -> int:
    return int(s.strip().replace("_", ""), 0)


def _opt_int(s: str):
    return None if s.strip().lower() in ("", "none", "auto") else _int(s)


def _secret(s: str) -> bytes:
    s = s.strip()
    if s.startswith("hex:"):
        return bytes.fromhex(s[4:])
    if len(s) >= 2 and s[0] == s[-1] and s[0] in "\"'":
        s = s[1:-1]
    return s.encode("latin-1")


def _variant(s: str) -> str:
    v = VARIANT_NAMES.get(s.strip()) or VARIANT_NAMES.get(s.strip().lower())
    if v is None:
        raise ValueError(f"unknown variant {s.strip()!r}")
    return v


# key -> (group, field, parser)
KEYS: dict = {
    "attack.variant": ("top", "variant", _variant),
    "attack.secret": ("top", "secret", _secret),
    "attack.training_passes": ("top", "training_passes", _int),
    "attack.attempts_per_byte": ("top", "attempts_per_byte", _int),
    "attack.pad": ("top", "pad", _int),
    "attack.evict_target": ("top", "evict_target", _bool),
    "attack.seed": ("top", "seed", _int),
    "probe.base": ("probe", "probe_base", _int),
    "probe.stride": ("probe", "stride", _int),
    "probe.entries": ("probe", "entries", _int),
    "probe.threshold": ("probe", "threshold", _opt_int),
    "sim.rob_size": ("sim", "rob_size", _int),
    "sim.max_cycles": ("sim", "max_cycles", _int),
    "sim.speculate": ("sim", "speculate", _bool),
    "sim.dram_serial": ("sim", "dram_serial", _bool),
    "sim.log_events": ("sim", "log_events", _bool),
    "cache.line_size": ("cache", "line_size", _int),
    "cache.dram_latency": ("cache", "dram_latency", _int),
    "cache.inclusive": ("cache", "inclusive", _bool),
    "predictor.btb_entries": ("predictor", "btb_entries", _int),
    "predictor.btb_index_bits": ("predictor", "btb_index_bits", _int),
    "predictor.btb_tag_bits": ("predictor", "btb_tag_bits", _int),
    "predictor.history_bits": ("predictor", "history_bits", _int),
    "predictor.pht_entries": ("predictor", "pht_entries", _int),
    "predictor.rsb_depth": ("predictor", "rsb_depth", _int),
    "predictor.observe_bits": ("predictor", "observe_bits", _int),
    "mitigations.fence_after_branches": ("mitigations", "fence_after_branches", _bool),
    "mitigations.flush_on_switch": ("mitigations", "flush_on_switch", _bool),
    "mitigations.no_spec_fill": ("mitigations", "no_spec_fill", _bool),
    "gadget.address": ("gadget", "address", _int),
    "gadget.displacement": ("gadget", "displacement", _int),
    "gadget.index_value": ("gadget", "index_value", _int),
}
for _lv in ("l1", "l2", "llc"):
    for _f, _name in (("sets", "sets"), ("ways", "ways"), ("latency", "hit_latency")):
        KEYS[f"cache.{_lv}.{_f}"] = ("level:" + _lv, _name, _int)
for _op in Op:
    KEYS[f"sim.latency.{_op.name.lower()}"] = ("latency", _op, _int)
KEYS["seed"] = KEYS["attack.seed"]


def parse_text(text: str, source: str = "<config>") -> list[tuple[str, str]]:
    """Split config text into (key, raw value) pairs, in order."""
    out = []
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, val = line.partition("=")
        if not sep:
            raise ConfigError(f"{source}:{n}: expected 'key = value'")
        out.append((key.strip(), val.strip()))
    return out


def parse_override(item: str) -> tuple[str, str]:
    key, sep, val = item.partition("=")
    if not sep or not key.strip():
        raise ConfigError(f"bad override {item!r}, expected key=value")
    return key.strip(), val.strip()


def apply(config: ScenarioConfig, pairs) -> ScenarioConfig:
    """Return ``config`` with each (key, raw value) assignment applied."""
    groups: dict = {"top": {}, "probe": {}, "sim": {}, "cache": {}, "predictor": {},
                    "mitigations": {}, "gadget": {}, "latency": {}}
    for key, raw in pairs:
        spec = KEYS.get(key.lower() if key.lower().startswith("sim.latency.") else key)
        if spec is None:
            raise ConfigError(f"unknown config key {key!r}")
        group, name, conv = spec
        try:
            value = conv(raw)
        except ValueError as e:
            raise ConfigError(f"{key}: {e}") from None
        groups.setdefault(group, {})[name] = value
    try:
        cache = config.cache
        for lv in ("l1", "l2", "llc"):
            if groups.get("level:" + lv):
                cache = replace(cache, **{lv: replace(getattr(cache, lv), **groups["level:" + lv])})
        if groups["cache"]:
            cache = replace(cache, **groups["cache"])
        sim = config.sim
        if groups["latency"]:
            sim = replace(sim, latencies={**sim.latencies, **groups["latency"]})
        if groups["sim"]:
            sim = replace(sim, **groups["sim"])
        return replace(config, **groups["top"],
                       probe=replace(config.probe, **groups["probe"]),
                       sim=sim, cache=cache,
                       predictor=replace(config.predictor, **groups["predictor"]),
                       mitigations=replace(config.mitigations, **groups["mitigations"]),
                       gadget=replace(config.gadget, **groups["gadget"]))
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from None


def dump(config: ScenarioConfig) -> str:
    """Render every settable key of ``config`` as scenario-file text."""
    c = config
    inv = {v: k for k, v in VARIANT_NAMES.items() if k in ("v1", "v1-evict", "v1-evicttime", "v2")}
    lines = [f"attack.variant = {inv[c.variant]}",
             f"attack.secret = hex:{c.secret.hex()}"]
    for key, (group, name, _) in KEYS.items():
        if key in ("attack.variant", "attack.secret", "seed"):
            continue
        obj = {"top": c, "probe": c.probe, "sim": c.sim, "cache": c.cache,
               "predictor": c.predictor, "mitigations": c.mitigations,
               "gadget": c.gadget}.get(group)
        if group == "latency":
            val = c.sim.latencies.get(name, 1)
        elif group.startswith("level:"):
            val = getattr(getattr(c.cache, group[6:]), name)
        else:
            val = getattr(obj, name)
        if isinstance(val, bool):
            val = str(val).lower()
        elif val is None:
            val = "auto"
        lines.append(f"{key} = {val}")
    return "\n".join(lines) + "\n"


PRESETS = {
    "v1": """\
# bounds-check bypass, Flush+Reload recovery
attack.variant = v1
attack.secret = The Magic Words are Squeamish Ossifrage.
""",
    "v1-evict": """\
# bounds-check bypass; the bound and the probe array are evicted through
# congruent loads instead of being flushed
attack.variant = v1-evict
attack.secret = Ossifrag
""",
    "v2": """\
# cross-context branch target injection
attack.variant = v2
attack.secret = Secret password!
""",
    "v1-evicttime": """\
# bounds-check bypass observed both by Flush+Reload and by Evict+Time
attack.variant = v1-evicttime
attack.secret = Squeamis
""",
}


def load_preset(name: str) -> ScenarioConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r} (have: {', '.join(PRESETS)})")
    return apply(ScenarioConfig(), parse_text(PRESETS[name], f"<preset {name}>"))


def load_file(path) -> ScenarioConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read scenario {path}: {e.strerror or e}") from None
    return apply(ScenarioConfig(), parse_text(text, str(p)))


def resolve(preset: str | None = None, scenario=None, overrides=()) -> ScenarioConfig:
    """Preset or scenario file (scenario wins), then ``--set`` overrides."""
    if scenario is not None:
        cfg = load_file(scenario)
    else:
        cfg = load_preset(preset or "v1")
    return apply(cfg, [parse_override(o) for o in overrides])
