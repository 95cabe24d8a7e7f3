import json
import subprocess
import sys

import pytest
from hypothesis import given, strategies as st

from specsim import cli
from specsim.attacks import ScenarioConfig, V1_FLUSH, V2_BTB
from specsim.config import (KEYS, PRESETS, ConfigError, apply, dump, load_file, load_preset,
                            parse_text, resolve)
from specsim.isa import Op


def test_presets_load():
    assert load_preset("v1").secret == b"The Magic Words are Squeamish Ossifrage."
    assert len(load_preset("v2").secret) == 16
    assert load_preset("v2").variant == V2_BTB
    with pytest.raises(ConfigError):
        load_preset("v3")


def test_comments_blank_lines_and_last_wins():
    pairs = parse_text("# c\n\nattack.pad = 3\nattack.pad=5\n")
    assert apply(ScenarioConfig(), pairs).pad == 5


@pytest.mark.parametrize("text", ["attack.pad", "nosuch.key = 1", "attack.pad = x",
                                  "sim.rob_size = 0", "mitigations.no_spec_fill = maybe",
                                  "cache.l1.sets = 3"])
def test_bad_config(text):
    with pytest.raises(ConfigError):
        apply(ScenarioConfig(), parse_text(text))


def test_secret_forms():
    assert apply(ScenarioConfig(), [("attack.secret", "hex:00ff")]).secret == b"\x00\xff"
    assert apply(ScenarioConfig(), [("attack.secret", "' spaced '")]).secret == b" spaced "


def test_nested_fields():
    c = resolve("v1", None, ["cache.llc.ways=8", "sim.latency.mul=9", "predictor.history_bits=4",
                             "probe.threshold=auto", "gadget.index_value=5", "seed=11"])
    assert c.cache.llc.ways == 8 and c.sim.latencies[Op.MUL] == 9
    assert c.predictor.history_bits == 4 and c.probe.threshold is None
    assert c.gadget.index_value == 5 and c.seed == 11


_values = {
    "attack.variant": st.sampled_from(["v1", "v1-evict", "v1-evicttime", "v2"]),
    "attack.secret": st.binary(min_size=1, max_size=8).map(lambda b: "hex:" + b.hex()),
    "probe.threshold": st.sampled_from(["auto", "90"]),
    "probe.stride": st.sampled_from(["64", "512", "4096"]),
    "probe.entries": st.sampled_from(["256", "512"]),
    "cache.line_size": st.just("64"),
    "cache.dram_latency": st.integers(41, 500).map(str),
    "predictor.btb_entries": st.just("4096"),
    "predictor.btb_index_bits": st.just("12"),
    "predictor.btb_tag_bits": st.integers(0, 8).map(str),
    "predictor.pht_entries": st.sampled_from(["1024", "4096"]),
    "predictor.observe_bits": st.integers(20, 48).map(str),
    "cache.l1.sets": st.just("64"), "cache.l2.sets": st.just("512"), "cache.llc.sets": st.just("4096"),
    "cache.l1.latency": st.just("4"), "cache.l2.latency": st.just("12"), "cache.llc.latency": st.just("40"),
}


def _value(key):
    if key in _values:
        return _values[key]
    conv = KEYS[key][2].__name__
    if conv == "_bool":
        return st.sampled_from(["true", "false", "1", "off"])
    return st.integers(1, 64).map(str)


@given(st.data())
def test_every_key_settable(data):
    key = data.draw(st.sampled_from(sorted(KEYS)))
    raw = data.draw(_value(key))
    cfg = apply(ScenarioConfig(), [(key, raw)])
    # every key survives dump -> parse
    assert apply(ScenarioConfig(), parse_text(dump(cfg))) == cfg


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_dump_round_trip(name, tmp_path):
    cfg = load_preset(name)
    f = tmp_path / "s.cfg"
    f.write_text(dump(cfg))
    assert load_file(f) == cfg


# command line ----------------------------------------------------------------------------

def _run(argv, capsys):
    code = cli.main(argv)
    out, err = capsys.readouterr()
    return code, out, err


def test_run_v1_writes_report(tmp_path, capsys):
    code, out, _ = _run(["run", "--preset", "v1", "--out", str(tmp_path)], capsys)
    assert code == 0
    assert out.strip().startswith("variant=V1_flush accuracy=1.0000 cycles=")
    assert json.loads((tmp_path / "report.json").read_text())["accuracy"] == 1.0


def test_run_with_fence_override(capsys):
    code, out, _ = _run(["run", "--preset", "v1", "--set", "attack.secret=Sq",
                         "--set", "mitigations.fence_after_branches=true"], capsys)
    assert code == 0 and "accuracy=0.0000" in out


def test_missing_scenario_exit_1(capsys):
    code, out, err = _run(["run", "--scenario", "missing.cfg"], capsys)
    assert code == 1 and "missing.cfg" in err and out == ""


@pytest.mark.parametrize("argv", [["run", "--bogus"], ["fly"], ["run", "--preset", "nope"],
                                  ["run", "--set", "attack.pad"], ["run", "--emit", "pdf"],
                                  ["sweep", "--windows", "a,b"],
                                  ["run", "--preset", "v1", "--scenario", "x.cfg"]])
def test_usage_errors_exit_1(argv, capsys):
    code, _, err = _run(argv, capsys)
    assert code == 1 and err.startswith("specsim: error:")


def test_watchdog_exit_2(capsys):
    code, _, err = _run(["run", "--preset", "v1", "--max-cycles", "50"], capsys)
    assert code == 2 and "50" in err


def test_all_artifacts(tmp_path, capsys):
    code, _, _ = _run(["run", "--preset", "v2", "--set", "attack.secret=ab", "--out", str(tmp_path),
                       "--emit", "report,histogram,trace,btb"], capsys)
    assert code == 0
    assert (tmp_path / "histogram.csv").read_text().startswith("index,latency,hot\n")
    assert (tmp_path / "btb.csv").read_text().startswith("index,tag,target\n")
    first = json.loads((tmp_path / "trace.jsonl").read_text().splitlines()[0])
    assert {"cycle", "ctx", "seq", "event", "pc", "detail"} <= set(first)


def test_scenario_file_and_seed(tmp_path, capsys):
    f = tmp_path / "s.cfg"
    f.write_text("attack.variant = v1\nattack.secret = Hi\n")
    code, out, _ = _run(["run", "--scenario", str(f), "--seed", "3", "--out", str(tmp_path)], capsys)
    assert code == 0 and "accuracy=1.0000" in out


def test_sweep_csv(tmp_path, capsys):
    code, out, _ = _run(["sweep", "--preset", "v1", "--set", "attack.secret=S", "--windows", "1,192",
                         "--pads", "0", "--out", str(tmp_path)], capsys)
    assert code == 0
    rows = (tmp_path / "sweep.csv").read_text().splitlines()
    assert rows[0] == "window,pad,accuracy,cycles"
    assert [r.split(",")[2] for r in rows[1:]] == ["0.0000", "1.0000"]
    assert out.splitlines() == rows


def test_console_entry_point(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        r = subprocess.run([sys.executable, "-m", "specsim.cli", "run", "--preset", "v2",
                            "--seed", "7", "--out", str(d)], capture_output=True, text=True)
        assert r.returncode == 0, r.stderr
    assert (a / "report.json").read_bytes() == (b / "report.json").read_bytes()
