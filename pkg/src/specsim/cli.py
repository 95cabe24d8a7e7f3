"""Command-line runner.

    specsim run   [--preset NAME | --scenario FILE] [--set key=value ...] [--out DIR]
                  [--seed N] [--emit report,histogram,trace,btb] [--max-cycles N]
    specsim sweep [--preset NAME | --scenario FILE] [--windows a,b,c] [--pads a,b,c]
                  [--jobs N] [--out DIR]

Exit status: 0 on success, 1 on a usage or configuration error, 2 when the
simulation faults or hits the cycle watchdog.
"""
from __future__ import annotations

import argparse
import csv
import io
import sys
from dataclasses import dataclass, field
from pathlib import Path

from . import attacks
from .config import ConfigError, PRESETS, resolve
from .pipeline import SimulationError

EMITS = ("report", "histogram", "trace", "btb")


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


@dataclass
class RunSpec:
    preset: str | None = None
    scenario: str | None = None
    overrides: list = field(default_factory=list)
    out: str | None = None
    emit: tuple = ("report",)


def _parser() -> argparse.ArgumentParser:
    p = _Parser(prog="specsim", description="Speculative-execution attack simulator")
    sub = p.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    def common(sp):
        src = sp.add_mutually_exclusive_group()
        src.add_argument("--preset", help=f"built-in scenario ({', '.join(PRESETS)})")
        src.add_argument("--scenario", help="scenario file (flat 'section.key = value' lines)")
        sp.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="KEY=VALUE", help="override one config key (repeatable)")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--seed", type=int, help="scenario seed")
        sp.add_argument("--max-cycles", type=int, help="per-run cycle watchdog")

    r = sub.add_parser("run", help="run one scenario")
    common(r)
    r.add_argument("--emit", default="report", help="comma list of " + ",".join(EMITS))
    s = sub.add_parser("sweep", help="speculation-window sweep (variant 1)")
    common(s)
    s.add_argument("--windows", default="1,8,64,192,256", help="comma list of ROB sizes")
    s.add_argument("--pads", help="comma list of filler counts")
    s.add_argument("--jobs", type=int, default=1, help="worker threads")
    return p


def _ints(text: str, what: str) -> list[int]:
    try:
        vals = [int(t, 0) for t in text.split(",") if t.strip()]
    except ValueError:
        raise _UsageError(f"--{what}: expected comma-separated integers") from None
    if not vals:
        raise _UsageError(f"--{what}: empty list")
    return vals


def _config(args, extra=()):
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"attack.seed={args.seed}")
    if args.max_cycles is not None:
        overrides.append(f"sim.max_cycles={args.max_cycles}")
    overrides += list(extra)
    return resolve(args.preset, args.scenario, overrides)


def _outdir(path: str | None) -> Path | None:
    if path is None:
        return None
    d = Path(path)
    try:
        d.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise ConfigError(f"cannot create output directory {path}: {e.strerror or e}") from None
    return d


def _write(d: Path, name: str, text: str) -> None:
    try:
        (d / name).write_text(text)
    except OSError as e:
        raise ConfigError(f"cannot write {d / name}: {e.strerror or e}") from None


def cmd_run(args) -> int:
    emit = tuple(e.strip() for e in args.emit.split(",") if e.strip())
    bad = [e for e in emit if e not in EMITS]
    if bad:
        raise _UsageError(f"--emit: unknown artifact(s) {', '.join(bad)}")
    spec = RunSpec(args.preset, args.scenario, list(args.overrides), args.out, emit)
    cfg = _config(args, ["sim.log_events=true"] if "trace" in emit else [])
    out = _outdir(spec.out)
    rep = attacks.run_scenario(cfg)
    if out is not None:
        art = rep.artifacts
        if "report" in emit:
            _write(out, "report.json", rep.to_json())
        if "histogram" in emit and art.get("probe") is not None:
            _write(out, "histogram.csv", art["probe"].csv())
        if "trace" in emit and art.get("trace") is not None:
            _write(out, "trace.jsonl", art["trace"].events_jsonl())
        if "btb" in emit and art.get("predictor") is not None:
            _write(out, "btb.csv", art["predictor"].btb_csv())
    print(f"variant={rep.variant} accuracy={rep.accuracy:.4f} cycles={rep.simulated_cycles}")
    return 0


def cmd_sweep(args) -> int:
    cfg = _config(args)
    windows = _ints(args.windows, "windows")
    pads = _ints(args.pads, "pads") if args.pads else None
    out = _outdir(args.out)
    rows = attacks.sweep_speculation_window(cfg, windows, pads, jobs=max(1, args.jobs))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["window", "pad", "accuracy", "cycles"])
    for r in rows:
        w.writerow([r["window"], r["pad"], f"{r['accuracy']:.4f}", r["cycles"]])
    if out is not None:
        _write(out, "sweep.csv", buf.getvalue())
    sys.stdout.write(buf.getvalue())
    return 0


def main(argv=None) -> int:
    try:
        args = _parser().parse_args(argv)
        return cmd_run(args) if args.cmd == "run" else cmd_sweep(args)
    except (_UsageError, ConfigError, ValueError) as e:
        print(f"specsim: error: {e}", file=sys.stderr)
        return 1
    except SimulationError as e:
        print(f"specsim: simulation failed: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
