#!/usr/bin/env python3
"""Variant-1 accuracy as a function of ROB size, for several gadget paddings.

Writes window_sweep.csv (window, pad, accuracy, cycles) and prints the
smallest leaking window per pad.
"""
import argparse
import csv
from pathlib import Path

from specsim.attacks import sweep_speculation_window
from specsim.config import resolve


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--preset", default="v1")
    ap.add_argument("--windows", default="1,2,3,4,8,16,32,64,128,160,191,192,256")
    ap.add_argument("--pads", default="0,60,124,188")
    ap.add_argument("--secret", default="Squeamish", help="shorter secret keeps the sweep quick")
    ap.add_argument("--jobs", type=int, default=4)
    ap.add_argument("--out", default="results")
    a = ap.parse_args()

    cfg = resolve(a.preset, None, [f"attack.secret={a.secret}"])
    windows = [int(x) for x in a.windows.split(",")]
    pads = [int(x) for x in a.pads.split(",")]
    rows = sweep_speculation_window(cfg, windows, pads, jobs=a.jobs)

    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "window_sweep.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["window", "pad", "accuracy", "cycles"])
        for r in rows:
            w.writerow([r["window"], r["pad"], f"{r['accuracy']:.4f}", r["cycles"]])
    for pad in pads:
        leaking = [r["window"] for r in rows if r["pad"] == pad and r["accuracy"] == 1.0]
        print(f"pad={pad:4d} smallest fully leaking window={min(leaking) if leaking else None}")
    print(f"wrote {out / 'window_sweep.csv'}")


if __name__ == "__main__":
    main()
