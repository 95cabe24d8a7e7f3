#!/usr/bin/env python3
"""Accuracy and simulated-cycle cost of every mitigation combination, per preset."""
import argparse
import itertools
from pathlib import Path

from specsim.config import load_preset
from specsim.mitigations import MitigationOptions, overhead_csv, overhead_report


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--presets", default="v1,v2,v1-evicttime")
    ap.add_argument("--out", default="results")
    a = ap.parse_args()

    grid = [MitigationOptions(*bits) for bits in itertools.product((False, True), repeat=3)]
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    for name in a.presets.split(","):
        rows = overhead_report(load_preset(name), grid)
        text = overhead_csv(rows)
        (out / f"overhead_{name}.csv").write_text(text)
        print(f"# {name}")
        print(text, end="")


if __name__ == "__main__":
    main()
