#!/usr/bin/env python3
"""Count BTB coupling between random pc pairs against low-20-bit equality."""
import argparse
import random

from specsim.branchpred import PredictorConfig, PredictorState


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--pairs", type=int, default=10000)
    ap.add_argument("--seed", type=int, default=0)
    a = ap.parse_args()

    rng = random.Random(a.seed)
    bits = PredictorConfig().observe_bits
    low = (1 << bits) - 1
    table = {(False, False): 0, (False, True): 0, (True, False): 0, (True, True): 0}
    for i in range(a.pairs):
        x = rng.randrange(1 << 46) * 4
        y = (x & low) | (rng.randrange(1, 1 << 26) << bits) if i % 2 else rng.randrange(1 << 46) * 4
        s = PredictorState()
        s.update(x, True, 0x4000, "indirect")
        p = s.predict(y, "indirect")
        table[((x ^ y) & low == 0, p.taken and p.target == 0x4000)] += 1
    print(f"{'low bits equal':>15} {'coupled':>8} {'count':>7}")
    for (eq, cp), n in table.items():
        print(f"{eq!s:>15} {cp!s:>8} {n:7d}")


if __name__ == "__main__":
    main()
