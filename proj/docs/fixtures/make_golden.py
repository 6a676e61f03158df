#!/usr/bin/env python3
# SPDX-License-Identifier: Apache-2.0
"""Regenerates the segment fixture and its golden output.

The golden spans come from the exhaustive window search below, written independently of the
C++ implementation. Run from the repository root:

    python3 docs/fixtures/make_golden.py
"""
import json
import random
from pathlib import Path

HERE = Path(__file__).resolve().parent
CHUNK, DELTA, MIX = 32, 8, 0.5

WEIGHTS = {
    "28723": 1.0, "609": 1.0, "28804": 0.9, "1101": 1.0, "28745": 0.7, "28747": 0.7, "28725": 0.6,
    "28742": 0.5, "28808": 0.9, "28732": 0.5, "557": 0.6, "28792": 0.5, "28793": 0.5,
}


def make_tokens(rng, length):
    ids = [int(k) for k in WEIGHTS]
    return [rng.choice(ids) if rng.random() < 0.07 else rng.randrange(100, 500) for _ in range(length)]


def segment(tokens, weights, c, delta, mix):
    spans, start, n = [], 0, len(tokens)
    while start < n:
        target = start + c
        if target >= n:
            spans.append([start, n])
            break
        best = None
        for e in range(target - delta, target + delta + 1):
            if e < start + 1 or e > n - 1 or e + 1 > start + c + delta:
                continue
            w = weights.get(tokens[e])
            if w is None:
                continue
            value = mix * w + (1 - mix) * (1 - abs(e - target) / (delta + 1))
            if best is None or value > best[0]:
                best = (value, e)
        end = best[1] + 1 if best else target
        spans.append([start, end])
        start = end
    return spans


def main():
    rng = random.Random(20240601)
    seqs = [make_tokens(rng, n) for n in (300, 97, 1, 512)]
    weights = {int(k): v for k, v in WEIGHTS.items()}
    with open(HERE / "tokens.jsonl", "w") as f:
        for s in seqs:
            f.write(json.dumps({"tokens": s}, separators=(",", ":")) + "\n")
    with open(HERE / "weights.json", "w") as f:
        json.dump(WEIGHTS, f, indent=2)
        f.write("\n")
    with open(HERE / "segment_golden.jsonl", "w") as f:
        for s in seqs:
            f.write(json.dumps({"spans": segment(s, weights, CHUNK, DELTA, MIX)}, separators=(",", ":")) + "\n")


if __name__ == "__main__":
    main()
