#!/usr/bin/env python3
"""Writes scores.tsv and a brute-force expected_map.tsv for the 20-morph MAP fixture.

Usage: python3 generate.py  (writes next to this script)
"""
import itertools
import os
import random

MORPHS = 20
FRS = ["arcface", "curricularface", "elasticface", "magface"]
ATTEMPTS = 3
NON_MATED = 1000
TARGET_FMR = 0.001

rng = random.Random(20240605)
here = os.path.dirname(os.path.abspath(__file__))

non_mated = {f: [round(rng.uniform(0.0, 0.6), 4) for _ in range(NON_MATED)] for f in FRS}
mated = []
for m in range(MORPHS):
    strength = rng.uniform(0.3, 0.9)
    for f in FRS:
        bias = rng.uniform(-0.15, 0.15)
        for role in "ab":
            for t in range(1, ATTEMPTS + 1):
                s = round(min(1.0, max(0.0, strength + bias + rng.gauss(0, 0.08))), 4)
                mated.append((f"morph{m:02d}", role, f, t, s))

with open(os.path.join(here, "scores.tsv"), "w") as fh:
    fh.write("kind\tmorph_id\tsubject_role\tfrs_id\tattempt\tscore\n")
    for m, role, f, t, s in mated:
        fh.write(f"mated\t{m}\t{role}\t{f}\t{t}\t{s}\n")
    for f in FRS:
        for s in non_mated[f]:
            fh.write(f"non-mated\t-\t-\t{f}\t-\t{s}\n")


def threshold(scores):
    # Smallest candidate whose measured FMR (score >= t) is within target.
    for t in sorted(set(scores)):
        if sum(1 for s in scores if s >= t) / len(scores) <= TARGET_FMR:
            return t
    return float("inf")


tau = {f: threshold(non_mated[f]) for f in FRS}
matches = {}
for m, role, f, t, s in mated:
    matches.setdefault((m, f, role), 0)
    matches[(m, f, role)] += s >= tau[f]
morph_ids = sorted({m for m, *_ in mated})
count = {(m, f): min(matches[(m, f, "a")], matches[(m, f, "b")]) for m in morph_ids for f in FRS}

with open(os.path.join(here, "expected_map.tsv"), "w") as fh:
    fh.write("r\\c\t" + "\t".join(str(c) for c in range(1, len(FRS) + 1)) + "\n")
    for r in range(1, ATTEMPTS + 1):
        row = []
        for c in range(1, len(FRS) + 1):
            ok = sum(
                1
                for m in morph_ids
                if any(all(count[(m, f)] >= r for f in combo) for combo in itertools.combinations(FRS, c))
            )
            row.append(f"{100.0 * ok / len(morph_ids):.1f}")
        fh.write(f"{r}\t" + "\t".join(row) + "\n")
