"""Recomputes fixtures/metric_oracle.csv from first principles.

Normalization: lowercase, delete Unicode punctuation (category P*), drop the
articles a/an/the, split on whitespace. F1 is the harmonic mean of token
precision and recall over token multisets.
"""
import csv
import sys
import unicodedata
from collections import Counter
from fractions import Fraction
from pathlib import Path


def normalize(s):
    s = "".join(c for c in s.lower() if not unicodedata.category(c).startswith("P"))
    return [t for t in s.split() if t not in ("a", "an", "the")]


def em(p, g):
    return int(normalize(p) == normalize(g))


def f1(p, g):
    pt, gt = normalize(p), normalize(g)
    if not pt and not gt:
        return Fraction(1)
    if not pt or not gt:
        return Fraction(0)
    common = sum((Counter(pt) & Counter(gt)).values())
    if common == 0:
        return Fraction(0)
    precision = Fraction(common, len(pt))
    recall = Fraction(common, len(gt))
    return 2 * precision * recall / (precision + recall)


def main():
    path = Path(sys.argv[1] if len(sys.argv) > 1 else Path(__file__).with_name("metric_oracle.csv"))
    bad = 0
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    for row in rows:
        want_f1 = Fraction(int(row["f1_num"]), int(row["f1_den"]))
        got = (em(row["pred"], row["gold"]), f1(row["pred"], row["gold"]))
        if got != (int(row["em"]), want_f1):
            bad += 1
            print(f"MISMATCH {row['pred']!r} vs {row['gold']!r}: table {row['em']},{want_f1} oracle {got[0]},{got[1]}")
    print(f"{len(rows)} rows, {bad} mismatches")
    return 1 if bad else 0


if __name__ == "__main__":
    sys.exit(main())
