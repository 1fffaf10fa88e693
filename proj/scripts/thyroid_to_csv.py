#!/usr/bin/env python3
"""Build data/thyroid/annthyroid.csv from the UCI Thyroid Disease
"ann" files (ann-train.data, ann-test.data: 21 attributes then the class,
whitespace separated; 3772 + 3428 = 7200 rows).

    python3 scripts/thyroid_to_csv.py ann-train.data ann-test.data data/thyroid/annthyroid.csv

Class 3 (normal) becomes label 0; classes 1 and 2 (hyper- and hypothyroid,
534 rows) become label 1. Duplicates are kept; the loader dedups.
"""
import argparse
import csv
from pathlib import Path

COLUMNS = [
    "age", "sex", "on_thyroxine", "query_on_thyroxine", "on_antithyroid_medication", "sick", "pregnant",
    "thyroid_surgery", "i131_treatment", "query_hypothyroid", "query_hyperthyroid", "lithium", "goitre",
    "tumor", "hypopituitary", "psych", "TSH", "T3", "TT4", "T4U", "FTI",
]


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("inputs", type=Path, nargs="+")
    ap.add_argument("out", type=Path)
    args = ap.parse_args()

    rows = []
    for path in args.inputs:
        for line in path.read_text().splitlines():
            fields = line.split()
            if not fields:
                continue
            assert len(fields) == len(COLUMNS) + 1, f"{path}: expected 22 fields, got {len(fields)}"
            cls = int(fields[-1])
            rows.append(fields[:-1] + ["0" if cls == 3 else "1"])

    args.out.parent.mkdir(parents=True, exist_ok=True)
    with args.out.open("w", newline="") as f:
        w = csv.writer(f)
        w.writerow(COLUMNS + ["label"])
        w.writerows(rows)
    anomalies = sum(r[-1] == "1" for r in rows)
    print(f"{len(rows)} rows, {anomalies} anomalies -> {args.out}")


if __name__ == "__main__":
    main()
