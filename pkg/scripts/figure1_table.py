"""Print the relative-efficiency curves of a sweep CSV as a delta-by-estimator table.

    python3 scripts/figure1_table.py out/fig1.csv
"""
import csv
import sys
from collections import defaultdict


def main(path: str) -> None:
    table = defaultdict(dict)
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            table[float(row["delta_target"])][row["estimator"]] = float(row["re"])
    kinds = sorted({k for cols in table.values() for k in cols})
    print("delta".rjust(8) + "".join(k.rjust(10) for k in kinds))
    for d in sorted(table):
        print(f"{d:8g}" + "".join(f"{table[d].get(k, float('nan')):10.4g}" for k in kinds))


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "out/fig1.csv")
