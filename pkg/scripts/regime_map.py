"""Per-cell mean regret of sampled ILA, stratified ULA and random allocation.

Writes one CSV row per (G, lambda) cell with the three means, their standard
errors, the predicted winner and the empirical winner.

Usage: python scripts/regime_map.py [--trials 200] [--out regime_map.csv]
"""

import argparse
import csv
import sys

from privalloc import acceptance


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--trials", type=int, default=200)
    ap.add_argument("--out", default="regime_map.csv")
    args = ap.parse_args(argv)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["G", "lambda", "label", "predicted", "empirical", "ila", "ila_se",
                    "ula", "ula_se", "rand", "rand_se"])
        for G, lam, label, stats in acceptance.regime_cells(args.trials):
            best = min(stats, key=lambda s: stats[s][0])
            w.writerow([G, lam, label.label, label.predicted_winner, best,
                        *(repr(v) for s in ("ILA", "ULA", "RAND") for v in stats[s])])
            print(f"G={G:<4} lambda={lam:<5} predicted {label.predicted_winner:<4} best {best}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
