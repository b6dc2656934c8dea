"""Mean regret of model-ranked ILA and ULA across budgets on the two-point family.

Usage: python scripts/learning_crossover.py [--trials 1000]
"""

import argparse
import sys

from privalloc import acceptance, learn
from privalloc.core import mean_and_se


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--trials", type=int, default=1000)
    args = ap.parse_args(argv)
    P = 5000
    dist, out = acceptance.learning_runs(args.trials, P)
    G, rb = learn.profile_stats(dist.cell_means)
    print(f"cells={dist.cells} sigma={dist.sigma:.4f} G={G:.4f} rho_bar={rb:.4f}")
    print("k/P    product  predicted  ILA            ULA")
    for k in acceptance.LEARNING_KS:
        lab = learn.classify_regime_learning(dist.sigma, k, P, G, rb)
        (mi, si), (mu, su) = mean_and_se(out[k]["ila"]), mean_and_se(out[k]["ula"])
        print(f"{k / P:<6} {lab.product:<8.4f} {lab.label:<10} {mi:7.1f} ± {si:4.1f}  "
              f"{mu:7.1f} ± {su:4.1f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
