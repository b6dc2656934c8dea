"""Runs selected acceptance checks and prints one line per check.

Usage: python scripts/bound_checks.py [2 3 4 ...]
"""

import sys

from privalloc import acceptance


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    numbers = [int(a) for a in argv] or [2, 3, 4, 5, 6]
    results = acceptance.run_all(numbers)
    return 0 if all(r.passed for r in results) else 2


if __name__ == "__main__":
    sys.exit(main())
