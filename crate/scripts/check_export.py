"""Solve exported LP/MPS files with HiGHS and compare against margpoly.

usage: python scripts/check_export.py FILE EXPECTED [FILE EXPECTED ...]
Requires `pip install highspy`.
"""
import sys

import highspy


def main(argv):
    pairs = list(zip(argv[::2], argv[1::2]))
    worst = 0.0
    for path, expected in pairs:
        h = highspy.Highs()
        h.setOptionValue("output_flag", False)
        if h.readModel(path) != highspy.HighsStatus.kOk:
            print(f"{path}: rejected by reader")
            return 1
        h.run()
        status = h.modelStatusToString(h.getModelStatus())
        value = h.getInfo().objective_function_value
        gap = abs(value - float(expected))
        worst = max(worst, gap)
        print(f"{path}: {status} {value:.12g} (expected {expected}, gap {gap:.2e})")
    return 0 if worst <= 1e-6 else 1


if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
