"""Robbins vs boosted lower confidence bound on one Gaussian stream.

Run: python3 demos/confidence_sequence.py
"""

import math

import numpy as np

from seqboost import ConfSeqConfig, confidence_sequence


def main():
    T, alpha = 50, 0.05
    x = 2.0 + np.random.default_rng(1).standard_normal(T)
    delta = math.sqrt(8 * math.log(1 / alpha) / T)
    tr = confidence_sequence(x, ConfSeqConfig(alpha, delta, side="lower"))
    print(" t   mean    robbins   boosted")
    for t in (5, 10, 20, 30, 40, 50):
        i = t - 1
        print(f"{t:2d}  {tr.mean[i]:6.3f}  {tr.robbins_lower[i]:7.3f}  {tr.lower[i]:7.3f}")


if __name__ == "__main__":
    main()
