"""Boosted vs plain power-one SPRT on a few Gaussian streams.

Run: python3 demos/boosted_sprt.py
"""

import numpy as np

from seqboost import GaussianLRModel, run_power_one_boosted, solve_boost_one_sided


def main():
    model = GaussianLRModel(mu0=0.0, delta=1.0)
    print("one-step boosting factors at delta = 1, alpha = 0.05")
    for M in (0.5, 1.0, 4.0, 10.0):
        print(f"  wealth {M:5.1f}: b = {solve_boost_one_sided(model, M, 0.05).b:.5f}")

    rng = np.random.default_rng(0)
    print("\nstopping times on shared streams (true mean 1)")
    for k in range(5):
        x = 1.0 + rng.standard_normal(1000)
        boosted = run_power_one_boosted(x, model, 0.05)
        plain = run_power_one_boosted(x, model, 0.05, boost=False)
        print(f"  path {k}: boosted {boosted.stopping_time:3d}  plain {plain.stopping_time:3d}"
              f"  raw LR at boosted stop {boosted.raw_lr_at_stop:6.2f}")


if __name__ == "__main__":
    main()
