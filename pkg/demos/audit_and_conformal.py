"""A sampling-without-replacement audit and a conformal changepoint test.

Run: python3 demos/audit_and_conformal.py
"""

import numpy as np

from seqboost import ConformalConfig, run_conformal_boosted, run_wor_boosted


def main():
    rng = np.random.default_rng(2)
    pop = rng.permutation(np.r_[np.ones(580), np.zeros(420)]).astype(int)
    for boost in (True, False):
        out = run_wor_boosted(pop, pop.size, mu0=0.5, mu1=0.55, alpha=0.01, with_boost=boost)
        print(f"audit ({'boosted' if boost else 'plain'}): {out.decision.value} after {out.stopping_time} draws")

    x = np.r_[rng.standard_normal(20), 3.0 + rng.standard_normal(80)]
    for boost in (True, False):
        out = run_conformal_boosted(x, config=ConformalConfig(kappa=0.5, boost=boost))
        print(f"conformal ({'boosted' if boost else 'plain'}): {out.decision.value} at t = {out.stopping_time}")


if __name__ == "__main__":
    main()
