"""A small nested polar design followed by an enroll/reconstruct campaign.

The design here runs at n=256 with reduced budgets so that it finishes in a
few minutes on one core; ``wzkey design --n 1024 --pa 0.15`` runs the full one.

Run: python3 demos/polar_key_agreement.py
"""

import numpy as np

from wzkey.gf2core import SeedSpec, random_bits, sample_bsc
from wzkey.keyagree import polar_enroll, polar_reconstruct
from wzkey.nested_design import Budget, DesignSpec, design_nested


def main():
    spec = DesignSpec(256, 32, 0.05, target_PB=1e-3, quantile=0.99, c_design_p=0.2,
                      budget=Budget(pb_trials=10_000, distortion_trials=2000, construction_trials=1000))
    res = design_nested(spec, log=print)
    R_s, R_l, R_w = res.rate_tuple.as_tuple()
    print(f"p_c={res.p_c:.4f} E[q]={res.Eq:.4f} m2={res.m2} (+{res.m2_aug - res.m2}) rates=({R_s:.3f}, {R_l:.3f}, {R_w:.3f})")

    seed = SeedSpec(7)
    trials = 2000
    X = random_bits(256, seed.child(0), size=trials)
    Y = sample_bsc(X, spec.p_A, seed.child(1))
    errors = 0
    for i in range(trials):
        bundle, S = polar_enroll(X[i], res)
        errors += int(not np.array_equal(polar_reconstruct(Y[i], bundle, res), S))
    print(f"{errors}/{trials} key errors at p_A={spec.p_A}")


if __name__ == "__main__":
    main()
