"""Rate region endpoints, finite-length bounds and the fuzzy-commitment baseline.

Run: python3 demos/bounds_and_baselines.py
"""

from wzkey.bounds import gs_bin_boundary, cs_bin_boundary, figure5_table, rcu_bound_bsc, sphere_packing_ratio
from wzkey.keyagree import RepRMConcat, evaluate_metrics


def main():
    pA = 0.15
    for q in (0.0, 0.05, 0.1, 0.2):
        gs, cs = gs_bin_boundary(q, pA), cs_bin_boundary(q, pA)
        print(f"q={q:<4} GS {tuple(round(v, 3) for v in gs.as_tuple())}  CS {tuple(round(v, 3) for v in cs.as_tuple())}")

    for n in (512, 1024, 2048):
        R, ratio = sphere_packing_ratio(n, 1e-6, pA)
        print(f"n={n}: sphere packing R_C <= {R:.4f} (R_s/R_w <= {ratio:.4f}), RCU(k=128) = {rcu_bound_bsc(n, 128, pA):.2e}")

    for row in figure5_table(pA)[-6:]:
        print(row)

    for p in (0.05, 0.1, 0.15):
        rep = evaluate_metrics("fcs", RepRMConcat(), p, 20_000, seed=3, chunk=5000)
        print(f"rep(4,1)+RM(2,5) fuzzy commitment at p={p}: P_B={rep['P_B']:.4f}, R_w={rep['R_w']}")


if __name__ == "__main__":
    main()
