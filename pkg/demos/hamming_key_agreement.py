"""Key agreement with a nested Hamming(7,4) code, plus its exact leakage audit.

Run: python3 demos/hamming_key_agreement.py
"""

import numpy as np

from wzkey.gf2core import SeedSpec, random_bits, sample_bsc
from wzkey.wz_linear import audit_leakage, build_nested, enroll_gs, reconstruct_gs

H1 = np.array([[1, 0, 1, 0, 1, 0, 1], [0, 1, 1, 0, 0, 1, 1], [0, 0, 0, 1, 1, 1, 1]], dtype=np.uint8)
H2 = np.array([[1, 1, 0, 0, 0, 0, 0], [0, 0, 1, 1, 0, 0, 0], [0, 0, 0, 0, 0, 1, 1]], dtype=np.uint8)


def main():
    code = build_nested(7, 3, 3, H1=H1, H2=H2)
    print(f"n={code.n} m1={code.m1} m2={code.m2} key bits={code.k}")

    seed = SeedSpec(1)
    X = random_bits(7, seed.child(0), size=10_000)
    km = enroll_gs(X, code)
    for p in (0.0, 0.02, 0.05, 0.1):
        Y = sample_bsc(X, p, seed.child(1))
        S_hat = reconstruct_gs(Y, km.W, code)
        print(f"p={p:<5} key error rate {np.mean((S_hat != km.S).any(axis=1)):.4f}")

    for mode in ("GS", "CS"):
        rep = audit_leakage(code, mode=mode)
        extra = f" I(S';W,S+S')={rep['I_Sp_Wp']:.3f}" if mode == "CS" else ""
        print(f"{mode}: H(S)={rep['H_S']:.3f} I(S;W)={rep['I_S_W']:.3f} I(X;W)={rep['I_X_W']:.3f}{extra}")
    rep = audit_leakage(code, channel=0.05, mode="hidden")
    print(f"hidden source, p_e=0.05: I(X;W)={rep['I_X_W']:.3f} bits")


if __name__ == "__main__":
    main()
