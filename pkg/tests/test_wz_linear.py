import itertools
import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wzkey.gf2core import all_words, mat_vec
from wzkey.wz_linear import (
    TooLarge,
    audit_leakage,
    build_nested,
    coset_shift,
    cs_pad,
    encode_key,
    enroll_cs,
    enroll_gs,
    enroll_hidden,
    key_from_quantized,
    NestedLinearCode,
    reconstruct_cs,
    reconstruct_gs,
    vq_nearest,
)

H74 = np.array([[1, 0, 1, 0, 1, 0, 1], [0, 1, 1, 0, 0, 1, 1], [0, 0, 0, 1, 1, 1, 1]], dtype=np.uint8)


def hamming_nested():
    # C1 = Hamming(7,4); C = repetition(7,1), so H2 has rank 3 on top of H74
    H2 = np.array([[1, 1, 0, 0, 0, 0, 0], [0, 0, 1, 1, 0, 0, 0], [0, 0, 0, 0, 0, 1, 1]], dtype=np.uint8)
    return build_nested(7, 3, 3, H1=H74, H2=H2)


@pytest.fixture(scope="module")
def code74():
    return hamming_nested()


def brute_leaders(H):
    # first minimum-weight word per syndrome, scanning weight then integer order
    m, n = H.shape
    best = {}
    for w in range(n + 1):
        for pos in itertools.combinations(range(n), w):
            e = np.zeros(n, dtype=np.uint8)
            e[list(pos)] = 1
            s = tuple(mat_vec(e, H))
            if s not in best:
                best[s] = e
    return best


def test_nesting(code74):
    c = code74
    assert c.k == 1
    assert not (c.G.astype(int) @ c.H.T.astype(int) % 2).any()
    assert not (c.G.astype(int) @ c.H1.T.astype(int) % 2).any()
    assert c.c1_words.size == 16


def test_leaders_minimum_weight(code74):
    brute = brute_leaders(code74.H)
    assert len(brute) == 64
    for s, e in brute.items():
        lead = code74.leader(np.array(s, dtype=np.uint8))
        assert int(lead.sum()) == int(e.sum())
        assert tuple(code74.syndrome(lead)) == s


def test_vq_is_nearest(code74):
    X = all_words(7)
    xq, eq = vq_nearest(X, code74)
    c1 = [np.array([(v >> (6 - j)) & 1 for j in range(7)], dtype=np.uint8) for v in code74.c1_words]
    for x, q, e in zip(X, xq, eq):
        assert int(e.sum()) == min(int((x ^ c).sum()) for c in c1)
        assert not mat_vec(q, code74.H1).any()
        assert np.array_equal(x ^ q, e)


def test_enrollment_round_trip(code74):
    X = all_words(7)
    xq, _ = vq_nearest(X, code74)
    km = enroll_gs(X, code74)
    t = np.array([coset_shift(q, code74) for q in xq])
    xc = encode_key(km.S, code74)
    assert np.array_equal(xq, xc ^ t)
    assert not mat_vec(xc, code74.H).any()


def test_exhaustive_reconstruction(code74):
    X = all_words(7)
    Z = all_words(7)
    km = enroll_gs(X, code74)
    _, eq = vq_nearest(X, code74)
    checked = 0
    for i in range(128):
        Y = X[i] ^ Z
        S_hat = reconstruct_gs(Y, np.tile(km.W[i], (128, 1)), code74)
        for j in range(128):
            if code74.is_leader(eq[i] ^ Z[j]):
                assert np.array_equal(S_hat[j], km.S[i])
                checked += 1
    assert checked > 0


def test_noiseless_reconstruction_random_code():
    code = build_nested(12, 4, 3, seed=5)
    X = all_words(12)
    km = enroll_gs(X, code)
    _, eq = vq_nearest(X, code)
    ok = np.array([code.is_leader(e) for e in eq])
    S_hat = reconstruct_gs(X, km.W, code)
    assert np.array_equal(S_hat[ok], km.S[ok])


def brute_audit(code):
    X = all_words(code.n)
    km = enroll_gs(X, code)
    pairs = Counter((tuple(s), tuple(w)) for s, w in zip(km.S, km.W))
    N = len(X)

    def H(counter):
        return -sum(c / N * math.log2(c / N) for c in counter.values())

    cs = Counter(s for s, _ in pairs.elements())
    cw = Counter(w for _, w in pairs.elements())
    return H(cs), H(cw), H(cs) + H(cw) - H(pairs)


def test_gs_audit_hamming(code74):
    rep = audit_leakage(code74, mode="GS")
    H_S, H_W, I = brute_audit(code74)
    assert rep["H_S"] == pytest.approx(H_S, abs=1e-12)
    assert rep["H_W"] == pytest.approx(H_W, abs=1e-12)
    assert rep["I_S_W"] == pytest.approx(I, abs=1e-12)
    assert rep["I_S_W_rate"] < 0.05
    assert abs(rep["H_S_rate"] - code74.k / 7) < 0.05


def test_cs_audit_hamming(code74):
    rep = audit_leakage(code74, mode="CS")
    assert rep["I_Sp_Wp"] == pytest.approx(0.0, abs=1e-12)
    assert rep["log_W"] == 3 + 1


def test_cs_leakage_brute_force(code74):
    # I(S'; W, S+S') by enumerating (x, S')
    X = all_words(7)
    km = enroll_gs(X, code74)
    joint = Counter()
    for sp in (0, 1):
        for s, w in zip(km.S, km.W):
            joint[(sp, tuple(w), int(s[0]) ^ sp)] += 1
    N = sum(joint.values())
    msg = Counter()
    for (sp, w, pad), c in joint.items():
        msg[(w, pad)] += c

    def H(counter):
        return -sum(c / N * math.log2(c / N) for c in counter.values())

    I = 1.0 + H(msg) - H(joint)
    assert I == pytest.approx(audit_leakage(code74, mode="CS")["I_Sp_Wp"], abs=1e-12)


def test_cs_round_trip(code74):
    X = all_words(7)
    rng = np.random.default_rng(1)
    Sp = rng.integers(0, 2, (128, 1), dtype=np.uint8)
    km = enroll_cs(X, code74, Sp)
    assert np.array_equal(km.pad, cs_pad(km.S, Sp))
    assert np.array_equal(reconstruct_cs(X, km.W, km.pad, code74), Sp)


def test_hidden_privacy_brute_force():
    code = build_nested(6, 2, 2, seed=3)
    p = 0.1
    rep = audit_leakage(code, channel=p, mode="hidden")
    X = all_words(6)
    W = enroll_hidden(X, code).W
    widx = W @ (1 << np.arange(W.shape[1] - 1, -1, -1))
    cond = np.zeros((64, 4))
    for x in range(64):
        for e in range(64):
            w = bin(e).count("1")
            cond[x, widx[x ^ e]] += p**w * (1 - p) ** (6 - w)
    pw = cond.mean(axis=0)
    hw = -(pw[pw > 0] * np.log2(pw[pw > 0])).sum()
    c = cond[cond > 0]
    hwx = -(c * np.log2(c)).sum() / 64
    assert rep["I_X_W"] == pytest.approx(hw - hwx, abs=1e-10)
    assert rep["I_X_W"] <= audit_leakage(code, mode="GS")["I_X_W"] + 1e-12


def test_hidden_zero_noise_matches_gs(code74):
    a = audit_leakage(code74, channel=0.0, mode="hidden")
    b = audit_leakage(code74, mode="GS")
    assert a["I_X_W"] == pytest.approx(b["I_X_W"], abs=1e-12)


def test_json_round_trip():
    code = build_nested(10, 3, 2, seed=9)
    back = NestedLinearCode.from_json(code.to_json())
    assert np.array_equal(back.H1, code.H1) and np.array_equal(back.H2, code.H2)
    assert np.array_equal(back.leaders, code.leaders)


def test_limits():
    with pytest.raises(TooLarge):
        build_nested(30, 10, 5)
    code = build_nested(21, 4, 4, seed=1)
    with pytest.raises(TooLarge):
        audit_leakage(code)


def test_rank_deficient_rejected():
    with pytest.raises(ValueError):
        build_nested(7, 3, 1, H1=H74, H2=H74[:1])


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(6, 11))
def test_random_codes_key_round_trip(seed, n):
    m1 = n // 3
    m2 = max(1, n // 4)
    code = build_nested(n, m1, m2, seed=seed)
    X = all_words(n)[::7]
    xq, _ = vq_nearest(X, code)
    km = key_from_quantized(xq, code)
    # x_q determines S and W; S G + t reproduces x_q
    t = np.array([coset_shift(q, code) for q in xq])
    assert np.array_equal(encode_key(km.S, code) ^ t, xq)
    assert np.array_equal(km.W, mat_vec(xq, code.H2))
