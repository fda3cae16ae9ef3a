import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wzkey.bounds import RateTuple
from wzkey.gf2core import all_words, rank
from wzkey.keyagree import (
    RM25_G,
    SCHEMES,
    BundleFormatError,
    DigestMismatch,
    HelperBundle,
    RepRMConcat,
    _RM25Table,
    clopper_pearson_upper,
    code_digest,
    cofe_enroll,
    cofe_key,
    cofe_reconstruct,
    dithered_fcs_enroll,
    evaluate_metrics,
    fcs_enroll,
    fcs_reconstruct,
    linear_enroll,
    linear_reconstruct,
    polar_decode,
    polar_enroll,
    polar_reconstruct,
    rm25_decode,
    rm25_encode,
    rm_concat_decode,
    structural_rates,
)
from wzkey.nested_design import DesignResult
from wzkey.polar import PolarCodePair, extract_helper_and_key, quantize
from wzkey.wz_linear import build_nested


@pytest.fixture(scope="module")
def small_design():
    code = PolarCodePair.from_rate(128, 16, 0.2)
    pair = code.with_f1(code.reliability_order[:40])
    rt = RateTuple(16 / 128, pair.m2 / 128, pair.m2 / 128)
    return DesignResult(pair, 0.2, 0.0714, pair.m2, pair.m2, rt)


@settings(max_examples=60)
@given(st.sampled_from(sorted(SCHEMES)), st.integers(1, 3000), st.integers(0, 2000), st.integers(0, 2**32 - 1))
def test_bundle_round_trip(scheme, n, wlen, s):
    r = np.random.default_rng(s)
    W = r.integers(0, 2, wlen, dtype=np.uint8)
    pad = r.integers(0, 2, 128, dtype=np.uint8) if scheme.endswith("_cs") else None
    digest = bytes(r.integers(0, 256, 32, dtype=np.uint8))
    b = HelperBundle(scheme, n, W, digest, pad)
    raw = b.to_bytes()
    back = HelperBundle.from_bytes(raw)
    assert back.scheme == scheme and back.n == n and back.digest == digest
    assert np.array_equal(back.W, W)
    if pad is not None:
        assert np.array_equal(back.pad, pad)
    assert back.to_bytes() == raw


def test_bundle_layout():
    b = HelperBundle("fcs", 8, np.array([1, 0, 0, 0, 0, 0, 0, 1], dtype=np.uint8), bytes(32))
    raw = b.to_bytes()
    assert raw[:4] == b"WZKB"
    assert raw[4] == 1 and raw[5] == SCHEMES["fcs"]
    assert int.from_bytes(raw[6:10], "little") == 8
    assert int.from_bytes(raw[10:14], "little") == 8
    assert raw[14] == 0b10000001
    assert len(raw) == 14 + 1 + 4 + 32


def test_bundle_errors():
    raw = HelperBundle("linear_gs", 7, np.ones(3, dtype=np.uint8), bytes(32)).to_bytes()
    with pytest.raises(BundleFormatError):
        HelperBundle.from_bytes(b"XXXX" + raw[4:])
    with pytest.raises(BundleFormatError):
        HelperBundle.from_bytes(raw[:-1])
    with pytest.raises(BundleFormatError):
        HelperBundle.from_bytes(raw + b"\0")
    with pytest.raises(BundleFormatError):
        HelperBundle.from_bytes(raw[:5] + bytes([99]) + raw[6:])
    with pytest.raises(ValueError):
        HelperBundle("nope", 1, np.zeros(1, dtype=np.uint8), bytes(32))


def test_polar_pipeline_noiseless_codeword(small_design):
    code = small_design.code
    r = np.random.default_rng(3)
    x = r.integers(0, 2, code.n, dtype=np.uint8)
    bundle, S = polar_enroll(x, small_design)
    u, xq, _ = quantize(x, code, q_design=small_design.Eq)
    W, S2 = extract_helper_and_key(u, code)
    assert np.array_equal(S, S2) and np.array_equal(bundle.W, W)
    assert np.array_equal(polar_reconstruct(xq, bundle, small_design), S)


def test_polar_pipeline_cs(small_design):
    code = small_design.code
    r = np.random.default_rng(4)
    x = r.integers(0, 2, code.n, dtype=np.uint8)
    Sp = r.integers(0, 2, code.message_len, dtype=np.uint8)
    bundle, key = polar_enroll(x, small_design, Sp)
    assert bundle.scheme == "polar_cs" and np.array_equal(key, Sp)
    _, xq, _ = quantize(x, code, q_design=small_design.Eq)
    assert np.array_equal(polar_reconstruct(xq, bundle, small_design), Sp)


def test_polar_digest_mismatch(small_design):
    x = np.zeros(small_design.code.n, dtype=np.uint8)
    bundle, _ = polar_enroll(x, small_design)
    other = HelperBundle(bundle.scheme, bundle.n, bundle.W, bytes(32))
    with pytest.raises(DigestMismatch):
        polar_reconstruct(x, other, small_design)


def test_polar_batch_decode(small_design):
    code = small_design.code
    X = np.random.default_rng(5).integers(0, 2, (20, code.n), dtype=np.uint8)
    u, xq, _ = quantize(X, code, q_design=small_design.Eq)
    W, S = extract_helper_and_key(u, code)
    assert np.array_equal(polar_decode(xq, W, small_design), S)


def test_linear_pipeline():
    code = build_nested(10, 3, 2, seed=2)
    X = all_words(10)[::3]
    for x in X:
        bundle, S = linear_enroll(x, code)
        assert np.array_equal(linear_reconstruct(x, bundle, code), S) or not code.is_leader(
            x ^ _xq(x, code))
    bundle, key = linear_enroll(X[0], code, np.ones(code.k, dtype=np.uint8))
    assert bundle.scheme == "linear_cs"
    with pytest.raises(DigestMismatch):
        linear_reconstruct(X[0], bundle, build_nested(10, 3, 2, seed=3))


def _xq(x, code):
    from wzkey.wz_linear import vq_nearest
    return vq_nearest(x, code)[0]


def test_rm25_structure():
    assert RM25_G.shape == (16, 32)
    assert rank(RM25_G) == 16
    # self-dual
    assert not (RM25_G.astype(int) @ RM25_G.T.astype(int) % 2).any()
    words = rm25_encode(all_words(16))
    w = words.sum(axis=1)
    assert sorted(set(w.tolist())) == [0, 8, 12, 16, 20, 24, 32]
    assert int((w == 8).sum()) == 620


def test_rm25_corrects_three_errors():
    r = np.random.default_rng(0)
    m = r.integers(0, 2, 16, dtype=np.uint8)
    c = rm25_encode(m)
    pats = []
    for w in range(4):
        for pos in itertools.combinations(range(32), w):
            e = np.zeros(32, dtype=np.uint8)
            e[list(pos)] = 1
            pats.append(e)
    pats = np.array(pats)
    dec = rm25_decode(c ^ pats)
    assert (dec == m).all()


def test_rm25_table_is_minimum_distance():
    t = _RM25Table.get()
    assert (t.table >= 0).all()
    weights = np.array([bin(int(v)).count("1") for v in t.table])
    assert weights.max() == 6
    # number of coset leaders of weight <= 3 equals the number of such patterns
    assert int((weights <= 3).sum()) == sum(math.comb(32, i) for i in range(4))


def test_rm_concat_noiseless_and_ties():
    code = RepRMConcat()
    assert (code.n, code.k) == (1024, 128)
    m = np.random.default_rng(1).integers(0, 2, (5, 128), dtype=np.uint8)
    c = code.encode(m)
    assert np.array_equal(code.decode(c), m)
    # two flips in one repetition group: hard majority reads 0, erasure decoding recovers
    r = c[0].copy()
    ones = np.flatnonzero(np.repeat(rm25_encode(m[0].reshape(8, 16)).ravel(), 4))
    g = ones[0] // 4
    r[4 * g:4 * g + 2] ^= 1
    assert np.array_equal(rm_concat_decode(r, inner="erasure"), m[0])


def test_fcs_and_cofe_round_trip():
    code = RepRMConcat()
    r = np.random.default_rng(2)
    x = r.integers(0, 2, (4, 1024), dtype=np.uint8)
    S = r.integers(0, 2, (4, 128), dtype=np.uint8)
    W = fcs_enroll(x, code, S)
    assert np.array_equal(fcs_reconstruct(x, W, code), S)
    Wc, key = cofe_enroll(x, code, 7)
    assert np.array_equal(key, cofe_key(x, 128))
    assert np.array_equal(cofe_reconstruct(x, Wc, code), key)
    assert np.array_equal(dithered_fcs_enroll(x, code, S, 0.0, 1), W)


def test_cofe_key_is_sha256():
    import hashlib
    x = np.zeros(16, dtype=np.uint8)
    x[0] = 1
    h = hashlib.sha256(bytes([0x80, 0])).digest()
    assert np.array_equal(cofe_key(x, 16), np.unpackbits(np.frombuffer(h[:2], dtype=np.uint8)))


def test_clopper_pearson_zero_errors():
    for n in (10, 1000, 100000):
        assert clopper_pearson_upper(0, n) == pytest.approx(1 - 0.05 ** (1 / n), rel=1e-9)
    assert clopper_pearson_upper(0, 100000) == pytest.approx(3.0e-5, rel=0.01)
    assert clopper_pearson_upper(5, 5) == 1.0


def test_structural_rates(small_design):
    assert structural_rates("fcs", RepRMConcat()) == (0.125, 0.875, 1.0)
    s, l, w = structural_rates("polar_cs", small_design)
    assert s == 16 / 128 and l == small_design.code.m2 / 128
    assert w == (small_design.code.m2 + 16) / 128
    code = build_nested(10, 3, 2, seed=2)
    assert structural_rates("linear_gs", code) == (code.k / 10, 0.2, 0.2)


def test_evaluate_metrics_noiseless():
    rep = evaluate_metrics("fcs", RepRMConcat(), 0.0, 200, seed=1)
    assert rep["errors"] == 0 and rep["R_w"] == 1.0
    rep = evaluate_metrics("cofe", RepRMConcat(), 0.0, 50, seed=1)
    assert rep["errors"] == 0


def test_evaluate_metrics_deterministic():
    a = evaluate_metrics("fcs", RepRMConcat(), 0.12, 300, seed=4, chunk=100)
    b = evaluate_metrics("fcs", RepRMConcat(), 0.12, 300, seed=4, chunk=100)
    assert a == b


def test_code_digest_changes_with_code():
    a = PolarCodePair.from_rate(64, 8, 0.2)
    b = PolarCodePair.from_rate(64, 8, 0.3)
    assert code_digest(a) == code_digest(PolarCodePair.from_rate(64, 8, 0.2))
    assert code_digest(a) != code_digest(b)
