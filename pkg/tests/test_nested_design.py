import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wzkey.bounds import star
from wzkey.gf2core import SeedSpec
from wzkey.nested_design import (
    Budget,
    DesignResult,
    DesignSpec,
    Infeasible,
    _fixed_weight_patterns,
    design_nested,
    f1_order,
    find_pc,
    loglinear_fit,
    measure_pb,
    pb_from_weight_fit,
    pc_to_distortion,
    quantile_augment,
    quantile_statistic,
    select_design_p,
    shrink_f1,
)
from wzkey.polar import PolarCodePair, quantize

SMALL = Budget(pb_trials=4000, weight_trials=400, distortion_trials=400, construction_trials=200, probe_trials=300)


@settings(max_examples=300)
@given(st.floats(0.0, 0.5), st.floats(0.0, 0.49))
def test_pc_to_distortion_inverts_star(q, pA):
    assert pc_to_distortion(star(q, pA), pA) == pytest.approx(q, abs=1e-12)


def test_pc_to_distortion_examples():
    assert pc_to_distortion(0.15, 0.15) == 0.0
    assert pc_to_distortion(0.1819, 0.15) == pytest.approx(0.0456, abs=2e-4)
    assert pc_to_distortion(0.2682, 0.15) == pytest.approx(0.1689, abs=2e-4)
    with pytest.raises(Infeasible):
        pc_to_distortion(0.14, 0.15)


def test_loglinear_fit_recovers_line():
    ps = np.array([0.2, 0.21, 0.22, 0.23])
    a, b = loglinear_fit(ps, 10 ** (-9.0 + 30.0 * ps))
    assert (a, b) == pytest.approx((-9.0, 30.0), abs=1e-9)


def test_fixed_weight_patterns():
    z = _fixed_weight_patterns(64, 9, 50, SeedSpec(1))
    assert (z.sum(axis=1) == 9).all()
    assert np.array_equal(z, _fixed_weight_patterns(64, 9, 50, SeedSpec(1)))
    assert (_fixed_weight_patterns(8, 8, 3, SeedSpec(0)) == 1).all()


def test_measure_pb_noiseless_and_deterministic():
    code = PolarCodePair.from_rate(64, 8, 0.2)
    assert measure_pb(code, 0.0, 500, SeedSpec(0)) == (0, 500)
    a = measure_pb(code, 0.2, 1000, SeedSpec(3), chunk=300)
    assert a == measure_pb(code, 0.2, 1000, SeedSpec(3), chunk=300)
    e, t = measure_pb(code, 0.45, 5000, SeedSpec(3), chunk=500, stop_errors=100)
    assert e >= 100 and t < 5000


@pytest.fixture(scope="module")
def small_code():
    return PolarCodePair.from_rate(64, 8, 0.2)


def test_find_pc_loglinear(small_code):
    grid = np.round(np.arange(0.05, 0.40, 0.01), 3)
    est = find_pc(small_code, 1e-5, SMALL, "loglinear", seed=1, grid=grid, window=(1e-3, 1e-1))
    used = est.fit["used"]
    assert len(used) >= 2
    pts = {p["p"]: p["rate"] for p in est.points}
    assert all(1e-3 <= pts[p] <= 1e-1 for p in used)
    assert est.p_c < min(used)
    # the fit is monotone: the target sits below the window
    assert est.fit["b"] > 0
    again = find_pc(small_code, 1e-5, SMALL, "loglinear", seed=1, grid=grid, window=(1e-3, 1e-1))
    assert again.p_c == est.p_c


def test_find_pc_target_on_fit_returns_point(small_code):
    grid = np.round(np.arange(0.05, 0.40, 0.01), 3)
    est = find_pc(small_code, 1e-5, SMALL, "loglinear", seed=1, grid=grid, window=(1e-3, 1e-1))
    p0 = est.fit["used"][0]
    target = 10 ** (est.fit["a"] + est.fit["b"] * p0)
    est2 = find_pc(small_code, target, SMALL, "loglinear", seed=1, grid=grid, window=(1e-3, 1e-1))
    assert est2.p_c == pytest.approx(p0, abs=1e-9)


def test_find_pc_weight(small_code):
    est = find_pc(small_code, 1e-4, SMALL, "weight", seed=2)
    assert 0.0 < est.p_c < 0.5
    assert pb_from_weight_fit(est, 64, est.p_c) == pytest.approx(1e-4, rel=1e-6)
    assert pb_from_weight_fit(est, 64, est.p_c / 2) < 1e-4


def test_select_design_p():
    g, scan = select_design_p(64, 8, grid=(0.1, 0.2, 0.3), budget=SMALL, seed=0)
    assert g in (0.1, 0.2, 0.3)
    assert scan["chosen"] == g and len(scan["candidates"]) == 3
    assert select_design_p(64, 8, grid=(0.1, 0.2, 0.3), budget=SMALL, seed=0) == (g, scan)


def test_f1_order_restricted_to_F(small_code):
    o = f1_order(small_code, 0.1, 200, 0)
    assert np.array_equal(np.sort(o), small_code.F)


def test_shrink_f1_meets_target(small_code):
    target = 0.2
    pair, d = shrink_f1(small_code, target, SMALL, seed=3)
    assert set(pair.F1) <= set(small_code.F)
    assert d <= target
    # one more frozen index would overshoot the target
    order = f1_order(small_code, target, SMALL.construction_trials, 3)
    assert np.array_equal(pair.F1, np.sort(order[:pair.m1]))
    if pair.m1 < small_code.F.size:
        from wzkey.nested_design import _inputs
        Xs = _inputs(64, SMALL.distortion_trials, 3)
        bigger = small_code.with_f1(order[:pair.m1 + 1])
        assert quantize(Xs, bigger, q_design=target)[2].mean() > target


def test_shrink_f1_monotone_path(small_code):
    from wzkey.nested_design import _inputs
    order = f1_order(small_code, 0.15, 200, 0)
    X = _inputs(64, 300, 0)
    d = [quantize(X, small_code.with_f1(order[:k]), q_design=0.15)[2].mean() for k in range(0, 56, 8)]
    assert all(a <= b + 1e-12 for a, b in zip(d, d[1:]))


def test_shrink_f1_extremes(small_code):
    pair, _ = shrink_f1(small_code, 0.499, SMALL, seed=0)
    assert np.array_equal(pair.F1, small_code.F)
    # an empty F1 leaves C1 the whole space, so any positive target is reachable
    pair, d = shrink_f1(small_code, 1e-4, SMALL, seed=0)
    assert pair.m1 == 0 and d == 0.0
    with pytest.raises(ValueError):
        shrink_f1(small_code, 0.6, SMALL)


def test_quantile_statistic():
    d = np.array([0.1, 0.2, 0.3, 0.4])
    assert quantile_statistic(d, 0.5, "normal") == pytest.approx(0.25)
    assert quantile_statistic(d, 0.75, "empirical") == pytest.approx(np.quantile(d, 0.75))
    with pytest.raises(ValueError):
        quantile_statistic(d, 0.9, "nope")


def test_quantile_augment(small_code):
    target = 0.2
    order = f1_order(small_code, target, SMALL.construction_trials, 3)
    pair, _ = shrink_f1(small_code, target, SMALL, 3, order=order)
    extra, qd = quantile_augment(pair, 0.99, target, SMALL, 3, order=order)
    assert 0 <= extra <= pair.m1
    assert qd <= target
    extra_lo, _ = quantile_augment(pair, 0.5001, target, SMALL, 3, order=order)
    assert extra_lo <= extra


def test_design_nested_small():
    spec = DesignSpec(64, 8, 0.02, target_PB=1e-3, budget=SMALL, seed=4, c_design_p=0.2, quantile=0.99)
    r = design_nested(spec)
    assert r.m2_aug >= r.m2
    assert r.rate_tuple.R_w == r.m2_aug / 64 and r.rate_tuple.R_s == 8 / 64
    assert r.code.m2 == r.m2_aug
    assert r.Eq == pytest.approx(pc_to_distortion(r.p_c, 0.02))
    back = DesignResult.from_json(r.to_json())
    assert back.code.to_json() == r.code.to_json()
    assert back.m2 == r.m2 and back.p_c == r.p_c
    assert design_nested(spec).to_json() == r.to_json()


def test_design_nested_infeasible():
    spec = DesignSpec(64, 32, 0.3, budget=SMALL, c_design_p=0.2)
    with pytest.raises(Infeasible):
        design_nested(spec)


def test_design_spec_validation():
    with pytest.raises(ValueError):
        DesignSpec(64, 64, 0.1)
    with pytest.raises(ValueError):
        DesignSpec(64, 8, 0.1, quantile=0.3)
