"""Design of a nested polar code pair for key agreement.

The procedure has three steps. Fix the error-correcting code ``C`` for the key
length, find the crossover ``p_c`` at which ``C`` reaches the target
block-error probability, and convert it into a target average distortion
``E[q]`` through ``p_c = E[q] * p_A``. Then shrink ``F1`` (the frozen set of
the quantizer code ``C1``) as far as the distortion target allows, since every
index removed from ``F1`` is one helper bit saved. A final step adds helper
bits until a high quantile of the per-realization distortion, and not only
its mean, meets the target.

Block errors of ``C`` are measured with the min-sum SCL decoder. The default
``p_c`` estimate (``method="loglinear"``) sweeps a crossover grid and fits
``log10 P_B`` linearly over the points inside a measurable window.

Min-sum decisions do not change when all channel LLRs are scaled, so on a BSC
the decoder output depends only on the error pattern. ``method="weight"`` uses
this: it measures the error rate once per error weight and averages it
against the binomial weight law of any crossover. The same fixed-weight
patterns rank candidate design crossovers for ``C`` cheaply.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq, minimize
from scipy.stats import binom, norm

from . import __version__
from .bounds import RateTuple, inverse_star
from .gf2core import SeedSpec, bernoulli, crossover, random_bits, rng
from .polar import PolarCodePair, construct_montecarlo, quantize, scl_decode

# stream tags, so every Monte-Carlo stage draws from its own streams
TAG_PB_GRID = 1
TAG_PB_WEIGHT = 2
TAG_DISTORTION = 3
TAG_CONSTRUCTION = 4
TAG_DESIGN_SCAN = 5

DEFAULT_DESIGN_GRID = (0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4, 0.45)


class Infeasible(ValueError):
    """The code cannot reach the target even without quantization (``p_c < p_A``)."""


class InfeasibleTarget(Infeasible):
    pass


class Unreachable(ValueError):
    pass


@dataclass(frozen=True)
class Budget:
    """Monte-Carlo trial counts for each design stage."""

    pb_trials: int = 100_000
    weight_trials: int = 2_000
    distortion_trials: int = 10_000
    construction_trials: int = 2_000
    probe_trials: int = 4_000


@dataclass(frozen=True)
class DesignSpec:
    n: int
    key_bits: int
    p_A: float
    target_PB: float = 1e-6
    list_size: int = 8
    quantile: float = 0.9999
    budget: Budget = field(default_factory=Budget)
    seed: int = 0
    c_design_p: float | None = None
    pc_method: str = "loglinear"
    design_grid: tuple = DEFAULT_DESIGN_GRID

    def __post_init__(self):
        if not (0 < self.key_bits < self.n):
            raise ValueError("need 0 < key_bits < n")
        if not (0.0 < self.target_PB < 1.0):
            raise ValueError("target_PB must lie in (0, 1)")
        if not (0.5 < self.quantile < 1.0):
            raise ValueError("quantile must lie in (0.5, 1)")
        crossover(self.p_A)

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in ("n", "key_bits", "p_A", "target_PB", "list_size", "quantile",
                                            "seed", "c_design_p", "pc_method")}
        d["design_grid"] = list(self.design_grid)
        d["budget"] = vars(self.budget).copy()
        return d


@dataclass
class PcEstimate:
    """Operating crossover of ``C`` together with the data it was read from."""

    p_c: float
    method: str
    points: list[dict]
    fit: dict

    def to_dict(self) -> dict:
        return {"p_c": self.p_c, "method": self.method, "points": self.points, "fit": self.fit}


@dataclass
class DesignResult:
    code: PolarCodePair
    p_c: float
    Eq: float
    m2: int
    m2_aug: int
    rate_tuple: RateTuple
    pc_estimate: PcEstimate | None = None
    mean_distortion: float | None = None
    quantile_distortion: float | None = None
    spec: DesignSpec | None = None
    design_scan: dict | None = None

    def to_dict(self) -> dict:
        return {
            "format": "wzkey.design-result",
            "tool_version": __version__,
            "spec": None if self.spec is None else self.spec.to_dict(),
            "code": self.code.to_dict(),
            "p_c": self.p_c,
            "Eq": self.Eq,
            "m2": self.m2,
            "m2_aug": self.m2_aug,
            "rate_tuple": dict(zip(("R_s", "R_l", "R_w"), self.rate_tuple.as_tuple())),
            "mean_distortion": self.mean_distortion,
            "quantile_distortion": self.quantile_distortion,
            "fit_points": None if self.pc_estimate is None else self.pc_estimate.to_dict(),
            "design_scan": self.design_scan,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)

    @classmethod
    def from_dict(cls, d: dict) -> "DesignResult":
        rt = d["rate_tuple"]
        pe = d.get("fit_points")
        return cls(
            code=PolarCodePair.from_dict(d["code"]),
            p_c=d["p_c"],
            Eq=d["Eq"],
            m2=d["m2"],
            m2_aug=d["m2_aug"],
            rate_tuple=RateTuple(rt["R_s"], rt["R_l"], rt["R_w"]),
            pc_estimate=None if pe is None else PcEstimate(pe["p_c"], pe["method"], pe["points"], pe["fit"]),
            mean_distortion=d.get("mean_distortion"),
            quantile_distortion=d.get("quantile_distortion"),
            design_scan=d.get("design_scan"),
        )

    @classmethod
    def from_json(cls, s: str) -> "DesignResult":
        return cls.from_dict(json.loads(s))


# ---------------------------------------------------------------------------
# step 2: operating crossover of C


def block_errors(code: PolarCodePair, z: np.ndarray, list_size: int = 8, chunk: int = 2000) -> np.ndarray:
    """Error flags of the min-sum SCL decoder of ``C`` for noise patterns ``z``
    (all-zero frozen values, all-zero message; the code is linear)."""
    z = np.atleast_2d(np.asarray(z, dtype=np.uint8))
    fv = np.zeros(code.F.size, dtype=np.uint8)
    flags = np.zeros(z.shape[0], dtype=bool)
    for a in range(0, z.shape[0], chunk):
        llr = 1.0 - 2.0 * z[a:a + chunk].astype(np.float64)
        u, _ = scl_decode(llr, code, fv, list_size, which="C", exact=False)
        flags[a:a + chunk] = u.any(axis=1)
    return flags


def measure_pb(code: PolarCodePair, p: float, trials: int, seed: SeedSpec, list_size: int = 8,
               chunk: int = 5000, stop_errors: int | None = None) -> tuple[int, int]:
    """Block errors over up to ``trials`` uses of BSC(p); returns ``(errors, trials_run)``.

    With ``stop_errors`` the run ends after the first chunk that brings the
    error count to that level.
    """
    errors = 0
    done = 0
    for k, a in enumerate(range(0, trials, chunk)):
        t = min(chunk, trials - a)
        z = bernoulli(code.n, p, seed.child(k), size=t)
        errors += int(block_errors(code, z, list_size).sum())
        done += t
        if stop_errors is not None and errors >= stop_errors:
            break
    return errors, done


def _fixed_weight_patterns(n: int, w: int, trials: int, seed: SeedSpec) -> np.ndarray:
    g = rng(seed)
    keys = g.random((trials, n))
    pos = np.argpartition(keys, w, axis=1)[:, :w] if w < n else np.tile(np.arange(n), (trials, 1))
    z = np.zeros((trials, n), dtype=np.uint8)
    np.put_along_axis(z, pos, 1, axis=1)
    return z


def _weight_error_rate(code, w, trials, seed, list_size):
    z = _fixed_weight_patterns(code.n, w, trials, seed.child(w))
    return int(block_errors(code, z, list_size).sum())


def _fit_tail(ws, errs, trials):
    """Binomial maximum-likelihood fit of ``log P(err | w) = a + b (w - w0)``."""
    ws = np.asarray(ws, dtype=float)
    errs = np.asarray(errs, dtype=float)
    trials = np.asarray(trials, dtype=float)
    w0 = float(ws.mean())

    def nll(th):
        lp = np.minimum(th[0] + th[1] * (ws - w0), -1e-9)
        return -float(np.sum(errs * lp + (trials - errs) * np.log1p(-np.exp(lp))))

    rates = np.maximum(errs, 0.5) / trials
    b0 = np.polyfit(ws, np.log(rates), 1)[0]
    res = minimize(nll, x0=[math.log(max(rates.mean(), 1e-6)), max(b0, 1e-3)], method="Nelder-Mead",
                   options={"xatol": 1e-10, "fatol": 1e-10, "maxiter": 20000})
    return float(res.x[0]), float(res.x[1]), w0


def find_pc(code: PolarCodePair, target_PB: float, budget: Budget | None = None, method: str = "loglinear",
            seed: int | SeedSpec = 0, list_size: int = 8, grid: np.ndarray | None = None,
            window: tuple[float, float] = (1e-4, 1e-2)) -> PcEstimate:
    """Crossover at which ``C`` reaches block-error probability ``target_PB``.

    ``method="loglinear"`` sweeps ``grid`` (step 0.005 by default), keeps the
    points whose measured rate falls inside ``window`` and fits
    ``log10 P_B`` linearly in the crossover. ``method="weight"`` measures the
    error rate conditioned on the number of channel errors, fits its lower tail
    and averages it against ``Binomial(n, p)``.
    """
    budget = budget or Budget()
    seed = seed if isinstance(seed, SeedSpec) else SeedSpec(int(seed))
    if method == "loglinear":
        return _find_pc_loglinear(code, target_PB, budget, seed.child(TAG_PB_GRID), list_size, grid, window)
    if method == "weight":
        return _find_pc_weight(code, target_PB, budget, seed.child(TAG_PB_WEIGHT), list_size)
    raise ValueError(f"unknown method {method!r}")


def loglinear_fit(ps, rates) -> tuple[float, float]:
    """Least-squares line ``log10 P_B = a + b p``; returns ``(a, b)``."""
    b, a = np.polyfit(np.asarray(ps, dtype=float), np.log10(np.asarray(rates, dtype=float)), 1)
    return float(a), float(b)


def _find_pc_loglinear(code, target_PB, budget, seed, list_size, grid, window, stop_errors=1000):
    if grid is None:
        grid = np.round(np.arange(0.05, 0.45 + 1e-9, 0.005), 6)
    lo, hi = window
    points = []
    inside = []
    # descending sweep; points far above the window stop early, since only their
    # position relative to the window matters
    for k, p in enumerate(np.sort(np.asarray(grid, dtype=float))[::-1]):
        e, t = measure_pb(code, float(p), budget.pb_trials, seed.child(k), list_size, chunk=1000,
                          stop_errors=stop_errors)
        if t < budget.pb_trials and e / t <= 2 * hi:
            e2, t2 = measure_pb(code, float(p), budget.pb_trials - t, seed.child(k, 1), list_size)
            e, t = e + e2, t + t2
        rate = e / t
        points.append({"p": float(p), "trials": t, "errors": e, "rate": rate})
        if lo <= rate <= hi:
            inside.append((float(p), rate))
        if rate < lo:
            break
    if len(inside) < 2:
        raise InfeasibleTarget("fewer than two grid points fall in the fitting window")
    a, b = loglinear_fit(*zip(*inside))
    p_c = (math.log10(target_PB) - a) / b
    resid = [math.log10(r) - (a + b * p) for p, r in inside]
    fit = {"a": a, "b": b, "window": list(window), "used": [p for p, _ in inside], "residuals_log10": resid}
    return PcEstimate(float(p_c), "loglinear", points[::-1], fit)


def _find_pc_weight(code, target_PB, budget, seed, list_size):
    n = code.n
    T = budget.weight_trials
    probe = max(50, T // 10)
    w50 = _half_weight(code, 0.5, probe, seed.child(0), list_size)
    step = max(1, n // 100)
    ws, errs = [], []
    w = w50
    zero_run = 0
    while w > 0 and zero_run < 2:
        e = _weight_error_rate(code, w, T, seed.child(1), list_size)
        ws.append(w)
        errs.append(e)
        zero_run = zero_run + 1 if e == 0 else 0
        w -= step
    ws = ws[::-1]
    errs = errs[::-1]
    points = [{"w": int(a), "trials": T, "errors": int(e), "rate": e / T} for a, e in zip(ws, errs)]
    tail = [(a, e) for a, e in zip(ws, errs) if e <= 0.3 * T]
    if len(tail) < 2 or sum(e for _, e in tail) == 0:
        raise InfeasibleTarget("not enough failures to fit the error-weight tail")
    a, b, w0 = _fit_tail([t[0] for t in tail], [t[1] for t in tail], [T] * len(tail))
    wgrid = np.arange(n + 1)
    cond = np.minimum(1.0, np.exp(np.minimum(a + b * (wgrid - w0), 0.0)))

    def pb(p):
        return float(np.sum(binom.pmf(wgrid, n, p) * cond))

    if pb(1e-9) > target_PB:
        raise InfeasibleTarget("target below the fitted floor")
    p_c = brentq(lambda p: math.log(pb(p)) - math.log(target_PB), 1e-9, 0.5, xtol=1e-10)
    fit = {"a": a, "b": b, "w0": w0, "w50": int(w50), "model": "log P(err|w) = a + b (w - w0)"}
    return PcEstimate(float(p_c), "weight", points, fit)


def pb_from_weight_fit(est: PcEstimate, n: int, p: float) -> float:
    """Block-error probability at crossover p implied by a weight-tail fit."""
    f = est.fit
    wgrid = np.arange(n + 1)
    cond = np.minimum(1.0, np.exp(np.minimum(f["a"] + f["b"] * (wgrid - f["w0"]), 0.0)))
    return float(np.sum(binom.pmf(wgrid, n, p) * cond))


def pc_to_distortion(p_c: float, p_A: float) -> float:
    """Target distortion ``q`` with ``q * p_A = p_c``."""
    p_c = crossover(p_c)
    p_A = crossover(p_A)
    if p_c < p_A:
        raise Infeasible(f"p_c = {p_c:.4f} is below p_A = {p_A:.4f}; the code cannot absorb quantization noise")
    return float(inverse_star(p_c, p_A))


# ---------------------------------------------------------------------------
# step 3: shrink F1, then augment for the quantile


def f1_order(code: PolarCodePair, q: float, trials: int = 2000, seed: int | SeedSpec = 0) -> np.ndarray:
    """Indices of ``F`` from least to most reliable for the quantizer's test channel BSC(q)."""
    seed = seed if isinstance(seed, SeedSpec) else SeedSpec(int(seed))
    order = construct_montecarlo(code.n, q, trials, seed.child(TAG_CONSTRUCTION))
    return order[np.isin(order, code.F)]


def _distortions(code, F1, X, q, list_size):
    pair = code.with_f1(F1)
    return quantize(X, pair, q_design=q, list_size=list_size)[2]


def _inputs(n, trials, seed):
    seed = seed if isinstance(seed, SeedSpec) else SeedSpec(int(seed))
    return random_bits(n, seed.child(TAG_DISTORTION), size=trials)


def shrink_f1(code: PolarCodePair, target_Eq: float, budget: Budget | None = None, seed: int | SeedSpec = 0,
              list_size: int = 8, order: np.ndarray | None = None) -> tuple[PolarCodePair, float]:
    """Largest helper saving that keeps the mean distortion at or below ``target_Eq``.

    ``F1`` always consists of the least reliable indices of ``F`` in
    ``order`` (default :func:`f1_order` at ``target_Eq``); removing an index
    from ``F1`` means dropping the most reliable remaining one. The number of
    indices kept is found by bisection on one common set of uniform inputs.
    Returns the shrunken pair and its measured mean distortion.
    """
    if not (0.0 < target_Eq < 0.5):
        raise ValueError("target_Eq must lie in (0, 0.5)")
    budget = budget or Budget()
    order = f1_order(code, target_Eq, budget.construction_trials, seed) if order is None else np.asarray(order)
    X = _inputs(code.n, budget.distortion_trials, seed)
    q = float(target_Eq)
    cache: dict[int, float] = {}

    def mean_d(keep):
        if keep not in cache:
            cache[keep] = float(_distortions(code, order[:keep], X, q, list_size).mean())
        return cache[keep]

    # keep = |F1|; distortion is nonincreasing as keep shrinks
    if mean_d(0) > target_Eq:
        raise Unreachable(f"even F1 = {{}} gives mean distortion {mean_d(0):.4f} > {target_Eq:.4f}")
    lo, hi = 0, order.size  # mean_d(lo) <= target; look for the largest such keep
    if mean_d(hi) <= target_Eq:
        return code.with_f1(order[:hi]), mean_d(hi)
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if mean_d(mid) <= target_Eq:
            lo = mid
        else:
            hi = mid
    return code.with_f1(order[:lo]), mean_d(lo)


def quantile_statistic(d: np.ndarray, quantile: float, method: str = "normal") -> float:
    """Distortion level exceeded by a fraction ``1 - quantile`` of realizations."""
    d = np.asarray(d, dtype=float)
    if method == "normal":
        return float(d.mean() + norm.ppf(quantile) * d.std(ddof=1))
    if method == "empirical":
        return float(np.quantile(d, quantile))
    raise ValueError(f"unknown method {method!r}")


def quantile_augment(pair: PolarCodePair, quantile: float, target_Eq: float, budget: Budget | None = None,
                     seed: int | SeedSpec = 0, list_size: int = 8, order: np.ndarray | None = None,
                     method: str = "normal") -> tuple[int, float]:
    """Extra helper bits so that the ``quantile`` of distortion meets ``target_Eq``.

    Indices keep moving from ``F1`` to ``Fw`` in the same order as in
    :func:`shrink_f1`; the key length is untouched. Returns
    ``(extra_bits, quantile_distortion)``.
    """
    if not (0.5 < quantile < 1.0):
        raise ValueError("quantile must lie in (0.5, 1)")
    budget = budget or Budget()
    if order is None:
        order = f1_order(pair, target_Eq, budget.construction_trials, seed)
    order = np.asarray(order)
    keep0 = pair.m1
    if not np.array_equal(np.sort(order[:keep0]), pair.F1):
        raise ValueError("F1 is not a prefix of the removal order")
    X = _inputs(pair.n, budget.distortion_trials, seed)
    q = float(target_Eq)
    cache: dict[int, float] = {}

    def qd(extra):
        if extra not in cache:
            d = _distortions(pair, order[:keep0 - extra], X, q, list_size)
            cache[extra] = quantile_statistic(d, quantile, method)
        return cache[extra]

    if qd(0) <= target_Eq:
        return 0, qd(0)
    lo, hi = 0, keep0
    if qd(hi) > target_Eq:
        raise Unreachable("the quantile target is missed even with F1 empty")
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if qd(mid) <= target_Eq:
            hi = mid
        else:
            lo = mid
    return hi, qd(hi)


# ---------------------------------------------------------------------------
# full procedure


def design_code_c(n: int, key_bits: int, design_p: float) -> PolarCodePair:
    return PolarCodePair.from_rate(n, key_bits, design_p)


def _half_weight(code, frac, trials, seed, list_size):
    # smallest weight (on a grid of n/256) whose error rate exceeds frac
    lo, hi = 0, code.n // 2
    while hi - lo > max(1, code.n // 256):
        mid = (lo + hi) // 2
        if _weight_error_rate(code, mid, trials, seed, list_size) > frac * trials:
            hi = mid
        else:
            lo = mid
    return hi


def select_design_p(n: int, key_bits: int, grid=DEFAULT_DESIGN_GRID, budget: Budget | None = None,
                    seed: int | SeedSpec = 0, list_size: int = 8) -> tuple[float, dict]:
    """Pick the Bhattacharyya design crossover for ``C`` from ``grid``.

    Every candidate decodes the same fixed-weight error patterns at a probe
    weight ``n/32`` below the weight where the middle candidate fails 10% of
    the time, which sits in the lower tail that decides ``p_c``. Fewest errors
    wins; ties go to a second probe ``n/100`` heavier, then to grid order.
    Returns the chosen crossover and the scan record.
    """
    budget = budget or Budget()
    seed = seed if isinstance(seed, SeedSpec) else SeedSpec(int(seed))
    seed = seed.child(TAG_DESIGN_SCAN)
    grid = [float(g) for g in grid]
    ref = design_code_c(n, key_bits, grid[len(grid) // 2])
    w10 = _half_weight(ref, 0.1, max(100, budget.probe_trials // 10), seed.child(0), list_size)
    w1 = max(1, w10 - n // 32)
    w2 = w1 + max(1, n // 100)
    T = budget.probe_trials
    rows = []
    for g in grid:
        code = design_code_c(n, key_bits, g)
        e1 = _weight_error_rate(code, w1, T, seed.child(1), list_size)
        e2 = _weight_error_rate(code, w2, T, seed.child(1), list_size)
        rows.append({"design_p": g, "errors_w1": e1, "errors_w2": e2})
    best = min(range(len(grid)), key=lambda i: (rows[i]["errors_w1"], rows[i]["errors_w2"], i))
    scan = {"w10_reference": int(w10), "w1": int(w1), "w2": int(w2), "trials": T, "candidates": rows,
            "chosen": grid[best]}
    return grid[best], scan


def operating_point(spec: DesignSpec, log=None) -> tuple[PolarCodePair, PcEstimate, dict | None]:
    """Steps 1 and 2: code ``C``, its crossover ``p_c`` and the design scan (if any)."""
    seed = SeedSpec(spec.seed)
    scan = None
    design_p = spec.c_design_p
    if design_p is None:
        design_p, scan = select_design_p(spec.n, spec.key_bits, spec.design_grid, spec.budget, seed,
                                         spec.list_size)
        if log:
            cand = ", ".join(f"{r['design_p']:g}:{r['errors_w1']}/{r['errors_w2']}" for r in scan["candidates"])
            log(f"design scan at weights {scan['w1']}/{scan['w2']} ({scan['trials']} patterns): {cand}")
    code = design_code_c(spec.n, spec.key_bits, design_p)
    est = find_pc(code, spec.target_PB, spec.budget, spec.pc_method, seed, spec.list_size)
    if log:
        log(f"C designed at {design_p:g}: p_c = {est.p_c:.4f} ({est.method})")
    return code, est, scan


def design_nested(spec: DesignSpec, log=None) -> DesignResult:
    """Run the complete design and return the code pair with its rate tuple."""
    code, est, scan = operating_point(spec, log)
    Eq = pc_to_distortion(min(est.p_c, 0.5), spec.p_A) if est.p_c >= spec.p_A else None
    if Eq is None:
        raise Infeasible(f"p_c = {est.p_c:.4f} < p_A = {spec.p_A}: no code for n = {spec.n} with this procedure")
    seed = SeedSpec(spec.seed)
    order = f1_order(code, Eq, spec.budget.construction_trials, seed)
    pair, mean_d = shrink_f1(code, Eq, spec.budget, seed, spec.list_size, order)
    if log:
        log(f"E[q] = {Eq:.4f}: n - m1 = {spec.n - pair.m1}, m2 = {pair.m2}, mean distortion {mean_d:.4f}")
    extra, qdist = quantile_augment(pair, spec.quantile, Eq, spec.budget, seed, spec.list_size, order)
    final = pair.with_f1(order[:pair.m1 - extra])
    if log:
        log(f"quantile {spec.quantile}: {extra} extra helper bits, quantile distortion {qdist:.4f}")
    m2_aug = pair.m2 + extra
    rt = RateTuple(spec.key_bits / spec.n, m2_aug / spec.n, m2_aug / spec.n)
    return DesignResult(final, float(est.p_c), float(Eq), pair.m2, m2_aug, rt, est, mean_d, qdist, spec, scan)
