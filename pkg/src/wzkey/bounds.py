"""Rate regions, finite-length bounds and the storage-key comparison table.

All rates are in bits per source symbol.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq, minimize_scalar
from scipy.special import gammaln
from scipy.stats import binom

from .gf2core import DomainError


class NoSolution(ValueError):
    pass


@dataclass(frozen=True)
class RateTuple:
    R_s: float
    R_l: float
    R_w: float

    def __post_init__(self):
        for name in ("R_s", "R_l", "R_w"):
            if getattr(self, name) < -1e-12:
                raise DomainError(f"{name} = {getattr(self, name)} is negative")

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.R_s, self.R_l, self.R_w)


def _prob(x: float, name: str = "probability") -> float:
    x = float(x)
    if not (0.0 <= x <= 1.0) or math.isnan(x):
        raise DomainError(f"{name} {x} outside [0, 1]")
    return x


def _half(x: float, name: str) -> float:
    x = float(x)
    if not (0.0 <= x <= 0.5):
        raise DomainError(f"{name} {x} outside [0, 0.5]")
    return x


def binary_entropy(x: float) -> float:
    x = _prob(x)
    if x == 0.0 or x == 1.0:
        return 0.0
    return -x * math.log2(x) - (1.0 - x) * math.log2(1.0 - x)


def star(p: float, x: float) -> float:
    """Crossover of BSC(p) followed by BSC(x)."""
    p = _prob(p)
    x = _prob(x)
    return p * (1.0 - x) + (1.0 - p) * x


def inverse_star(p_c: float, p_A: float) -> float:
    """Solve ``q * p_A = p_c`` for q (``p_A < 0.5``)."""
    p_A = _half(p_A, "p_A")
    if p_A == 0.5:
        raise DomainError("p_A = 0.5 makes q unidentifiable")
    return (float(p_c) - p_A) / (1.0 - 2.0 * p_A)


def gs_bin_boundary(q: float, p_A: float) -> RateTuple:
    """Boundary point of the binary GS region for test-channel crossover q."""
    q = _half(q, "q")
    p_A = _half(p_A, "p_A")
    h_qp = binary_entropy(star(q, p_A))
    leak = h_qp - binary_entropy(q)
    return RateTuple(1.0 - h_qp, leak, leak)


def cs_bin_boundary(q: float, p_A: float) -> RateTuple:
    q = _half(q, "q")
    p_A = _half(p_A, "p_A")
    h_qp = binary_entropy(star(q, p_A))
    return RateTuple(1.0 - h_qp, h_qp - binary_entropy(q), 1.0 - binary_entropy(q))


def hidden_bin_boundary(q: float, p_e: float, p_A: float, model: str = "GS") -> RateTuple:
    """Boundary point for a hidden source seen through BSC(p_e) at the encoder.

    The auxiliary channel from U to the encoder measurement is BSC(q); the
    hidden source is then BSC(q * p_e) from U and the decoder measurement is a
    further BSC(p_A).
    """
    q = _half(q, "q")
    p_e = _half(p_e, "p_e")
    p_A = _half(p_A, "p_A")
    if model not in ("GS", "CS"):
        raise ValueError("model must be 'GS' or 'CS'")
    if p_e == 0.0:
        return gs_bin_boundary(q, p_A) if model == "GS" else cs_bin_boundary(q, p_A)
    u_x = star(q, p_e)
    h_uy = binary_entropy(star(u_x, p_A))
    R_s = 1.0 - h_uy
    R_l = h_uy - binary_entropy(u_x)
    if model == "GS":
        R_w = h_uy - binary_entropy(q)
    else:
        R_w = 1.0 - binary_entropy(q)
    return RateTuple(R_s, R_l, R_w)


def region_sweep(p_A: float, step: float = 1e-3, model: str = "GS") -> list[tuple[float, RateTuple]]:
    qs = np.arange(0.0, 0.5, step)
    qs = np.append(qs[qs < 0.5], 0.5)
    fn = gs_bin_boundary if model == "GS" else cs_bin_boundary
    return [(float(q), fn(float(q), p_A)) for q in qs]


# ---------------------------------------------------------------------------
# finite-length bounds


def _log_binom_coeffs(n: int) -> np.ndarray:
    t = np.arange(n + 1)
    return gammaln(n + 1) - gammaln(t + 1) - gammaln(n - t + 1)


def rcu_bound_bsc(n: int, k: int, p: float) -> float:
    """Random-coding union bound for ``2**k`` messages over BSC(p).

    ``sum_t P[w(Z)=t] min(1, (M-1) 2^-n sum_{s<=t} C(n,s))``, evaluated in the
    log domain.
    """
    if k > n or k < 0:
        raise ValueError("need 0 <= k <= n")
    p = _half(p, "p")
    if k == 0:
        return 0.0
    lb = _log_binom_coeffs(n)
    t = np.arange(n + 1)
    with np.errstate(divide="ignore"):
        lpt = lb + t * math.log(p) + (n - t) * math.log1p(-p) if 0 < p else np.where(t == 0, 0.0, -np.inf)
    lcum = np.logaddexp.accumulate(lb)
    # log(2^k - 1) without overflow
    log_m1 = k * math.log(2.0) + math.log1p(-(2.0 ** -k))
    inner = np.minimum(0.0, log_m1 - n * math.log(2.0) + lcum)
    return float(np.exp(np.logaddexp.reduce(lpt + inner)))


def gallager_e0(rho: float, p: float) -> float:
    """Gallager's E_0 for BSC(p) with uniform inputs, in bits."""
    a = 1.0 / (1.0 + rho)
    return rho - (1.0 + rho) * math.log2(p**a + (1.0 - p) ** a)


def sphere_packing_exponent(R: float, p: float, rho_max: float = 1e3) -> float:
    """``E_sp(R) = sup_{rho >= 0} E_0(rho) - rho R`` in bits (inf below R_inf=0)."""
    p = _half(p, "p")
    cap = 1.0 - binary_entropy(p)
    if R >= cap:
        return 0.0
    res = minimize_scalar(lambda r: -(gallager_e0(r, p) - r * R), bounds=(0.0, rho_max), method="bounded",
                          options={"xatol": 1e-12})
    return float(max(0.0, -res.fun))


def sphere_packing_block_error(n: int, k: float, p: float) -> float:
    """Smallest block-error probability any code with ``2**k`` words can have on BSC(p).

    The optimal decoding regions have average volume ``2**(n-k)``; the best a
    region can do is collect the most likely noise patterns, i.e. a Hamming
    ball plus a fraction of the next shell.
    """
    p = _half(p, "p")
    lb = _log_binom_coeffs(n) / math.log(2.0)
    lcum = np.logaddexp2.accumulate(lb)
    lv = n - k
    if lv >= lcum[-1]:
        return 0.0
    r = int(np.searchsorted(lcum, lv))
    below = 2.0 ** (lcum[r - 1] - lb[r]) if r > 0 else 0.0
    theta = 2.0 ** (lv - lb[r]) - below
    pc = (binom.cdf(r - 1, n, p) if r > 0 else 0.0) + theta * binom.pmf(r, n, p)
    return float(max(0.0, 1.0 - pc))


def sphere_packing_ratio(n: int, target_PB: float, p_A: float, method: str = "exact") -> tuple[float, float]:
    """Largest code rate ``R_C`` allowed at block length n and ``P_B``; returns
    ``(R_C_max, R_C_max / (1 - R_C_max))``.

    ``method="exact"`` uses the finite-length sphere-packing bound for the BSC
    (:func:`sphere_packing_block_error`); ``method="exponent"`` solves
    ``E_sp(R) = -log2(P_B)/n`` with the bare exponent.
    """
    if not (0.0 < target_PB < 1.0):
        raise DomainError("target_PB must lie in (0, 1)")
    p_A = _half(p_A, "p_A")
    cap = 1.0 - binary_entropy(p_A)
    if method == "exact":
        def gap(R):
            pe = sphere_packing_block_error(n, n * R, p_A)
            return math.log(max(pe, 1e-300)) - math.log(target_PB)

        lo, hi = 1e-9, 1.0 - 1e-9
        if gap(lo) > 0:
            raise NoSolution("even a single-message code misses the target")
        R = brentq(gap, lo, hi, xtol=1e-12)
    elif method == "exponent":
        target = -math.log2(target_PB) / n
        if sphere_packing_exponent(0.0, p_A) < target:
            raise NoSolution("target exponent exceeds E_sp(0)")
        R = brentq(lambda r: sphere_packing_exponent(r, p_A) - target, 0.0, cap - 1e-12, xtol=1e-12)
    else:
        raise ValueError(f"unknown method {method!r}")
    return float(R), float(R / (1.0 - R))


# ---------------------------------------------------------------------------
# comparison table


@dataclass(frozen=True)
class LabeledPoint:
    family: str
    label: str
    rates: RateTuple
    q: float | None = None


# storage/key points reported for the two nested polar designs (n = 1024, 2048)
PUBLISHED_CODE_POINTS = {
    "Code 1 (n=1024)": RateTuple(0.125, 0.666, 0.666),
    "Code 2 (n=2048)": RateTuple(0.063, 0.315, 0.315),
}


def figure5_table(p_A: float = 0.15, key_bits: int = 128, step: float = 1e-3,
                  code_points: dict[str, RateTuple] | None = None) -> list[LabeledPoint]:
    """Storage-key comparison points for the GS model.

    Families: ``boundary`` (region sweep), ``sw_line`` (``R_w + R_s = 1``),
    ``optimum`` (``(R_w*, R_s*)`` at q = 0), ``fcs_cofe`` (storage 1 at each
    block length), ``rm_concat``, ``prior_polar`` and ``nested_polar``.
    """
    pts: list[LabeledPoint] = []
    for q, rt in region_sweep(p_A, step):
        pts.append(LabeledPoint("boundary", f"q={q:.3f}", rt, q))
    r_star = gs_bin_boundary(0.0, p_A)
    for rs in np.linspace(0.0, 1.0, 11):
        pts.append(LabeledPoint("sw_line", f"R_s={rs:.1f}", RateTuple(float(rs), float(1 - rs), float(1 - rs))))
    pts.append(LabeledPoint("optimum", "(R_w*, R_s*)", r_star, 0.0))
    for n in (1024, 2048):
        rs = key_bits / n
        pts.append(LabeledPoint("fcs_cofe", f"FCS/COFE n={n}", RateTuple(rs, 1.0 - rs, 1.0)))
    pts.append(LabeledPoint("rm_concat", "rep(4,1)+RM(32,16) n=1024", RateTuple(key_bits / 1024, 1.0 - key_bits / 1024, 1.0)))
    pts.append(LabeledPoint("prior_polar", "SW polar n=1024", RateTuple(0.125, 0.875, 0.875)))
    for label, rt in (code_points or PUBLISHED_CODE_POINTS).items():
        pts.append(LabeledPoint("nested_polar", label, rt))
    return pts


def rates_csv(rows: list[LabeledPoint], header_comment: str | None = None) -> str:
    buf = io.StringIO()
    if header_comment:
        for line in header_comment.splitlines():
            buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["family", "label", "q", "R_s", "R_l", "R_w"])
    for pt in rows:
        w.writerow([pt.family, pt.label, "" if pt.q is None else f"{pt.q:.6f}",
                    f"{pt.rates.R_s:.6f}", f"{pt.rates.R_l:.6f}", f"{pt.rates.R_w:.6f}"])
    return buf.getvalue()
