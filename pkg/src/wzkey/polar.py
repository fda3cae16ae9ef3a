"""Polar transform, Bhattacharyya construction, SC/SCL decoding and SCL quantization.

Conventions
-----------
* The transform is ``x = u F^{(x)m}`` with ``F = [[1, 0], [1, 1]]`` in natural
  (not bit-reversed) order. Index ``i`` of ``u`` is decoded ``i``-th, and the most
  significant bit of ``i`` selects the first channel split.
* Index sets are stored 0-based in memory and written 1-based in code files.
* LLRs are natural-log ``log P(0)/P(1)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numba as nb
import numpy as np

from .gf2core import crossover, from_hex, to_hex

CODE_FORMAT_VERSION = 1


class NotPowerOfTwo(ValueError):
    pass


class FrozenLengthMismatch(ValueError):
    pass


def _log2_exact(n: int) -> int:
    if n < 1 or n & (n - 1):
        raise NotPowerOfTwo(f"length {n} is not a power of two")
    return n.bit_length() - 1


# ---------------------------------------------------------------------------
# transform


@nb.njit(cache=True)
def _transform_rows(x):
    rows, n = x.shape
    h = 1
    while h < n:
        for r in range(rows):
            for start in range(0, n, 2 * h):
                for j in range(start, start + h):
                    x[r, j] ^= x[r, j + h]
        h *= 2
    # in place, no return: boxing a returned array fails when this overload was
    # first compiled (and cached) as a callee of another jitted function


def polar_transform(u: np.ndarray) -> np.ndarray:
    """Apply ``F^{(x)m}`` to a word or to each row of a 2-D batch. Self-inverse."""
    u = np.asarray(u, dtype=np.uint8)
    _log2_exact(u.shape[-1])
    x = np.array(u, dtype=np.uint8, ndmin=2, copy=True)
    _transform_rows(x)
    return x.reshape(u.shape)


# ---------------------------------------------------------------------------
# construction


def bhattacharyya_log(n: int, design_p: float) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(log Z_i, log(1 - Z_i))`` for every synthesized channel.

    Both logs are carried through the recursion so that neither end of the
    range loses precision: ``1 - (1-Z)^2 = Z (2 - Z)`` and ``1 - Z^2 = (1-Z)(1+Z)``.
    """
    m = _log2_exact(n)
    p = crossover(design_p)
    z0 = 2.0 * math.sqrt(p * (1.0 - p))
    with np.errstate(divide="ignore"):
        lz = np.array([np.log(z0)])
        lw = np.array([np.log1p(-z0)])
        for _ in range(m):
            # clamp rounding drift so that Z stays in [0, 1]
            minus_lz = np.minimum(lz + np.log1p(np.exp(lw)), 0.0)
            minus_lw = 2.0 * lw
            plus_lz = 2.0 * lz
            plus_lw = np.minimum(lw + np.log1p(np.exp(lz)), 0.0)
            lz = np.stack([minus_lz, plus_lz], axis=1).ravel()
            lw = np.stack([minus_lw, plus_lw], axis=1).ravel()
    return lz, lw


def bhattacharyya(n: int, design_p: float) -> np.ndarray:
    return np.exp(bhattacharyya_log(n, design_p)[0])


def construct_reliabilities(n: int, design_p: float) -> np.ndarray:
    """Indices sorted from least to most reliable (largest Z first, ties by index)."""
    lz, _ = bhattacharyya_log(n, design_p)
    idx = np.arange(n)
    return np.lexsort((idx, -lz)).astype(np.int64)


# ---------------------------------------------------------------------------
# code description


@dataclass(frozen=True)
class PolarCodePair:
    """Nested polar codes ``C subset C1`` sharing a reliability order.

    ``F`` is the frozen set of ``C``, ``F1`` the frozen set of ``C1`` (values
    ``V``), and ``Fw = F \\ F1`` carries the helper data. All sets are sorted
    0-based index arrays.
    """

    n: int
    design_p: float
    reliability_order: np.ndarray
    F: np.ndarray
    F1: np.ndarray
    V: np.ndarray = field(default=None)

    def __post_init__(self):
        _log2_exact(self.n)
        F = np.unique(np.asarray(self.F, dtype=np.int64))
        F1 = np.unique(np.asarray(self.F1, dtype=np.int64))
        object.__setattr__(self, "F", F)
        object.__setattr__(self, "F1", F1)
        object.__setattr__(self, "reliability_order", np.asarray(self.reliability_order, dtype=np.int64))
        V = np.zeros(F1.size, dtype=np.uint8) if self.V is None else np.asarray(self.V, dtype=np.uint8)
        object.__setattr__(self, "V", V)
        if not np.isin(F1, F).all():
            raise ValueError("F1 must be a subset of F")
        if V.size != F1.size:
            raise FrozenLengthMismatch(f"|V| = {V.size} but |F1| = {F1.size}")
        if sorted(self.reliability_order.tolist()) != list(range(self.n)):
            raise ValueError("reliability_order must be a permutation of 0..n-1")

    @classmethod
    def from_rate(cls, n: int, message_len: int, design_p: float, m1: int | None = None) -> "PolarCodePair":
        """Freeze the ``n - message_len`` least reliable indices; ``F1`` is the
        ``m1`` least reliable of those (defaults to ``F1 = F``)."""
        order = construct_reliabilities(n, design_p)
        F = np.sort(order[: n - message_len])
        m1 = n - message_len if m1 is None else m1
        F1 = np.sort(order[:m1])
        return cls(n, float(design_p), order, F, F1)

    @property
    def Fw(self) -> np.ndarray:
        return np.setdiff1d(self.F, self.F1)

    @property
    def info(self) -> np.ndarray:
        return np.setdiff1d(np.arange(self.n), self.F)

    @property
    def m1(self) -> int:
        return int(self.F1.size)

    @property
    def m2(self) -> int:
        return int(self.F.size - self.F1.size)

    @property
    def message_len(self) -> int:
        return int(self.n - self.F.size)

    def with_f1(self, F1: np.ndarray) -> "PolarCodePair":
        F1 = np.sort(np.asarray(F1, dtype=np.int64))
        V = np.zeros(F1.size, dtype=np.uint8)
        return PolarCodePair(self.n, self.design_p, self.reliability_order, self.F, F1, V)

    def frozen_mask(self, which: str = "C") -> np.ndarray:
        mask = np.zeros(self.n, dtype=np.uint8)
        mask[self.F if which == "C" else self.F1] = 1
        return mask

    def to_dict(self) -> dict:
        return {
            "format": "wzkey.polar-code",
            "version": CODE_FORMAT_VERSION,
            "bit_order": "natural",
            "n": self.n,
            "design_p": self.design_p,
            "reliability_order": (self.reliability_order + 1).tolist(),
            "F": (self.F + 1).tolist(),
            "F1": (self.F1 + 1).tolist(),
            "V": to_hex(self.V),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PolarCodePair":
        if d.get("version") != CODE_FORMAT_VERSION:
            raise ValueError(f"unsupported code file version {d.get('version')}")
        F1 = np.asarray(d["F1"], dtype=np.int64) - 1
        return cls(
            int(d["n"]),
            float(d["design_p"]),
            np.asarray(d["reliability_order"], dtype=np.int64) - 1,
            np.asarray(d["F"], dtype=np.int64) - 1,
            F1,
            from_hex(d["V"], F1.size),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, s: str) -> "PolarCodePair":
        return cls.from_dict(json.loads(s))


def encode(code: PolarCodePair, message: np.ndarray, helper: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Scatter ``V``, helper bits and the message into ``u`` and transform it."""
    u = scatter(code, message, helper)
    return u, polar_transform(u)


def scatter(code: PolarCodePair, S: np.ndarray, W: np.ndarray | None = None, V: np.ndarray | None = None) -> np.ndarray:
    """Place key, helper and frozen values at their indices; rows of ``S`` give a batch."""
    S = np.asarray(S, dtype=np.uint8)
    u = np.zeros(S.shape[:-1] + (code.n,), dtype=np.uint8)
    u[..., code.F1] = code.V if V is None else V
    if W is not None:
        u[..., code.Fw] = W
    u[..., code.info] = S
    return u


def extract_helper_and_key(u: np.ndarray, code: PolarCodePair) -> tuple[np.ndarray, np.ndarray]:
    """Helper ``W = u[Fw]`` and key ``S = u[info]``, both in ascending index order."""
    u = np.asarray(u, dtype=np.uint8)
    if u.shape[-1] != code.n:
        raise ValueError(f"expected {code.n} bits, got {u.shape[-1]}")
    return u[..., code.Fw].copy(), u[..., code.info].copy()


# ---------------------------------------------------------------------------
# SC / SCL kernels

# clip for "infinite" LLRs so that f() never sees inf - inf
LLR_CLIP = 1e100


@nb.njit(inline="always")
def _f_exact(a, b):
    s = 1.0
    if a < 0.0:
        s = -s
    if b < 0.0:
        s = -s
    aa = abs(a)
    bb = abs(b)
    mn = aa if aa < bb else bb
    return s * mn + math.log1p(math.exp(-abs(a + b))) - math.log1p(math.exp(-abs(a - b)))


@nb.njit(inline="always")
def _f_minsum(a, b):
    s = 1.0
    if a < 0.0:
        s = -s
    if b < 0.0:
        s = -s
    aa = abs(a)
    bb = abs(b)
    return s * (aa if aa < bb else bb)


@nb.njit(inline="always")
def _penalty(llr, u, exact):
    # -log P(u | llr), up to a constant shared by all paths
    x = llr if u == 0 else -llr
    if exact:
        if x > 0.0:
            return math.log1p(math.exp(-x))
        return -x + math.log1p(math.exp(x))
    return -x if x < 0.0 else 0.0


@nb.njit(cache=True)
def _leaf_llr(i, m, chan, P, B, exact):
    # Stage s occupies P[2**s - 1 : 2**(s+1) - 1]; stage m is the channel.
    if i == 0:
        top = m - 1
    else:
        t = 0
        while ((i >> t) & 1) == 0:
            t += 1
        half = 1 << t
        off = half - 1
        if t + 1 == m:
            for j in range(half):
                a = chan[j]
                b = chan[j + half]
                P[off + j] = b - a if B[off + j] else b + a
        else:
            poff = 2 * half - 1
            for j in range(half):
                a = P[poff + j]
                b = P[poff + j + half]
                P[off + j] = b - a if B[off + j] else b + a
        top = t - 1
    for s in range(top, -1, -1):
        half = 1 << s
        off = half - 1
        if s + 1 == m:
            for j in range(half):
                if exact:
                    P[off + j] = _f_exact(chan[j], chan[j + half])
                else:
                    P[off + j] = _f_minsum(chan[j], chan[j + half])
        else:
            poff = 2 * half - 1
            for j in range(half):
                if exact:
                    P[off + j] = _f_exact(P[poff + j], P[poff + j + half])
                else:
                    P[off + j] = _f_minsum(P[poff + j], P[poff + j + half])
    return P[0]


@nb.njit(cache=True)
def _update_partial(i, m, u, B, c0, c1):
    # c0/c1 are scratch buffers of length n; walk up while the node is a right child
    c0[0] = u
    s = 0
    cur = c0
    nxt = c1
    while s < m and ((i >> s) & 1) == 1:
        half = 1 << s
        off = half - 1
        for j in range(half):
            nxt[j] = B[off + j] ^ cur[j]
            nxt[j + half] = cur[j]
        tmp = cur
        cur = nxt
        nxt = tmp
        s += 1
    if s < m:
        half = 1 << s
        off = half - 1
        for j in range(half):
            B[off + j] = cur[j]


@nb.njit(cache=True)
def _genie_leaf_llrs(chans, exact):
    # SC with every bit frozen to its true value 0: the synthesized-channel LLRs
    trials, n = chans.shape
    m = 0
    while (1 << m) < n:
        m += 1
    P = np.zeros(n)
    B = np.zeros(n, dtype=np.uint8)
    c0 = np.zeros(n, dtype=np.uint8)
    c1 = np.zeros(n, dtype=np.uint8)
    out = np.zeros((trials, n))
    for t in range(trials):
        for i in range(n):
            out[t, i] = _leaf_llr(i, m, chans[t], P, B, exact)
            _update_partial(i, m, 0, B, c0, c1)
    return out


# The list decoder shares stage arrays between paths (copy-on-write with
# reference counts). Stage s of pool slot k lives at P[k, 2**s - 1 : 2**(s+1) - 1];
# path l uses slot idx[l, s]. Every write replaces a whole stage array, so a
# shared array is never copied, only re-pointed.


@nb.njit(inline="always")
def _writable(l, s, idx, ref, free, nfree):
    k = idx[l, s]
    if ref[s, k] == 1:
        return k
    ref[s, k] -= 1
    nfree[s] -= 1
    k2 = free[s, nfree[s]]
    ref[s, k2] = 1
    idx[l, s] = k2
    return k2


@nb.njit(inline="always")
def _release(l, m, idx, ref, free, nfree):
    for s in range(m):
        k = idx[l, s]
        ref[s, k] -= 1
        if ref[s, k] == 0:
            free[s, nfree[s]] = k
            nfree[s] += 1


@nb.njit(inline="always")
def _share(src, dst, m, idx, ref):
    for s in range(m):
        k = idx[src, s]
        idx[dst, s] = k
        ref[s, k] += 1


@nb.njit(cache=True)
def _list_leaf_llr(i, m, l, chan, P, B, iP, rP, fP, nfP, iB, exact):
    if i == 0:
        top = m - 1
    else:
        t = 0
        while ((i >> t) & 1) == 0:
            t += 1
        half = 1 << t
        off = half - 1
        kb = iB[l, t]
        k = _writable(l, t, iP, rP, fP, nfP)
        if t + 1 == m:
            for j in range(half):
                a = chan[j]
                b = chan[j + half]
                P[k, off + j] = b - a if B[kb, off + j] else b + a
        else:
            kp = iP[l, t + 1]
            poff = 2 * half - 1
            for j in range(half):
                a = P[kp, poff + j]
                b = P[kp, poff + j + half]
                P[k, off + j] = b - a if B[kb, off + j] else b + a
        top = t - 1
    for s in range(top, -1, -1):
        half = 1 << s
        off = half - 1
        k = _writable(l, s, iP, rP, fP, nfP)
        if s + 1 == m:
            for j in range(half):
                if exact:
                    P[k, off + j] = _f_exact(chan[j], chan[j + half])
                else:
                    P[k, off + j] = _f_minsum(chan[j], chan[j + half])
        else:
            kp = iP[l, s + 1]
            poff = 2 * half - 1
            for j in range(half):
                if exact:
                    P[k, off + j] = _f_exact(P[kp, poff + j], P[kp, poff + j + half])
                else:
                    P[k, off + j] = _f_minsum(P[kp, poff + j], P[kp, poff + j + half])
    return P[iP[l, 0], 0]


@nb.njit(cache=True)
def _list_update_partial(i, m, l, u, B, iB, rB, fB, nfB, c0, c1):
    c0[0] = u
    s = 0
    cur = c0
    nxt = c1
    while s < m and ((i >> s) & 1) == 1:
        half = 1 << s
        off = half - 1
        kb = iB[l, s]
        for j in range(half):
            nxt[j] = B[kb, off + j] ^ cur[j]
            nxt[j + half] = cur[j]
        tmp = cur
        cur = nxt
        nxt = tmp
        s += 1
    if s < m:
        half = 1 << s
        off = half - 1
        k = _writable(l, s, iB, rB, fB, nfB)
        for j in range(half):
            B[k, off + j] = cur[j]


@nb.njit(cache=True)
def _scl_one(chan, frozen, fvals, L, exact, P, B, iP, rP, fP, nfP, iB, rB, fB, nfB,
             hist_par, hist_bit, PM, c0, c1):
    n = chan.size
    m = 0
    while (1 << m) < n:
        m += 1
    # reset pools: path 0 owns slot 0 at every stage
    for s in range(m):
        for k in range(L):
            rP[s, k] = 0
            rB[s, k] = 0
        nfP[s] = 0
        nfB[s] = 0
        for k in range(L - 1, 0, -1):
            fP[s, nfP[s]] = k
            nfP[s] += 1
            fB[s, nfB[s]] = k
            nfB[s] += 1
        rP[s, 0] = 1
        rB[s, 0] = 1
        iP[0, s] = 0
        iB[0, s] = 0
    nact = 1
    PM[0] = 0.0
    leaf = np.empty(L)
    cand = np.empty(2 * L)
    survive = np.zeros((L, 2), dtype=np.uint8)
    slot_free = np.empty(L, dtype=np.int64)
    for i in range(n):
        for l in range(nact):
            leaf[l] = _list_leaf_llr(i, m, l, chan, P, B, iP, rP, fP, nfP, iB, exact)
        if frozen[i]:
            v = fvals[i]
            for l in range(nact):
                PM[l] += _penalty(leaf[l], v, exact)
                hist_par[i, l] = l
                hist_bit[i, l] = v
                _list_update_partial(i, m, l, v, B, iB, rB, fB, nfB, c0, c1)
            continue
        for l in range(nact):
            cand[2 * l] = PM[l] + _penalty(leaf[l], 0, exact)
            cand[2 * l + 1] = PM[l] + _penalty(leaf[l], 1, exact)
        ncand = 2 * nact
        if ncand <= L:
            for l in range(nact):
                dst = nact + l
                _share(l, dst, m, iP, rP)
                _share(l, dst, m, iB, rB)
                PM[dst] = cand[2 * l + 1]
                hist_par[i, dst] = l
                hist_bit[i, dst] = 1
                PM[l] = cand[2 * l]
                hist_par[i, l] = l
                hist_bit[i, l] = 0
            nact = ncand
        else:
            order = np.argsort(cand[:ncand], kind="mergesort")
            for l in range(nact):
                survive[l, 0] = 0
                survive[l, 1] = 0
            for k in range(L):
                c = order[k]
                survive[c >> 1, c & 1] = 1
            nfree = 0
            for l in range(L - 1, nact - 1, -1):
                slot_free[nfree] = l
                nfree += 1
            for l in range(nact - 1, -1, -1):
                if survive[l, 0] == 0 and survive[l, 1] == 0:
                    _release(l, m, iP, rP, fP, nfP)
                    _release(l, m, iB, rB, fB, nfB)
                    slot_free[nfree] = l
                    nfree += 1
            for l in range(nact):
                if survive[l, 0] == 1 and survive[l, 1] == 1:
                    nfree -= 1
                    dst = slot_free[nfree]
                    _share(l, dst, m, iP, rP)
                    _share(l, dst, m, iB, rB)
                    PM[dst] = cand[2 * l + 1]
                    hist_par[i, dst] = l
                    hist_bit[i, dst] = 1
                    PM[l] = cand[2 * l]
                    hist_par[i, l] = l
                    hist_bit[i, l] = 0
                elif survive[l, 0] == 1:
                    PM[l] = cand[2 * l]
                    hist_par[i, l] = l
                    hist_bit[i, l] = 0
                elif survive[l, 1] == 1:
                    PM[l] = cand[2 * l + 1]
                    hist_par[i, l] = l
                    hist_bit[i, l] = 1
            nact = L
        for l in range(nact):
            _list_update_partial(i, m, l, hist_bit[i, l], B, iB, rB, fB, nfB, c0, c1)
    return nact


@nb.njit(cache=True)
def _backtrack(l, hist_par, hist_bit, out):
    n = out.size
    for i in range(n - 1, -1, -1):
        out[i] = hist_bit[i, l]
        l = hist_par[i, l]


@nb.njit(cache=True)
def _scl_batch(chans, frozen, fvals, L, exact, pick_nearest, targets, out_u, out_pm):
    trials, n = chans.shape
    m = 0
    while (1 << m) < n:
        m += 1
    mm = max(m, 1)
    P = np.zeros((L, n))
    B = np.zeros((L, n), dtype=np.uint8)
    iP = np.zeros((L, mm), dtype=np.int64)
    iB = np.zeros((L, mm), dtype=np.int64)
    rP = np.zeros((mm, L), dtype=np.int64)
    rB = np.zeros((mm, L), dtype=np.int64)
    fP = np.zeros((mm, L), dtype=np.int64)
    fB = np.zeros((mm, L), dtype=np.int64)
    nfP = np.zeros(mm, dtype=np.int64)
    nfB = np.zeros(mm, dtype=np.int64)
    hist_par = np.zeros((n, L), dtype=np.int64)
    hist_bit = np.zeros((n, L), dtype=np.uint8)
    PM = np.zeros(L)
    c0 = np.zeros(n, dtype=np.uint8)
    c1 = np.zeros(n, dtype=np.uint8)
    u = np.zeros(n, dtype=np.uint8)
    x = np.zeros((1, n), dtype=np.uint8)
    for t in range(trials):
        nact = _scl_one(chans[t], frozen, fvals[t], L, exact, P, B, iP, rP, fP, nfP, iB, rB, fB, nfB,
                        hist_par, hist_bit, PM, c0, c1)
        best = 0
        if pick_nearest:
            bestd = n + 1
            for l in range(nact):
                _backtrack(l, hist_par, hist_bit, u)
                x[0, :] = u
                _transform_rows(x)
                d = 0
                for j in range(n):
                    d += x[0, j] ^ targets[t, j]
                if d < bestd:
                    bestd = d
                    best = l
        else:
            for l in range(1, nact):
                if PM[l] < PM[best]:
                    best = l
        _backtrack(best, hist_par, hist_bit, u)
        out_u[t, :] = u
        for l in range(L):
            out_pm[t, l] = PM[l] if l < nact else np.inf


def bsc_llr(y: np.ndarray, p: float) -> np.ndarray:
    """Channel LLRs for BSC(p) observations; ``p = 0`` gives clipped infinities."""
    p = crossover(p)
    mag = LLR_CLIP if p == 0.0 else math.log((1.0 - p) / p)
    return (1.0 - 2.0 * np.asarray(y, dtype=np.float64)) * mag


def _frozen_rows(frozen_vals, frozen_idx, n, trials):
    fv = np.zeros((trials, n), dtype=np.uint8)
    frozen_vals = np.asarray(frozen_vals, dtype=np.uint8)
    if frozen_vals.ndim == 1:
        frozen_vals = np.broadcast_to(frozen_vals, (trials, frozen_idx.size))
    fv[:, frozen_idx] = frozen_vals
    return fv


def scl_decode(
    llr: np.ndarray,
    code: PolarCodePair,
    frozen_vals: np.ndarray,
    list_size: int = 8,
    which: str = "C",
    exact: bool = True,
) -> tuple[np.ndarray, np.ndarray]:
    """SCL decode one word (1-D ``llr``) or a batch (2-D, one word per row).

    ``frozen_vals`` holds the values at ``F`` (``which="C"``) or at ``F1``
    (``which="C1"``), in ascending index order; a 2-D array gives per-row
    values. Returns ``(u_hat, path_metrics)``; the selected path has the
    smallest metric, ties going to the lower path slot. ``list_size=1`` is
    plain successive cancellation.
    """
    if list_size < 1:
        raise ValueError("list_size must be >= 1")
    idx = code.F if which == "C" else code.F1
    fvals = np.asarray(frozen_vals, dtype=np.uint8)
    if fvals.shape[-1] != idx.size:
        raise FrozenLengthMismatch(f"expected {idx.size} frozen values, got {fvals.shape[-1]}")
    single = np.ndim(llr) == 1
    chans = np.clip(np.array(llr, dtype=np.float64, ndmin=2), -LLR_CLIP, LLR_CLIP)
    trials = chans.shape[0]
    mask = np.zeros(code.n, dtype=np.uint8)
    mask[idx] = 1
    fv = _frozen_rows(fvals, idx, code.n, trials)
    out_u = np.zeros((trials, code.n), dtype=np.uint8)
    out_pm = np.zeros((trials, list_size))
    dummy = np.zeros((1, 1), dtype=np.uint8)
    _scl_batch(chans, mask, fv, int(list_size), bool(exact), False, dummy, out_u, out_pm)
    if single:
        return out_u[0], out_pm[0]
    return out_u, out_pm


def sc_decode_reference(llr: np.ndarray, frozen_mask: np.ndarray, frozen_vals: np.ndarray, exact: bool = True) -> np.ndarray:
    """Plain recursive successive-cancellation decoder (slow, used as an oracle).

    ``frozen_vals`` is a full length-n array; only entries under the mask are read.
    """
    f = _f_exact if exact else _f_minsum
    frozen_mask = np.asarray(frozen_mask, dtype=bool)
    frozen_vals = np.asarray(frozen_vals, dtype=np.uint8)
    u_hat = np.zeros(frozen_mask.size, dtype=np.uint8)

    def rec(lam, lo):
        size = lam.size
        if size == 1:
            if frozen_mask[lo]:
                u = int(frozen_vals[lo])
            else:
                u = 0 if lam[0] >= 0 else 1
            u_hat[lo] = u
            return np.array([u], dtype=np.uint8)
        h = size // 2
        a, b = lam[:h], lam[h:]
        left = rec(np.array([f(a[j], b[j]) for j in range(h)]), lo)
        right = rec(b + (1 - 2 * left.astype(np.float64)) * a, lo + h)
        return np.concatenate([left ^ right, right])

    rec(np.clip(np.asarray(llr, dtype=np.float64), -LLR_CLIP, LLR_CLIP), 0)
    return u_hat


def construct_montecarlo(n: int, design_p: float, trials: int = 2000, seed=0, exact: bool = True) -> np.ndarray:
    """Reliability order from a genie-aided Monte-Carlo run over BSC(``design_p``).

    The all-zero word is sent, every earlier bit is given to the decoder, and
    each synthesized channel is scored by its mean conditional entropy
    ``E[log2(1 + exp(-L_i))]``. Returns indices from least to most reliable
    (ties by index).
    """
    from .gf2core import bernoulli

    _log2_exact(n)
    p = crossover(design_p)
    if p == 0.0:
        return np.arange(n, dtype=np.int64)
    z = bernoulli(n, p, seed, size=trials)
    chans = (1.0 - 2.0 * z) * math.log((1.0 - p) / p)
    lv = np.clip(_genie_leaf_llrs(chans, bool(exact)), -700.0, 700.0)
    ent = np.logaddexp(0.0, -lv).mean(axis=0) / math.log(2.0)
    return np.lexsort((np.arange(n), -ent)).astype(np.int64)


def quantize(
    x: np.ndarray,
    code: PolarCodePair,
    V: np.ndarray | None = None,
    q_design: float = 0.1,
    list_size: int = 8,
    exact: bool = True,
) -> tuple[np.ndarray, np.ndarray, np.ndarray | float]:
    """Quantize ``x`` to a codeword of ``C1`` by SCL decoding.

    ``x`` is treated as the output of BSC(``q_design``). Among the surviving
    list paths the one whose codeword is nearest to ``x`` in Hamming distance
    is kept (ties to the lower path slot). Accepts a single word or a batch of
    rows; returns ``(u, x_q, distortion)`` with distortion ``d_H(x, x_q)/n``.
    """
    x = np.asarray(x, dtype=np.uint8)
    single = x.ndim == 1
    X = np.array(x, ndmin=2, dtype=np.uint8)
    trials = X.shape[0]
    V = code.V if V is None else np.asarray(V, dtype=np.uint8)
    if V.shape[-1] != code.F1.size:
        raise FrozenLengthMismatch(f"expected {code.F1.size} values for F1, got {V.shape[-1]}")
    q = crossover(q_design)
    if q == 0.0:
        raise ValueError("q_design must be positive")
    chans = np.clip(bsc_llr(X, q), -LLR_CLIP, LLR_CLIP)
    mask = code.frozen_mask("C1")
    fv = _frozen_rows(V, code.F1, code.n, trials)
    out_u = np.zeros((trials, code.n), dtype=np.uint8)
    out_pm = np.zeros((trials, list_size))
    _scl_batch(chans, mask, fv, int(list_size), bool(exact), True, X, out_u, out_pm)
    xq = polar_transform(out_u)
    dist = np.count_nonzero(xq ^ X, axis=1) / code.n
    if single:
        return out_u[0], xq[0], float(dist[0])
    return out_u, xq, dist
