"""Nested random linear codes for key agreement at small block lengths.

``C1`` is the null space of ``H1`` and ``C`` the null space of ``H = [H1; H2]``,
so ``C`` is a subcode of ``C1`` and ``H2`` indexes the cosets of ``C`` inside
``C1``. Enrollment quantizes ``x`` to the nearest codeword ``x_q`` of ``C1``,
stores ``W = x_q H2^T`` and derives the key from the member of ``C`` in the
coset of ``x_q``. Reconstruction is syndrome decoding of ``C`` with the
helper-shifted syndrome.

Words are handled both as bit arrays and as integers (first bit most
significant), so integer order is lexicographic order. Everything here is
exhaustive: coset tables over all ``2**n`` words and leakage audits over the
exact joint distribution.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numba as nb
import numpy as np

from .gf2core import (
    LengthMismatch,
    SeedSpec,
    all_words,
    crossover,
    from_hex,
    mat_vec,
    null_space,
    pack_int,
    random_full_rank_parity,
    rank,
    rref,
    to_hex,
    xor,
)

TABLE_LIMIT = 24
AUDIT_LIMIT = 20
VQ_LIMIT = 22


class TooLarge(ValueError):
    pass


class InconsistentCoset(RuntimeError):
    pass


@nb.njit(cache=True)
def _popcount(x):
    c = 0
    while x:
        x &= x - 1
        c += 1
    return c


@nb.njit(cache=True)
def _leader_table(colsyn, n, m):
    # first word (in integer order) of minimum weight for every syndrome
    N = 1 << n
    syn = np.zeros(N, dtype=np.int64)
    best = np.full(1 << m, -1, dtype=np.int64)
    bestw = np.full(1 << m, n + 1, dtype=np.int64)
    for w in range(N):
        if w > 0:
            low = w & (-w)
            j = 0
            while (low >> j) != 1:
                j += 1
            syn[w] = syn[w & (w - 1)] ^ colsyn[j]
        s = syn[w]
        c = _popcount(w)
        if c < bestw[s]:
            bestw[s] = c
            best[s] = w
    return best


@nb.njit(cache=True)
def _span(gen_ints):
    k = gen_ints.size
    out = np.zeros(1 << k, dtype=np.int64)
    for i in range(1, 1 << k):
        low = i & (-i)
        j = 0
        while (low >> j) != 1:
            j += 1
        out[i] = out[i & (i - 1)] ^ gen_ints[j]
    return out


@nb.njit(cache=True)
def _nearest(xs, cws):
    # cws sorted ascending, so the first minimum is the lexicographically smallest
    out = np.empty(xs.size, dtype=np.int64)
    for t in range(xs.size):
        x = xs[t]
        bd = 1 << 62
        bc = 0
        for c in cws:
            d = _popcount(x ^ c)
            if d < bd:
                bd = d
                bc = c
        out[t] = bc
    return out


def _ints(rows: np.ndarray) -> np.ndarray:
    rows = np.atleast_2d(np.asarray(rows, dtype=np.int64))
    n = rows.shape[1]
    w = 1 << np.arange(n - 1, -1, -1, dtype=np.int64)
    return rows @ w


def _words(ints: np.ndarray, n: int) -> np.ndarray:
    ints = np.asarray(ints, dtype=np.int64)
    shifts = np.arange(n - 1, -1, -1, dtype=np.int64)
    return ((ints[..., None] >> shifts) & 1).astype(np.uint8)


@dataclass(frozen=True)
class NestedLinearCode:
    """``C`` (parity checks ``H = [H1; H2]``) nested in ``C1`` (parity checks ``H1``)."""

    n: int
    m1: int
    m2: int
    H1: np.ndarray
    H2: np.ndarray
    G: np.ndarray
    pivots: np.ndarray
    leaders: np.ndarray
    c1_words: np.ndarray | None

    @property
    def H(self) -> np.ndarray:
        return np.concatenate([self.H1, self.H2], axis=0)

    @property
    def k(self) -> int:
        return self.n - self.m1 - self.m2

    def syndrome(self, v: np.ndarray) -> np.ndarray:
        return mat_vec(v, self.H)

    def leader(self, s: np.ndarray) -> np.ndarray:
        """Coset leader ``f_C(s)`` for an ``(m1 + m2)``-bit syndrome."""
        s = np.asarray(s, dtype=np.uint8)
        if s.shape[-1] != self.m1 + self.m2:
            raise LengthMismatch(f"syndrome needs {self.m1 + self.m2} bits")
        idx = _ints(s) if s.ndim > 1 else np.array([pack_int(s)])
        w = self.leaders[idx]
        if (w < 0).any():
            raise InconsistentCoset("syndrome has no leader; H is rank deficient")
        out = _words(w, self.n)
        return out if s.ndim > 1 else out[0]

    def is_leader(self, e: np.ndarray) -> bool:
        e = np.asarray(e, dtype=np.uint8)
        return bool(self.leaders[pack_int(self.syndrome(e))] == pack_int(e))

    def to_dict(self) -> dict:
        return {
            "format": "wzkey.nested-linear-code",
            "version": 1,
            "n": self.n,
            "m1": self.m1,
            "m2": self.m2,
            "H1": [to_hex(r) for r in self.H1],
            "H2": [to_hex(r) for r in self.H2],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, d: dict) -> "NestedLinearCode":
        n = int(d["n"])
        H1 = np.array([from_hex(r, n) for r in d["H1"]], dtype=np.uint8).reshape(int(d["m1"]), n)
        H2 = np.array([from_hex(r, n) for r in d["H2"]], dtype=np.uint8).reshape(int(d["m2"]), n)
        return build_nested(n, int(d["m1"]), int(d["m2"]), H1=H1, H2=H2)

    @classmethod
    def from_json(cls, s: str) -> "NestedLinearCode":
        return cls.from_dict(json.loads(s))


def build_nested(n: int, m1: int, m2: int, seed: SeedSpec | int = 0, H1: np.ndarray | None = None,
                 H2: np.ndarray | None = None, table_limit: int = TABLE_LIMIT) -> NestedLinearCode:
    """Draw (or accept) full-rank ``H1``, ``H2`` and tabulate all coset leaders of ``C``.

    Without explicit matrices the stack ``H`` is one uniformly drawn full-rank
    ``(m1 + m2) x n`` matrix split after row ``m1``.
    """
    if m1 < 0 or m2 < 0 or m1 + m2 >= n:
        raise ValueError("need m1, m2 >= 0 and m1 + m2 < n")
    if n > table_limit:
        raise TooLarge(f"coset table for n = {n} exceeds the limit n <= {table_limit}")
    if H1 is None or H2 is None:
        H = random_full_rank_parity(n, m1 + m2, seed)
        H1 = H[:m1] if H1 is None else np.asarray(H1, dtype=np.uint8)
        H2 = H[m1:] if H2 is None else np.asarray(H2, dtype=np.uint8)
    H1 = np.asarray(H1, dtype=np.uint8).reshape(m1, n)
    H2 = np.asarray(H2, dtype=np.uint8).reshape(m2, n)
    H = np.concatenate([H1, H2], axis=0)
    if rank(H) != m1 + m2:
        raise ValueError("the stacked parity-check matrix [H1; H2] must have full row rank")
    G = null_space(H)
    _, piv = rref(G)
    colsyn = _ints(H.T) if m1 + m2 else np.zeros(n, dtype=np.int64)
    # bit j of the integer word is position n-1-j
    colsyn = colsyn[::-1].copy()
    leaders = _leader_table(colsyn, n, m1 + m2)
    c1 = None
    if n - m1 <= VQ_LIMIT:
        G1 = null_space(H1) if m1 else np.eye(n, dtype=np.uint8)
        c1 = np.sort(_span(_ints(G1) if G1.shape[0] else np.zeros(0, dtype=np.int64)))
    return NestedLinearCode(n, m1, m2, H1, H2, G, np.asarray(piv, dtype=np.int64), leaders, c1)


def vq_nearest(x: np.ndarray, code: NestedLinearCode) -> tuple[np.ndarray, np.ndarray]:
    """Nearest codeword of ``C1`` (lexicographically smallest on ties) and ``e_q = x + x_q``.

    Accepts one word or a batch of rows.
    """
    if code.c1_words is None:
        raise TooLarge("C1 has too many codewords for exhaustive quantization")
    x = np.asarray(x, dtype=np.uint8)
    if x.shape[-1] != code.n:
        raise LengthMismatch(f"expected {code.n} bits")
    xi = _ints(x.reshape(-1, code.n))
    xq = _words(_nearest(xi, code.c1_words), code.n).reshape(x.shape)
    return xq, x ^ xq


@dataclass(frozen=True)
class KeyMaterial:
    S: np.ndarray
    W: np.ndarray
    pad: np.ndarray | None = None


def key_from_quantized(xq: np.ndarray, code: NestedLinearCode) -> KeyMaterial:
    """Helper ``W = x_q H2^T`` and the key of the member of ``C`` in the coset of ``x_q``."""
    xq = np.asarray(xq, dtype=np.uint8)
    W = mat_vec(xq, code.H2) if code.m2 else np.zeros(xq.shape[:-1] + (0,), dtype=np.uint8)
    s = np.concatenate([np.zeros(xq.shape[:-1] + (code.m1,), dtype=np.uint8), W], axis=-1)
    t = code.leader(s)
    xc = xq ^ t
    # G is in reduced echelon form, so S G = x_c reads S off the pivot columns
    S = xc[..., code.pivots]
    return KeyMaterial(S, W)


def coset_shift(xq: np.ndarray, code: NestedLinearCode) -> np.ndarray:
    """The minimum-weight word ``t`` with syndrome ``[0, W]``, so ``x_q + t`` lies in ``C``."""
    W = mat_vec(xq, code.H2)
    return code.leader(np.concatenate([np.zeros(code.m1, dtype=np.uint8), W]))


def encode_key(S: np.ndarray, code: NestedLinearCode) -> np.ndarray:
    return mat_vec(S, code.G, transpose=False)


def enroll_gs(x: np.ndarray, code: NestedLinearCode) -> KeyMaterial:
    xq, _ = vq_nearest(x, code)
    return key_from_quantized(xq, code)


def reconstruct_gs(y: np.ndarray, W: np.ndarray, code: NestedLinearCode) -> np.ndarray:
    """``x_q`` estimate ``y + f_C([0, W] + y H^T)``, then the key of that estimate."""
    y = np.asarray(y, dtype=np.uint8)
    W = np.asarray(W, dtype=np.uint8)
    if y.shape[-1] != code.n or W.shape[-1] != code.m2:
        raise LengthMismatch("y must have n bits and W m2 bits")
    shift = np.concatenate([np.zeros(W.shape[:-1] + (code.m1,), dtype=np.uint8), W], axis=-1)
    xq_hat = y ^ code.leader(shift ^ code.syndrome(y))
    return key_from_quantized(xq_hat, code).S


def cs_pad(S: np.ndarray, S_prime: np.ndarray) -> np.ndarray:
    """Public pad ``S + S'`` appended to the helper data in the chosen-secret model."""
    return xor(S, S_prime)


def cs_unpad(S_hat: np.ndarray, pad: np.ndarray) -> np.ndarray:
    return xor(S_hat, pad)


def enroll_cs(x: np.ndarray, code: NestedLinearCode, S_prime: np.ndarray) -> KeyMaterial:
    km = enroll_gs(x, code)
    if np.shape(S_prime)[-1] != km.S.shape[-1]:
        raise LengthMismatch("S' must have the key length")
    return KeyMaterial(km.S, km.W, cs_pad(km.S, S_prime))


def reconstruct_cs(y: np.ndarray, W: np.ndarray, pad: np.ndarray, code: NestedLinearCode) -> np.ndarray:
    return cs_unpad(reconstruct_gs(y, W, code), pad)


def enroll_hidden(x_tilde: np.ndarray, code: NestedLinearCode) -> KeyMaterial:
    """Enrollment from the encoder's noisy measurement; ``e_q`` is taken against ``x_tilde``."""
    return enroll_gs(x_tilde, code)


# ---------------------------------------------------------------------------
# exact audits


def _entropy(counts: np.ndarray) -> float:
    p = np.asarray(counts, dtype=float).ravel()
    p = p[p > 0]
    p = p / p.sum()
    return float(-(p * np.log2(p)).sum())


def _fwht(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    h = 1
    N = a.shape[-1]
    while h < N:
        a = a.reshape(a.shape[:-1] + (N // (2 * h), 2, h))
        x, y = a[..., 0, :].copy(), a[..., 1, :].copy()
        a[..., 0, :] = x + y
        a[..., 1, :] = x - y
        a = a.reshape(a.shape[:-3] + (N,))
        h *= 2
    return a


def enrollment_table(code: NestedLinearCode) -> tuple[np.ndarray, np.ndarray]:
    """Integer-coded ``(S, W)`` for every source word, in integer order of the word."""
    X = all_words(code.n)
    km = enroll_gs(X, code)
    return _ints(km.S) if code.k else np.zeros(len(X), dtype=np.int64), \
        _ints(km.W) if code.m2 else np.zeros(len(X), dtype=np.int64)


def audit_leakage(code: NestedLinearCode, channel: float = 0.0, mode: str = "GS",
                  limit: int = AUDIT_LIMIT) -> dict:
    """Exact leakage quantities for a uniform source, by enumerating all ``2**n`` words.

    ``mode="GS"``: ``I(S;W)``, ``I(X;W) = H(W)``, ``H(S)``. ``mode="CS"``: the
    same plus ``I(S'; W, S + S')`` for a uniform chosen key ``S'``.
    ``mode="hidden"``: enrollment sees ``x_tilde = x + e`` with ``e`` i.i.d.
    Bernoulli(``channel``) and privacy leakage is ``I(X;W)`` for the hidden
    ``x``. Entropies in bits; ``*_rate`` entries are divided by n.
    """
    n = code.n
    if n > limit:
        raise TooLarge(f"exhaustive audit for n = {n} exceeds the limit n <= {limit}")
    if mode not in ("GS", "CS", "hidden"):
        raise ValueError("mode must be 'GS', 'CS' or 'hidden'")
    S, W = enrollment_table(code)
    k, m2 = code.k, code.m2
    joint = np.zeros((1 << k, 1 << m2))
    np.add.at(joint, (S, W), 1.0)
    H_S = _entropy(joint.sum(axis=1))
    H_W = _entropy(joint.sum(axis=0))
    H_SW = _entropy(joint)
    rep = {
        "mode": mode,
        "n": n,
        "m1": code.m1,
        "m2": m2,
        "key_bits": k,
        "enumerated": 1 << n,
        "H_S": H_S,
        "H_W": H_W,
        "I_S_W": H_S + H_W - H_SW,
        "I_X_W": H_W,
        "log_W": float(m2),
    }
    if mode == "CS":
        # S' uniform and independent of (S, W): I(S'; W, S+S') = k + H(W) - H(S, W)
        rep["I_Sp_Wp"] = k + H_W - H_SW
        rep["log_W"] = float(m2 + k)
        # given X, W is fixed and S + S' is uniform, so the pad adds no privacy leakage
        rep["I_X_W"] = H_W
    if mode == "hidden":
        p = crossover(channel)
        rep["p_e"] = p
        rep["I_X_W"] = _hidden_privacy(W, n, m2, p)
    for key in ("H_S", "H_W", "I_S_W", "I_X_W", "log_W") + (("I_Sp_Wp",) if mode == "CS" else ()):
        rep[key + "_rate"] = rep[key] / n
    return rep


def _hidden_privacy(W: np.ndarray, n: int, m2: int, p: float) -> float:
    """``I(X; W)`` when ``W`` is computed from ``x + e`` and ``X`` is uniform."""
    N = 1 << n
    wts = np.array([bin(i).count("1") for i in range(N)])
    noise = (p ** wts) * ((1 - p) ** (n - wts))
    nh = _fwht(noise)
    H_W_given_X = 0.0
    pw = np.zeros(1 << m2)
    for w in range(1 << m2):
        ind = (W == w).astype(float)
        # P(W = w | X = x) = sum_e P(e) [W(x + e) = w], a dyadic convolution
        cond = _fwht(_fwht(ind) * nh) / N
        cond = np.clip(cond, 0.0, 1.0)
        pw[w] = cond.mean()
        nz = cond > 0
        H_W_given_X -= float((cond[nz] * np.log2(cond[nz])).sum()) / N
    return _entropy(pw) - H_W_given_X
