"""End-to-end key agreement pipelines, helper-data bundles and baseline schemes.

Schemes
-------
* ``polar_gs`` / ``polar_cs``: nested polar codes (quantize with ``C1``, store
  the bits at ``Fw``, decode ``C`` with ``[V, W]`` frozen).
* ``linear_gs`` / ``linear_cs``: nested random linear codes from
  :mod:`wzkey.wz_linear`.
* ``fcs``: fuzzy commitment, ``W' = x + enc(S')``.
* ``cofe``: code-offset fuzzy extractor, offset with a random codeword and the
  key taken as a hash of ``x``.
* ``dithered_fcs``: fuzzy commitment with an extra Bernoulli(q) dither.

The chosen-secret variants store ``S + S'`` next to the generated-secret
helper data.
"""

from __future__ import annotations

import hashlib
import itertools
import struct
from dataclasses import dataclass

import numpy as np
from scipy.stats import beta

from .gf2core import LengthMismatch, SeedSpec, bernoulli, crossover, random_bits, rng, sample_bsc, xor
from .nested_design import DesignResult
from .polar import PolarCodePair, bsc_llr, extract_helper_and_key, quantize, scl_decode
from . import wz_linear

MAGIC = b"WZKB"
BUNDLE_VERSION = 1
SCHEMES = {"polar_gs": 0, "polar_cs": 1, "linear_gs": 2, "linear_cs": 3, "fcs": 4, "cofe": 5}
SCHEME_NAMES = {v: k for k, v in SCHEMES.items()}

# stream tags
TAG_SOURCE = 11
TAG_CHANNEL = 12
TAG_CHOSEN = 13
TAG_DITHER = 14
TAG_OFFSET = 15


class DigestMismatch(ValueError):
    pass


class BundleFormatError(ValueError):
    pass


def code_digest(code) -> bytes:
    """SHA-256 of the canonical JSON description of a code."""
    return hashlib.sha256(code.to_json().encode("utf-8")).digest()


def _pack_le(bits: np.ndarray) -> bytes:
    return np.packbits(np.asarray(bits, dtype=np.uint8), bitorder="little").tobytes()


def _unpack_le(raw: bytes, nbits: int) -> np.ndarray:
    return np.unpackbits(np.frombuffer(raw, dtype=np.uint8), bitorder="little")[:nbits].copy()


@dataclass(frozen=True)
class HelperBundle:
    """Public helper data with the digest of the code it was produced with."""

    scheme: str
    n: int
    W: np.ndarray
    digest: bytes
    pad: np.ndarray | None = None

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if len(self.digest) != 32:
            raise ValueError("digest must be 32 bytes")

    def to_bytes(self) -> bytes:
        W = np.asarray(self.W, dtype=np.uint8)
        pad = np.zeros(0, dtype=np.uint8) if self.pad is None else np.asarray(self.pad, dtype=np.uint8)
        out = [MAGIC, struct.pack("<BBII", BUNDLE_VERSION, SCHEMES[self.scheme], self.n, W.size), _pack_le(W),
               struct.pack("<I", pad.size), _pack_le(pad), self.digest]
        return b"".join(out)

    @classmethod
    def from_bytes(cls, raw: bytes) -> "HelperBundle":
        if raw[:4] != MAGIC:
            raise BundleFormatError("not a helper bundle (bad magic)")
        try:
            version, sid, n, wlen = struct.unpack_from("<BBII", raw, 4)
            if version != BUNDLE_VERSION:
                raise BundleFormatError(f"unsupported bundle version {version}")
            pos = 4 + 10
            wbytes = (wlen + 7) // 8
            W = _unpack_le(raw[pos:pos + wbytes], wlen)
            pos += wbytes
            (plen,) = struct.unpack_from("<I", raw, pos)
            pos += 4
            pbytes = (plen + 7) // 8
            pad = _unpack_le(raw[pos:pos + pbytes], plen)
            pos += pbytes
            digest = raw[pos:pos + 32]
        except struct.error as exc:
            raise BundleFormatError("truncated helper bundle") from exc
        if len(digest) != 32 or pos + 32 != len(raw) or W.size != wlen or pad.size != plen:
            raise BundleFormatError("truncated or oversized helper bundle")
        if sid not in SCHEME_NAMES:
            raise BundleFormatError(f"unknown scheme id {sid}")
        return cls(SCHEME_NAMES[sid], n, W, digest, pad if SCHEME_NAMES[sid].endswith("_cs") else None)


@dataclass
class TrialRecord:
    seed: tuple
    error: bool
    distortion: float | None
    helper_bits: int


# ---------------------------------------------------------------------------
# nested polar pipeline


def _frozen_values(code: PolarCodePair, W: np.ndarray) -> np.ndarray:
    """Values at ``F`` in ascending index order: ``V`` on ``F1`` and ``W`` on ``Fw``."""
    W = np.asarray(W, dtype=np.uint8)
    full = np.zeros(W.shape[:-1] + (code.n,), dtype=np.uint8)
    full[..., code.F1] = code.V
    full[..., code.Fw] = W
    return full[..., code.F]


def polar_enroll(x: np.ndarray, design: DesignResult, S_prime: np.ndarray | None = None,
                 list_size: int = 8) -> tuple[HelperBundle, np.ndarray]:
    """Quantize ``x`` with ``C1``; the helper data is ``u[Fw]`` and the key ``u`` off ``F``.

    With ``S_prime`` the chosen-secret bundle (pad ``S + S'``) is produced and
    ``S'`` is returned as the key.
    """
    code = design.code
    x = np.asarray(x, dtype=np.uint8)
    if x.shape != (code.n,):
        raise LengthMismatch(f"expected {code.n} bits")
    u, _, _ = quantize(x, code, q_design=design.Eq, list_size=list_size)
    W, S = extract_helper_and_key(u, code)
    if S_prime is None:
        return HelperBundle("polar_gs", code.n, W, code_digest(code)), S
    S_prime = np.asarray(S_prime, dtype=np.uint8)
    return HelperBundle("polar_cs", code.n, W, code_digest(code), xor(S, S_prime)), S_prime


def polar_decode(y: np.ndarray, W: np.ndarray, design: DesignResult, list_size: int = 8) -> np.ndarray:
    """Key estimate(s) from ``y`` and helper bits, min-sum SCL decoding of ``C``."""
    code = design.code
    fv = _frozen_values(code, W)
    llr = bsc_llr(y, min(max(design.p_c, 1e-6), 0.499))
    u, _ = scl_decode(llr, code, fv, list_size, which="C", exact=False)
    return u[..., code.info]


def polar_reconstruct(y: np.ndarray, bundle: HelperBundle, design: DesignResult, list_size: int = 8) -> np.ndarray:
    if bundle.digest != code_digest(design.code):
        raise DigestMismatch("helper bundle was produced with a different code")
    if not bundle.scheme.startswith("polar"):
        raise ValueError(f"bundle scheme {bundle.scheme} is not a polar scheme")
    S_hat = polar_decode(np.asarray(y, dtype=np.uint8), bundle.W, design, list_size)
    return xor(S_hat, bundle.pad) if bundle.scheme == "polar_cs" else S_hat


# ---------------------------------------------------------------------------
# nested linear pipeline


def linear_enroll(x: np.ndarray, code: wz_linear.NestedLinearCode,
                  S_prime: np.ndarray | None = None) -> tuple[HelperBundle, np.ndarray]:
    km = wz_linear.enroll_gs(x, code)
    if S_prime is None:
        return HelperBundle("linear_gs", code.n, km.W, code_digest(code)), km.S
    S_prime = np.asarray(S_prime, dtype=np.uint8)
    return HelperBundle("linear_cs", code.n, km.W, code_digest(code), wz_linear.cs_pad(km.S, S_prime)), S_prime


def linear_reconstruct(y: np.ndarray, bundle: HelperBundle, code: wz_linear.NestedLinearCode) -> np.ndarray:
    if bundle.digest != code_digest(code):
        raise DigestMismatch("helper bundle was produced with a different code")
    S_hat = wz_linear.reconstruct_gs(y, bundle.W, code)
    return wz_linear.cs_unpad(S_hat, bundle.pad) if bundle.scheme == "linear_cs" else S_hat


# ---------------------------------------------------------------------------
# Reed-Muller RM(2,5) and the repetition concatenation


def _rm25_generator() -> np.ndarray:
    # rows: 1, v1..v5, v_i v_j (i < j); position j carries the point v = bits of j
    pts = ((np.arange(32)[:, None] >> np.arange(5)) & 1).astype(np.uint8)
    rows = [np.ones(32, dtype=np.uint8)]
    rows += [pts[:, i] for i in range(5)]
    rows += [pts[:, i] & pts[:, j] for i, j in itertools.combinations(range(5), 2)]
    return np.array(rows, dtype=np.uint8)


RM25_G = _rm25_generator()


class _RM25Table:
    """Complete minimum-distance decoder of RM(2,5) by syndrome table.

    The code is self-dual, so its generator doubles as the parity-check
    matrix. Leaders are enumerated by increasing weight up to the covering
    radius 6 (the first pattern in combination order wins), which reaches all
    ``2**16`` syndromes.
    """

    _instance = None

    def __init__(self):
        G = RM25_G
        self.colsyn = (G.astype(np.int64) * (1 << np.arange(16, dtype=np.int64))[:, None]).sum(axis=0)
        table = np.full(1 << 16, -1, dtype=np.int64)
        for w in range(7):
            combs = _combinations_array(32, w)
            if combs.size == 0:
                syn = np.zeros(1, dtype=np.int64)
                pat = np.zeros(1, dtype=np.int64)
            else:
                syn = np.bitwise_xor.reduce(self.colsyn[combs], axis=1)
                pat = np.bitwise_or.reduce(np.int64(1) << combs.astype(np.int64), axis=1)
            first_syn, first_idx = np.unique(syn, return_index=True)
            new = table[first_syn] < 0
            table[first_syn[new]] = pat[first_idx[new]]
        if (table < 0).any():
            raise RuntimeError("RM(2,5) syndrome table incomplete")
        self.table = table
        # information set: the first 16 linearly independent columns
        from .gf2core import rref
        _, piv = rref(G)
        self.info = np.asarray(piv, dtype=np.int64)
        self.Ginv = _inverse_gf2(G[:, self.info])

    @classmethod
    def get(cls) -> "_RM25Table":
        if cls._instance is None:
            cls._instance = cls()
        return cls._instance


def _combinations_array(n: int, w: int) -> np.ndarray:
    if w == 0:
        return np.zeros((1, 0), dtype=np.int64)
    return np.array(list(itertools.combinations(range(n), w)), dtype=np.int64)


def _inverse_gf2(A: np.ndarray) -> np.ndarray:
    from .gf2core import rref
    k = A.shape[0]
    R, piv = rref(np.concatenate([A, np.eye(k, dtype=np.uint8)], axis=1))
    if piv[:k] != list(range(k)):
        raise ValueError("matrix is singular")
    return R[:, k:]


def rm25_encode(m: np.ndarray) -> np.ndarray:
    return (np.asarray(m, dtype=np.int64) @ RM25_G.astype(np.int64) % 2).astype(np.uint8)


def rm25_decode(r: np.ndarray) -> np.ndarray:
    """Exact minimum-distance decoding of RM(2,5) blocks (rows of 32 bits) to 16-bit messages."""
    t = _RM25Table.get()
    r = np.asarray(r, dtype=np.uint8)
    flat = r.reshape(-1, 32).astype(np.int64)
    syn = np.bitwise_xor.reduce(np.where(flat == 1, t.colsyn[None, :], 0), axis=1)
    e = ((t.table[syn][:, None] >> np.arange(32)) & 1).astype(np.uint8)
    c = flat.astype(np.uint8) ^ e
    m = (c[:, t.info].astype(np.int64) @ t.Ginv.astype(np.int64) % 2).astype(np.uint8)
    return m.reshape(r.shape[:-1] + (16,))


def _rm25_decode_erasures(r: np.ndarray, erased: np.ndarray, max_erasures: int = 12) -> np.ndarray:
    # minimum distance over the non-erased positions: try every filling of the erasures
    t = _RM25Table.get()
    out = np.zeros((r.shape[0], 16), dtype=np.uint8)
    for b in range(r.shape[0]):
        pos = np.flatnonzero(erased[b])
        if pos.size > max_erasures:
            pos = pos[:max_erasures]
        fills = ((np.arange(1 << pos.size)[:, None] >> np.arange(pos.size)) & 1).astype(np.uint8)
        cand = np.tile(r[b], (fills.shape[0], 1))
        cand[:, pos] = fills
        flat = cand.astype(np.int64)
        syn = np.bitwise_xor.reduce(np.where(flat == 1, t.colsyn[None, :], 0), axis=1)
        e = ((t.table[syn][:, None] >> np.arange(32)) & 1).astype(np.uint8)
        c = cand ^ e
        d = ((c != r[b]) & ~erased[b]).sum(axis=1)
        best = int(np.argmin(d))
        out[b] = c[best, t.info].astype(np.int64) @ t.Ginv.astype(np.int64) % 2
    return out


class BlockCode:
    """Interface for the codes used by the fuzzy-commitment baselines."""

    n: int
    k: int

    def encode(self, m: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def decode(self, r: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def to_json(self) -> str:
        raise NotImplementedError


@dataclass(frozen=True)
class RepRMConcat(BlockCode):
    """Inner (``rep``, 1) repetition code, outer RM(2,5) (a (32,16) code), ``blocks`` outer words.

    The default is n = 4 * 32 * 8 = 1024 with a 128-bit message. ``inner="hard"``
    takes a majority vote per group (ties give 0); ``inner="erasure"`` marks
    tied groups as erasures for the outer decoder.
    """

    rep: int = 4
    blocks: int = 8
    inner: str = "hard"

    @property
    def n(self) -> int:
        return self.rep * 32 * self.blocks

    @property
    def k(self) -> int:
        return 16 * self.blocks

    def encode(self, m: np.ndarray) -> np.ndarray:
        m = np.asarray(m, dtype=np.uint8)
        if m.shape[-1] != self.k:
            raise LengthMismatch(f"message needs {self.k} bits")
        c = rm25_encode(m.reshape(m.shape[:-1] + (self.blocks, 16)))
        return np.repeat(c.reshape(m.shape[:-1] + (32 * self.blocks,)), self.rep, axis=-1)

    def decode(self, r: np.ndarray) -> np.ndarray:
        return rm_concat_decode(r, self.rep, self.blocks, self.inner)

    def to_json(self) -> str:
        return f'{{"blocks":{self.blocks},"format":"wzkey.rep-rm25","inner":"{self.inner}","rep":{self.rep}}}'


def rm_concat_decode(r: np.ndarray, rep: int = 4, blocks: int = 8, inner: str = "hard") -> np.ndarray:
    """Decode the repetition + RM(2,5) concatenation; returns the ``16 * blocks`` message bits."""
    r = np.asarray(r, dtype=np.uint8)
    n = rep * 32 * blocks
    if r.shape[-1] != n:
        raise LengthMismatch(f"expected {n} bits, got {r.shape[-1]}")
    lead = r.shape[:-1]
    votes = r.reshape(-1, 32 * blocks, rep).sum(axis=-1).astype(np.int64)
    hard = (2 * votes > rep).astype(np.uint8)
    outer = hard.reshape(-1, 32)
    if inner == "hard":
        m = rm25_decode(outer)
    elif inner == "erasure":
        tie = (2 * votes == rep).reshape(-1, 32)
        m = np.empty((outer.shape[0], 16), dtype=np.uint8)
        plain = ~tie.any(axis=1)
        m[plain] = rm25_decode(outer[plain])
        if (~plain).any():
            m[~plain] = _rm25_decode_erasures(outer[~plain], tie[~plain])
    else:
        raise ValueError("inner must be 'hard' or 'erasure'")
    return m.reshape(lead + (16 * blocks,))


# ---------------------------------------------------------------------------
# fuzzy commitment family


def fcs_enroll(x: np.ndarray, code: BlockCode, S_prime: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.uint8)
    if x.shape[-1] != code.n:
        raise LengthMismatch(f"expected {code.n} source bits")
    return x ^ code.encode(S_prime)


def fcs_reconstruct(y: np.ndarray, W: np.ndarray, code: BlockCode) -> np.ndarray:
    y = np.asarray(y, dtype=np.uint8)
    W = np.asarray(W, dtype=np.uint8)
    if y.shape != W.shape or y.shape[-1] != code.n:
        raise LengthMismatch("y and W must both have n bits")
    return code.decode(y ^ W)


def dithered_fcs_enroll(x: np.ndarray, code: BlockCode, S_prime: np.ndarray, q: float,
                        seed: SeedSpec | int) -> np.ndarray:
    """``W'' = x + enc(S') + J`` with ``J`` i.i.d. Bernoulli(q)."""
    W = fcs_enroll(x, code, S_prime)
    J = bernoulli(code.n, q, seed, size=None if W.ndim == 1 else W.shape[0])
    return W ^ J


def cofe_key(x: np.ndarray, key_bits: int) -> np.ndarray:
    """Key derived from an identifier word: SHA-256 of its packed bits, truncated."""
    x = np.asarray(x, dtype=np.uint8)
    if key_bits > 256:
        raise ValueError("at most 256 key bits")
    digests = [hashlib.sha256(np.packbits(row).tobytes()).digest() for row in x.reshape(-1, x.shape[-1])]
    bits = np.unpackbits(np.frombuffer(b"".join(digests), dtype=np.uint8).reshape(len(digests), 32), axis=1)
    return bits[:, :key_bits].reshape(x.shape[:-1] + (key_bits,))


def cofe_enroll(x: np.ndarray, code: BlockCode, seed: SeedSpec | int, key_bits: int | None = None):
    """Offset ``x`` by a random codeword; returns ``(W, key)``."""
    x = np.asarray(x, dtype=np.uint8)
    R = rng(seed).integers(0, 2, size=x.shape[:-1] + (code.k,), dtype=np.uint8)
    W = x ^ code.encode(R)
    return W, cofe_key(x, key_bits or code.k)


def cofe_reconstruct(y: np.ndarray, W: np.ndarray, code: BlockCode, key_bits: int | None = None) -> np.ndarray:
    R_hat = fcs_reconstruct(y, W, code)
    x_hat = np.asarray(W, dtype=np.uint8) ^ code.encode(R_hat)
    return cofe_key(x_hat, key_bits or code.k)


# ---------------------------------------------------------------------------
# Monte-Carlo evaluation


def clopper_pearson_upper(errors: int, trials: int, conf: float = 0.95) -> float:
    if trials == 0:
        return 1.0
    if errors >= trials:
        return 1.0
    return float(beta.ppf(conf, errors + 1, trials - errors))


def structural_rates(scheme: str, obj) -> tuple[float, float, float]:
    """``(R_s, R_l, R_w)`` from code parameters."""
    if scheme.startswith("polar"):
        code = obj.code
        n, k, m2 = code.n, code.message_len, code.m2
    elif scheme.startswith("linear"):
        n, k, m2 = obj.n, obj.k, obj.m2
    else:
        # offset schemes store n bits and leak n - k of them about x
        return obj.k / obj.n, 1.0 - obj.k / obj.n, 1.0
    R_w = (m2 + (k if scheme.endswith("_cs") else 0)) / n
    return k / n, m2 / n, R_w


def evaluate_metrics(scheme: str, obj, channel: float, trials: int, seed: int | SeedSpec = 0,
                     chunk: int = 1000, q: float = 0.0, list_size: int = 8) -> dict:
    """Empirical block-error rate plus structural key, leakage and storage rates.

    Every trial draws a uniform source word, a BSC(``channel``) measurement and,
    where needed, a chosen key or offset, each from its own stream keyed by the
    chunk index.
    """
    seed = seed if isinstance(seed, SeedSpec) else SeedSpec(int(seed))
    p = crossover(channel)
    n = obj.code.n if scheme.startswith("polar") else obj.n
    errors = 0
    dist_sum = 0.0
    for c, a in enumerate(range(0, trials, chunk)):
        t = min(chunk, trials - a)
        X = random_bits(n, seed.child(TAG_SOURCE, c), size=t)
        Y = sample_bsc(X, p, seed.child(TAG_CHANNEL, c))
        if scheme in ("polar_gs", "polar_cs"):
            u, _, d = quantize(X, obj.code, q_design=obj.Eq, list_size=list_size)
            W, S = extract_helper_and_key(u, obj.code)
            S_hat = polar_decode(Y, W, obj, list_size)
            # the pad cancels, so the chosen-secret error event equals this one
            dist_sum += float(d.sum())
        elif scheme in ("linear_gs", "linear_cs"):
            km = wz_linear.enroll_gs(X, obj)
            S = km.S
            S_hat = wz_linear.reconstruct_gs(Y, km.W, obj)
        elif scheme == "fcs":
            S = random_bits(obj.k, seed.child(TAG_CHOSEN, c), size=t)
            S_hat = fcs_reconstruct(Y, fcs_enroll(X, obj, S), obj)
        elif scheme == "dithered_fcs":
            S = random_bits(obj.k, seed.child(TAG_CHOSEN, c), size=t)
            W = dithered_fcs_enroll(X, obj, S, q, seed.child(TAG_DITHER, c))
            S_hat = fcs_reconstruct(Y, W, obj)
        elif scheme == "cofe":
            W, S = cofe_enroll(X, obj, seed.child(TAG_OFFSET, c))
            S_hat = cofe_reconstruct(Y, W, obj)
        else:
            raise ValueError(f"unknown scheme {scheme!r}")
        errors += int((np.asarray(S_hat) != np.asarray(S)).any(axis=-1).sum())
    R_s, R_l, R_w = structural_rates(scheme, obj)
    rep = {
        "scheme": scheme,
        "n": n,
        "channel": p,
        "trials": trials,
        "errors": errors,
        "P_B": errors / trials if trials else 0.0,
        "P_B_upper95": clopper_pearson_upper(errors, trials),
        "R_s": R_s,
        "R_l": R_l,
        "R_w": R_w,
    }
    if scheme.startswith("polar") and trials:
        rep["mean_distortion"] = dist_sum / trials
    return rep
