"""GF(2) vectors and matrices, BSC sampling and seeded random streams.

Bit vectors are 1-D ``uint8`` numpy arrays holding 0/1 values and matrices are
2-D ``uint8`` arrays. Every function returns fresh arrays and never mutates its
inputs, so results can be shared freely between threads.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np


class LengthMismatch(ValueError):
    pass


class DimensionMismatch(ValueError):
    pass


class InvalidShape(ValueError):
    pass


class DomainError(ValueError):
    pass


def bits(values: Iterable[int] | str | np.ndarray) -> np.ndarray:
    """Build a read-only bit vector from a 0/1 iterable or a string like ``"0101"``."""
    if isinstance(values, str):
        values = [int(c) for c in values.strip()]
    arr = np.asarray(values, dtype=np.uint8).ravel().copy()
    if arr.size and arr.max() > 1:
        raise ValueError("bit vectors hold only 0 and 1")
    arr.flags.writeable = False
    return arr


def bitstring(v: np.ndarray) -> str:
    return "".join(str(int(b)) for b in np.asarray(v).ravel())


def weight(v: np.ndarray) -> int:
    return int(np.count_nonzero(v))


def xor(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.uint8)
    b = np.asarray(b, dtype=np.uint8)
    if a.shape != b.shape:
        raise LengthMismatch(f"cannot xor lengths {a.shape} and {b.shape}")
    return np.bitwise_xor(a, b)


def mat_vec(v: np.ndarray, M: np.ndarray, transpose: bool = True) -> np.ndarray:
    """Row vector times matrix over GF(2).

    With ``transpose=True`` (the syndrome convention) this is ``v @ M.T``, so an
    ``m x n`` parity-check matrix maps a length-``n`` word to ``m`` syndrome bits.
    With ``transpose=False`` it is ``v @ M`` (encoding with a generator matrix).
    """
    v = np.asarray(v, dtype=np.uint8)
    M = np.atleast_2d(np.asarray(M, dtype=np.uint8))
    A = M.T if transpose else M
    if v.shape[-1] != A.shape[0]:
        raise DimensionMismatch(f"vector length {v.shape[-1]} does not conform to {M.shape}")
    return (v.astype(np.int64) @ A.astype(np.int64) % 2).astype(np.uint8)


def mat_mul(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    A = np.atleast_2d(np.asarray(A, dtype=np.uint8))
    B = np.atleast_2d(np.asarray(B, dtype=np.uint8))
    if A.shape[1] != B.shape[0]:
        raise DimensionMismatch(f"cannot multiply {A.shape} by {B.shape}")
    return (A.astype(np.int64) @ B.astype(np.int64) % 2).astype(np.uint8)


def rref(M: np.ndarray) -> tuple[np.ndarray, list[int]]:
    """Reduced row echelon form over GF(2) and the pivot columns."""
    R = np.array(M, dtype=np.uint8, copy=True, ndmin=2)
    rows, cols = R.shape
    pivots: list[int] = []
    r = 0
    for c in range(cols):
        if r == rows:
            break
        nz = np.flatnonzero(R[r:, c])
        if nz.size == 0:
            continue
        p = r + nz[0]
        if p != r:
            R[[r, p]] = R[[p, r]]
        hits = np.flatnonzero(R[:, c])
        hits = hits[hits != r]
        R[hits] ^= R[r]
        pivots.append(c)
        r += 1
    return R, pivots


def rank(M: np.ndarray) -> int:
    return len(rref(M)[1])


def null_space(M: np.ndarray) -> np.ndarray:
    """Basis of ``{x : M x^T = 0}`` as rows, returned in reduced row echelon form."""
    M = np.atleast_2d(np.asarray(M, dtype=np.uint8))
    n = M.shape[1]
    R, pivots = rref(M)
    free = [c for c in range(n) if c not in set(pivots)]
    basis = np.zeros((len(free), n), dtype=np.uint8)
    for k, f in enumerate(free):
        basis[k, f] = 1
        for i, p in enumerate(pivots):
            basis[k, p] = R[i, f]
    if basis.shape[0]:
        basis = rref(basis)[0]
    return basis


def solve_left(G: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Return ``s`` with ``s @ G = c`` for a full-row-rank ``G``.

    Raises ``ValueError`` if ``c`` is not in the row space of ``G``.
    """
    G = np.atleast_2d(np.asarray(G, dtype=np.uint8))
    c = np.asarray(c, dtype=np.uint8)
    k = G.shape[0]
    # Eliminate on [G^T | c^T]
    aug = np.concatenate([G.T, c[:, None]], axis=1)
    R, pivots = rref(aug)
    if k in pivots:
        raise ValueError("word is not in the row space")
    if len(pivots) != k:
        raise ValueError("generator matrix is rank deficient")
    return R[:k, k].copy()


@dataclass(frozen=True)
class BscParam:
    """Crossover probability of a binary symmetric channel, validated to [0, 0.5]."""

    p: float

    def __post_init__(self):
        if not (0.0 <= float(self.p) <= 0.5):
            raise DomainError(f"BSC crossover {self.p} outside [0, 0.5]")

    def __float__(self):
        return float(self.p)


def crossover(p: float | BscParam) -> float:
    return float(BscParam(float(p)))


@dataclass(frozen=True)
class SeedSpec:
    """Names one independent random stream.

    The pair ``(master_seed, stream_id)`` is mapped through numpy's
    ``SeedSequence`` spawn keys, so a stream depends only on the pair and not on
    the order in which streams are created. ``stream_id`` may be a tuple to
    namespace streams by purpose, e.g. ``(TAG_NOISE, trial)``.
    """

    master_seed: int
    stream_id: int | tuple[int, ...] = 0

    def generator(self) -> np.random.Generator:
        key = self.stream_id if isinstance(self.stream_id, tuple) else (self.stream_id,)
        ss = np.random.SeedSequence(int(self.master_seed) & (2**64 - 1), spawn_key=tuple(int(k) for k in key))
        return np.random.Generator(np.random.PCG64(ss))

    def child(self, *ids: int) -> "SeedSpec":
        key = self.stream_id if isinstance(self.stream_id, tuple) else (self.stream_id,)
        return SeedSpec(self.master_seed, tuple(key) + tuple(ids))


def rng(seed: SeedSpec | int | None) -> np.random.Generator:
    if isinstance(seed, SeedSpec):
        return seed.generator()
    return SeedSpec(0 if seed is None else int(seed)).generator()


def random_bits(n: int, seed: SeedSpec | int, size: int | None = None) -> np.ndarray:
    shape = (n,) if size is None else (size, n)
    return rng(seed).integers(0, 2, size=shape, dtype=np.uint8)


def bernoulli(n: int, p: float, seed: SeedSpec | int, size: int | None = None) -> np.ndarray:
    shape = (n,) if size is None else (size, n)
    p = crossover(p)
    if p == 0.0:
        return np.zeros(shape, dtype=np.uint8)
    return (rng(seed).random(shape) < p).astype(np.uint8)


def sample_bsc(x: np.ndarray, ch: float | BscParam, seed: SeedSpec | int) -> np.ndarray:
    """Pass ``x`` (a word or a batch of words) through a BSC."""
    x = np.asarray(x, dtype=np.uint8)
    z = (rng(seed).random(x.shape) < crossover(ch)).astype(np.uint8)
    return x ^ z


def random_full_rank_parity(n: int, m: int, seed: SeedSpec | int) -> np.ndarray:
    """Uniform ``m x n`` binary matrix of rank ``m`` (rejection sampling)."""
    if m > n or m < 0:
        raise InvalidShape(f"cannot draw a full-rank {m}x{n} parity-check matrix")
    g = rng(seed)
    while True:
        H = g.integers(0, 2, size=(m, n), dtype=np.uint8)
        if rank(H) == m:
            return H


def pack_int(v: np.ndarray) -> int:
    """Word to integer, first bit most significant (integer order = lexicographic order)."""
    out = 0
    for b in np.asarray(v).ravel():
        out = (out << 1) | int(b)
    return out


def unpack_int(x: int, n: int) -> np.ndarray:
    return np.array([(x >> (n - 1 - j)) & 1 for j in range(n)], dtype=np.uint8)


def all_words(n: int) -> np.ndarray:
    """All ``2**n`` words of length n, row ``k`` is ``unpack_int(k, n)``."""
    k = np.arange(2**n, dtype=np.int64)
    shifts = np.arange(n - 1, -1, -1, dtype=np.int64)
    return ((k[:, None] >> shifts[None, :]) & 1).astype(np.uint8)


def to_hex(v: np.ndarray) -> str:
    """Pack bits MSB-first into bytes (zero-padded at the end) and hex-encode."""
    return np.packbits(np.asarray(v, dtype=np.uint8)).tobytes().hex()


def from_hex(s: str, n: int) -> np.ndarray:
    raw = np.frombuffer(bytes.fromhex(s), dtype=np.uint8)
    return np.unpackbits(raw)[:n].copy()
