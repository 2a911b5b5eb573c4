"""Ground-truth primality, prime counting and factor-structure helpers.

Everything here is a pure function of its arguments.  Bulk work (sieving,
per-range factor counts) is vectorised with numpy; single-integer work uses
plain Python ints so nothing overflows below 2**63.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

MAX_INPUT = 1 << 63
DEFAULT_SPAN_CAP = 100_000_000
SEGMENT_SIZE = 1 << 20

# Deterministic for every n < 3.3e24, which covers the 63-bit input range.
_MR_BASES = (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37)
_TRIAL_LIMIT = 1000


@dataclass(frozen=True)
class PrimeBitmap:
    """Primality flags for the half-open integer range ``[lo, hi)``."""

    lo: int
    hi: int
    bits: np.ndarray

    def __post_init__(self):
        if self.lo >= self.hi:
            raise ValueError(f"empty range [{self.lo}, {self.hi})")
        if self.bits.shape != (self.hi - self.lo,):
            raise ValueError("bit count must equal hi - lo")

    def __len__(self) -> int:
        return self.hi - self.lo

    def covers(self, lo: int, hi: int) -> bool:
        return self.lo <= lo and hi <= self.hi

    def slice(self, lo: int, hi: int) -> np.ndarray:
        if not self.covers(lo, hi):
            raise ValueError(f"[{lo}, {hi}) is outside bitmap [{self.lo}, {self.hi})")
        return self.bits[lo - self.lo:hi - self.lo]

    def count(self) -> int:
        return int(np.count_nonzero(self.bits))

    def primes(self) -> np.ndarray:
        return np.flatnonzero(self.bits).astype(np.int64) + self.lo


@dataclass(frozen=True)
class BlockCounts:
    lo: int
    block_size: int
    counts: np.ndarray

    @property
    def hi(self) -> int:
        return self.lo + self.block_size * len(self.counts)

    def block_starts(self) -> np.ndarray:
        return self.lo + self.block_size * np.arange(len(self.counts), dtype=np.int64)

    def mean(self) -> float:
        return float(self.counts.mean())


def _check_natural(n: int, name: str = "n") -> int:
    n = int(n)
    if n < 0:
        raise ValueError(f"{name} must be non-negative, got {n}")
    if n >= MAX_INPUT:
        raise OverflowError(f"{name}={n} is outside the supported range [0, 2**63)")
    return n


@lru_cache(maxsize=8)
def small_primes(limit: int) -> np.ndarray:
    """All primes ``<= limit`` via a plain sieve."""
    if limit < 2:
        return np.empty(0, dtype=np.int64)
    flags = np.ones(limit + 1, dtype=bool)
    flags[:2] = False
    flags[4::2] = False
    for p in range(3, math.isqrt(limit) + 1, 2):
        if flags[p]:
            flags[p * p::2 * p] = False
    return np.flatnonzero(flags).astype(np.int64)


_TRIAL_PRIMES = tuple(int(p) for p in small_primes(_TRIAL_LIMIT))


def _miller_rabin(n: int) -> bool:
    d = n - 1
    r = 0
    while d % 2 == 0:
        d //= 2
        r += 1
    for a in _MR_BASES:
        x = pow(a, d, n)
        if x == 1 or x == n - 1:
            continue
        for _ in range(r - 1):
            x = x * x % n
            if x == n - 1:
                break
        else:
            return False
    return True


def is_prime(n: int) -> bool:
    """Deterministic primality for ``0 <= n < 2**63``."""
    n = _check_natural(n)
    if n < 2:
        return False
    for p in _TRIAL_PRIMES:
        if n == p:
            return True
        if n % p == 0:
            return False
    if n < _TRIAL_LIMIT * _TRIAL_LIMIT:
        return True
    return _miller_rabin(n)


def sieve_range(lo: int, hi: int, max_span: int = DEFAULT_SPAN_CAP) -> PrimeBitmap:
    """Segmented sieve of Eratosthenes over ``[lo, hi)``.

    Only one segment of scratch space plus the base primes up to
    ``sqrt(hi)`` is live at a time, so large offsets (10**12 and up) cost the
    same memory as small ones.
    """
    lo = _check_natural(lo, "lo")
    hi = _check_natural(hi, "hi")
    if lo >= hi:
        raise ValueError(f"lo must be < hi, got [{lo}, {hi})")
    if hi - lo > max_span:
        raise ValueError(f"span {hi - lo} exceeds cap {max_span}")

    base = small_primes(math.isqrt(hi - 1))
    bits = np.empty(hi - lo, dtype=bool)
    for seg_lo in range(lo, hi, SEGMENT_SIZE):
        seg_hi = min(seg_lo + SEGMENT_SIZE, hi)
        seg = bits[seg_lo - lo:seg_hi - lo]
        seg[:] = True
        for p in base:
            p = int(p)
            if p * p >= seg_hi:
                break
            start = max(p * p, -(-seg_lo // p) * p)
            seg[start - seg_lo::p] = False
        if seg_lo < 2:
            seg[:2 - seg_lo] = False
    return PrimeBitmap(lo, hi, bits)


def _pollard_brent(n: int, seed: int = 1) -> int:
    """A non-trivial factor of the odd composite ``n``."""
    c = seed
    while True:
        y, r, q, g = 2, 1, 1, 1
        x = ys = y
        m = 64
        while g == 1:
            x = y
            for _ in range(r):
                y = (y * y + c) % n
            k = 0
            while k < r and g == 1:
                ys = y
                for _ in range(min(m, r - k)):
                    y = (y * y + c) % n
                    q = q * abs(x - y) % n
                g = math.gcd(q, n)
                k += m
            r *= 2
        if g == n:
            g = 1
            while g == 1:
                ys = (ys * ys + c) % n
                g = math.gcd(abs(x - ys), n)
        if g != n:
            return g
        c += 1


def _omega_cofactor(n: int) -> int:
    # n has no prime factor below _TRIAL_LIMIT here
    if n == 1:
        return 0
    if is_prime(n):
        return 1
    d = _pollard_brent(n)
    return _omega_cofactor(d) + _omega_cofactor(n // d)


def count_prime_factors(n: int) -> int:
    """Number of prime factors of ``n`` counted with multiplicity."""
    n = _check_natural(n)
    if n == 0:
        raise ValueError("prime factor count of 0 is undefined")
    total = 0
    for p in _TRIAL_PRIMES:
        if p * p > n:
            break
        while n % p == 0:
            n //= p
            total += 1
    if n == 1:
        return total
    if n < _TRIAL_LIMIT * _TRIAL_LIMIT:
        return total + 1
    return total + _omega_cofactor(n)


def omega_range(lo: int, hi: int) -> np.ndarray:
    """Vectorised prime-factor counts (with multiplicity) for ``[lo, hi)``.

    Entry for 0, if present, is set to -1.
    """
    lo = _check_natural(lo, "lo")
    hi = _check_natural(hi, "hi")
    if lo >= hi:
        raise ValueError(f"lo must be < hi, got [{lo}, {hi})")
    residual = np.arange(lo, hi, dtype=np.int64)
    omega = np.zeros(hi - lo, dtype=np.int64)
    for p in small_primes(math.isqrt(hi - 1)):
        p = int(p)
        pk = p
        while pk < hi:
            start = -(-lo // pk) * pk
            if start == 0:
                start = pk
            if start < hi:
                sl = slice(start - lo, None, pk)
                omega[sl] += 1
                residual[sl] //= p
            pk *= p
    omega += residual > 1
    if lo == 0:
        omega[0] = -1
    return omega


def prime_block_counts(lo: int, hi: int, block_size: int = 1000) -> BlockCounts:
    """Primes per consecutive block of ``block_size`` integers."""
    if block_size < 1:
        raise ValueError("block_size must be >= 1")
    if lo >= hi:
        raise ValueError(f"lo must be < hi, got [{lo}, {hi})")
    if (hi - lo) % block_size:
        raise ValueError(f"block_size {block_size} does not divide span {hi - lo}")
    bits = sieve_range(lo, hi).bits
    counts = bits.reshape(-1, block_size).sum(axis=1, dtype=np.int64)
    return BlockCounts(lo, block_size, counts)


def prime_pi(x: int) -> int:
    """Number of primes ``<= x`` (sieve based, for moderate x)."""
    if x < 2:
        return 0
    return sieve_range(0, x + 1).count()


def pnt_expected_count(n: float, block_size: int) -> float:
    """Expected primes in a block of ``block_size`` integers around ``n``.

    Uses the local density 1/ln(n).
    """
    if n < 2:
        raise ValueError(f"n must be >= 2, got {n}")
    return block_size / math.log(n)


def pnt_curve(lo: int, hi: int, block_size: int = 1000) -> tuple[np.ndarray, np.ndarray]:
    """(block midpoints, expected counts) over ``[lo, hi)``; blocks whose
    midpoint is below 2 are skipped."""
    if (hi - lo) % block_size:
        raise ValueError(f"block_size {block_size} does not divide span {hi - lo}")
    mids = lo + block_size * np.arange((hi - lo) // block_size) + block_size / 2
    mids = mids[mids >= 2]
    return mids, block_size / np.log(mids)
