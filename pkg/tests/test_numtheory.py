import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import trial_division_is_prime, vectorised_trial_omega
from sparseprime.numtheory import (
    MAX_INPUT, count_prime_factors, is_prime, omega_range, pnt_curve, pnt_expected_count,
    prime_block_counts, prime_pi, sieve_range, small_primes,
)
from sparseprime.numtheory import _miller_rabin


def test_is_prime_small_cases():
    assert not is_prime(0)
    assert not is_prime(1)
    assert is_prime(2)
    assert is_prime(3)
    assert not is_prime(4)


def test_is_prime_large_known():
    n = 10**12 + 39
    assert is_prime(n) == trial_division_is_prime(n)
    assert is_prime(n)
    assert not is_prime(10**12 + 1)  # 73 * 137 * 99990001
    # strong pseudoprimes to several small bases
    assert not is_prime(3215031751)
    assert not is_prime(3825123056546413051)
    assert is_prime(2**61 - 1)
    assert not is_prime((2**31 - 1) * (2**31 + 11))


def test_is_prime_exhaustive_below_1e5():
    sieve = np.ones(100_000, dtype=bool)
    sieve[:2] = False
    for p in range(2, 317):
        if sieve[p]:
            sieve[p * p::p] = False
    got = np.array([is_prime(n) for n in range(100_000)])
    np.testing.assert_array_equal(got, sieve)


def test_is_prime_domain():
    with pytest.raises(ValueError):
        is_prime(-1)
    with pytest.raises(OverflowError):
        is_prime(MAX_INPUT)
    assert is_prime(MAX_INPUT - 25) == _miller_rabin(MAX_INPUT - 25)


@given(st.integers(min_value=38, max_value=10**7))
def test_miller_rabin_matches_trial_division(n):
    assert _miller_rabin(n) == trial_division_is_prime(n)


def test_sieve_first_ten():
    assert sieve_range(0, 10).primes().tolist() == [2, 3, 5, 7]


def test_sieve_count_to_one_million():
    assert sieve_range(0, 10**6).count() == 78498


def test_sieve_at_large_offset():
    bm = sieve_range(10**12, 10**12 + 10**4)
    expected = [is_prime(10**12 + i) for i in range(10**4)]
    assert bm.bits.tolist() == expected


@given(st.integers(0, 10**6), st.integers(1, 3000))
def test_sieve_segments_agree(lo, width):
    bm = sieve_range(lo, lo + width)
    assert bm.bits.tolist() == [is_prime(n) for n in range(lo, lo + width)]


def test_sieve_rejects_bad_ranges():
    with pytest.raises(ValueError):
        sieve_range(10, 10)
    with pytest.raises(ValueError):
        sieve_range(0, 10**9, max_span=10**6)


def test_bitmap_slice_and_cover():
    bm = sieve_range(100, 200)
    assert bm.covers(150, 160)
    assert not bm.covers(50, 160)
    assert (np.flatnonzero(bm.slice(100, 110)) + 100).tolist() == [101, 103, 107, 109]


def test_count_prime_factors_examples():
    assert count_prime_factors(12) == 3
    assert count_prime_factors(1) == 0
    assert count_prime_factors(2) == 1
    assert count_prime_factors(2**62) == 62
    assert count_prime_factors((2**31 - 1) * (2**31 + 11)) == 2
    with pytest.raises(ValueError):
        count_prime_factors(0)


def test_omega_exhaustive_below_1e5():
    oracle = vectorised_trial_omega(100_000)
    np.testing.assert_array_equal(omega_range(1, 100_000), oracle)


def trial_omega(n: int) -> int:
    count, d = 0, 2
    while d * d <= n:
        while n % d == 0:
            n //= d
            count += 1
        d += 1
    return count + (n > 1)


def test_count_prime_factors_random_range(rng):
    for n in rng.integers(10**6, 3 * 10**6, size=200).tolist():
        assert count_prime_factors(n) == trial_omega(n)


@given(st.integers(1, 10**6), st.integers(1, 10**6))
def test_omega_is_completely_additive(a, b):
    assert count_prime_factors(a * b) == count_prime_factors(a) + count_prime_factors(b)


def test_omega_range_zero_and_slice():
    om = omega_range(0, 20)
    assert om[0] == -1 and om[1] == 0 and om[12] == 3
    np.testing.assert_array_equal(omega_range(10**6, 10**6 + 500),
                                  [count_prime_factors(n) for n in range(10**6, 10**6 + 500)])


def test_block_counts_examples():
    assert prime_block_counts(0, 1000, 1000).counts.tolist() == [168]
    assert prime_block_counts(0, 2000, 1000).counts.sum() == prime_pi(1999)
    assert len(prime_block_counts(10**6, 3 * 10**6, 1000).counts) == 2000
    with pytest.raises(ValueError):
        prime_block_counts(0, 1500, 1000)


def test_small_primes():
    assert small_primes(30).tolist() == [2, 3, 5, 7, 11, 13, 17, 19, 23, 29]


def test_pnt_expected_count():
    assert pnt_expected_count(10**6, 1000) == pytest.approx(72.382, abs=1e-3)
    assert pnt_expected_count(math.e, 1) == pytest.approx(1.0)
    vals = [pnt_expected_count(n, 1000) for n in (10, 100, 10**4, 10**8)]
    assert vals == sorted(vals, reverse=True)
    with pytest.raises(ValueError):
        pnt_expected_count(1, 1000)


def test_pnt_curve_skips_low_blocks():
    mids, vals = pnt_curve(0, 10, 1)
    assert mids[0] >= 2 and len(mids) == len(vals)
