import math
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from sparseprime.config import parse_config

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

TINY_CONFIG = """\
name = tiny
train.end = 3000
test.start = 3000
test.end = 6000
shape.M = 20
shape.N = 20
shape.O = 20
shape.L = 5
model.d_model = 16
model.n_heads = 2
sample_fraction = 0.2
epochs = 3
eval_every = 50
"""


@pytest.fixture
def tiny_text():
    return TINY_CONFIG


@pytest.fixture
def tiny_config():
    return parse_config(TINY_CONFIG)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def trial_division_is_prime(n: int) -> bool:
    if n < 2:
        return False
    d = 2
    while d * d <= n:
        if n % d == 0:
            return False
        d += 1
    return True


def vectorised_trial_omega(hi: int) -> np.ndarray:
    """Omega for [1, hi) by dividing out every d up to sqrt(hi) repeatedly."""
    rest = np.arange(1, hi, dtype=np.int64)
    omega = np.zeros_like(rest)
    for d in range(2, math.isqrt(hi) + 1):
        while True:
            hit = rest % d == 0
            if not hit.any():
                break
            omega[hit] += 1
            rest[hit] //= d
    return omega + (rest > 1)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.REPORT:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.REPORT:
        terminalreporter.write_line(line)
