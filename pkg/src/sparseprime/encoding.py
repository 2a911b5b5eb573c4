"""Sparse 4-D one-hot encoding of integer sequences.

An integer at range-relative index ``s`` is a single unit entry at
``(s, m, n, o)`` of an ``L x M x N x O`` volume.  The volume itself is never
built by the pipeline; only the coordinate tuples are carried around.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .numtheory import PrimeBitmap


class CapacityError(ValueError):
    """Index falls outside the ``M*N*O`` encoding volume."""


class CoverageError(ValueError):
    """Primality bitmap does not cover the requested integers."""


@dataclass(frozen=True)
class EncodingShape:
    M: int
    N: int
    O: int
    L: int

    def __post_init__(self):
        for name in ("M", "N", "O", "L"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")

    @property
    def capacity(self) -> int:
        return self.M * self.N * self.O

    def check_span(self, end: int) -> None:
        if end > self.capacity:
            raise CapacityError(
                f"span end {end} exceeds encoding capacity {self.capacity} "
                f"(M*N*O = {self.M}*{self.N}*{self.O})"
            )


class SparseCode(NamedTuple):
    s: int
    m: int
    n: int
    o: int


def encode_index(s: int, shape: EncodingShape) -> tuple[int, int, int]:
    if s < 0 or s >= shape.capacity:
        raise CapacityError(f"index {s} outside [0, {shape.capacity})")
    no = shape.N * shape.O
    return s // no, (s % no) // shape.O, s % shape.O


def decode_index(m: int, n: int, o: int, shape: EncodingShape) -> int:
    if not (0 <= m < shape.M and 0 <= n < shape.N and 0 <= o < shape.O):
        raise ValueError(f"coordinates ({m}, {n}, {o}) outside shape {shape}")
    return (m * shape.N + n) * shape.O + o


def encode_indices(s: np.ndarray, shape: EncodingShape) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorised :func:`encode_index`."""
    s = np.asarray(s, dtype=np.int64)
    if s.size and (s.min() < 0 or s.max() >= shape.capacity):
        raise CapacityError(f"indices outside [0, {shape.capacity})")
    no = shape.N * shape.O
    return s // no, (s % no) // shape.O, s % shape.O


@dataclass(frozen=True)
class SequenceSample:
    """``L`` consecutive encoded integers with their labels.

    Stored column-wise; :attr:`codes` gives the tuple view.
    """

    s: np.ndarray
    m: np.ndarray
    n: np.ndarray
    o: np.ndarray
    values: np.ndarray
    labels: np.ndarray

    def __len__(self) -> int:
        return len(self.s)

    @property
    def codes(self) -> list[SparseCode]:
        return [SparseCode(*map(int, t)) for t in zip(self.s, self.m, self.n, self.o)]


def encode_window(start_s: int, shape: EncodingShape, offset: int, primality: PrimeBitmap) -> SequenceSample:
    """Encode the window ``s in [start_s, start_s + L)`` at ``offset``."""
    end_s = start_s + shape.L
    if start_s < 0 or end_s > shape.capacity:
        raise CapacityError(f"window [{start_s}, {end_s}) exceeds capacity {shape.capacity}")
    lo, hi = offset + start_s, offset + end_s
    if not primality.covers(lo, hi):
        raise CoverageError(f"bitmap [{primality.lo}, {primality.hi}) does not cover [{lo}, {hi})")
    s = np.arange(start_s, end_s, dtype=np.int64)
    m, n, o = encode_indices(s, shape)
    return SequenceSample(
        s=s, m=m, n=n, o=o,
        values=s + offset,
        labels=primality.slice(lo, hi).copy(),
    )


def dense_code(code: SparseCode | tuple[int, int, int], shape: EncodingShape) -> np.ndarray:
    """Materialise the ``M x N x O`` one-hot block for one code (tests only)."""
    m, n, o = code[-3:]
    block = np.zeros((shape.M, shape.N, shape.O), dtype=np.float32)
    block[m, n, o] = 1.0
    return block


def dense_window(sample: SequenceSample, shape: EncodingShape) -> np.ndarray:
    """Materialise the full ``L x M x N x O`` tensor for a window (tests only)."""
    D = np.zeros((len(sample), shape.M, shape.N, shape.O), dtype=np.float32)
    D[np.arange(len(sample)), sample.m, sample.n, sample.o] = 1.0
    return D
