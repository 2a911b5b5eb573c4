"""Range configuration, window tiling, epoch resampling and lazy batches."""

from __future__ import annotations

import struct
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from .encoding import CapacityError, EncodingShape, SequenceSample, encode_window
from .numtheory import PrimeBitmap, sieve_range

BITMAP_MAGIC = b"SPBM"
BITMAP_VERSION = 1
_HEADER = struct.Struct("<4sIQQQQ")


@dataclass(frozen=True)
class RangeSpec:
    """Integers ``offset + start`` up to ``offset + end`` (exclusive).

    ``start``/``end`` are range-relative indices into the encoding volume.
    """

    offset: int
    start: int
    end: int

    def __post_init__(self):
        if min(self.offset, self.start, self.end) < 0:
            raise ValueError("range fields must be non-negative")
        if self.start >= self.end:
            raise ValueError(f"start must be < end, got {self.start}..{self.end}")

    @property
    def lo(self) -> int:
        return self.offset + self.start

    @property
    def hi(self) -> int:
        return self.offset + self.end

    @property
    def span(self) -> int:
        return self.end - self.start

    def overlaps(self, other: "RangeSpec") -> bool:
        return self.lo < other.hi and other.lo < self.hi


@dataclass(frozen=True)
class SplitConfig:
    train: RangeSpec
    test: RangeSpec
    shape: EncodingShape
    sample_fraction: float = 0.05
    random_tiling: bool = False

    def __post_init__(self):
        if not 0.0 < self.sample_fraction <= 1.0:
            raise ValueError(f"sample_fraction must be in (0, 1], got {self.sample_fraction}")
        if self.train.overlaps(self.test):
            raise ValueError(
                f"train [{self.train.lo}, {self.train.hi}) and test "
                f"[{self.test.lo}, {self.test.hi}) overlap"
            )
        self.shape.check_span(self.train.end)
        self.shape.check_span(self.test.end)


@dataclass(frozen=True)
class EpochSample:
    epoch_index: int
    seed: int
    window_ids: np.ndarray
    phase: int = 0


def enumerate_windows(rng: RangeSpec, L: int, phase: int = 0) -> int:
    """Number of non-overlapping length-``L`` windows; the tail remainder is dropped."""
    span = rng.span - phase
    if span < L:
        raise ValueError(f"span {span} is shorter than window length {L}")
    return span // L


def window_start(rng: RangeSpec, L: int, k: int, phase: int = 0) -> int:
    """Range-relative ``s`` of the first integer in window ``k``."""
    return rng.start + phase + k * L


def epoch_seed(master_seed: int, epoch: int) -> int:
    return int(np.random.SeedSequence([master_seed, epoch]).generate_state(1)[0])


def sample_size(fraction: float, total: int) -> int:
    # Python's round() is round-half-to-even
    return min(total, max(1, round(fraction * total)))


def sample_epoch(split: SplitConfig, epoch: int, master_seed: int) -> EpochSample:
    """Draw this epoch's training windows, uniformly without replacement."""
    seed = epoch_seed(master_seed, epoch)
    rng = np.random.default_rng(seed)
    L = split.shape.L
    phase = 0
    if split.random_tiling:
        phase = int(rng.integers(0, min(L, split.train.span - L + 1)))
    total = enumerate_windows(split.train, L, phase)
    k = sample_size(split.sample_fraction, total)
    if k == total:
        ids = np.arange(total, dtype=np.int64)
    else:
        ids = np.sort(rng.choice(total, size=k, replace=False)).astype(np.int64)
    return EpochSample(epoch, seed, ids, phase)


def write_bitmap(path: str | Path, bitmap: PrimeBitmap, rng: RangeSpec) -> None:
    """Header (magic, version, offset, start, end, nbits) then little-endian packed bits."""
    packed = np.packbits(bitmap.bits, bitorder="little")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(BITMAP_MAGIC, BITMAP_VERSION, rng.offset, rng.start, rng.end, len(bitmap)))
        fh.write(packed.tobytes())


def read_bitmap(path: str | Path) -> tuple[PrimeBitmap, RangeSpec]:
    with open(path, "rb") as fh:
        raw = fh.read()
    magic, version, offset, start, end, nbits = _HEADER.unpack_from(raw)
    if magic != BITMAP_MAGIC:
        raise ValueError(f"{path}: not a bitmap file")
    if version != BITMAP_VERSION:
        raise ValueError(f"{path}: unsupported bitmap version {version}")
    if nbits != end - start:
        raise ValueError(f"{path}: bit count {nbits} does not match range")
    packed = np.frombuffer(raw, dtype=np.uint8, offset=_HEADER.size)
    bits = np.unpackbits(packed, count=nbits, bitorder="little").astype(bool)
    rng = RangeSpec(offset, start, end)
    return PrimeBitmap(rng.lo, rng.hi, bits), rng


class LabelSource:
    """Primality labels for one range, sieved segment by segment on demand.

    At most ``max_resident`` segments are kept in memory; with ``cache_dir``
    each sieved segment is also written to disk and re-read on later misses.
    """

    def __init__(self, rng: RangeSpec, segment: int = 1 << 16, max_resident: int = 8,
                 cache_dir: str | Path | None = None):
        self.range = rng
        self.segment = segment
        self.max_resident = max_resident
        self.cache_dir = Path(cache_dir) if cache_dir is not None else None
        self._segments: OrderedDict[int, PrimeBitmap] = OrderedDict()
        self.sieved = 0

    def _segment(self, k: int) -> PrimeBitmap:
        if k in self._segments:
            self._segments.move_to_end(k)
            return self._segments[k]
        start = self.range.start + k * self.segment
        end = min(start + self.segment, self.range.end)
        seg_range = RangeSpec(self.range.offset, start, end)
        path = None
        if self.cache_dir is not None:
            path = self.cache_dir / f"labels_{seg_range.offset}_{start}_{end}.bin"
        if path is not None and path.exists():
            bm, _ = read_bitmap(path)
        else:
            bm = sieve_range(seg_range.lo, seg_range.hi)
            self.sieved += 1
            if path is not None:
                path.parent.mkdir(parents=True, exist_ok=True)
                write_bitmap(path, bm, seg_range)
        self._segments[k] = bm
        while len(self._segments) > self.max_resident:
            self._segments.popitem(last=False)
        return bm

    def resident_bits(self) -> int:
        return sum(len(b) for b in self._segments.values())

    def labels_at(self, s: np.ndarray) -> np.ndarray:
        """Labels for an arbitrary array of range-relative indices."""
        s = np.asarray(s, dtype=np.int64)
        if s.size and (s.min() < self.range.start or s.max() >= self.range.end):
            raise ValueError(f"indices outside range {self.range}")
        rel = s - self.range.start
        seg = rel // self.segment
        out = np.empty(s.shape, dtype=bool)
        for k in np.unique(seg):
            mask = seg == k
            bm = self._segment(int(k))
            out[mask] = bm.bits[rel[mask] - int(k) * self.segment]
        return out

    def bitmap(self, start_s: int, end_s: int) -> PrimeBitmap:
        """Labels for range-relative ``[start_s, end_s)`` as a bitmap."""
        if start_s < self.range.start or end_s > self.range.end:
            raise ValueError(f"[{start_s}, {end_s}) outside range {self.range}")
        first = (start_s - self.range.start) // self.segment
        last = (end_s - 1 - self.range.start) // self.segment
        parts = [self._segment(k) for k in range(first, last + 1)]
        if len(parts) == 1:
            return parts[0]
        bits = np.concatenate([p.bits for p in parts])
        return PrimeBitmap(parts[0].lo, parts[-1].hi, bits)


def make_batches(sample: EpochSample, batch_size: int, split: SplitConfig,
                 labels: LabelSource | None = None) -> Iterator[list[SequenceSample]]:
    """Yield shuffled batches of training windows, encoding each lazily.

    The last batch may be short.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if labels is None:
        labels = LabelSource(split.train)
    L = split.shape.L
    order = np.random.default_rng(sample.seed).permutation(sample.window_ids)
    for i in range(0, len(order), batch_size):
        batch = []
        for k in order[i:i + batch_size]:
            s0 = window_start(split.train, L, int(k), sample.phase)
            bm = labels.bitmap(s0, s0 + L)
            batch.append(encode_window(s0, split.shape, split.train.offset, bm))
        yield batch


def n_batches(n_windows: int, batch_size: int) -> int:
    return -(-n_windows // batch_size)


def stack_batch(batch: list[SequenceSample]) -> dict[str, np.ndarray]:
    """Column arrays of shape ``(B, L)`` for the model."""
    return {
        key: np.stack([getattr(w, key) for w in batch])
        for key in ("m", "n", "o", "values", "labels")
    }


def range_windows(rng: RangeSpec, shape: EncodingShape, labels: LabelSource | None = None,
                  window_ids: np.ndarray | None = None, chunk: int = 2048) -> Iterator[dict[str, np.ndarray]]:
    """Column arrays for the windows of an evaluation range, ``chunk`` windows at a time."""
    shape.check_span(rng.end)
    L = shape.L
    total = enumerate_windows(rng, L)
    if window_ids is None:
        window_ids = np.arange(total, dtype=np.int64)
    if labels is None:
        labels = LabelSource(rng)
    for i in range(0, len(window_ids), chunk):
        ids = np.asarray(window_ids[i:i + chunk], dtype=np.int64)
        s = rng.start + ids[:, None] * L + np.arange(L, dtype=np.int64)[None, :]
        if s.max() >= shape.capacity:
            raise CapacityError(f"index {int(s.max())} exceeds capacity {shape.capacity}")
        no = shape.N * shape.O
        lab = labels.labels_at(s)
        yield {
            "m": s // no,
            "n": (s % no) // shape.O,
            "o": s % shape.O,
            "values": s + rng.offset,
            "labels": lab,
        }
