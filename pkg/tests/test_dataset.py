import numpy as np
import pytest
from hypothesis import given, strategies as st

from sparseprime.dataset import (
    BITMAP_MAGIC, LabelSource, RangeSpec, SplitConfig, enumerate_windows, make_batches, n_batches,
    range_windows, read_bitmap, sample_epoch, sample_size, stack_batch, write_bitmap,
)
from sparseprime.encoding import CapacityError, EncodingShape
from sparseprime.numtheory import is_prime, sieve_range


def desk_split(fraction=0.05, **kw):
    shape = EncodingShape(101, 101, 101, 15)
    return SplitConfig(RangeSpec(0, 0, 10**6), RangeSpec(0, 10**6, 10**6 + 3000), shape, fraction, **kw)


def test_range_spec():
    r = RangeSpec(10**12, 5, 20)
    assert (r.lo, r.hi, r.span) == (10**12 + 5, 10**12 + 20, 15)
    with pytest.raises(ValueError):
        RangeSpec(0, 5, 5)
    assert RangeSpec(0, 0, 10).overlaps(RangeSpec(5, 0, 10))
    assert not RangeSpec(0, 0, 10).overlaps(RangeSpec(10, 0, 10))


def test_split_validation():
    shape = EncodingShape(10, 10, 10, 5)
    with pytest.raises(ValueError):
        SplitConfig(RangeSpec(0, 0, 500), RangeSpec(0, 400, 900), shape)
    with pytest.raises(CapacityError):
        SplitConfig(RangeSpec(0, 0, 500), RangeSpec(0, 500, 1001), shape)
    with pytest.raises(ValueError):
        SplitConfig(RangeSpec(0, 0, 500), RangeSpec(0, 500, 1000), shape, sample_fraction=0.0)


def test_enumerate_windows():
    assert enumerate_windows(RangeSpec(0, 0, 10**6), 15) == 66666
    assert enumerate_windows(RangeSpec(0, 0, 15), 15) == 1
    with pytest.raises(ValueError):
        enumerate_windows(RangeSpec(0, 0, 14), 15)


def test_sample_size_rounding():
    assert sample_size(0.05, 66666) == 3333
    assert sample_size(1.0, 66666) == 66666
    assert sample_size(0.5, 5) == 2  # 2.5 rounds to even
    assert sample_size(0.5, 7) == 4  # 3.5 rounds to even
    assert sample_size(1e-9, 10) == 1


def test_sample_epoch_size_and_determinism():
    split = desk_split()
    a = sample_epoch(split, 1, 7)
    b = sample_epoch(split, 1, 7)
    c = sample_epoch(split, 2, 7)
    assert len(a.window_ids) == 3333
    np.testing.assert_array_equal(a.window_ids, b.window_ids)
    assert not np.array_equal(a.window_ids, c.window_ids)
    assert len(np.unique(a.window_ids)) == len(a.window_ids)
    full = sample_epoch(desk_split(1.0), 1, 7)
    np.testing.assert_array_equal(full.window_ids, np.arange(66666))


def test_random_tiling_phase_in_range():
    split = desk_split(random_tiling=True)
    phases = {sample_epoch(split, e, 0).phase for e in range(1, 30)}
    assert phases <= set(range(15)) and len(phases) > 1


def test_batches_arithmetic_and_labels():
    split = desk_split()
    sample = sample_epoch(split, 1, 0)
    batches = list(make_batches(sample, 32, split))
    assert len(batches) == 105 == n_batches(3333, 32)
    assert len(batches[-1]) == 5
    assert sum(len(w) for b in batches for w in b) == 3333 * 15
    seen = sorted(int(w.s[0]) // 15 for b in batches for w in b)
    assert seen == sorted(sample.window_ids.tolist())
    for w in batches[3]:
        assert w.labels.tolist() == [is_prime(int(v)) for v in w.values]
    cols = stack_batch(batches[0])
    assert cols["m"].shape == (32, 15) and cols["labels"].dtype == bool


def test_batches_shuffle_deterministic():
    split = desk_split()
    sample = sample_epoch(split, 3, 0)
    first = [int(w.s[0]) for w in next(make_batches(sample, 16, split))]
    again = [int(w.s[0]) for w in next(make_batches(sample, 16, split))]
    assert first == again
    assert first != sorted(first)


def test_bitmap_file_roundtrip(tmp_path):
    rng = RangeSpec(10**12, 3, 1003)
    bm = sieve_range(rng.lo, rng.hi)
    path = tmp_path / "p.bin"
    write_bitmap(path, bm, rng)
    raw = path.read_bytes()
    assert raw[:4] == BITMAP_MAGIC
    assert len(raw) == 40 + 125
    back, rng2 = read_bitmap(path)
    assert rng2 == rng
    np.testing.assert_array_equal(back.bits, bm.bits)
    path.write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(ValueError):
        read_bitmap(path)


def test_label_source_lazy_and_bounded(tmp_path):
    rng = RangeSpec(0, 0, 100_000)
    src = LabelSource(rng, segment=1000, max_resident=3, cache_dir=tmp_path)
    assert src.resident_bits() == 0
    s = np.array([5, 2500, 7000, 99_999, 2501])
    assert src.labels_at(s).tolist() == [is_prime(int(x)) for x in s]
    assert src.resident_bits() <= 3000
    assert src.sieved == 4
    fresh = LabelSource(rng, segment=1000, cache_dir=tmp_path)
    fresh.labels_at(s)
    assert fresh.sieved == 0  # served from the disk cache
    bm = src.bitmap(990, 1010)
    assert bm.slice(990, 1010).tolist() == [is_prime(n) for n in range(990, 1010)]


@given(st.integers(0, 10**6), st.integers(1, 20), st.integers(2, 6))
def test_range_windows_cover_tiles(start, n_win, L):
    shape = EncodingShape(200, 200, 200, L)
    rng = RangeSpec(10**9, start, start + n_win * L + L - 1)
    chunks = list(range_windows(rng, shape, chunk=7))
    values = np.concatenate([c["values"] for c in chunks])
    assert values.shape == (n_win, L)
    np.testing.assert_array_equal(values.ravel(), 10**9 + start + np.arange(n_win * L))
    labels = np.concatenate([c["labels"] for c in chunks]).ravel()
    np.testing.assert_array_equal(labels, sieve_range(rng.lo, rng.lo + n_win * L).bits)
