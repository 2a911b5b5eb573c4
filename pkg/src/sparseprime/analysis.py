"""Classification metrics, distribution distances and false-positive analysis.

Undefined quantities (a ratio with a zero denominator, AUC on one class) are
reported as ``None`` rather than 0.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .numtheory import BlockCounts, omega_range, prime_block_counts, sieve_range


def _ratio(num: float, den: float) -> float | None:
    return num / den if den > 0 else None


def _f1(p: float | None, r: float | None) -> float | None:
    if p is None or r is None or p + r == 0:
        return None
    return 2 * p * r / (p + r)


@dataclass(frozen=True)
class MetricsReport:
    """Confusion counts with the prime class as positive, plus derived metrics."""

    tp: int
    fp: int
    tn: int
    fn: int
    auc: float | None = None

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @property
    def precision_prime(self):
        return _ratio(self.tp, self.tp + self.fp)

    @property
    def recall_prime(self):
        return _ratio(self.tp, self.tp + self.fn)

    @property
    def precision_nonprime(self):
        return _ratio(self.tn, self.tn + self.fn)

    @property
    def recall_nonprime(self):
        return _ratio(self.tn, self.tn + self.fp)

    @property
    def f1_prime(self):
        return _f1(self.precision_prime, self.recall_prime)

    @property
    def f1_nonprime(self):
        return _f1(self.precision_nonprime, self.recall_nonprime)

    @property
    def accuracy(self):
        return _ratio(self.tp + self.tn, self.total)

    @property
    def mean_recall(self) -> float | None:
        rp, rn = self.recall_prime, self.recall_nonprime
        if rp is None or rn is None:
            return None
        return (rp + rn) / 2

    def with_auc(self, auc: float | None) -> "MetricsReport":
        return MetricsReport(self.tp, self.fp, self.tn, self.fn, auc)

    def as_dict(self) -> dict[str, float | int | None]:
        return {
            "tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn,
            "precision_prime": self.precision_prime,
            "precision_nonprime": self.precision_nonprime,
            "recall_prime": self.recall_prime,
            "recall_nonprime": self.recall_nonprime,
            "f1_prime": self.f1_prime,
            "f1_nonprime": self.f1_nonprime,
            "accuracy": self.accuracy,
            "auc": self.auc,
        }


METRIC_KEYS = tuple(MetricsReport(0, 0, 0, 0).as_dict())


def classification_metrics(pred, truth) -> MetricsReport:
    pred = np.asarray(pred, dtype=bool).ravel()
    truth = np.asarray(truth, dtype=bool).ravel()
    if pred.shape != truth.shape:
        raise ValueError(f"length mismatch: {pred.size} predictions, {truth.size} labels")
    if pred.size == 0:
        raise ValueError("need at least one element")
    tp = int(np.count_nonzero(pred & truth))
    fp = int(np.count_nonzero(pred & ~truth))
    fn = int(np.count_nonzero(~pred & truth))
    tn = int(pred.size - tp - fp - fn)
    return MetricsReport(tp, fp, tn, fn)


def midranks(x: np.ndarray) -> np.ndarray:
    """1-based ranks with tied values sharing the mean of their positions."""
    x = np.asarray(x)
    order = np.argsort(x, kind="mergesort")
    xs = x[order]
    starts = np.flatnonzero(np.r_[True, xs[1:] != xs[:-1]])
    ends = np.r_[starts[1:], len(xs)]
    avg = (starts + ends + 1) / 2.0  # mean of 1-based positions starts+1 .. ends
    ranks = np.empty(len(x), dtype=np.float64)
    ranks[order] = np.repeat(avg, ends - starts)
    return ranks


def roc_auc(scores, truth) -> float | None:
    """Mann-Whitney AUC: P(score+ > score-) + P(tie) / 2, from midranks."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    truth = np.asarray(truth, dtype=bool).ravel()
    if scores.shape != truth.shape:
        raise ValueError("scores and labels differ in length")
    n_pos = int(truth.sum())
    n_neg = truth.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    rank_sum = midranks(scores)[truth].sum()
    u = rank_sum - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


# -- distributions ---------------------------------------------------------

@dataclass(frozen=True)
class CountDistribution:
    support: np.ndarray
    probabilities: np.ndarray

    def __post_init__(self):
        if len(self.support) != len(self.probabilities):
            raise ValueError("support and probabilities differ in length")
        if np.any(np.diff(self.support) <= 0):
            raise ValueError("support must be strictly increasing")
        if abs(self.probabilities.sum() - 1.0) > 1e-12:
            raise ValueError("probabilities must sum to 1")

    @classmethod
    def from_counts(cls, counts: Iterable[int] | BlockCounts) -> "CountDistribution":
        if isinstance(counts, BlockCounts):
            counts = counts.counts
        values, freq = np.unique(np.asarray(counts, dtype=np.int64), return_counts=True)
        return cls(values, freq / freq.sum())

    def mean(self) -> float:
        return float(np.dot(self.support, self.probabilities))


def _aligned(p: CountDistribution, q: CountDistribution):
    support = np.union1d(p.support, q.support)
    pa = np.zeros(len(support))
    qa = np.zeros(len(support))
    pa[np.searchsorted(support, p.support)] = p.probabilities
    qa[np.searchsorted(support, q.support)] = q.probabilities
    return support, pa, qa


def _kl(a: np.ndarray, b: np.ndarray, base: float) -> float:
    nz = a > 0
    return float(np.sum(a[nz] * np.log(a[nz] / b[nz])) / math.log(base))


def js_divergence(p: CountDistribution, q: CountDistribution, base: float = 2.0) -> float:
    """Jensen-Shannon divergence; with ``base=2`` it lies in [0, 1]."""
    _, pa, qa = _aligned(p, q)
    mix = 0.5 * (pa + qa)
    return 0.5 * _kl(pa, mix, base) + 0.5 * _kl(qa, mix, base)


def js_distance(p: CountDistribution, q: CountDistribution, base: float = 2.0) -> float:
    return math.sqrt(max(js_divergence(p, q, base), 0.0))


def wasserstein1(p: CountDistribution, q: CountDistribution) -> float:
    """1-D earth mover's distance: sum over integers k of |CDF_p(k) - CDF_q(k)|."""
    support, pa, qa = _aligned(p, q)
    gap = np.abs(np.cumsum(pa) - np.cumsum(qa))[:-1]
    return float(np.sum(gap * np.diff(support)))


def dataset_divergence(train: BlockCounts, test: BlockCounts) -> dict[str, float]:
    p = CountDistribution.from_counts(train)
    q = CountDistribution.from_counts(test)
    return {
        "js_divergence_base2": js_divergence(p, q, 2.0),
        "js_distance_base2": js_distance(p, q, 2.0),
        "js_divergence_nat": js_divergence(p, q, math.e),
        "wasserstein1": wasserstein1(p, q),
        "mean_count_train": train.mean(),
        "mean_count_test": test.mean(),
        "mean_count_diff": abs(train.mean() - test.mean()),
    }


def range_divergence(train: tuple[int, int], test: tuple[int, int], block_size: int = 1000) -> dict[str, float]:
    """:func:`dataset_divergence` for absolute integer ranges ``(lo, hi)``."""
    return dataset_divergence(prime_block_counts(*train, block_size), prime_block_counts(*test, block_size))


# -- false positives -------------------------------------------------------

@dataclass(frozen=True)
class OmegaBucket:
    total: int
    misclassified: int

    @property
    def fpr(self) -> float:
        return self.misclassified / self.total if self.total else 0.0


FprByOmega = dict[int, OmegaBucket]


def fpr_by_factor_count(fp_set: Iterable[int], lo: int, hi: int) -> FprByOmega:
    """Bucket every non-prime ``n >= 1`` of ``[lo, hi)`` by its prime-factor count.

    Composites land in buckets >= 2; the integer 1, if present, is bucket 0;
    0 has no factorisation and is left out.
    """
    fp = np.unique(np.fromiter((int(x) for x in fp_set), dtype=np.int64))
    if fp.size and (fp.min() < lo or fp.max() >= hi):
        raise ValueError("false positive outside the analysed range")
    primes = sieve_range(lo, hi).bits
    if fp.size and primes[fp - lo].any():
        bad = fp[primes[fp - lo]][:5].tolist()
        raise ValueError(f"false-positive set contains primes: {bad}")
    omega = omega_range(lo, hi)
    keep = ~primes & (omega >= 0)
    flagged = np.zeros(hi - lo, dtype=bool)
    flagged[fp - lo] = True
    totals = np.bincount(omega[keep])
    missed = np.bincount(omega[keep & flagged], minlength=len(totals))
    return {
        int(k): OmegaBucket(int(totals[k]), int(missed[k]))
        for k in range(len(totals)) if totals[k] > 0
    }


def fpr_trend_holds(table: FprByOmega, omegas: Sequence[int] = (2, 3, 4)) -> bool:
    """True when FPR strictly decreases across the given factor counts."""
    rates = [table[k].fpr if k in table else 0.0 for k in omegas]
    return all(a > b for a, b in zip(rates, rates[1:]))


def fp_consistency(fp_sets: Sequence[Iterable[int]]) -> tuple[float, float] | None:
    """(|intersection| / |union|, mean pairwise Jaccard) over several FP sets.

    Pairs of empty sets count as identical.  ``None`` when every set is empty.
    """
    sets = [set(map(int, s)) for s in fp_sets]
    if len(sets) < 2:
        raise ValueError("need at least two sets")
    union = set().union(*sets)
    if not union:
        return None
    iou = len(set.intersection(*sets)) / len(union)
    jac = []
    for a, b in itertools.combinations(sets, 2):
        u = a | b
        jac.append(len(a & b) / len(u) if u else 1.0)
    return iou, float(np.mean(jac))


# -- CSV output ------------------------------------------------------------

def _fmt(v) -> str:
    if v is None:
        return "NA"
    if isinstance(v, float):
        return f"{v:.10g}"
    return str(v)


def write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence], config_hash: str | None = None) -> Path:
    """CSV with a header row, optionally preceded by a ``# config_hash=...`` line."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        if config_hash:
            fh.write(f"# config_hash={config_hash}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def read_csv(path: str | Path) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def write_fpr_csv(path, table: FprByOmega, config_hash: str | None = None) -> Path:
    rows = [(k, b.total, b.misclassified, b.fpr) for k, b in sorted(table.items())]
    return write_csv(path, ("omega", "total", "misclassified", "fpr"), rows, config_hash)


def write_block_counts_csv(path, blocks: BlockCounts, config_hash: str | None = None) -> Path:
    rows = zip(blocks.block_starts().tolist(), blocks.counts.tolist())
    return write_csv(path, ("block_start", "count"), rows, config_hash)


def write_metrics_csv(path, values: dict, config_hash: str | None = None) -> Path:
    return write_csv(path, ("metric", "value"), values.items(), config_hash)
