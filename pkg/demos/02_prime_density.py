"""
Prime counts per block and train/test divergence
================================================

Primes thin out like 1/ln n, so a model trained on small integers sees a
denser class balance than it meets at test time.  This script measures how
far apart the per-block count distributions are.
"""

import numpy as np

from sparseprime.analysis import CountDistribution, range_divergence
from sparseprime.numtheory import pnt_curve, prime_block_counts

blocks = prime_block_counts(0, 3_000_000, 1000)
mids, expected = pnt_curve(0, 3_000_000, 1000)
# skip the first block, where 1/ln n is a poor local estimate
err = np.abs(blocks.counts[1:] - expected[1:]) / expected[1:]
print(f"mean relative gap between block counts and 1000/ln(n): {err.mean():.3f}")

for first, last in [(0, 1000), (1000, 2000), (2000, 3000)]:
    chunk = blocks.counts[first:last]
    print(f"blocks {first}-{last}: mean {chunk.mean():.2f} primes per 1000 integers")

test = (1_000_000, 3_000_000)
for train in [(0, 1_000_000), (10_000, 1_000_000), (0, 100_000)]:
    d = range_divergence(train, test, 1000)
    print(f"train {train} vs test {test}: "
          f"W1={d['wasserstein1']:.3f}  JS(base 2)={d['js_divergence_base2']:.4f}  "
          f"JS distance={d['js_distance_base2']:.4f}")

# For these ranges the two count distributions barely overlap, so W1 is
# just the difference of the means.
p = CountDistribution.from_counts(prime_block_counts(0, 100_000))
q = CountDistribution.from_counts(prime_block_counts(*test))
print("mean counts:", round(p.mean(), 3), round(q.mean(), 3))
