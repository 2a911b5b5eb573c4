"""
A small training run end to end
===============================

Train on [0, 20000), test on [20000, 40000), then look at which composites
the model mistakes for primes.  With O = 30 the last coordinate is
s mod 30, which exposes divisibility by 2, 3 and 5.  Takes about a minute.
"""

from pathlib import Path
import tempfile

from sparseprime.analysis import fpr_by_factor_count, fpr_trend_holds
from sparseprime.config import config_hash, parse_config
from sparseprime.dataset import enumerate_windows
from sparseprime.training import evaluate, steps_per_epoch, train_run

cfg = parse_config("""
name = small
train.end = 20000
test.start = 20000
test.end = 40000
shape.M = 50
shape.N = 30
shape.O = 30
shape.L = 15
model.d_model = 32
sample_fraction = 0.25
epochs = 4
eval_every = 100
""")
print("optimizer steps per epoch:", steps_per_epoch(cfg.train))

run_dir = Path(tempfile.mkdtemp(prefix="sparseprime_"))
result = train_run(cfg.train, run_dir, config_hash(cfg))
for rec in result.log.full_records():
    r = rec.report
    print(f"epoch {rec.epoch} iter {rec.iteration}: recall prime {r.recall_prime:.3f} "
          f"non-prime {r.recall_nonprime:.3f} auc {r.auc:.3f}")

best = evaluate(result.best_state, cfg.split.test)
print("best checkpoint:", {k: round(v, 4) for k, v in best.report.as_dict().items()
                           if isinstance(v, float)})

# Composites with fewer prime factors are the hard ones.
test = cfg.split.test
hi = test.lo + enumerate_windows(test, cfg.split.shape.L) * cfg.split.shape.L
table = fpr_by_factor_count(best.false_positives, test.lo, hi)
for k, bucket in sorted(table.items())[:6]:
    print(f"omega={k}: {bucket.misclassified}/{bucket.total} misclassified (fpr {bucket.fpr:.3f})")
print("fpr decreasing over omega 2, 3, 4:", fpr_trend_holds(table))
print("run directory:", run_dir)
