"""Command-line entry point: ``sparseprime <command> ...``.

Exit codes: 0 success, 1 selftest failure, 2 usage or configuration error,
3 training diverged.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

from . import ndcompute as nd
from .analysis import (
    METRIC_KEYS, fp_consistency, fpr_by_factor_count, fpr_trend_holds, range_divergence,
    write_block_counts_csv, write_csv, write_fpr_csv, write_metrics_csv,
)
from .config import ConfigError, RunConfig, config_hash, dump_config, load_config, load_sweep
from .dataset import RangeSpec, enumerate_windows, write_bitmap
from .model import load_checkpoint
from .numtheory import pnt_curve, prime_block_counts, sieve_range
from .selftest import run_selftest, sign_flipped
from .training import TrainingDiverged, evaluate, read_fp_set, train_run, write_fp_set

EXIT_OK, EXIT_SELFTEST, EXIT_USAGE, EXIT_DIVERGED = 0, 1, 2, 3
RUN_ROOT_ENV = "SPARSEPRIME_RUN_ROOT"
EVAL_KEYS = ("checkpoint", "config_hash", "offset", "lo", "hi", "threshold", "subsample",
             "n_evaluated", "n_false_positives") + METRIC_KEYS
SUMMARY_HEADER = ("cell", "config_hash", "iterations", "best_mean_recall") + METRIC_KEYS

log = logging.getLogger("sparseprime")


class UsageError(Exception):
    pass


def _run_root() -> Path:
    return Path(os.environ.get(RUN_ROOT_ENV, "runs"))


def _default_dir(kind: str, cfg: RunConfig, h: str) -> Path:
    return _run_root() / kind / f"{cfg.name}-{h[:8]}"


# -- primes ----------------------------------------------------------------

def cmd_primes_scan(args) -> int:
    if args.lo >= args.hi:
        raise UsageError(f"empty range: lo={args.lo} >= hi={args.hi}")
    rng = RangeSpec(args.offset, args.lo, args.hi)
    bm = sieve_range(rng.lo, rng.hi)
    if args.bitmap:
        write_bitmap(args.bitmap, bm, rng)
    print(bm.count())
    return EXIT_OK


# -- dataset ---------------------------------------------------------------

def cmd_dataset_stats(args) -> int:
    cfg = load_config(args.config)
    h = config_hash(cfg)
    out = Path(args.out) if args.out else _default_dir("stats", cfg, h)
    bs = cfg.block_size
    tr, te = cfg.split.train, cfg.split.test
    for name, r in (("train", tr), ("test", te)):
        if r.span % bs:
            raise UsageError(f"{name} span {r.span} is not a multiple of block_size {bs}")
    train_blocks = prime_block_counts(tr.lo, tr.hi, bs)
    test_blocks = prime_block_counts(te.lo, te.hi, bs)
    write_block_counts_csv(out / "blocks_train.csv", train_blocks, h)
    write_block_counts_csv(out / "blocks_test.csv", test_blocks, h)

    rows = []
    for r in (tr, te):
        mids, expected = pnt_curve(r.lo, r.hi, bs)
        rows.extend(zip(mids.tolist(), expected.tolist()))
    write_csv(out / "pnt_curve.csv", ("block_mid", "expected_count"), rows, h)

    div = range_divergence((tr.lo, tr.hi), (te.lo, te.hi), bs)
    write_metrics_csv(out / "divergence.csv", div, h)
    for k, v in div.items():
        print(f"{k}\t{v:.6g}")
    print(f"wrote {out}")
    return EXIT_OK


# -- train -----------------------------------------------------------------

def _train_one(cfg: RunConfig, run_dir: Path) -> tuple[str, object]:
    h = config_hash(cfg)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.txt").write_text(dump_config(cfg))
    log.info("training %s -> %s", cfg.name, run_dir)
    result = train_run(cfg.train, run_dir, h)
    return h, result


def _summary_row(name: str, h: str, result) -> tuple:
    best = max((r.report.mean_recall for r in result.log.records if r.report.mean_recall is not None),
               default=None)
    d = result.final.report.as_dict()
    return (name, h, result.log.records[-1].iteration, best) + tuple(d[k] for k in METRIC_KEYS)


def cmd_train(args) -> int:
    if args.config:
        cfg = load_config(args.config)
        h = config_hash(cfg)
        run_dir = Path(args.run_dir) if args.run_dir else _default_dir("train", cfg, h)
        h, result = _train_one(cfg, run_dir)
        for k, v in result.final.report.as_dict().items():
            print(f"{k}\t{v}")
        print(f"wrote {run_dir}")
        return EXIT_OK

    cells = load_sweep(args.sweep)
    root = Path(args.run_dir) if args.run_dir else _run_root() / "sweep" / Path(args.sweep).stem
    rows = []
    for cfg in cells:
        h, result = _train_one(cfg, root / cfg.name)
        rows.append(_summary_row(cfg.name, h, result))
    sweep_hash = hashlib.sha256("".join(dump_config(c) for c in cells).encode()).hexdigest()[:16]
    write_csv(root / "summary.csv", SUMMARY_HEADER, rows, sweep_hash)
    print(f"wrote {root / 'summary.csv'}")
    return EXIT_OK


# -- eval ------------------------------------------------------------------

def cmd_eval(args) -> int:
    if args.lo >= args.hi:
        raise UsageError(f"empty range: lo={args.lo} >= hi={args.hi}")
    if not 0 < args.subsample <= 1:
        raise UsageError("--subsample must lie in (0, 1]")
    if not 0 <= args.threshold <= 1:
        raise UsageError("--threshold must lie in [0, 1]")
    try:
        state, meta = load_checkpoint(args.checkpoint)
    except (OSError, KeyError) as exc:
        raise UsageError(f"cannot load checkpoint {args.checkpoint}: {exc}") from None
    rng = RangeSpec(args.offset, args.lo, args.hi)
    state.config.shape.check_span(rng.end)
    if enumerate_windows(rng, state.config.shape.L) == 0:
        raise UsageError("range is shorter than one window")
    result = evaluate(state, rng, args.subsample, args.threshold, seed=args.seed)
    # the hash of the training run, when the checkpoint sits inside one
    h = meta.get("config_hash")
    cfg_file = Path(args.checkpoint).resolve().parent.parent / "config.txt"
    if h is None and cfg_file.exists():
        h = config_hash(load_config(cfg_file))
    out = {
        "checkpoint": str(args.checkpoint), "config_hash": h, "offset": rng.offset,
        "lo": rng.start, "hi": rng.end, "threshold": args.threshold, "subsample": args.subsample,
        "n_evaluated": int(result.labels.size), "n_false_positives": int(result.false_positives.size),
    }
    out.update(result.report.as_dict())
    if args.fp_out:
        write_fp_set(args.fp_out, result.false_positives, h)

    if args.format == "json":
        text = json.dumps({k: out[k] for k in EVAL_KEYS}, indent=2) + "\n"
        if args.out:
            Path(args.out).write_text(text)
        else:
            sys.stdout.write(text)
    else:
        if args.out:
            write_metrics_csv(args.out, {k: out[k] for k in EVAL_KEYS})
        else:
            sys.stdout.write("metric,value\n")
            for k in EVAL_KEYS:
                v = out[k]
                sys.stdout.write(f"{k},{'NA' if v is None else v}\n")
    return EXIT_OK


# -- analyze ---------------------------------------------------------------

def cmd_analyze_fp(args) -> int:
    run = Path(args.run)
    cfg = load_config(run / "config.txt")
    h = config_hash(cfg)
    files = sorted((run / "fp").glob("iter_*.txt"))
    if not files:
        raise UsageError(f"no false-positive sets under {run / 'fp'}")
    if args.last < 2:
        raise UsageError("--last must be >= 2")
    test = cfg.split.test
    # only the tiled part of the test range was ever scored
    covered = enumerate_windows(test, cfg.split.shape.L) * cfg.split.shape.L
    lo, hi = test.lo, test.lo + covered
    table = fpr_by_factor_count(read_fp_set(files[-1]), lo, hi)
    write_fpr_csv(run / "fpr_by_omega.csv", table, h)

    recent = files[-args.last:]
    cons = fp_consistency([read_fp_set(f) for f in recent]) if len(recent) >= 2 else None
    iou, jac = cons if cons is not None else (None, None)
    write_csv(run / "fp_consistency.csv", ("n_sets", "first", "last", "iou", "mean_jaccard"),
              [(len(recent), recent[0].stem, recent[-1].stem, iou, jac)], h)

    for k, b in sorted(table.items()):
        print(f"omega={k}\ttotal={b.total}\tmisclassified={b.misclassified}\tfpr={b.fpr:.4f}")
    print(f"consistency over {len(recent)} sets: iou={iou} mean_jaccard={jac}")
    for omegas in ((2, 3), (2, 3, 4)):
        verdict = "PASS" if fpr_trend_holds(table, omegas) else "FAIL"
        print(f"fpr decreasing over omega {omegas}: {verdict}")
    return EXIT_OK


# -- selftest --------------------------------------------------------------

def cmd_selftest(args) -> int:
    if args.inject_sign_flip and args.inject_sign_flip not in nd.BACKWARD:
        raise UsageError(f"unknown op {args.inject_sign_flip!r}; choose from {sorted(nd.BACKWARD)}")
    if args.inject_sign_flip:
        with sign_flipped(args.inject_sign_flip):
            results = run_selftest(args.seed)
    else:
        results = run_selftest(args.seed)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name}: {r.detail}")
    return EXIT_OK if all(r.passed for r in results) else EXIT_SELFTEST


# -- parser ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sparseprime", description="Sparse-encoded primality classifier toolkit.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    primes = sub.add_parser("primes", help="prime ground truth").add_subparsers(dest="action", required=True)
    scan = primes.add_parser("scan", help="count primes in offset+[lo, hi)")
    scan.add_argument("--lo", type=int, required=True)
    scan.add_argument("--hi", type=int, required=True)
    scan.add_argument("--offset", type=int, default=0)
    scan.add_argument("--bitmap", help="also write the primality bitmap to this file")
    scan.set_defaults(func=cmd_primes_scan)

    dataset = sub.add_parser("dataset", help="dataset statistics").add_subparsers(dest="action", required=True)
    stats = dataset.add_parser("stats", help="per-block counts and train/test divergence")
    stats.add_argument("--config", required=True)
    stats.add_argument("--out", help="output directory")
    stats.set_defaults(func=cmd_dataset_stats)

    train = sub.add_parser("train", help="train one configuration or a sweep")
    src = train.add_mutually_exclusive_group(required=True)
    src.add_argument("--config")
    src.add_argument("--sweep")
    train.add_argument("--run-dir", help=f"output directory (default under ${RUN_ROOT_ENV})")
    train.set_defaults(func=cmd_train)

    ev = sub.add_parser("eval", help="score a checkpoint on a range")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--lo", type=int, required=True)
    ev.add_argument("--hi", type=int, required=True)
    ev.add_argument("--offset", type=int, default=0)
    ev.add_argument("--subsample", type=float, default=1.0)
    ev.add_argument("--threshold", type=float, default=0.5)
    ev.add_argument("--seed", type=int, default=0, help="window subsampling seed")
    ev.add_argument("--format", choices=("json", "csv"), default="json")
    ev.add_argument("--out", help="write the report here instead of stdout")
    ev.add_argument("--fp-out", help="write the false-positive integers here")
    ev.set_defaults(func=cmd_eval)

    analyze = sub.add_parser("analyze", help="post-run analysis").add_subparsers(dest="action", required=True)
    fp = analyze.add_parser("fp", help="false-positive rate by prime-factor count")
    fp.add_argument("--run", required=True, help="training run directory")
    fp.add_argument("--last", type=int, default=3, help="number of trailing FP sets to compare")
    fp.set_defaults(func=cmd_analyze_fp)

    st = sub.add_parser("selftest", help="built-in correctness checks")
    st.add_argument("--inject-sign-flip", metavar="OP", help="negate one backward rule first")
    st.add_argument("--seed", type=int, default=0)
    st.set_defaults(func=cmd_selftest)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except ConfigError as exc:
        where = f" (key: {exc.key})" if exc.key else ""
        print(f"error: {exc}{where}", file=sys.stderr)
        return EXIT_USAGE
    except (UsageError, ValueError, OverflowError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
