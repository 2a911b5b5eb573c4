"""Resampled-epoch SGD training, evaluation and run-directory output."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import ndcompute as nd
from .analysis import MetricsReport, classification_metrics, roc_auc, write_csv, write_metrics_csv
from .dataset import (
    LabelSource, RangeSpec, SplitConfig, enumerate_windows, make_batches, range_windows,
    sample_epoch, sample_size, stack_batch,
)
from .encoding import EncodingShape
from .model import LossWeights, ModelConfig, ModelState, forward_proba, init_state, predict_proba, save_checkpoint, wce_loss

log = logging.getLogger(__name__)

RUNLOG_HEADER = (
    "iteration", "epoch", "lr", "loss",
    "recall_prime", "recall_nonprime", "precision_prime", "precision_nonprime",
    "f1_prime", "f1_nonprime", "accuracy", "auc",
)
THRESHOLD = 0.5


class TrainingDiverged(ArithmeticError):
    def __init__(self, iteration: int, message: str):
        super().__init__(f"training diverged at iteration {iteration}: {message}")
        self.iteration = iteration


@dataclass(frozen=True)
class TrainConfig:
    split: SplitConfig
    model: ModelConfig
    weights: LossWeights = LossWeights()
    lr0: float = 0.01
    decay_factor: float = 0.5
    patience: int = 5
    batch_size: int = 1
    epochs: int = 10
    eval_every: int = 100
    eval_subsample: float = 0.1
    master_seed: int = 0

    def __post_init__(self):
        if self.lr0 <= 0:
            raise ValueError("lr0 must be positive")
        if not 0 < self.decay_factor < 1:
            raise ValueError("decay_factor must lie in (0, 1)")
        if self.epochs < 1 or self.batch_size < 1 or self.eval_every < 1 or self.patience < 1:
            raise ValueError("epochs, batch_size, eval_every and patience must be >= 1")
        if not 0 < self.eval_subsample <= 1:
            raise ValueError("eval_subsample must lie in (0, 1]")
        if self.model.shape != self.split.shape:
            raise ValueError("model and split use different encoding shapes")


@dataclass(frozen=True)
class EvalRecord:
    iteration: int
    epoch: int
    lr: float
    loss: float
    report: MetricsReport
    full: bool = False

    def row(self) -> tuple:
        r = self.report
        return (
            self.iteration, self.epoch, self.lr, self.loss,
            r.recall_prime, r.recall_nonprime, r.precision_prime, r.precision_nonprime,
            r.f1_prime, r.f1_nonprime, r.accuracy, r.auc,
        )


@dataclass
class RunLog:
    records: list[EvalRecord] = field(default_factory=list)

    def append(self, rec: EvalRecord) -> None:
        if self.records and rec.iteration <= self.records[-1].iteration:
            raise ValueError("RunLog iterations must strictly increase")
        self.records.append(rec)

    def __len__(self) -> int:
        return len(self.records)

    def full_records(self) -> list[EvalRecord]:
        return [r for r in self.records if r.full]

    def write(self, path: str | Path, config_hash: str | None = None) -> Path:
        return write_csv(path, RUNLOG_HEADER, (r.row() for r in self.records), config_hash)


@dataclass(frozen=True)
class EvalResult:
    report: MetricsReport
    false_positives: np.ndarray
    scores: np.ndarray
    labels: np.ndarray
    values: np.ndarray


@dataclass
class TrainResult:
    state: ModelState
    log: RunLog
    best_state: ModelState
    fp_sets: dict[int, np.ndarray]
    checkpoints: list[Path]
    final: EvalResult


def evaluate(state: ModelState, rng: RangeSpec, subsample: float = 1.0, threshold: float = THRESHOLD,
             seed: int = 0, labels: LabelSource | None = None) -> EvalResult:
    """Score the windows of ``rng``; ``p >= threshold`` counts as a prime prediction."""
    shape = state.config.shape
    total = enumerate_windows(rng, shape.L)
    ids = None
    if subsample < 1.0:
        k = sample_size(subsample, total)
        ids = np.sort(np.random.default_rng(seed).choice(total, size=k, replace=False))
    scores, truth, values = [], [], []
    for cols in range_windows(rng, shape, labels, ids):
        scores.append(predict_proba(cols["m"], cols["n"], cols["o"], state).ravel())
        truth.append(cols["labels"].ravel())
        values.append(cols["values"].ravel())
    scores = np.concatenate(scores).astype(np.float64)
    truth = np.concatenate(truth)
    values = np.concatenate(values)
    pred = scores >= threshold
    report = classification_metrics(pred, truth).with_auc(roc_auc(scores, truth))
    fp = np.sort(values[pred & ~truth])
    return EvalResult(report, fp, scores, truth, values)


def write_fp_set(path: str | Path, fp: np.ndarray, config_hash: str | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        if config_hash:
            fh.write(f"# config_hash={config_hash}\n")
        fh.writelines(f"{int(v)}\n" for v in fp)
    return path


def read_fp_set(path: str | Path) -> np.ndarray:
    vals = [int(ln) for ln in Path(path).read_text().splitlines() if ln and not ln.startswith("#")]
    return np.asarray(vals, dtype=np.int64)


class _Decay:
    """Multiply the learning rate when mean recall stalls for ``patience`` evals."""

    def __init__(self, lr: float, factor: float, patience: int):
        self.lr = lr
        self.factor = factor
        self.patience = patience
        self.best: float | None = None
        self.stall = 0

    def update(self, metric: float | None) -> bool:
        """Record one evaluation; returns True when it is a new best."""
        if metric is not None and (self.best is None or metric > self.best):
            self.best = metric
            self.stall = 0
            return True
        self.stall += 1
        if self.stall >= self.patience:
            self.lr *= self.factor
            self.stall = 0
        return False


def train_run(cfg: TrainConfig, run_dir: str | Path | None = None, config_hash: str | None = None) -> TrainResult:
    """Train per ``cfg``; with ``run_dir`` also write the RunLog, checkpoints and FP sets.

    After every epoch the full test range is evaluated; in between, every
    ``eval_every`` iterations, a fixed ``eval_subsample`` fraction of it.
    """
    split = cfg.split
    run_dir = Path(run_dir) if run_dir is not None else None
    cache = run_dir / "labels" if run_dir is not None else None
    train_labels = LabelSource(split.train, cache_dir=cache)
    test_labels = LabelSource(split.test, cache_dir=cache)
    meta = {"seed": cfg.master_seed}
    if config_hash:
        meta["config_hash"] = config_hash
    eval_seed = int(np.random.SeedSequence([cfg.master_seed, 0xE5A1]).generate_state(1)[0])

    state = init_state(cfg.model, seed=cfg.master_seed)
    best_state = state.snapshot()
    decay = _Decay(cfg.lr0, cfg.decay_factor, cfg.patience)
    runlog = RunLog()
    fp_sets: dict[int, np.ndarray] = {}
    checkpoints: list[Path] = []
    iteration = 0
    losses: list[float] = []
    last_loss = float("nan")

    def record(epoch: int, full: bool) -> EvalResult:
        nonlocal best_state, last_loss
        result = evaluate(state, split.test, 1.0 if full else cfg.eval_subsample,
                          seed=eval_seed, labels=test_labels)
        if losses:
            last_loss = float(np.mean(losses))
            losses.clear()
        rec = EvalRecord(iteration, epoch, decay.lr, last_loss, result.report, full)
        if full and runlog.records and runlog.records[-1].iteration == iteration:
            runlog.records.pop()
        runlog.append(rec)
        log.info("iter %d epoch %d lr %.4g loss %.4f recall p/np %s/%s auc %s",
                 iteration, epoch, decay.lr, last_loss, result.report.recall_prime,
                 result.report.recall_nonprime, result.report.auc)
        if decay.update(result.report.mean_recall):
            best_state = state.snapshot()
            if run_dir is not None:
                save_checkpoint(best_state, run_dir / "checkpoints" / "best",
                                iteration=iteration, loss=last_loss, **meta)
        if full:
            fp_sets[iteration] = result.false_positives
            if run_dir is not None:
                write_fp_set(run_dir / "fp" / f"iter_{iteration:08d}.txt", result.false_positives, config_hash)
        return result

    final = None
    for epoch in range(1, cfg.epochs + 1):
        sample = sample_epoch(split, epoch, cfg.master_seed)
        for batch in make_batches(sample, cfg.batch_size, split, train_labels):
            cols = stack_batch(batch)
            try:
                with nd.Tape() as tape:
                    p = forward_proba(cols["m"], cols["n"], cols["o"], state)
                    loss = wce_loss(p, cols["labels"], cfg.weights)
                    tape.backward(loss)
                nd.sgd_step(state.parameters(), [t.grad for t in state.parameters()], decay.lr)
            except nd.NumericError as exc:
                raise TrainingDiverged(iteration, str(exc)) from exc
            finally:
                state.zero_grad()
            iteration += 1
            losses.append(loss.item())
            if iteration % cfg.eval_every == 0:
                record(epoch, full=False)
        final = record(epoch, full=True)
        if run_dir is not None:
            ckpt = save_checkpoint(state, run_dir / "checkpoints" / f"epoch_{epoch:03d}",
                                   iteration=iteration, loss=last_loss, **meta)
            checkpoints.append(ckpt)
            runlog.write(run_dir / "runlog.csv", config_hash)

    if run_dir is not None:
        write_metrics_csv(run_dir / "metrics.csv", final.report.as_dict(), config_hash)
    return TrainResult(state, runlog, best_state, fp_sets, checkpoints, final)


def steps_per_epoch(cfg: TrainConfig) -> int:
    total = enumerate_windows(cfg.split.train, cfg.split.shape.L)
    k = sample_size(cfg.split.sample_fraction, total)
    return -(-k // cfg.batch_size)


def desk_config(**overrides) -> TrainConfig:
    """The desk-scale configuration: train [0, 1e5), test [1e5, 3e5), M=N=O=70, L=15."""
    shape = EncodingShape(70, 70, 70, 15)
    split = SplitConfig(RangeSpec(0, 0, 100_000), RangeSpec(0, 100_000, 300_000), shape, 0.05)
    base = dict(split=split, model=ModelConfig(shape), weights=LossWeights(1.0, 20.0), lr0=0.01)
    base.update(overrides)
    return TrainConfig(**base)
