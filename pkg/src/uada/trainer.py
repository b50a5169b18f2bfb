"""Training loop with per-batch adaptive augmentation, reports and comparisons.

Each batch: sample a pipeline, adapt one of its scalars against the current
(frozen) weights, augment with the chosen pipeline, then take one SGD step.
All randomness comes from named substreams of ``cfg.seed``: ``init``,
``shuffle``, ``sampling`` (per epoch and batch) and ``random-sign`` (per
epoch and batch), so reports do not depend on the worker count.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import nn
from .adapt import AdaptOutcome, ModelLossEvaluator, Strategy, adapt_step
from .augment import Registry, adaptable_params, sample_pipeline
from .checkpoint import atomic_write_bytes, save_checkpoint
from .config import TrainerConfig, dump_flat
from .data import Dataset, batches, load_dataset, n_batches
from .rng import derive_seed, substream

log = logging.getLogger(__name__)

REPORT_VERSION = 1
METRIC_COLUMNS = ("epoch", "train_loss", "loss_gap", "test_acc", "lr", "fwd", "bwd", "cache_hits")


class InvariantViolation(RuntimeError):
    pass


@dataclass
class BatchRecord:
    epoch: int
    batch: int
    n_adaptable: int
    forward_evals: int
    cache_hits: int
    base_loss: float
    chosen_loss: float
    train_loss: float
    pipeline: str


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    loss_gap: float
    test_acc: float
    test_loss: float
    lr: float
    fwd: int
    bwd: int
    cache_hits: int
    train_seconds: float = 0.0
    eval_seconds: float = 0.0

    def metrics_row(self) -> list:
        return [self.epoch, self.train_loss, self.loss_gap, self.test_acc, self.lr,
                self.fwd, self.bwd, self.cache_hits]


@dataclass
class RunReport:
    config: dict
    seed: int
    epochs: list[EpochRecord]
    batches: list[BatchRecord]
    final_accuracy: float
    totals: dict
    model_checksum: str
    model: nn.Model | None = field(default=None, repr=False)

    def to_json(self) -> dict:
        """Deterministic content only; wall-clock timings live in timing.csv."""
        return {
            "format_version": REPORT_VERSION,
            "seed": self.seed,
            "config": {k: list(v) if isinstance(v, tuple) else v for k, v in self.config.items()},
            "final_accuracy": self.final_accuracy,
            "final_accuracy_rule": "last-epoch",
            "epochs": [
                {"epoch": e.epoch, "train_loss": e.train_loss, "loss_gap": e.loss_gap,
                 "test_acc": e.test_acc, "test_loss": e.test_loss, "lr": e.lr,
                 "fwd": e.fwd, "bwd": e.bwd, "cache_hits": e.cache_hits}
                for e in self.epochs
            ],
            "totals": self.totals,
            "model_checksum": self.model_checksum,
        }

    @property
    def train_seconds(self) -> float:
        return sum(e.train_seconds for e in self.epochs)


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _csv_bytes(header: Sequence[str], rows: Sequence[Sequence]) -> bytes:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue().encode("utf-8")


def write_report(report: RunReport, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    atomic_write_bytes(out / "report.json",
                       (json.dumps(report.to_json(), indent=2, sort_keys=True) + "\n").encode())
    atomic_write_bytes(out / "metrics.csv",
                       _csv_bytes(METRIC_COLUMNS, [e.metrics_row() for e in report.epochs]))
    atomic_write_bytes(out / "batches.csv", _csv_bytes(
        ("epoch", "batch", "adaptable", "fwd", "cache_hits", "base_loss", "chosen_loss",
         "train_loss", "pipeline"),
        [(b.epoch, b.batch, b.n_adaptable, b.forward_evals, b.cache_hits, b.base_loss,
          b.chosen_loss, b.train_loss, b.pipeline) for b in report.batches],
    ))
    atomic_write_bytes(out / "timing.csv", _csv_bytes(
        ("epoch", "train_seconds", "eval_seconds"),
        [(e.epoch, round(e.train_seconds, 4), round(e.eval_seconds, 4)) for e in report.epochs],
    ))
    atomic_write_bytes(out / "config.txt", dump_flat(report.config).encode())


def evaluate(m: nn.Model, d: Dataset, batch_size: int = 500) -> tuple[float, float]:
    """Top-1 accuracy and mean loss on un-augmented data; argmax ties go to the lowest class."""
    correct = 0
    total_loss = 0.0
    for start in range(0, len(d), batch_size):
        x = d.images[start:start + batch_size]
        y = d.labels[start:start + batch_size]
        logits = nn.forward(m, x)
        correct += int((np.argmax(logits, axis=1) == y).sum())
        total_loss += nn.loss(logits, y, reduction="sum")
    return correct / len(d), total_loss / len(d)


def build_model(cfg: TrainerConfig, input_shape, num_classes: int) -> nn.Model:
    init_seed = derive_seed(cfg.seed, "init")
    if cfg.arch == "mlp-s":
        spec = nn.mlp_s(input_shape, num_classes, init_seed, hidden=cfg.hidden)
    else:
        spec = nn.ARCHITECTURES[cfg.arch](input_shape, num_classes, init_seed)
    return nn.init_model(spec)


def train(
    cfg: TrainerConfig,
    out_dir=None,
    workers: int = 1,
    datasets: tuple[Dataset, Dataset] | None = None,
    check_invariants: bool = True,
    on_batch: Callable[[BatchRecord, AdaptOutcome], None] | None = None,
) -> RunReport:
    """Train one model; write report files and a checkpoint when ``out_dir`` is given."""
    train_set, test_set = datasets if datasets is not None else load_dataset(cfg.data)
    model = build_model(cfg, train_set.input_shape, train_set.num_classes)
    _, h, w = train_set.input_shape
    registry = Registry(cfg.ops, h, w)
    per_epoch = n_batches(len(train_set), cfg.batch_size)
    total_steps = cfg.epochs * per_epoch
    shuffle_seed = derive_seed(cfg.seed, "shuffle")
    strategy = cfg.adapt.strategy
    check_non_decrease = (
        check_invariants and strategy is Strategy.MAXIMIZE and cfg.adapt.include_original_in_selection
    )

    executor = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    epochs: list[EpochRecord] = []
    batch_log: list[BatchRecord] = []
    adapt_forward = 0
    eval_forward = 0
    total_hits = 0
    step = 0
    accuracy, test_loss = float("nan"), float("nan")
    try:
        for epoch in range(cfg.epochs):
            t0 = time.perf_counter()
            fwd0, bwd0 = model.forward_count, model.backward_count
            loss_sum = gap_sum = 0.0
            hits = 0
            lr = 0.0
            for bi, batch in enumerate(batches(train_set, cfg.batch_size, shuffle_seed, epoch)):
                p = sample_pipeline(substream(cfg.seed, "sampling", epoch, bi), registry, cfg.n_ops)
                rng = substream(cfg.seed, "random-sign", epoch, bi) if strategy is Strategy.RANDOM else None
                evaluator = ModelLossEvaluator(model, batch, executor, keep_tapes=True)
                outcome = adapt_step(evaluator, p, cfg.adapt, rng)
                m_count = 0 if strategy is Strategy.NONE else len(adaptable_params(p))
                if check_non_decrease and not outcome.chosen_loss >= outcome.base_loss:
                    raise InvariantViolation(
                        f"epoch {epoch} batch {bi}: chosen loss {outcome.chosen_loss} "
                        f"< base loss {outcome.base_loss}"
                    )
                if check_invariants and strategy is not Strategy.NONE and (
                    outcome.forward_evals != 1 + 2 * m_count - outcome.cache_hits
                ):
                    raise InvariantViolation(f"epoch {epoch} batch {bi}: forward budget mismatch")

                # backpropagate through the forward pass that produced the chosen loss
                value, grads = nn.backward_tape(model, evaluator.tapes[outcome.chosen], batch.labels)
                evaluator.tapes.clear()
                if not math.isfinite(value):
                    raise nn.TrainingAborted(
                        f"non-finite loss at epoch {epoch} batch {bi} "
                        f"(global step {step}); pipeline {outcome.chosen.describe()}"
                    )
                try:
                    lr = nn.sgd_step(model, grads, cfg.optim, step, total_steps)
                except nn.TrainingAborted as exc:
                    raise nn.TrainingAborted(
                        f"{exc} (epoch {epoch} batch {bi}); pipeline {outcome.chosen.describe()}"
                    ) from None
                step += 1
                adapt_forward += outcome.forward_evals
                hits += outcome.cache_hits
                loss_sum += value
                gap_sum += outcome.loss_gap
                record = BatchRecord(epoch, bi, m_count, outcome.forward_evals, outcome.cache_hits,
                                     outcome.base_loss, outcome.chosen_loss, value,
                                     outcome.chosen.describe())
                batch_log.append(record)
                if on_batch is not None:
                    on_batch(record, outcome)
            train_seconds = time.perf_counter() - t0
            fwd_train = model.forward_count - fwd0

            t1 = time.perf_counter()
            if (epoch + 1) % cfg.eval_every == 0 or epoch == cfg.epochs - 1:
                before = model.forward_count
                accuracy, test_loss = evaluate(model, test_set)
                eval_forward += model.forward_count - before
            eval_seconds = time.perf_counter() - t1
            total_hits += hits
            epochs.append(EpochRecord(
                epoch=epoch + 1,
                train_loss=loss_sum / per_epoch,
                loss_gap=gap_sum / per_epoch,
                test_acc=accuracy,
                test_loss=test_loss,
                lr=lr,
                fwd=fwd_train,
                bwd=model.backward_count - bwd0,
                cache_hits=hits,
                train_seconds=train_seconds,
                eval_seconds=eval_seconds,
            ))
            log.info("epoch %d loss %.4f gap %.4f acc %.4f", epoch + 1, epochs[-1].train_loss,
                     epochs[-1].loss_gap, accuracy)
    finally:
        if executor is not None:
            executor.shutdown()

    totals = {
        "forward": model.forward_count,
        "adapt_forward": adapt_forward,
        "eval_forward": eval_forward,
        "backward": model.backward_count,
        "batches": step,
        "cache_hits": total_hits,
    }
    if check_invariants and (
        totals["forward"] != adapt_forward + eval_forward or totals["backward"] != step
    ):
        raise InvariantViolation(f"counter totals do not reconcile: {totals}")
    report = RunReport(
        config=cfg.to_flat(),
        seed=cfg.seed,
        epochs=epochs,
        batches=batch_log,
        final_accuracy=epochs[-1].test_acc,
        totals=totals,
        model_checksum=model.checksum(),
        model=model,
    )
    if out_dir is not None:
        write_report(report, out_dir)
        save_checkpoint(model, Path(out_dir) / "model.ckpt")
    return report


# ---------------------------------------------------------------------------
# comparisons
# ---------------------------------------------------------------------------

@dataclass
class ComparisonRow:
    label: str
    strategy: str
    epsilon: int
    seeds: list[int]
    accuracies: list[float]

    @property
    def mean(self) -> float:
        return statistics.fmean(self.accuracies)

    @property
    def sd(self) -> float:
        return statistics.stdev(self.accuracies) if len(self.accuracies) > 1 else 0.0


@dataclass
class ComparisonReport:
    kind: str
    rows: list[ComparisonRow]
    reports: dict[tuple[str, int], RunReport] = field(default_factory=dict, repr=False)

    def row(self, label: str) -> ComparisonRow:
        for r in self.rows:
            if r.label == label:
                return r
        raise KeyError(label)

    def aggregate_csv(self) -> bytes:
        return _csv_bytes(
            ("label", "strategy", "epsilon", "runs", "mean_acc", "sd_acc", "accuracies"),
            [(r.label, r.strategy, r.epsilon, len(r.accuracies), r.mean, r.sd,
              ";".join(repr(a) for a in r.accuracies)) for r in self.rows],
        )

    def table_csv(self) -> bytes:
        """Wide layout: one column per row label, mean and sd as rows."""
        header = [self.kind] + [r.label for r in self.rows]
        return _csv_bytes(header, [
            ["mean_acc"] + [r.mean for r in self.rows],
            ["sd_acc"] + [r.sd for r in self.rows],
        ])

    def format_table(self) -> str:
        lines = [f"{'row':<12}{'mean':>10}{'sd':>10}  runs"]
        for r in self.rows:
            lines.append(f"{r.label:<12}{100 * r.mean:>9.2f}%{100 * r.sd:>9.2f}%  {len(r.accuracies)}")
        return "\n".join(lines)


def _run_grid(kind, base_cfg: TrainerConfig, rows_spec, seeds, out_dir, workers, datasets):
    if datasets is None:
        datasets = load_dataset(base_cfg.data)
    rows = []
    reports = {}
    for label, cfg_row in rows_spec:
        accs = []
        for seed in seeds:
            cfg = cfg_row.with_overrides(train__seed=seed)
            run_dir = None if out_dir is None else Path(out_dir) / f"{label}_seed{seed}"
            rep = train(cfg, run_dir, workers=workers, datasets=datasets)
            rep.model = None
            reports[(label, seed)] = rep
            accs.append(rep.final_accuracy)
            log.info("%s %s seed %d acc %.4f", kind, label, seed, rep.final_accuracy)
        rows.append(ComparisonRow(label, cfg_row.adapt.strategy.value,
                                  0 if cfg_row.adapt.strategy is Strategy.NONE else cfg_row.adapt.epsilon,
                                  list(seeds), accs))
    result = ComparisonReport(kind, rows, reports)
    if out_dir is not None:
        atomic_write_bytes(Path(out_dir) / "aggregate.csv", result.aggregate_csv())
        atomic_write_bytes(Path(out_dir) / "table.csv", result.table_csv())
    return result


def run_ablation(
    base_cfg: TrainerConfig, strategies: Sequence, seeds: Sequence[int] = (0, 1, 2, 3, 4),
    out_dir=None, workers: int = 1, datasets=None,
) -> ComparisonReport:
    """One run per (strategy, seed); mean and sd of final accuracy per strategy."""
    rows_spec = []
    for s in strategies:
        strategy = Strategy.parse(s)
        rows_spec.append((strategy.value, base_cfg.with_overrides(adapt__strategy=strategy.value)))
    return _run_grid("strategy", base_cfg, rows_spec, seeds, out_dir, workers, datasets)


def run_epsilon_sweep(
    base_cfg: TrainerConfig, epsilons: Sequence[int] = (1, 2, 3), seeds: Sequence[int] = (0, 1, 2, 3, 4),
    out_dir=None, workers: int = 1, datasets=None,
) -> ComparisonReport:
    """Baseline (no adaptation, reported as epsilon 0) plus one row per epsilon."""
    strategy = base_cfg.adapt.strategy
    if strategy is Strategy.NONE:
        strategy = Strategy.MAXIMIZE
    rows_spec = [("0", base_cfg.with_overrides(adapt__strategy="none"))]
    for eps in epsilons:
        rows_spec.append((str(int(eps)), base_cfg.with_overrides(
            adapt__strategy=strategy.value, adapt__epsilon=int(eps))))
    return _run_grid("epsilon", base_cfg, rows_spec, seeds, out_dir, workers, datasets)
