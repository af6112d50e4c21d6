"""Training, evaluation and the repeated-partition protocol."""
from __future__ import annotations

import csv
import io
import json
import logging
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import nn
from .data import Partition, Sample, make_partitions, stack
from .exceptions import ShapeError
from .models import ModelConfig, SegmentationNet, build_model

log = logging.getLogger(__name__)

IOU_THRESHOLD = 0.5


def iou(pred, target, threshold: float = IOU_THRESHOLD) -> float:
    """Intersection over union of ``pred >= threshold`` and a binary target.

    Two empty masks score 1.
    """
    pred = np.asarray(pred)
    target = np.asarray(target)
    if pred.shape != target.shape:
        raise ShapeError(f"prediction {pred.shape} and target {target.shape} differ")
    p = pred >= threshold
    t = target >= 0.5
    union = np.logical_or(p, t).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(p, t).sum() / union)


def mean_iou(preds, targets, threshold: float = IOU_THRESHOLD) -> float:
    """Per-image IoU averaged over the first axis."""
    return float(np.mean([iou(p, t, threshold) for p, t in zip(preds, targets)]))


@dataclass
class RunResult:
    model: str
    scale: str
    seed: int
    test_iou: float
    epoch_losses: List[float] = field(default_factory=list)


@dataclass
class SummaryStats:
    """Box-plot summary.

    ``upper_quartile``/``lower_quartile`` are the 75th/25th percentiles
    (linear interpolation between order statistics). Whiskers reach the most
    extreme data points within 1.5 IQR of the box; the rest are outliers.
    """

    n: int
    mean: float
    median: float
    upper_quartile: float
    lower_quartile: float
    iqr: float
    whisker_low: float
    whisker_high: float
    outliers: List[float]

    # figure labelling: Q1 is the upper edge of the box, Q3 the lower one
    @property
    def q1(self) -> float:
        return self.upper_quartile

    @property
    def q2(self) -> float:
        return self.median

    @property
    def q3(self) -> float:
        return self.lower_quartile


def aggregate_stats(values: Sequence[float]) -> SummaryStats:
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise ValueError("cannot summarize an empty list")
    lo, med, hi = np.percentile(v, [25, 50, 75], method="linear")
    spread = hi - lo
    low_fence, high_fence = lo - 1.5 * spread, hi + 1.5 * spread
    inside = v[(v >= low_fence) & (v <= high_fence)]
    outliers = sorted(float(x) for x in v[(v < low_fence) | (v > high_fence)])
    return SummaryStats(
        n=int(v.size),
        mean=float(v.mean()),
        median=float(med),
        upper_quartile=float(hi),
        lower_quartile=float(lo),
        iqr=float(spread),
        whisker_low=float(inside.min()),
        whisker_high=float(inside.max()),
        outliers=outliers,
    )


def _tag(config: ModelConfig) -> str:
    return config.variant.value


def train(
    model: SegmentationNet,
    partition: Partition,
    dataset: Sequence[Sample],
    epochs: int = 10,
    batch_size: int = 64,
    lr: float = 1e-3,
) -> RunResult:
    """Adam + BCE over the partition's training ids; reports mean test IoU.

    Each epoch visits the training set in a fresh order drawn from a
    generator seeded with ``partition.seed``.
    """
    by_id = {s.id: s for s in dataset}
    x_train, y_train = stack([by_id[i] for i in partition.train_ids])
    x_test, y_test = stack([by_id[i] for i in partition.test_ids])
    losses = fit_arrays(model, x_train, y_train, epochs, batch_size, lr, shuffle_seed=partition.seed)
    test_iou = mean_iou(model.predict_proba(x_test, batch_size), y_test)
    return RunResult(_tag(model.config), model.config.scale.value, partition.seed, test_iou, losses)


def fit_arrays(
    model: SegmentationNet,
    x: np.ndarray,
    y: np.ndarray,
    epochs: int = 10,
    batch_size: int = 64,
    lr: float = 1e-3,
    shuffle_seed: int = 0,
) -> List[float]:
    """Minibatch Adam on BCE; returns the sample-weighted mean loss per epoch."""
    n = len(x)
    if batch_size > n:
        warnings.warn(f"batch size {batch_size} exceeds {n} training samples; using one batch of {n}")
        batch_size = n

    opt = nn.Adam(model.parameters(), lr=lr)
    rng = np.random.default_rng(shuffle_seed)
    losses = []
    for epoch in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            opt.zero_grad()
            pred = model.forward(x[idx])
            loss = nn.bce_loss(pred, y[idx])
            model.backward(nn.bce_loss_backward(pred, y[idx]))
            opt.step()
            total += loss * len(idx)
        losses.append(total / n)
        log.info("seed %d epoch %d loss %.5f", shuffle_seed, epoch + 1, losses[-1])
    return losses


def _run_one(args):
    config, partition, dataset, epochs, batch_size, lr, model_seed = args
    model = build_model(config, seed=model_seed)
    return train(model, partition, dataset, epochs, batch_size, lr)


def run_protocol(
    config: ModelConfig,
    dataset: Sequence[Sample],
    n_partitions: int = 10,
    train_fraction: float = 0.8,
    epochs: int = 10,
    batch_size: int = 64,
    lr: float = 1e-3,
    model_seed: Optional[int] = None,
    out_dir=None,
    n_jobs: int = 1,
) -> Tuple[List[RunResult], SummaryStats]:
    """Train one fresh model per partition and summarize the test IoUs.

    The model for partition ``k`` is initialized with ``model_seed`` when
    given, else with ``k``. Results are written to ``out_dir`` after every
    run, so a failure leaves the completed runs on disk.
    """
    parts = make_partitions([s.id for s in dataset], n_partitions, train_fraction)
    jobs = [
        (config, p, dataset, epochs, batch_size, lr, p.seed if model_seed is None else model_seed)
        for p in parts
    ]
    results: List[RunResult] = []
    meta = {
        "config": config.to_dict(),
        "partitions": n_partitions,
        "train_fraction": train_fraction,
        "epochs": epochs,
        "batch_size": batch_size,
        "lr": lr,
        "iou": "per-image mean over the test split, threshold 0.5",
    }
    try:
        if n_jobs > 1:
            from concurrent.futures import ProcessPoolExecutor

            with ProcessPoolExecutor(n_jobs) as pool:
                for res in pool.map(_run_one, jobs):
                    results.append(res)
        else:
            for job in jobs:
                results.append(_run_one(job))
                if out_dir is not None:
                    write_results(out_dir, results, None, meta)
    except Exception:
        if out_dir is not None and results:
            write_results(out_dir, results, None, meta)
        raise
    stats = aggregate_stats([r.test_iou for r in results])
    if out_dir is not None:
        write_results(out_dir, results, stats, meta)
    return results, stats


def results_csv(results: Sequence[RunResult]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["model", "scale", "seed", "test_iou", "epoch_losses"])
    for r in results:
        writer.writerow([r.model, r.scale, r.seed, repr(r.test_iou), " ".join(repr(x) for x in r.epoch_losses)])
    return buf.getvalue()


def write_results(out_dir, results: Sequence[RunResult], stats: Optional[SummaryStats], meta: Dict) -> None:
    """``runs.csv`` (one row per run) and ``summary.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "runs.csv").write_text(results_csv(results))
    summary = {"meta": meta, "runs": len(results), "stats": None if stats is None else asdict(stats)}
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
