"""Evaluation and analysis metrics, plus the append-only run log.

Accuracy metrics follow the anytime-evaluation conventions of online
continual learning: ``tau`` is the 1-based index of the last data batch
trained on, and ``per_task_acc`` lists accuracies on every task seen so far.
"""

import csv
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

from . import precond
from .linalg import frobenius_norm
from .net import InputError

SUMMARY_COLUMNS = ["method", "seed", "omega0", "beta", "T", "p", "capacity",
                   "acc", "aaa", "wc_acc", "mean_tv", "mean_drift"]


@dataclass
class EvalRecord:
    tau: int
    per_task_acc: list
    loss: float = float("nan")
    ratios: dict = field(default_factory=dict)
    drift: float = None


@dataclass
class RunLog:
    task_boundaries: list = field(default_factory=list)
    records: list = field(default_factory=list)
    final_test_acc: list = None

    def append(self, record):
        if self.records and record.tau <= self.records[-1].tau:
            raise InputError(f"record tau {record.tau} is not after {self.records[-1].tau}")
        if any(not 0.0 <= a <= 1.0 for a in record.per_task_acc):
            raise InputError("accuracies must lie in [0, 1]")
        self.records.append(record)

    def tasks_seen(self, tau):
        """Number of tasks trained on once batch ``tau`` has been processed."""
        return 1 + sum(1 for b in self.task_boundaries[:-1] if b < tau)

    def series(self, task):
        """(taus, accuracies) for one task, from the first record that includes it."""
        pts = [(r.tau, r.per_task_acc[task]) for r in self.records if len(r.per_task_acc) > task]
        return [p[0] for p in pts], [p[1] for p in pts]


def _require(log):
    if not log.records:
        raise InputError("run log is empty")


def final_acc(log):
    """Mean accuracy over all seen tasks at the end of the stream.

    Uses the held-out test accuracies when the log carries them, otherwise
    the last evaluation record.
    """
    if log.final_test_acc is not None:
        accs = log.final_test_acc
    else:
        _require(log)
        accs = log.records[-1].per_task_acc
    if not accs:
        raise InputError("no per-task accuracies recorded")
    return float(np.mean(accs))


def average_anytime_acc(log):
    _require(log)
    total = 0.0
    for r in log.records:
        if not r.per_task_acc:
            raise InputError(f"no accuracies recorded at tau={r.tau}")
        if log.task_boundaries and len(r.per_task_acc) != log.tasks_seen(r.tau):
            raise InputError(f"expected {log.tasks_seen(r.tau)} task accuracies at tau={r.tau}")
        total += sum(r.per_task_acc) / len(r.per_task_acc)
    return total / len(log.records)


def worst_case_acc(log):
    """Current-task accuracy plus each earlier task's worst accuracy after it ended."""
    _require(log)
    last = log.records[-1]
    k = len(last.per_task_acc)
    if k == 0:
        raise InputError("no accuracies at the final record")
    if k > 1 and len(log.task_boundaries) < k - 1:
        raise InputError("task boundaries are required for worst-case accuracy")
    total = last.per_task_acc[k - 1]
    for i in range(k - 1):
        end = log.task_boundaries[i]
        window = [r.per_task_acc[i] for r in log.records
                  if end < r.tau <= last.tau and len(r.per_task_acc) > i]
        if not window:
            raise InputError(f"no evaluation after the end of task {i + 1}")
        total += min(window)
    return total / k


def representation_drift(series):
    """Summed Euclidean step between consecutive representations.

    ``series`` is ``(steps, dim)`` for one datapoint, or
    ``(steps, points, dim)`` in which case one drift per point is returned.
    """
    z = np.asarray(series, dtype=np.float64)
    if z.ndim < 2 or z.shape[0] < 2:
        raise InputError("need at least two recorded representations")
    steps = np.sqrt(np.sum(np.diff(z, axis=0) ** 2, axis=-1)).sum(axis=0)
    return float(steps) if z.ndim == 2 else steps


class DriftTracker:
    """Streaming version of :func:`representation_drift` for a fixed probe set."""

    def __init__(self):
        self.previous = None
        self.total = None

    def update(self, reps):
        reps = np.asarray(reps, dtype=np.float64)
        if self.previous is not None:
            self.total += np.sqrt(np.sum((reps - self.previous) ** 2, axis=-1))
        else:
            self.total = np.zeros(reps.shape[:-1])
        self.previous = reps.copy()

    @property
    def mean(self):
        return float(np.mean(self.total)) if self.total is not None else 0.0


def total_variation(series):
    x = np.asarray(series, dtype=np.float64)
    if x.size < 2:
        raise InputError("total variation needs at least two points")
    return float(np.abs(np.diff(x)).sum())


def grad_norm_ratio(grads, state):
    """``||Lambda g|| / ||g||`` per layer and over all layers jointly.

    Zero gradients give ``None`` (the ratio is undefined and skipped).
    """
    pre = precond.apply(state, grads)
    per_layer = []
    for g, pg in zip(grads, pre):
        n = frobenius_norm(g)
        per_layer.append(frobenius_norm(pg) / n if n > 0 else None)
    num = math.sqrt(sum(frobenius_norm(pg) ** 2 for pg in pre))
    den = math.sqrt(sum(frobenius_norm(g) ** 2 for g in grads))
    return per_layer, (num / den if den > 0 else None)


def mean_stderr(values):
    """Mean and standard error (sample std / sqrt(n)); stderr is 0 for one value."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise InputError("no values")
    if v.size == 1:
        return float(v[0]), 0.0
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(v.size))


def sign_test(wins, losses):
    """One-sided sign test p-value that wins outnumber losses (ties dropped)."""
    n = wins + losses
    if n == 0:
        return 1.0
    return float(stats.binomtest(wins, n, 0.5, alternative="greater").pvalue)


def write_log(log, path):
    with open(path, "w") as fh:
        for r in log.records:
            fh.write(json.dumps(asdict(r), sort_keys=True) + "\n")


def read_log(path, task_boundaries=()):
    log = RunLog(task_boundaries=list(task_boundaries))
    with open(path) as fh:
        for line in fh:
            if line.strip():
                log.append(EvalRecord(**json.loads(line)))
    return log


def write_summary(rows, path):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=SUMMARY_COLUMNS, extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
