"""Online training loop, multi-seed sweeps and result emission."""

import dataclasses
import itertools
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import metrics, optim, precond
from . import net as nn
from .buffer import ReplayBuffer, stack_items
from .stream import SplitGaussianSpec, generate, next_batch

log = logging.getLogger(__name__)

METHODS = ("er", "lpr", "projection", "sgd_no_replay")
OUTPUT_ENV = "LPRLAB_OUTPUT_DIR"

# search grids used for hyperparameter selection
ETA_GRID = (0.01, 0.05, 0.1)
OMEGA0_GRID = (0.04, 0.25, 1.0, 4.0, 100.0)
BETA_GRID = (1.0, 2.0)


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    method: str = "lpr"
    stream: str = "class"
    num_tasks: int = 5
    classes_per_task: int = 2
    input_dim: int = 32
    cluster_separation: float = 4.0
    cluster_std: float = 1.5
    batches_per_task: int = 200
    n_tau: int = 10
    eval_size: int = 200
    shuffle_tasks: bool = True
    drift: float = 1.0
    hidden: tuple = (64, 64)
    eta: float = 0.1
    steps: int = 3
    alpha: float = 1.0
    replay_size: int = 10
    capacity: float = 200
    omega0: float = 4.0
    beta: float = 2.0
    T: int = 10
    p: float = 1.0
    alpha_proj: float = 1e-3
    seed: int = 0
    eval_every: int = 10
    probe_size: int = 32
    track_ratios: bool = True
    output: str = None

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.capacity in ("inf", "unlimited", None):
            self.capacity = math.inf
        self.validate()

    def validate(self):
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.eta <= 0:
            raise ConfigError("eta must be positive")
        if self.steps < 1 or self.T < 1 or self.eval_every < 1:
            raise ConfigError("steps, T and eval_every must be >= 1")
        if not 0 < self.p <= 1:
            raise ConfigError("p must lie in (0, 1]")
        if self.alpha < 0 or self.alpha_proj <= 0:
            raise ConfigError("alpha must be nonnegative and alpha_proj positive")
        if self.omega0 < 0 or self.beta < 0:
            raise ConfigError("omega0 and beta must be nonnegative")
        if self.capacity < 0:
            raise ConfigError("capacity must be nonnegative")

    def stream_spec(self):
        return SplitGaussianSpec(
            num_tasks=self.num_tasks, classes_per_task=self.classes_per_task,
            input_dim=self.input_dim, cluster_separation=self.cluster_separation,
            cluster_std=self.cluster_std, batches_per_task=self.batches_per_task,
            n_tau=self.n_tau, seed=self.seed, eval_size=self.eval_size,
            shuffle_tasks=self.shuffle_tasks, drift=self.drift)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["hidden"] = list(self.hidden)
        if d["capacity"] == math.inf:
            d["capacity"] = "inf"
        return d

    @classmethod
    def from_dict(cls, data):
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        return cls(**data)


@dataclass
class RunResult:
    config: RunConfig
    log: metrics.RunLog
    summary: dict
    # per data batch, first gradient step: joint ratio for new / replay gradients
    ratio_series: dict = field(default_factory=dict)


def _rngs(seed):
    children = np.random.SeedSequence(seed).spawn(4)
    return [np.random.default_rng(c) for c in children]


def _evaluate(network, sets, k):
    accs, losses = [], []
    for x, y in sets[:k]:
        trace = nn.forward(network, x)
        loss, _ = nn.softmax_cross_entropy(trace.logits, y)
        accs.append(float(np.mean(np.argmax(trace.logits, axis=1) == y)))
        losses.append(loss)
    return accs, float(np.mean(losses))


def _mean_or_none(values):
    values = [v for v in values if v is not None]
    return float(np.mean(values)) if values else None


def _window_ratios(window):
    if not window:
        return {}
    out = {}
    for part in ("new", "replay"):
        out[part] = _mean_or_none([w[part][1] for w in window])
        n_layers = len(window[0][part][0])
        out[f"{part}_layers"] = [_mean_or_none([w[part][0][i] for w in window])
                                 for i in range(n_layers)]
    return out


def run(config, on_step=None):
    """Train one method on one stream and evaluate at a fixed batch cadence.

    For each data batch: ``steps`` gradient steps on new data plus a fresh
    replay sample, then the buffer update, then (LPR only) a preconditioner
    refresh when ``tau % T == 0``. ``on_step(tau, step, network)`` is called
    after every parameter update.
    """
    config.validate()
    stream, evals = generate(config.stream_spec(), config.stream)
    rng_init, rng_replay, rng_buffer, rng_precond = _rngs(config.seed)
    widths = [config.input_dim, *config.hidden, stream.total_classes]
    network = nn.init_network(widths, rng_init)

    method = config.method
    uses_replay = method in ("er", "lpr")
    buf = ReplayBuffer(config.capacity)
    state = precond.PreconditionerState.identity(network, config.T, config.p)
    omega_cfg = precond.OmegaConfig(config.omega0, config.beta)
    grams = [np.zeros((l.theta.shape[0],) * 2) for l in network.layers]
    projectors = None

    run_log = metrics.RunLog(task_boundaries=list(stream.task_boundaries))
    probe = evals.test[0][0][:config.probe_size]
    drift = metrics.DriftTracker()
    drift.update(nn.forward(network, probe).last_hidden)
    ratio_series = {"new": [], "replay": []}
    window = []

    for cursor in range(len(stream)):
        tau = cursor + 1
        # the new-task flag is deliberately ignored: learners are task-free
        (x, y), _ = next_batch(stream, cursor)
        for s in range(config.steps):
            replay = stack_items(buf.sample(config.replay_size, rng_replay)) if uses_replay else None
            _, g_new, _, g_rep = nn.replay_loss_terms(network, (x, y), replay, config.alpha)
            grads = [a + b for a, b in zip(g_new, g_rep)]
            if method == "lpr" and config.track_ratios and s == 0:
                entry = {"new": metrics.grad_norm_ratio(g_new, state),
                         "replay": metrics.grad_norm_ratio(g_rep, state)}
                window.append(entry)
                ratio_series["new"].append(entry["new"][1])
                ratio_series["replay"].append(entry["replay"][1])
            if method == "lpr":
                optim.lpr_step(network, grads, state, config.eta)
            elif method == "projection" and projectors is not None:
                optim.sgd_step(network, [q @ g for q, g in zip(projectors, grads)], config.eta)
            else:
                optim.sgd_step(network, grads, config.eta)
            if on_step is not None:
                on_step(tau, s, network)

        if uses_replay:
            buf.update(zip(x, y), rng_buffer)
        if method == "lpr" and state.due(tau):
            precond.refresh(state, network, buf, omega_cfg, rng_precond, tau)
        if method == "projection":
            # accumulate the batch-mean activation row of every layer
            trace = nn.forward(network, x)
            for gram, z in zip(grams, trace.z):
                row = z.mean(axis=0)
                gram += np.outer(row, row)
            projectors = [optim.soft_projector_from_gram(g, config.alpha_proj) for g in grams]

        drift.update(nn.forward(network, probe).last_hidden)
        if tau % config.eval_every == 0 or tau == len(stream):
            k = int(stream.task_of_batch[cursor]) + 1
            accs, loss = _evaluate(network, evals.val, k)
            run_log.append(metrics.EvalRecord(tau=tau, per_task_acc=accs, loss=loss,
                                              ratios=_window_ratios(window), drift=drift.mean))
            window = []

    k = int(stream.task_of_batch[-1]) + 1
    run_log.final_test_acc, _ = _evaluate(network, evals.test, k)
    summary = summarize(config, run_log, drift.mean)
    result = RunResult(config, run_log, summary, ratio_series)
    if config.output:
        write_outputs(result, Path(config.output))
    return result


def summarize(config, run_log, mean_drift):
    tvs = []
    for task in range(len(run_log.records[-1].per_task_acc)):
        _, accs = run_log.series(task)
        if len(accs) >= 2:
            tvs.append(metrics.total_variation(accs))
    return {
        "method": config.method, "seed": config.seed, "omega0": config.omega0,
        "beta": config.beta, "T": config.T, "p": config.p,
        "capacity": "inf" if config.capacity == math.inf else int(config.capacity),
        "acc": metrics.final_acc(run_log),
        "aaa": metrics.average_anytime_acc(run_log),
        "wc_acc": metrics.worst_case_acc(run_log),
        "mean_tv": float(np.mean(tvs)) if tvs else 0.0,
        "mean_drift": mean_drift,
    }


def task_tv(run_log, task=0):
    """Total variation of one task's validation accuracy over its evaluations."""
    return metrics.total_variation(run_log.series(task)[1])


def write_outputs(result, out_dir):
    out_dir.mkdir(parents=True, exist_ok=True)
    metrics.write_log(result.log, out_dir / "log.jsonl")
    metrics.write_summary([result.summary], out_dir / "summary.csv")
    with open(out_dir / "config.json", "w") as fh:
        json.dump(result.config.to_dict(), fh, indent=2, sort_keys=True)


def default_output_dir():
    return os.environ.get(OUTPUT_ENV, "runs")


def expand_grid(base, grid):
    """Configs for the Cartesian product of ``grid`` (field -> values) over ``base``."""
    if not grid:
        return [base]
    keys = sorted(grid)
    return [base.replace(**dict(zip(keys, combo)))
            for combo in itertools.product(*(grid[k] for k in keys))]


def _run_cell(cell):
    config, seed, out = cell
    try:
        return run(config.replace(seed=seed, output=out)).summary, None
    except Exception as exc:  # a failed cell must not stop the sweep
        log.warning("cell %s seed %s failed: %s", config.method, seed, exc)
        return None, f"{type(exc).__name__}: {exc}"


CELL_METRICS = ("acc", "aaa", "wc_acc", "mean_tv", "mean_drift")


def sweep(configs, seeds=None, workers=1, output=None):
    """Run every (config, seed) cell and aggregate mean and standard error per config.

    Returns ``(rows, table)``: one summary row per cell (failed cells carry an
    ``error`` entry) and one aggregate row per config.
    """
    configs = list(configs)
    if not configs:
        raise ConfigError("empty sweep")
    cells = []
    for ci, cfg in enumerate(configs):
        for seed in (seeds if seeds is not None else [cfg.seed]):
            out = None
            if output:
                out = str(Path(output) / f"cell{ci:03d}_{cfg.method}_seed{seed}")
            cells.append((ci, (cfg, seed, out)))

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_run_cell, [c for _, c in cells]))
    else:
        outcomes = [_run_cell(c) for _, c in cells]

    rows = []
    for (ci, (cfg, seed, _)), (summary, error) in zip(cells, outcomes):
        row = dict(summary) if summary else {"method": cfg.method, "seed": seed}
        row["cell"] = ci
        if error:
            row["error"] = error
        rows.append(row)

    table = []
    for ci, cfg in enumerate(configs):
        ok = [r for r in rows if r["cell"] == ci and "error" not in r]
        agg = {"cell": ci, "method": cfg.method, "omega0": cfg.omega0, "beta": cfg.beta,
               "T": cfg.T, "p": cfg.p, "eta": cfg.eta, "n_seeds": len(ok),
               "n_failed": sum(1 for r in rows if r["cell"] == ci) - len(ok)}
        for name in CELL_METRICS:
            if ok:
                agg[name], agg[f"{name}_se"] = metrics.mean_stderr([r[name] for r in ok])
        table.append(agg)

    if output:
        Path(output).mkdir(parents=True, exist_ok=True)
        metrics.write_summary([r for r in rows if "error" not in r], Path(output) / "summary.csv")
        with open(Path(output) / "aggregate.json", "w") as fh:
            json.dump(table, fh, indent=2)
    return rows, table
