"""Seeded synthetic task streams for online continual learning.

Random numbers come from SplitMix64 so streams are reproducible bit-for-bit
on any platform:

* state advances by ``0x9E3779B97F4A7C15`` per draw, output is the standard
  SplitMix64 finalizer of the new state;
* uniforms are ``(u64 >> 11) * 2**-53``;
* normals come in pairs from Box-Muller, ``r = sqrt(-2 ln(1 - u1))``,
  ``(r cos(2 pi u2), r sin(2 pi u2))``.

Sub-generators for means, task order, training batches and the held-out
sets are seeded with the first four outputs of ``SplitMix64(seed)``.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
MIX1 = np.uint64(0xBF58476D1CE4E5B9)
MIX2 = np.uint64(0x94D049BB133111EB)


class GenerationError(RuntimeError):
    pass


class EndOfStream(Exception):
    pass


class SplitMix64:
    def __init__(self, seed):
        self.state = np.uint64(int(seed) % 2**64)

    def next_u64(self, n):
        steps = np.arange(1, n + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            z = self.state + steps * GOLDEN
            self.state = self.state + np.uint64(n) * GOLDEN
            z = (z ^ (z >> np.uint64(30))) * MIX1
            z = (z ^ (z >> np.uint64(27))) * MIX2
        return z ^ (z >> np.uint64(31))

    def uniform(self, n):
        return (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53

    def normal(self, n):
        pairs = (n + 1) // 2
        u = self.uniform(2 * pairs).reshape(pairs, 2)
        r = np.sqrt(-2.0 * np.log1p(-u[:, 0]))
        theta = 2.0 * np.pi * u[:, 1]
        out = np.empty((pairs, 2))
        out[:, 0] = r * np.cos(theta)
        out[:, 1] = r * np.sin(theta)
        return out.ravel()[:n]

    def integers(self, high, n):
        return np.minimum((self.uniform(n) * high).astype(np.int64), high - 1)

    def permutation(self, n):
        """Fisher-Yates shuffle of ``range(n)``."""
        perm = list(range(n))
        u = self.uniform(max(n - 1, 0))
        for idx, i in enumerate(range(n - 1, 0, -1)):
            j = min(int(u[idx] * (i + 1)), i)
            perm[i], perm[j] = perm[j], perm[i]
        return np.array(perm, dtype=np.int64)


@dataclass(frozen=True)
class SplitGaussianSpec:
    num_tasks: int = 5
    classes_per_task: int = 2
    input_dim: int = 32
    cluster_separation: float = 4.0
    cluster_std: float = 1.5
    batches_per_task: int = 200
    n_tau: int = 10
    seed: int = 0
    eval_size: int = 200
    shuffle_tasks: bool = True
    # per-task mean displacement, used by the domain-incremental generator
    drift: float = 1.0

    def __post_init__(self):
        if min(self.num_tasks, self.classes_per_task, self.input_dim,
               self.batches_per_task, self.n_tau) < 1:
            raise GenerationError("task, class, dimension and batch counts must be positive")
        if self.cluster_separation <= 0:
            raise GenerationError("cluster separation must be positive")
        if self.cluster_std < 0 or self.eval_size < 0:
            raise GenerationError("cluster_std and eval_size must be nonnegative")


@dataclass
class TaskStream:
    batches: list
    task_of_batch: np.ndarray
    task_boundaries: list
    n_tau: int
    total_classes: int
    task_classes: list = field(default_factory=list)

    def __len__(self):
        return len(self.batches)

    @property
    def num_tasks(self):
        return len(self.task_boundaries)

    def __iter__(self):
        for cursor in range(len(self.batches)):
            yield next_batch(self, cursor)


@dataclass
class EvalSets:
    """Held-out validation and test sets, one ``(x, y)`` pair per task."""
    val: list
    test: list
    means: list


def next_batch(stream, cursor):
    """Batch at 0-based ``cursor`` and whether it opens a new task."""
    if cursor < 0:
        raise IndexError("cursor must be nonnegative")
    if cursor >= len(stream.batches):
        raise EndOfStream(cursor)
    new_task = cursor == 0 or stream.task_of_batch[cursor] != stream.task_of_batch[cursor - 1]
    return stream.batches[cursor], bool(new_task)


def _place_means(gen, n, dim, separation, attempts=100):
    """Gaussian draws rescaled so the closest pair sits exactly ``separation`` apart."""
    for _ in range(attempts):
        means = gen.normal(n * dim).reshape(n, dim)
        if n == 1:
            return means * separation / max(np.linalg.norm(means), 1e-12)
        diff = means[:, None, :] - means[None, :, :]
        dist = np.sqrt((diff ** 2).sum(-1))
        dist[np.diag_indices(n)] = np.inf
        closest = dist.min()
        if closest > 1e-9:
            return means * (separation / closest)
    raise GenerationError(
        f"could not place {n} separated means in dimension {dim} after {attempts} attempts")


def _draw(gen, means_for_classes, classes, n, std):
    labels = np.asarray(classes)[gen.integers(len(classes), n)]
    x = means_for_classes[labels] + std * gen.normal(n * means_for_classes.shape[1]).reshape(n, -1)
    return x, labels.astype(np.int64)


def _build(spec, class_means_per_task, task_classes, total_classes, seeds):
    train_gen = SplitMix64(seeds[2])
    val_gen, test_gen = SplitMix64(seeds[3]), SplitMix64(seeds[3] ^ 0xA5A5A5A5)
    batches, task_of_batch, boundaries = [], [], []
    val, test = [], []
    for t, (means, classes) in enumerate(zip(class_means_per_task, task_classes)):
        for _ in range(spec.batches_per_task):
            batches.append(_draw(train_gen, means, classes, spec.n_tau, spec.cluster_std))
            task_of_batch.append(t)
        boundaries.append(len(batches))
        val.append(_draw(val_gen, means, classes, spec.eval_size, spec.cluster_std))
        test.append(_draw(test_gen, means, classes, spec.eval_size, spec.cluster_std))
    stream = TaskStream(batches, np.array(task_of_batch), boundaries, spec.n_tau,
                        total_classes, [list(map(int, c)) for c in task_classes])
    means = [m[np.asarray(c)] for m, c in zip(class_means_per_task, task_classes)]
    return stream, EvalSets(val, test, means)


def generate_class_incremental(spec):
    """Each task introduces ``classes_per_task`` new Gaussian classes."""
    seeds = [int(s) for s in SplitMix64(spec.seed).next_u64(4)]
    total = spec.num_tasks * spec.classes_per_task
    means = _place_means(SplitMix64(seeds[0]), total, spec.input_dim, spec.cluster_separation)
    if spec.shuffle_tasks:
        order = SplitMix64(seeds[1]).permutation(total)
    else:
        order = np.arange(total)
    c = spec.classes_per_task
    task_classes = [order[t * c:(t + 1) * c] for t in range(spec.num_tasks)]
    return _build(spec, [means] * spec.num_tasks, task_classes, total, seeds)


def domain_means(spec):
    """Class means for every task of the domain-incremental stream, in stream order."""
    seeds = [int(s) for s in SplitMix64(spec.seed).next_u64(4)]
    gen = SplitMix64(seeds[0])
    c = spec.classes_per_task
    base = _place_means(gen, c, spec.input_dim, spec.cluster_separation)
    directions = gen.normal(c * spec.input_dim).reshape(c, spec.input_dim)
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    if spec.shuffle_tasks:
        order = SplitMix64(seeds[1]).permutation(spec.num_tasks)
    else:
        order = np.arange(spec.num_tasks)
    return [base + spec.drift * float(step) * directions for step in order], seeds


def generate_domain_incremental(spec):
    """Fixed label set whose class means translate by ``drift`` per task step."""
    per_task, seeds = domain_means(spec)
    classes = [np.arange(spec.classes_per_task)] * spec.num_tasks
    return _build(spec, per_task, classes, spec.classes_per_task, seeds)


def generate(spec, kind="class"):
    if kind in ("class", "class_incremental"):
        return generate_class_incremental(spec)
    if kind in ("domain", "domain_incremental"):
        return generate_domain_incremental(spec)
    raise ValueError(f"unknown stream kind {kind!r}")


def save_stream(stream, path):
    """Write one CSV row per sample: task, batch, label, then the features."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        dim = stream.batches[0][0].shape[1] if stream.batches else 0
        writer.writerow(["task", "batch", "label"] + [f"x{i}" for i in range(dim)])
        for b, ((x, y), t) in enumerate(zip(stream.batches, stream.task_of_batch)):
            for row, label in zip(x, y):
                writer.writerow([int(t), b, int(label)] + [repr(float(v)) for v in row])


def load_stream(path, total_classes=None):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        rows = [(int(r[0]), int(r[1]), int(r[2]), [float(v) for v in r[3:]]) for r in reader]
    batches, tasks = {}, {}
    for task, b, label, feats in rows:
        batches.setdefault(b, ([], []))
        batches[b][0].append(feats)
        batches[b][1].append(label)
        tasks[b] = task
    order = sorted(batches)
    out = [(np.array(batches[b][0]), np.array(batches[b][1], dtype=np.int64)) for b in order]
    task_of_batch = np.array([tasks[b] for b in order])
    boundaries = [int(i) + 1 for i in np.flatnonzero(np.diff(task_of_batch))] + [len(order)]
    n_tau = len(out[0][1]) if out else 0
    labels = np.concatenate([y for _, y in out]) if out else np.array([0])
    total = total_classes or int(labels.max()) + 1
    return TaskStream(out, task_of_batch, boundaries, n_tau, total)
