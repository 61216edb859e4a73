"""Reservoir-sampled replay memory."""

import math

import numpy as np

from .net import InputError


class ReplayBuffer:
    """Fixed-capacity store of ``(features, label)`` items.

    Items are kept by reservoir sampling, so after ``seen`` offers every
    offered item is present with probability ``capacity / seen``. A capacity
    of ``None`` or ``math.inf`` keeps everything.
    """

    def __init__(self, capacity=None):
        if capacity is not None and capacity != math.inf:
            capacity = int(capacity)
            if capacity < 0:
                raise InputError("capacity must be nonnegative")
        self.capacity = math.inf if capacity is None else capacity
        self.items = []
        self.seen = 0

    def __len__(self):
        return len(self.items)

    @property
    def unlimited(self):
        return self.capacity == math.inf

    def update(self, batch, rng):
        """Offer every item of ``batch`` in order."""
        batch = list(batch)
        if not batch:
            return
        if self.unlimited:
            self.items.extend(batch)
            self.seen += len(batch)
            return
        cap = self.capacity
        # 1-based stream positions of the offered items
        ks = np.arange(self.seen + 1, self.seen + len(batch) + 1)
        slots = rng.integers(0, ks)
        for item, k, slot in zip(batch, ks, slots):
            if k <= cap:
                self.items.append(item)
            elif slot < cap:
                self.items[slot] = item
        self.seen += len(batch)

    def sample(self, n, rng):
        """Up to ``n`` distinct items, uniformly without replacement."""
        size = min(n, len(self.items))
        if size == 0:
            return []
        idx = rng.choice(len(self.items), size=size, replace=False)
        return [self.items[i] for i in idx]

    def sample_for_preconditioner(self, p, rng):
        """Features of ``ceil(p * len)`` distinct items stacked row-wise.

        ``p == 1`` returns the whole buffer in storage order without touching
        ``rng``.
        """
        if not 0 < p <= 1:
            raise InputError(f"p must lie in (0, 1], got {p}")
        n = len(self.items)
        if n == 0:
            return np.zeros((0, 0))
        if p == 1:
            chosen = self.items
        else:
            # guard against p * n landing a hair above an integer
            size = min(n, math.ceil(p * n - 1e-9))
            chosen = [self.items[i] for i in rng.choice(n, size=size, replace=False)]
        return np.stack([np.asarray(x, dtype=np.float64) for x, _ in chosen])


def stack_items(items):
    """Split a list of items into a feature matrix and a label vector."""
    if not items:
        return None
    x = np.stack([np.asarray(f, dtype=np.float64) for f, _ in items])
    y = np.array([lab for _, lab in items], dtype=np.int64)
    return x, y
