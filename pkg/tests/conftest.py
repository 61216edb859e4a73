import numpy as np
import pytest

from lprlab import net as nn


def numeric_grads(network, x, y, h=1e-5):
    """Central finite differences of the mean cross-entropy for every theta entry."""
    out = []
    for layer in network.layers:
        g = np.zeros_like(layer.theta)
        for idx in np.ndindex(*layer.theta.shape):
            orig = layer.theta[idx]
            layer.theta[idx] = orig + h
            up = nn.softmax_cross_entropy(nn.forward(network, x).logits, y)[0]
            layer.theta[idx] = orig - h
            down = nn.softmax_cross_entropy(nn.forward(network, x).logits, y)[0]
            layer.theta[idx] = orig
            g[idx] = (up - down) / (2 * h)
        out.append(g)
    return out


def max_rel_err(a, b, floor=1e-8):
    """Largest entrywise |a - b| / max(|a|, |b|, floor) over lists of arrays."""
    worst = 0.0
    for u, v in zip(a, b):
        denom = np.maximum(np.maximum(np.abs(u), np.abs(v)), floor)
        worst = max(worst, float(np.max(np.abs(u - v) / denom)))
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
