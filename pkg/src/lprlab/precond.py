"""Layerwise proximal preconditioners built from replay-buffer activations.

For a layer with bias-augmented replay activations ``Z`` (one row per
exemplar) the preconditioner is ``P = I + omega * Z^T Z`` and the optimizer
only ever needs its inverse ``Lambda = P^{-1}``, which is cached here and
rebuilt every ``T`` data batches.
"""

from dataclasses import dataclass, field

import numpy as np

from . import net as nn
from .linalg import ShapeError, as_matrix, spd_inverse, spd_solve
from .net import InputError


@dataclass(frozen=True)
class OmegaConfig:
    """Base penalty ``omega0`` and the per-layer scaling exponent ``beta``."""
    omega0: float = 1.0
    beta: float = 2.0

    def __post_init__(self):
        if self.omega0 < 0 or self.beta < 0:
            raise InputError("omega0 and beta must be nonnegative")


def layer_omega(cfg, n_eff, n_replay_rows):
    """Penalty for one layer: ``omega0 / n_eff**beta``, normalized by the row count."""
    if n_eff < 1:
        raise InputError("n_eff must be >= 1")
    if n_replay_rows < 1:
        raise InputError("cannot normalize by an empty replay sample")
    return (cfg.omega0 / float(n_eff) ** cfg.beta) / n_replay_rows


def _gram(z):
    g = z.T @ z
    return 0.5 * (g + g.T)


def build_lambda(z, omega):
    """``(I + omega z^T z)^{-1}`` by Cholesky inversion."""
    z = as_matrix(z, "z")
    if omega < 0:
        raise InputError("omega must be nonnegative")
    d = z.shape[1]
    if omega == 0 or not np.any(z):
        return np.eye(d)
    return spd_inverse(np.eye(d) + omega * _gram(z))


def woodbury_lambda(z, omega):
    """Same matrix as :func:`build_lambda`, via ``I - z^T (I/omega + z z^T)^{-1} z``.

    Only an ``m x m`` system is solved, which is cheaper when the replay
    sample has fewer rows than the layer has inputs.
    """
    z = as_matrix(z, "z")
    if omega <= 0:
        raise InputError("the Woodbury form needs omega > 0")
    m, d = z.shape
    if m == 0:
        return np.eye(d)
    inner = np.eye(m) / omega + _gram(z.T)
    lam = np.eye(d) - z.T @ spd_solve(inner, z)
    return 0.5 * (lam + lam.T)


def weighted_lambda(m_rows, weights):
    """``(I + sum_i w_i m_i^T m_i)^{-1}`` with one nonnegative weight per row."""
    m_rows = as_matrix(m_rows, "m_rows")
    weights = np.asarray(weights, dtype=np.float64).ravel()
    if weights.shape[0] != m_rows.shape[0]:
        raise ShapeError(f"{weights.shape[0]} weights for {m_rows.shape[0]} rows")
    if np.any(weights < 0):
        raise InputError("weights must be nonnegative")
    d = m_rows.shape[1]
    if not np.any(weights) or not np.any(m_rows):
        return np.eye(d)
    p = np.eye(d) + _gram(m_rows * np.sqrt(weights)[:, None])
    return spd_inverse(p)


@dataclass
class PreconditionerState:
    lambdas: list
    refresh_interval: int = 10
    subsample_fraction: float = 1.0
    last_refresh_tau: int = 0
    omegas: list = field(default_factory=list)

    def __post_init__(self):
        if self.refresh_interval < 1:
            raise InputError("refresh interval T must be >= 1")
        if not 0 < self.subsample_fraction <= 1:
            raise InputError("subsample fraction p must lie in (0, 1]")

    @classmethod
    def identity(cls, network, refresh_interval=10, subsample_fraction=1.0):
        lambdas = [np.eye(l.theta.shape[0]) for l in network.layers]
        return cls(lambdas, refresh_interval, subsample_fraction,
                   omegas=[0.0] * len(lambdas))

    def due(self, tau):
        return tau % self.refresh_interval == 0


def refresh(state, network, buf, cfg, rng, tau=None):
    """Rebuild every layer's Lambda from the current network's replay activations.

    An empty buffer leaves the state untouched.
    """
    x_mem = buf.sample_for_preconditioner(state.subsample_fraction, rng)
    n = x_mem.shape[0]
    if n == 0:
        return state
    trace = nn.forward(network, x_mem)
    lambdas, omegas = [], []
    for layer, z in zip(network.layers, trace.z):
        omega = layer_omega(cfg, layer.n_eff, n)
        lambdas.append(build_lambda(z, omega))
        omegas.append(omega)
    state.lambdas = lambdas
    state.omegas = omegas
    if tau is not None:
        state.last_refresh_tau = tau
    return state


def apply(state, grads):
    """Left-multiply each layer's gradient by its Lambda."""
    if len(grads) != len(state.lambdas):
        raise ShapeError(f"{len(grads)} gradients for {len(state.lambdas)} preconditioners")
    out = []
    for lam, g in zip(state.lambdas, grads):
        if lam.shape[1] != g.shape[0]:
            raise ShapeError(f"Lambda {lam.shape} cannot precondition gradient {g.shape}")
        out.append(lam @ g)
    return out
