"""Parameter updates: SGD, layerwise proximal (preconditioned) SGD, soft projection.

Also holds a numeric proximal-argmin solver used as an oracle for the
closed-form preconditioned update. It never touches the Cholesky path.
"""

import numpy as np

from . import precond
from .linalg import NumericError, ShapeError, as_matrix, frobenius_norm

CG_TOL = 1e-10


def sgd_step(network, grads, eta):
    if eta < 0:
        raise ValueError("eta must be nonnegative")
    if len(grads) != len(network.layers):
        raise ShapeError("one gradient per layer expected")
    for layer, g in zip(network.layers, grads):
        if g.shape != layer.theta.shape:
            raise ShapeError(f"gradient {g.shape} does not match theta {layer.theta.shape}")
        layer.theta -= eta * g


def lpr_step(network, grads, state, eta):
    sgd_step(network, precond.apply(state, grads), eta)


def proximal_objective(theta, theta_j, grad, z, eta, omega):
    """Linearized loss plus Euclidean and activation-change penalties."""
    delta = theta - theta_j
    zd = z @ delta
    return (float(np.sum(grad * delta))
            + float(np.sum(delta * delta)) / (2 * eta)
            + omega * float(np.sum(zd * zd)) / (2 * eta))


def _cg(apply_op, b, tol=CG_TOL, max_iter=None):
    """Conjugate gradients on every column of ``b`` at once."""
    n = b.shape[0]
    max_iter = max_iter or 20 * max(n, 1) + 50
    x = np.zeros_like(b)
    r = b.copy()
    p = r.copy()
    rs = np.sum(r * r, axis=0)
    b_norm = np.sqrt(np.sum(b * b, axis=0))
    target = tol * np.maximum(b_norm, 1e-300)
    for _ in range(max_iter):
        if np.all(np.sqrt(rs) <= target):
            break
        ap = apply_op(p)
        curv = np.sum(p * ap, axis=0)
        step = np.divide(rs, curv, out=np.zeros_like(rs), where=curv > 0)
        x += p * step
        r -= ap * step
        rs_new = np.sum(r * r, axis=0)
        ratio = np.divide(rs_new, rs, out=np.zeros_like(rs), where=rs > 0)
        p = r + p * ratio
        rs = rs_new
    # recompute the true residual rather than trusting the recurrence
    resid = b - apply_op(x)
    rel = np.sqrt(np.sum(resid * resid, axis=0)) / np.maximum(b_norm, 1e-300)
    if np.any((b_norm > 0) & (rel > tol)):
        raise NumericError(f"CG did not converge: relative residual {rel.max():.3e}")
    return x


def proximal_oracle(theta, grad, z, eta, omega):
    """Minimizer of :func:`proximal_objective`, found by conjugate gradients.

    Stationarity gives ``(I + omega z^T z) (Theta - Theta_j) = -eta grad``,
    which is solved matrix-free.
    """
    theta = as_matrix(theta, "theta")
    grad = as_matrix(grad, "grad")
    z = as_matrix(z, "z")
    if grad.shape != theta.shape or z.shape[1] != theta.shape[0]:
        raise ShapeError(f"inconsistent shapes theta {theta.shape}, grad {grad.shape}, z {z.shape}")
    if omega == 0:
        return theta - eta * grad

    def op(x):
        return x + omega * (z.T @ (z @ x))

    return theta + _cg(op, -eta * grad)


def soft_projector(phi, alpha):
    """``I - phi^T (alpha I + phi phi^T)^{-1} phi`` for a row basis ``phi`` (k x d)."""
    phi = as_matrix(phi, "phi")
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    k, d = phi.shape
    if k == 0:
        return np.eye(d)
    if k <= d:
        inner = alpha * np.eye(k) + phi @ phi.T
        q = np.eye(d) - phi.T @ np.linalg.solve(inner, phi)
    else:
        # equal by Woodbury; the d x d system is smaller here
        q = alpha * np.linalg.inv(alpha * np.eye(d) + phi.T @ phi)
    return 0.5 * (q + q.T)


def soft_projector_from_gram(gram, alpha):
    """Same operator as :func:`soft_projector` given ``phi^T phi`` only."""
    d = gram.shape[0]
    q = alpha * np.linalg.inv(alpha * np.eye(d) + gram)
    return 0.5 * (q + q.T)


def projection_step(network, grads, basis, eta, alpha):
    """SGD step on gradients passed through a soft orthogonal projection per layer."""
    if len(basis) != len(network.layers):
        raise ShapeError("one basis per layer expected")
    projected = []
    for phi, g in zip(basis, grads):
        phi = np.zeros((0, g.shape[0])) if phi is None else as_matrix(phi, "phi")
        if phi.shape[1] != g.shape[0]:
            raise ShapeError(f"basis {phi.shape} incompatible with gradient {g.shape}")
        projected.append(soft_projector(phi, alpha) @ g)
    sgd_step(network, projected, eta)


def exact_projector(phi):
    """``I - phi (phi^T phi)^{-1} phi^T`` for a column basis ``phi`` (d x k)."""
    phi = as_matrix(phi, "phi")
    gram = phi.T @ phi
    if phi.shape[1] and np.linalg.cond(gram) > 1e12:
        raise NumericError("phi^T phi is rank deficient")
    d = phi.shape[0]
    if phi.shape[1] == 0:
        return np.eye(d)
    return np.eye(d) - phi @ np.linalg.solve(gram, phi.T)


def replay_gradient_annihilation_check(phi, a, v, r=None):
    """Norm of a replay gradient after exact projection against ``phi``.

    Activations are built as ``z^T = phi a + r``; with ``r`` absent they lie
    entirely in the span of ``phi`` and the projected gradient vanishes.
    """
    phi = as_matrix(phi, "phi")
    a = as_matrix(a, "a")
    v = as_matrix(v, "v")
    if phi.shape[1] != a.shape[0] or a.shape[1] != v.shape[0]:
        raise ShapeError(f"shapes do not compose: phi {phi.shape}, a {a.shape}, v {v.shape}")
    zt = phi @ a
    if r is not None:
        zt = zt + as_matrix(r, "r")
    g = zt @ v
    return frobenius_norm(exact_projector(phi) @ g)
