"""Barycentric Chebyshev interpolation from radial nodes to Bessel roots."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grids import RadialNodes


def barycentric_weights(Q: int) -> np.ndarray:
    """Weights ``(-1)^q sin((2q+1) pi / (2Q))`` for first-kind nodes."""
    q = np.arange(Q)
    return (-1.0) ** q * np.sin((2 * q + 1) * np.pi / (2 * Q))


def interp_matrix(nodes: RadialNodes, targets) -> np.ndarray:
    """Matrix ``U[i, q] = u_q(target_i)`` of Lagrange basis values.

    Targets closer than ``1e-14 * lam_n`` to a node return that node's value
    exactly.
    """
    rho = nodes.nodes
    x = np.atleast_1d(np.asarray(targets, dtype=np.float64))
    w = barycentric_weights(nodes.Q)
    diff = x[:, None] - rho[None, :]
    tol = 1e-14 * max(abs(nodes.lam_n), 1.0)
    hit = np.abs(diff) < tol
    with np.errstate(divide="ignore", invalid="ignore"):
        t = w[None, :] / diff
        U = t / t.sum(axis=1, keepdims=True)
    rows = np.nonzero(hit.any(axis=1))[0]
    for i in rows:
        U[i] = 0.0
        U[i, np.argmax(hit[i])] = 1.0
    return U


def lebesgue_function(nodes: RadialNodes, x) -> np.ndarray:
    """``sum_q |u_q(x)|`` at the points ``x``."""
    return np.abs(interp_matrix(nodes, x)).sum(axis=1)


@dataclass
class InterpOperator:
    """Cached interpolation from values at the radial nodes to ``targets``."""

    nodes: RadialNodes
    targets: np.ndarray

    def __post_init__(self):
        self.targets = np.asarray(self.targets, dtype=np.float64)
        self.matrix = interp_matrix(self.nodes, self.targets)

    @property
    def shape(self):
        return self.matrix.shape


def interp_apply(op: InterpOperator, y) -> np.ndarray:
    """Evaluate the interpolant of node values ``y`` (first axis Q) at the targets."""
    return op.matrix @ np.asarray(y)


def interp_adjoint(op: InterpOperator, z) -> np.ndarray:
    """Adjoint of :func:`interp_apply`; the matrix is real so this is ``U.T @ z``."""
    return op.matrix.T @ np.asarray(z)
