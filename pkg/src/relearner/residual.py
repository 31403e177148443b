"""Residual correction of the forward prediction given other nodes' labels.

Everything here works within one future step ``t``: labels at that step are
coupled only through the step's spatial block ``W_tt I + theta_t A(A)``.
"""

from dataclasses import dataclass

import numpy as np

from .errors import PartitionInvalid, ShapeMismatch
from .forward import DEFAULT_K_MAX, coefficients, neumann_apply, predict_neumann


@dataclass
class ResidualTerm:
    t: int
    node: int
    others: np.ndarray  # node ids, ascending, excluding ``node``
    values: np.ndarray  # (N - 1) x f


def smoothing_coefficient(p, t, u):
    """``1 / ((1 + alpha_t) (1 + alpha_t * A(A)[u, u]))``, in (0, 1]."""
    alpha = coefficients(p).alpha[t]
    return 1.0 / ((1.0 + alpha) * (1.0 + alpha * p.laplacian()[u, u]))


def propagation_matrix(p, t):
    """``I_N + alpha_t A(A)``; its off-diagonal rows carry residuals between nodes."""
    alpha = coefficients(p).alpha[t]
    return np.eye(p.nodes) + alpha * p.laplacian()


def _others(n, u):
    return np.array([v for v in range(n) if v != u], dtype=np.int64)


def residual_term(p, x, y_observed, t, u, base=None):
    """Base prediction minus observed labels at step ``t`` for every node but ``u``."""
    y_observed = np.asarray(y_observed, dtype=np.float64)
    if not 0 <= t < p.horizon or not 0 <= u < p.nodes:
        raise IndexError(f"step {t} / node {u} out of range")
    if base is None:
        base = predict_neumann(p, x, tol=1e-13)
    if y_observed.shape != base.shape:
        raise ShapeMismatch(f"labels {y_observed.shape} vs prediction {base.shape}")
    others = _others(p.nodes, u)
    return ResidualTerm(t, u, others, base[t, others] - y_observed[t, others])


def correct_node(p, base, residual, t, u):
    """Corrected expectation for node ``u`` at step ``t``, a length-f vector.

    The self-coupling factor ``(1 - gamma) sum_k (gamma N[u, u])^k`` is the
    scalar geometric series in closed form.
    """
    if residual.t != t or residual.node != u:
        raise ValueError("residual term does not belong to this (step, node)")
    co = coefficients(p)
    g = co.gamma[t]
    n_uu = p.normalized()[u, u]
    self_factor = (1.0 - g) / (1.0 - g * n_uu)
    row = propagation_matrix(p, t)[u, residual.others]
    return np.asarray(base)[t, u] + self_factor * (row @ residual.values)


def correct_partition(p, base, y_observed_v2, t, v1, v2, tol=1e-13, k_max=4 * DEFAULT_K_MAX):
    """Corrected expectation for the nodes in ``v1`` given labels of ``v2``.

    Returns a ``|v1| x f`` matrix, rows ordered as ``v1``.
    """
    v1 = np.asarray(v1, dtype=np.int64).reshape(-1)
    v2 = np.asarray(v2, dtype=np.int64).reshape(-1)
    n = p.nodes
    if (
        np.intersect1d(v1, v2).size
        or len(set(v1.tolist()) | set(v2.tolist())) != n
        or v1.size + v2.size != n
        or v1.size == 0
    ):
        raise PartitionInvalid("v1 and v2 must be disjoint, nonempty v1, covering all nodes")
    base = np.asarray(base, dtype=np.float64)
    if v2.size == 0:
        return base[t, v1].copy()
    y2 = np.asarray(y_observed_v2, dtype=np.float64).reshape(v2.size, -1)
    r = base[t, v2] - y2
    co = coefficients(p)
    kernel = propagation_matrix(p, t)[np.ix_(v1, v2)]
    n11 = p.normalized()[np.ix_(v1, v1)]
    corr, _, _ = neumann_apply(n11, kernel @ r, co.gamma[t], tol, k_max)
    return base[t, v1] + corr
