"""Dense float64 primitives shared by every other module.

Matrices are plain 2-D ``numpy`` arrays and spatiotemporal tensors are 3-D
arrays laid out ``steps x nodes x feats`` in row-major (C) order.
"""

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import erf

from .errors import NotPositiveDefinite, PreconditionError, ShapeMismatch

SYMMETRY_TOL = 1e-10
PIVOT_TOL = 1e-12


def as_matrix(m):
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeMismatch(f"expected a matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise PreconditionError("matrix has non-finite entries")
    return m


def as_tensor(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise ShapeMismatch(f"expected steps x nodes x feats, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise PreconditionError("tensor has non-finite entries")
    return x


def check_symmetric(m, tol=SYMMETRY_TOL):
    if m.shape[0] != m.shape[1]:
        raise ShapeMismatch(f"matrix is not square: {m.shape}")
    scale = max(1.0, float(np.max(np.abs(m))) if m.size else 1.0)
    asym = float(np.max(np.abs(m - m.T))) if m.size else 0.0
    if asym > tol * scale:
        raise PreconditionError(f"matrix is not symmetric (max asymmetry {asym:.3e})")


def cholesky(m):
    """Lower-triangular ``L`` with ``L @ L.T == m``.

    Raises NotPositiveDefinite when any pivot is at or below 1e-12.
    """
    m = as_matrix(m)
    check_symmetric(m)
    try:
        L = np.linalg.cholesky(m)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite("matrix is not positive definite") from exc
    pivots = np.diag(L) ** 2
    if pivots.size and (not np.all(np.isfinite(pivots)) or pivots.min() <= PIVOT_TOL):
        raise NotPositiveDefinite(f"pivot {pivots.min():.3e} at or below {PIVOT_TOL}")
    return L


def cho_solve(L, b):
    y = solve_triangular(L, b, lower=True, check_finite=False)
    return solve_triangular(L.T, y, lower=False, check_finite=False)


def solve_spd(m, b):
    """Solve ``m @ x = b`` for symmetric positive definite ``m``."""
    m = as_matrix(m)
    b = np.asarray(b, dtype=np.float64)
    if b.shape[0] != m.shape[0]:
        raise ShapeMismatch(f"rhs has {b.shape[0]} rows, matrix has {m.shape[0]}")
    return cho_solve(cholesky(m), b)


def gelu(v):
    """Exact-erf GELU, ``v * Phi(v)``."""
    v = np.asarray(v, dtype=np.float64)
    return 0.5 * v * (1.0 + erf(v / np.sqrt(2.0)))


def gelu_grad(v):
    v = np.asarray(v, dtype=np.float64)
    cdf = 0.5 * (1.0 + erf(v / np.sqrt(2.0)))
    pdf = np.exp(-0.5 * v * v) / np.sqrt(2.0 * np.pi)
    return cdf + v * pdf


def relu(v):
    return np.maximum(np.asarray(v, dtype=np.float64), 0.0)


def tanh(v):
    return np.tanh(np.asarray(v, dtype=np.float64))


def sigmoid(v):
    v = np.asarray(v, dtype=np.float64)
    # split by sign so exp never overflows
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    e = np.exp(v[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def softmax(v, axis=-1):
    v = np.asarray(v, dtype=np.float64)
    shifted = v - np.max(v, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def softmax_rows(m):
    return softmax(as_matrix(m), axis=1)


def tensor_contract_time(x, coeffs):
    """``sum_t coeffs[t] * x[t]`` for a steps x nodes x feats tensor."""
    x = as_tensor(x)
    coeffs = np.asarray(coeffs, dtype=np.float64).reshape(-1)
    if coeffs.shape[0] != x.shape[0]:
        raise ShapeMismatch(f"{coeffs.shape[0]} coefficients for {x.shape[0]} steps")
    return np.tensordot(coeffs, x, axes=(0, 0))


def tensor_apply_node_matrix(k, z):
    """Multiply every (step, feature) slice of ``z`` by ``k`` along the node axis."""
    k = as_matrix(k)
    z = as_tensor(z)
    if k.shape[1] != z.shape[1]:
        raise ShapeMismatch(f"kernel {k.shape} does not act on {z.shape[1]} nodes")
    return np.matmul(k, z)


def make_rng(seed, *stream):
    """Seeded PCG64 generator; ``stream`` picks an independent substream."""
    seed = int(seed) & 0xFFFFFFFFFFFFFFFF
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, *stream])))


def spectral_radius(m):
    """Largest eigenvalue modulus of ``m``."""
    m = as_matrix(m)
    if m.shape[0] == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(m))))
