"""Closed-form forward predictor: temporal contraction then Neumann smoothing."""

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import PreconditionError, ShapeMismatch, Truncated
from .gmrf import assemble_gamma, conditional_mean_exact
from .numerics import as_tensor, tensor_contract_time

DEFAULT_TOL = 1e-10
DEFAULT_K_MAX = 64


@dataclass
class ForwardCoefficients:
    alpha: np.ndarray  # (T_P,)
    gamma: np.ndarray  # (T_P,)
    beta: np.ndarray  # (T_P, T)


def coefficients(p):
    """Per-future-step spatial strength, its damped form, and temporal weights."""
    T = p.history
    diag = np.diag(p.W)[T:]
    alpha = p.theta[T:] / diag
    gamma = alpha / (1.0 + alpha)
    beta = -p.W[T:, :T] / diag[:, None]
    return ForwardCoefficients(alpha, gamma, beta)


def neumann_apply(nmat, v, gamma, tol=DEFAULT_TOL, k_max=DEFAULT_K_MAX):
    """``(1 - gamma) * sum_{k=0..K} (gamma * nmat)^k @ v``.

    Stops once a term's max-abs is at most ``tol`` or after power ``k_max``.
    Returns the partial sum, the last power used and that term's max-abs.
    """
    term = (1.0 - gamma) * v
    acc = term.copy()
    k = 0
    size = float(np.max(np.abs(term))) if term.size else 0.0
    while size > tol and gamma != 0.0:
        if k == k_max:
            break
        term = gamma * (nmat @ term)
        acc += term
        k += 1
        size = float(np.max(np.abs(term))) if term.size else 0.0
    return acc, k, size


def _check_x(p, x):
    x = as_tensor(x)
    if x.shape[:2] != (p.history, p.nodes):
        raise ShapeMismatch(f"x has shape {x.shape}, expected ({p.history}, {p.nodes}, f)")
    return x


def predict_neumann(p, x, tol=DEFAULT_TOL, k_max=DEFAULT_K_MAX):
    """Per-step conditional mean via iterated graph smoothing.

    Emits a :class:`Truncated` warning when ``k_max`` is reached before
    ``tol``; the truncated result is still returned.
    """
    if tol <= 0 and k_max is None:
        raise PreconditionError("need a positive tol or a finite k_max")
    if k_max is not None and k_max < 0:
        raise PreconditionError("k_max must be nonnegative")
    x = _check_x(p, x)
    co = coefficients(p)
    nmat = p.normalized()
    out = np.empty((p.horizon, p.nodes, x.shape[2]))
    for t in range(p.horizon):
        v = tensor_contract_time(x, co.beta[t])
        out[t], k, last = neumann_apply(nmat, v, co.gamma[t], tol, k_max)
        if last > tol and co.gamma[t] != 0.0:
            warnings.warn(Truncated(k, last), stacklevel=2)
    return out


def predict_exact(p, x, variant="per_step", gamma=None):
    """Exact conditional mean by dense block solves.

    ``per_step`` conditions each future step on ``x`` using only that step's
    blocks of the potential matrix (the other future steps are held at their
    zero prior mean), which is the quantity the Neumann path expands.
    ``joint`` conditions all future steps on ``x`` together.
    """
    x = _check_x(p, x)
    g = assemble_gamma(p) if gamma is None else gamma
    hist = p.history_indices()
    vx = x.reshape(p.history * p.nodes, -1)
    feats = x.shape[2]
    if variant == "joint":
        fut = np.arange(hist.size, g.shape[0])
        return conditional_mean_exact(g, hist, vx, fut).reshape(p.horizon, p.nodes, feats)
    if variant != "per_step":
        raise ValueError(f"unknown variant {variant!r}")
    out = np.empty((p.horizon, p.nodes, feats))
    for t in range(p.horizon):
        q = p.step_indices(t)
        others = np.setdiff1d(np.arange(hist.size, g.shape[0]), q)
        obs = np.concatenate([hist, others])
        vals = np.vstack([vx, np.zeros((others.size, feats))])
        out[t] = conditional_mean_exact(g, obs, vals, q)
    return out


def variant_gap(p, x):
    """Max-abs difference between the joint and per-step exact predictions.

    Zero whenever the future-future block of ``W`` is diagonal.
    """
    g = assemble_gamma(p)
    return float(np.max(np.abs(predict_exact(p, x, "joint", g) - predict_exact(p, x, "per_step", g))))
