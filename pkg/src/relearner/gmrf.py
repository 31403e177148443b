"""Spatiotemporal GMRF: precision assembly, sampling, exact Gaussian oracles
and a synthetic window generator with injected input-label deviations.

Variables are flattened time-major: the value of node ``u`` at step ``t``
(0-based over the ``T + T_P`` stacked steps) sits at index ``t * N + u``.
Feature channels are independent copies of the same field.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import solve_triangular

from .errors import IndexOverlap, PreconditionError, ShapeMismatch, SpecExceedsNodes
from .graphs import WeightedGraph, gaussian_kernel_weights, laplacian_like
from .numerics import as_matrix, check_symmetric, cho_solve, cholesky


@dataclass
class GmrfParams:
    """Temporal coupling ``W``, spatial strengths ``theta`` and the graph.

    ``history`` is the number of input steps T; the remaining
    ``len(theta) - history`` steps are the forecast horizon.
    """

    W: np.ndarray
    theta: np.ndarray
    graph: WeightedGraph
    history: int
    norm_mode: str = "symmetric"
    isolated: str = "self_loop"

    def __post_init__(self):
        self.W = as_matrix(self.W)
        self.theta = np.asarray(self.theta, dtype=np.float64).reshape(-1)
        if not isinstance(self.graph, WeightedGraph):
            self.graph = WeightedGraph(self.graph)
        steps = self.W.shape[0]
        if self.W.shape != (steps, steps) or self.theta.shape != (steps,):
            raise ShapeMismatch("W must be square and theta must match its size")
        if not 1 <= self.history < steps:
            raise PreconditionError("need at least one history and one future step")
        check_symmetric(self.W)
        cholesky(self.W)
        if np.any(self.theta < 0):
            # theta == 0 is the no-spatial-coupling limit; Gamma stays PD since W is
            raise PreconditionError("theta must be entrywise nonnegative")

    @property
    def nodes(self):
        return self.graph.nodes

    @property
    def steps(self):
        return self.W.shape[0]

    @property
    def horizon(self):
        return self.steps - self.history

    def laplacian(self):
        return laplacian_like(self.graph, self.norm_mode, self.isolated)

    def normalized(self):
        return np.eye(self.nodes) - self.laplacian()

    def index(self, step, node):
        return step * self.nodes + node

    def history_indices(self):
        return np.arange(self.history * self.nodes)

    def step_indices(self, t):
        """Flat indices of future step ``t`` (0-based within the horizon)."""
        start = (self.history + t) * self.nodes
        return np.arange(start, start + self.nodes)


def assemble_gamma(p):
    """Potential matrix ``kron(W, I_N) + kron(diag(theta), I_N - N(A))``.

    Raises NotPositiveDefinite if the result does not factor.
    """
    n = p.nodes
    gamma = np.kron(p.W, np.eye(n)) + np.kron(np.diag(p.theta), p.laplacian())
    cholesky(gamma)
    return gamma


def _gamma_of(p):
    return p if isinstance(p, np.ndarray) else assemble_gamma(p)


def sample(p, rng, count, feats=1):
    """Draw ``count`` tensors of shape ``(T + T_P, N, feats)`` from N(0, Gamma^-1)."""
    gamma = assemble_gamma(p)
    L = cholesky(gamma)
    eps = rng.standard_normal((gamma.shape[0], count * feats))
    # L^T z = eps  =>  cov(z) = (L L^T)^-1
    z = solve_triangular(L.T, eps, lower=False)
    z = z.reshape(p.steps, p.nodes, count, feats)
    return [np.ascontiguousarray(z[:, :, i, :]) for i in range(count)]


def conditional_mean_exact(p, observed_indices, observed_values, query_indices):
    """Zero-mean Gaussian conditional mean ``-Gamma_QQ^-1 Gamma_QO v_O``.

    ``p`` is a GmrfParams or an already assembled precision matrix. Variables
    outside both index sets are marginalized out.
    """
    gamma = _gamma_of(p)
    obs = np.asarray(observed_indices, dtype=np.int64).reshape(-1)
    qry = np.asarray(query_indices, dtype=np.int64).reshape(-1)
    if np.intersect1d(obs, qry).size:
        raise IndexOverlap("observed and query index sets overlap")
    if len(set(obs.tolist())) != obs.size or len(set(qry.tolist())) != qry.size:
        raise IndexOverlap("index sets must not repeat entries")
    vals = np.asarray(observed_values, dtype=np.float64)
    squeeze = vals.ndim == 1
    vals = vals.reshape(obs.size, -1)
    rest = np.setdiff1d(np.arange(gamma.shape[0]), np.concatenate([obs, qry]))
    # marginalize the rest first: Schur complement onto (Q, O)
    keep = np.concatenate([qry, obs])
    g = gamma[np.ix_(keep, keep)]
    if rest.size:
        g_kr = gamma[np.ix_(keep, rest)]
        g = g - g_kr @ cho_solve(cholesky(gamma[np.ix_(rest, rest)]), g_kr.T)
        g = 0.5 * (g + g.T)
    nq = qry.size
    mean = -cho_solve(cholesky(g[:nq, :nq]), g[:nq, nq:] @ vals)
    return mean[:, 0] if squeeze else mean


def marginal_covariance(p, query_indices):
    """``(Gamma_QQ - Gamma_QR Gamma_RR^-1 Gamma_RQ)^-1`` with R the complement."""
    gamma = _gamma_of(p)
    qry = np.asarray(query_indices, dtype=np.int64).reshape(-1)
    rest = np.setdiff1d(np.arange(gamma.shape[0]), qry)
    schur = gamma[np.ix_(qry, qry)]
    if rest.size:
        g_qr = gamma[np.ix_(qry, rest)]
        schur = schur - g_qr @ cho_solve(cholesky(gamma[np.ix_(rest, rest)]), g_qr.T)
        schur = 0.5 * (schur + schur.T)
    return cho_solve(cholesky(schur), np.eye(qry.size))


def temporal_w(steps, diag=2.0, off=-1.0, ridge=0.1):
    """Tridiagonal temporal coupling plus a ridge (default synthetic W)."""
    w = np.diag(np.full(steps, diag + ridge))
    i = np.arange(steps - 1)
    w[i, i + 1] = w[i + 1, i] = off
    return w


def synthetic_graph(rng, nodes, epsilon=0.1, coords=None):
    """Random planar layout with thresholded Gaussian distance weights.

    Returns the graph (zero diagonal) and the distance matrix.
    """
    pts = rng.uniform(0.0, 1.0, size=(nodes, 2)) if coords is None else np.asarray(coords)
    d = np.sqrt(((pts[:, None, :] - pts[None, :, :]) ** 2).sum(-1))
    off = d[~np.eye(nodes, dtype=bool)]
    sigma2 = float(np.std(off)) ** 2 if off.size else 1.0
    a = gaussian_kernel_weights(d, sigma2, epsilon)
    np.fill_diagonal(a, 0.0)
    return WeightedGraph(a), d


def random_params(rng, nodes, history, horizon, theta_range=(0.2, 2.0), edge_prob=0.6):
    """Random valid parameters for oracle tests.

    ``W`` is a random SPD matrix with a dense history/future coupling block;
    the graph is Erdos-Renyi with uniform weights.
    """
    steps = history + horizon
    m = rng.standard_normal((steps, steps)) * 0.5
    W = m @ m.T + 0.5 * np.eye(steps)
    theta = rng.uniform(*theta_range, size=steps)
    a = rng.uniform(0.5, 1.5, size=(nodes, nodes)) * (rng.uniform(size=(nodes, nodes)) < edge_prob)
    a = np.triu(a, 1)
    a = a + a.T
    return GmrfParams(W, theta, WeightedGraph(a), history)


@dataclass
class InjectionSpec:
    """Which deviations the synthetic generator injects into each window.

    ``divergent`` and ``convergent`` are fractions of nodes placed in
    pairs (case a: copied inputs, offset labels; case b: distinct inputs,
    copied labels); ``temporal`` is the fraction of nodes whose labels get a
    step offset (case c). ``precursor_steps > 0`` also shifts the last input
    steps and the labels of the graph neighbours of case-c nodes, so the
    shift is visible in the spatial context but not in the node's own past.
    """

    divergent: float = 0.0
    convergent: float = 0.0
    temporal: float = 0.0
    window_fraction: float = 1.0
    delta: float = 1.5
    precursor_steps: int = 0

    def __post_init__(self):
        for name in ("divergent", "convergent", "temporal", "window_fraction"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise PreconditionError(f"{name} must lie in [0, 1], got {v}")

    def counts(self, nodes):
        pa = int(round(self.divergent * nodes / 2))
        pb = int(round(self.convergent * nodes / 2))
        tc = int(round(self.temporal * nodes))
        if pa + pb > nodes // 2 or 2 * (pa + pb) + tc > nodes:
            raise SpecExceedsNodes(
                f"{pa}+{pb} pairs and {tc} shifted nodes do not fit in {nodes} nodes"
            )
        return pa, pb, tc


@dataclass
class SyntheticDataset:
    x: np.ndarray  # windows x T x N x f
    y: np.ndarray  # windows x T_P x N x f
    params: GmrfParams
    spec: InjectionSpec
    annotations: list = field(default_factory=list)
    distances: Optional[np.ndarray] = None
    node_std: Optional[np.ndarray] = None

    @property
    def windows(self):
        return list(zip(self.x, self.y))

    def annotated(self, case):
        return [a for a in self.annotations if a["case"] == case]


def node_std(p):
    """Per-node marginal standard deviation averaged over all steps."""
    var = np.diag(marginal_covariance(p, np.arange(p.steps * p.nodes)))
    return np.sqrt(var.reshape(p.steps, p.nodes).mean(axis=0))


def _reflect(seq):
    mu = seq.mean(axis=0, keepdims=True)
    return 2.0 * mu - seq


def generate_synthetic(p, windows, spec, rng, feats=1, level=0.0, distances=None):
    """Sample ``windows`` GMRF draws, split at T and inject deviations."""
    nodes, T = p.nodes, p.history
    pa, pb, tc = spec.counts(nodes)
    draws = sample(p, rng, windows, feats)
    data = np.stack(draws) if windows else np.zeros((0, p.steps, nodes, feats))
    x = data[:, :T].copy()
    y = data[:, T:].copy()
    std = node_std(p)
    adj = p.graph.adjacency > 0
    notes = []
    for w in range(windows):
        if pa + pb + tc == 0 or rng.uniform() >= spec.window_fraction:
            continue
        perm = rng.permutation(nodes)
        pairs_a = perm[: 2 * pa].reshape(-1, 2)
        pairs_b = perm[2 * pa: 2 * (pa + pb)].reshape(-1, 2)
        shifted = perm[2 * (pa + pb): 2 * (pa + pb) + tc]
        paired = set(perm[: 2 * (pa + pb)].tolist())
        for u, v in pairs_a:
            s = 1.0 if rng.uniform() < 0.5 else -1.0
            x[w, :, v] = x[w, :, u]
            y[w, :, v] = _reflect(y[w, :, u]) + s * spec.delta * std[v]
            notes.append({"window": w, "case": "divergent", "nodes": [int(u), int(v)], "sign": s})
        for u, v in pairs_b:
            x[w, :, v] = _reflect(x[w, :, u])
            y[w, :, v] = y[w, :, u]
            notes.append({"window": w, "case": "convergent", "nodes": [int(u), int(v)], "sign": 0.0})
        if tc:
            s = 1.0 if rng.uniform() < 0.5 else -1.0
            for u in shifted:
                y[w, :, u] += s * spec.delta * std[u]
                notes.append({"window": w, "case": "temporal", "nodes": [int(u)], "sign": s})
            if spec.precursor_steps > 0:
                k = min(spec.precursor_steps, T)
                lead = np.flatnonzero(adj[shifted].any(axis=0))
                lead = [v for v in lead if v not in paired and v not in set(shifted.tolist())]
                for v in lead:
                    x[w, T - k:, v] += s * spec.delta * std[v]
                    y[w, :, v] += s * spec.delta * std[v]
                    notes.append({"window": w, "case": "precursor", "nodes": [int(v)], "sign": s})
    if level:
        x += level
        y += level
    return SyntheticDataset(x, y, p, spec, notes, distances, std)
