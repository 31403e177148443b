"""Adjacency construction, normalization operators and predefined kernels."""

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import (
    AllFiltered,
    DegenerateDegree,
    FormatError,
    MissingAltitude,
    PreconditionError,
    ShapeMismatch,
)
from .numerics import as_matrix

EARTH_RADIUS_M = 6_371_000.0
ALTITUDE_GRID = 64
ISOLATED_MODES = ("self_loop", "zero", "strict")


@dataclass
class WeightedGraph:
    adjacency: np.ndarray

    def __post_init__(self):
        a = as_matrix(self.adjacency)
        if a.shape[0] != a.shape[1]:
            raise ShapeMismatch(f"adjacency must be square, got {a.shape}")
        if np.any(a < 0):
            raise PreconditionError("adjacency weights must be nonnegative")
        if np.any(np.diag(a) != 0):
            raise PreconditionError("adjacency must have a zero diagonal")
        self.adjacency = a

    @property
    def nodes(self):
        return self.adjacency.shape[0]


@dataclass
class GraphKernel:
    """An N x N propagation matrix and where it came from."""

    matrix: np.ndarray
    kind: str
    meta: dict = field(default_factory=dict)

    @property
    def nodes(self):
        return self.matrix.shape[0]


@dataclass
class GeoTable:
    lon: np.ndarray
    lat: np.ndarray
    alt: Optional[np.ndarray] = None
    # terrain(lon, lat) -> height in meters, vectorized over arrays
    terrain: Optional[Callable] = None

    def __post_init__(self):
        self.lon = np.asarray(self.lon, dtype=np.float64)
        self.lat = np.asarray(self.lat, dtype=np.float64)
        if self.lon.shape != self.lat.shape or self.lon.ndim != 1:
            raise ShapeMismatch("lon/lat must be equal-length vectors")
        if np.any(np.abs(self.lon) > 180) or np.any(np.abs(self.lat) > 90):
            raise PreconditionError("coordinates out of range")
        if self.alt is not None:
            self.alt = np.asarray(self.alt, dtype=np.float64)
            if self.alt.shape != self.lon.shape or not np.all(np.isfinite(self.alt)):
                raise PreconditionError("altitude must be finite, one value per node")

    @property
    def nodes(self):
        return self.lon.shape[0]


def _degrees(a, mode):
    # transition normalizes columns (A D^-1 is column-stochastic)
    return a.sum(axis=0) if mode == "transition" else a.sum(axis=1)


def normalize(g, mode="symmetric", isolated="self_loop"):
    """Normalized adjacency ``N(A)``.

    ``transition`` gives ``A D^-1`` with D the column sums, ``symmetric`` gives
    ``D^-1/2 A D^-1/2``. Zero-degree nodes get a unit self-loop
    (``isolated="self_loop"``), stay all-zero (``"zero"``) or raise
    (``"strict"``).
    """
    if mode not in ("transition", "symmetric"):
        raise ValueError(f"unknown normalization mode {mode!r}")
    if isolated not in ISOLATED_MODES:
        raise ValueError(f"unknown isolated-node handling {isolated!r}")
    a = g.adjacency.copy() if isinstance(g, WeightedGraph) else as_matrix(g).copy()
    deg = _degrees(a, mode)
    dead = deg <= 0
    if np.any(dead):
        if isolated == "strict":
            raise DegenerateDegree(f"isolated nodes: {np.flatnonzero(dead).tolist()}")
        if isolated == "self_loop":
            a[dead, dead] = 1.0
            deg = _degrees(a, mode)
    inv = np.zeros_like(deg)
    np.divide(1.0, deg, out=inv, where=deg > 0)
    if mode == "transition":
        return a * inv[None, :]
    s = np.sqrt(inv)
    return s[:, None] * a * s[None, :]


def laplacian_like(g, mode="symmetric", isolated="self_loop"):
    """``I_N - N(A)``."""
    n = normalize(g, mode, isolated)
    return np.eye(n.shape[0]) - n


def gaussian_kernel_weights(d, sigma2, epsilon):
    """``exp(-d / sigma2)`` masked to zero where ``d >= -sigma2 * ln(epsilon)``."""
    if not 0.0 < epsilon < 1.0:
        raise PreconditionError("epsilon must lie in (0, 1)")
    d = np.asarray(d, dtype=np.float64)
    keep = d < -sigma2 * math.log(epsilon)
    return np.where(keep, np.exp(-d / sigma2), 0.0)


def traffic_kernel(distances, epsilon):
    """Thresholded Gaussian distance kernel, transition-normalized."""
    d = as_matrix(distances)
    n = d.shape[0]
    if d.shape != (n, n) or np.any(d < 0) or np.any(np.diag(d) != 0):
        raise PreconditionError("distances must be square, nonnegative, zero diagonal")
    if not np.allclose(d, d.T):
        raise PreconditionError("distances must be symmetric")
    off = d[~np.eye(n, dtype=bool)]
    sigma2 = float(np.std(off)) ** 2 if off.size else 1.0
    if sigma2 == 0.0:
        sigma2 = 1.0
    a_s = gaussian_kernel_weights(d, sigma2, epsilon)
    if n > 1 and not np.any(a_s[~np.eye(n, dtype=bool)] > 0):
        raise AllFiltered("every off-diagonal weight was filtered out")
    return GraphKernel(
        normalize(a_s, "transition"),
        "predefined",
        {"sigma2": sigma2, "epsilon": epsilon, "weights": a_s},
    )


def haversine_matrix(lon, lat):
    lam = np.radians(np.asarray(lon, dtype=np.float64))
    phi = np.radians(np.asarray(lat, dtype=np.float64))
    dphi = phi[:, None] - phi[None, :]
    dlam = lam[:, None] - lam[None, :]
    h = np.sin(dphi / 2) ** 2 + np.cos(phi)[:, None] * np.cos(phi)[None, :] * np.sin(dlam / 2) ** 2
    return 2 * EARTH_RADIUS_M * np.arcsin(np.sqrt(np.clip(h, 0.0, 1.0)))


def relative_altitude(geo, grid=ALTITUDE_GRID):
    """Highest terrain point strictly between two nodes minus the higher endpoint.

    The supremum over the open segment is taken on ``grid`` interior points,
    symmetric under swapping the endpoints. Without a terrain sampler the
    terrain is the linear interpolation of the endpoint altitudes.
    """
    if geo.alt is None:
        raise MissingAltitude("relative altitude needs per-node altitude")
    n = geo.nodes
    lam = np.arange(1, grid + 1) / (grid + 1)
    out = np.zeros((n, n))
    for u in range(n):
        for v in range(u + 1, n):
            if geo.terrain is None:
                profile = lam * geo.alt[u] + (1 - lam) * geo.alt[v]
            else:
                lon = lam * geo.lon[u] + (1 - lam) * geo.lon[v]
                lat = lam * geo.lat[u] + (1 - lam) * geo.lat[v]
                profile = np.asarray(geo.terrain(lon, lat), dtype=np.float64)
            out[u, v] = out[v, u] = profile.max() - max(geo.alt[u], geo.alt[v])
    return out


def atmosphere_kernel(geo, eps_dist, xi_alt=None, grid=ALTITUDE_GRID):
    """Distance- and altitude-gated binary adjacency, symmetrically normalized.

    ``xi_alt=None`` disables the altitude gate.
    """
    if eps_dist <= 0:
        raise PreconditionError("eps_dist must be positive")
    d_geo = haversine_matrix(geo.lon, geo.lat)
    a = (d_geo < eps_dist).astype(np.float64)
    h_alt = None
    if xi_alt is not None:
        if xi_alt <= 0:
            raise PreconditionError("xi_alt must be positive")
        h_alt = relative_altitude(geo, grid)
        a *= h_alt < xi_alt
    return GraphKernel(
        normalize(a, "symmetric"),
        "predefined",
        {"distance": d_geo, "relative_altitude": h_alt, "weights": a},
    )


def diffusion_kernel(g, isolated="zero"):
    """Forward ``A D^-1`` and backward ``A^T D'^-1`` transition kernels."""
    a = g.adjacency if isinstance(g, WeightedGraph) else as_matrix(g)
    fwd = normalize(a, "transition", isolated)
    bwd = normalize(a.T, "transition", isolated)
    return (
        GraphKernel(fwd, "diffusion-forward"),
        GraphKernel(bwd, "diffusion-backward"),
    )


def read_adjacency_csv(path, nodes=None):
    """Read ``src,dst,weight`` rows into a dense graph."""
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [c.strip() for c in reader.fieldnames] != ["src", "dst", "weight"]:
            raise FormatError(f"{path}: expected header src,dst,weight")
        for row in reader:
            rows.append((int(row["src"]), int(row["dst"]), float(row["weight"])))
    n = nodes if nodes is not None else 1 + max((max(s, d) for s, d, _ in rows), default=-1)
    a = np.zeros((n, n))
    for s, d, w in rows:
        if not (0 <= s < n and 0 <= d < n):
            raise FormatError(f"{path}: node id out of range in edge {s}->{d}")
        if s != d:
            a[s, d] = w
    return WeightedGraph(a)


def write_adjacency_csv(path, g):
    a = g.adjacency if isinstance(g, WeightedGraph) else np.asarray(g)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["src", "dst", "weight"])
        for s, d in zip(*np.nonzero(a)):
            w.writerow([int(s), int(d), repr(float(a[s, d]))])


def read_geo_csv(path):
    """Read ``node,lon,lat[,alt]`` rows."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        cols = [c.strip() for c in reader.fieldnames or []]
        if cols[:3] != ["node", "lon", "lat"] or cols[3:] not in ([], ["alt"]):
            raise FormatError(f"{path}: expected header node,lon,lat[,alt]")
        rows = sorted(reader, key=lambda r: int(r["node"]))
    if [int(r["node"]) for r in rows] != list(range(len(rows))):
        raise FormatError(f"{path}: node ids must be 0..N-1")
    alt = [float(r["alt"]) for r in rows] if "alt" in cols else None
    return GeoTable(
        lon=[float(r["lon"]) for r in rows],
        lat=[float(r["lat"]) for r in rows],
        alt=alt,
    )
