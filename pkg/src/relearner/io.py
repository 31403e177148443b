"""``.stds`` dataset files: one JSON header line, then float32 frames.

Frames are stored F x N x f, row-major, little-endian. A dataset of
independent windows (such as the synthetic generator's output) is stored as
consecutive blocks of ``history + horizon`` frames with ``window_length`` set
in the header; a plain series has no ``window_length``.
"""

import json
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import FormatError
from .graphs import GraphKernel, WeightedGraph, diffusion_kernel, normalize, read_adjacency_csv, write_adjacency_csv
from .training import WindowSet, sliding_windows

SCHEMA_VERSION = 1


@dataclass
class StDataset:
    frames: np.ndarray  # F x N x f, float32
    frequency: str = "step"
    units: str = "unitless"
    adjacency: Optional[WeightedGraph] = None
    window_length: Optional[int] = None
    history: Optional[int] = None
    annotations: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    @property
    def shape(self):
        return self.frames.shape

    @property
    def nodes(self):
        return self.frames.shape[1]

    def windows(self):
        """Independent windows as a WindowSet (windowed datasets only)."""
        if self.window_length is None:
            raise FormatError("dataset is a continuous series, not a window set")
        L, T = self.window_length, self.history
        blocks = self.frames.reshape(-1, L, *self.frames.shape[1:]).astype(np.float64)
        return WindowSet(blocks[:, :T], blocks[:, T:], np.arange(blocks.shape[0]) * L)

    def series_windows(self, T, T_P):
        return sliding_windows(self.frames, T, T_P)


def from_windows(x, y, **kw):
    x = np.asarray(x)
    y = np.asarray(y)
    frames = np.concatenate([x, y], axis=1).reshape(-1, *x.shape[2:])
    return StDataset(frames.astype(np.float32), window_length=x.shape[1] + y.shape[1], history=x.shape[1], **kw)


def _sidecar(path):
    root = path[:-5] if path.endswith(".stds") else path
    return root + ".adj.csv"


def write_stds(path, ds):
    frames = np.ascontiguousarray(ds.frames, dtype="<f4")
    if frames.ndim != 3:
        raise FormatError("frames must be F x N x f")
    adj_name = None
    if ds.adjacency is not None:
        side = _sidecar(path)
        write_adjacency_csv(side, ds.adjacency)
        adj_name = os.path.basename(side)
    head = {
        "schema_version": SCHEMA_VERSION,
        "F": int(frames.shape[0]),
        "N": int(frames.shape[1]),
        "f": int(frames.shape[2]),
        "frequency": ds.frequency,
        "units": ds.units,
        "adjacency": adj_name,
        "window_length": ds.window_length,
        "history": ds.history,
        "annotations": ds.annotations,
        "extra": ds.extra,
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(head, sort_keys=True).encode("utf-8") + b"\n")
        fh.write(frames.tobytes())


def read_stds(path):
    with open(path, "rb") as fh:
        line = fh.readline()
        raw = fh.read()
    try:
        head = json.loads(line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: header is not JSON") from exc
    for key in ("schema_version", "F", "N", "f"):
        if key not in head:
            raise FormatError(f"{path}: header lacks {key!r}")
    if head["schema_version"] != SCHEMA_VERSION:
        raise FormatError(f"{path}: unsupported schema version {head['schema_version']}")
    F, N, f = head["F"], head["N"], head["f"]
    if len(raw) != 4 * F * N * f:
        raise FormatError(f"{path}: expected {4 * F * N * f} payload bytes, found {len(raw)}")
    frames = np.frombuffer(raw, dtype="<f4").reshape(F, N, f).copy()
    adj = None
    if head.get("adjacency"):
        side = os.path.join(os.path.dirname(os.path.abspath(path)), head["adjacency"])
        adj = read_adjacency_csv(side, nodes=N)
    wl = head.get("window_length")
    if wl is not None and (wl < 1 or F % wl):
        raise FormatError(f"{path}: F={F} is not a multiple of window_length={wl}")
    return StDataset(
        frames,
        head.get("frequency", "step"),
        head.get("units", "unitless"),
        adj,
        wl,
        head.get("history"),
        head.get("annotations", []),
        head.get("extra", {}),
    )


def graph_kernels(adjacency):
    """Static kernels derived from a dataset's graph.

    ``predefined`` is the transition-normalized adjacency with unit self
    weights; ``diffusion`` is the forward/backward transition pair.
    """
    if adjacency is None:
        return {}
    a = adjacency.adjacency.copy()
    np.fill_diagonal(a, 1.0)
    pre = GraphKernel(normalize(a, "transition"), "predefined")
    return {"predefined": pre, "diffusion": diffusion_kernel(adjacency)}
