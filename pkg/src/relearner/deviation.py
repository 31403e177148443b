"""Selectors for windows whose labels deviate from their inputs.

Temporal: relative change between the input mean and the label mean of one
(window, node), bucketed into half-open bands per direction.
Spatial: node pairs whose input sequences correlate strongly while their
label sequences do not (divergence), or the reverse (convergence).
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateSequence, PreconditionError
from .metrics import DEFAULT_MAPE_FLOOR, point_metrics

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Band:
    direction: str  # "surge" or "plummet"
    lo: float
    hi: float

    def __post_init__(self):
        if self.direction not in ("surge", "plummet"):
            raise PreconditionError(f"unknown direction {self.direction!r}")
        if not 0.0 <= self.lo < self.hi:
            raise PreconditionError(f"band needs 0 <= lo < hi, got ({self.lo}, {self.hi}]")

    @property
    def label(self):
        hi = "inf" if math.isinf(self.hi) else f"{100 * self.hi:g}"
        return f"{self.direction} {100 * self.lo:g}-{hi}%"

    def contains(self, r):
        return (r > self.lo) & (r <= self.hi)


DEFAULT_BANDS = tuple(
    Band(d, lo, hi) for d in ("surge", "plummet") for lo, hi in ((0.25, 0.5), (0.5, 0.75), (0.75, math.inf))
)


@dataclass
class DeviationSpec:
    bands: tuple = DEFAULT_BANDS
    input_top: float = 0.2
    label_bottom: float = 0.05
    floor_scale: float = 1e-6

    def __post_init__(self):
        self.bands = tuple(b if isinstance(b, Band) else Band(*b) for b in self.bands)
        for q in (self.input_top, self.label_bottom):
            if not 0.0 < q < 1.0:
                raise PreconditionError("quantiles must lie in (0, 1)")
        for d in ("surge", "plummet"):
            own = sorted((b for b in self.bands if b.direction == d), key=lambda b: b.lo)
            for a, b in zip(own, own[1:]):
                if b.lo < a.hi:
                    raise PreconditionError(f"overlapping {d} bands")


def _xy(dataset):
    if isinstance(dataset, tuple):
        x, y = dataset
    else:
        x, y = dataset.x, dataset.y
    return np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)


def deviation_ratios(x, y, scale=None, floor_scale=1e-6):
    """Surge and plummet ratios per (window, node), each ``(W, N)``.

    Means run over steps and channels. The denominator is floored at
    ``floor_scale * scale``; ``scale`` defaults to the pooled std.
    """
    mx = x.mean(axis=(1, 3))
    my = y.mean(axis=(1, 3))
    if scale is None:
        scale = float(np.std(np.concatenate([x.ravel(), y.ravel()]))) if x.size else 1.0
    den = np.maximum(np.abs(mx), floor_scale * scale)
    if not np.all(den > 0):
        den = np.where(den > 0, den, np.finfo(float).tiny)
    surge = (my - mx) / den
    return surge, -surge


def select_temporal_deviation(dataset, spec=None, scale=None):
    """``{band label: int array (K, 2) of (window, node)}``."""
    spec = spec or DeviationSpec()
    x, y = _xy(dataset)
    surge, plummet = deviation_ratios(x, y, scale, spec.floor_scale)
    out = {}
    for band in spec.bands:
        r = surge if band.direction == "surge" else plummet
        out[band.label] = np.argwhere(band.contains(r))
    return out


def pearson_matrix(seqs):
    """Pairwise Pearson correlation of rows; rows with zero variance give NaN."""
    seqs = np.asarray(seqs, dtype=np.float64)
    c = seqs - seqs.mean(axis=1, keepdims=True)
    norm = np.sqrt(np.sum(c * c, axis=1))
    ok = norm > 0
    safe = np.where(ok, norm, 1.0)
    corr = (c @ c.T) / np.outer(safe, safe)
    corr = np.clip(corr, -1.0, 1.0)
    corr[~ok, :] = np.nan
    corr[:, ~ok] = np.nan
    return corr


def _upper_tail(v, q):
    if v.size == 0:
        return np.zeros(0, bool)
    cut = np.quantile(v, 1.0 - q)
    return (v >= cut) & (v > v.min())


def _lower_tail(v, q):
    if v.size == 0:
        return np.zeros(0, bool)
    cut = np.quantile(v, q)
    return (v <= cut) & (v < v.max())


def select_spatial_deviation(dataset, spec=None, mode="divergence"):
    """Per-window node pairs as an int array (K, 3) of (window, u, v), u < v.

    ``divergence``: input similarity in the top ``input_top`` share and label
    similarity in the bottom ``label_bottom`` share of the window's pairs.
    ``convergence`` swaps which sequence uses which tail.
    """
    if mode not in ("divergence", "convergence"):
        raise ValueError(f"unknown mode {mode!r}")
    spec = spec or DeviationSpec()
    x, y = _xy(dataset)
    n = x.shape[2]
    if n < 2:
        raise PreconditionError("spatial deviation needs at least two nodes")
    iu, iv = np.triu_indices(n, 1)
    found = []
    for w in range(x.shape[0]):
        cx = pearson_matrix(np.moveaxis(x[w], 1, 0).reshape(n, -1))[iu, iv]
        cy = pearson_matrix(np.moveaxis(y[w], 1, 0).reshape(n, -1))[iu, iv]
        valid = np.isfinite(cx) & np.isfinite(cy)
        if not valid.all():
            err = DegenerateSequence(f"window {w}: {int((~valid).sum())} pairs involve a constant sequence")
            log.info("skipping pairs: %s", err)
        sx, sy = cx[valid], cy[valid]
        if mode == "divergence":
            hit = _upper_tail(sx, spec.input_top) & _lower_tail(sy, spec.label_bottom)
        else:
            hit = _lower_tail(sx, spec.label_bottom) & _upper_tail(sy, spec.input_top)
        for k in np.flatnonzero(valid)[hit]:
            found.append((w, iu[k], iv[k]))
    return np.array(found, dtype=np.int64).reshape(-1, 3)


def instance_mask(shape, pairs):
    """Boolean (W, N) mask from (window, node...) rows."""
    mask = np.zeros(shape, dtype=bool)
    pairs = np.asarray(pairs, dtype=np.int64)
    for col in range(1, pairs.shape[1] if pairs.ndim == 2 else 1):
        mask[pairs[:, 0], pairs[:, col]] = True
    return mask


def subset_metrics(pred, y, mask, mape_floor=DEFAULT_MAPE_FLOOR):
    """Metrics over the (window, node) cells selected by ``mask``."""
    pred = np.moveaxis(np.asarray(pred, dtype=np.float64), 2, 1)[mask]  # (K, T_P, f)
    lab = np.moveaxis(np.asarray(y, dtype=np.float64), 2, 1)[mask]
    if pred.shape[0] == 0:
        return {"count": 0, "overall": None}
    pm = point_metrics(pred, lab, mape_floor)
    return {"count": int(pred.shape[0]), "overall": pm["overall"]}


def deviation_breakdown(x, y, pred, spec=None, scale=None, mape_floor=DEFAULT_MAPE_FLOOR):
    """Subset metrics for every temporal band and both spatial modes."""
    spec = spec or DeviationSpec()
    x, y = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
    shape = (x.shape[0], x.shape[2])
    out = {}
    for label, cells in select_temporal_deviation((x, y), spec, scale).items():
        out[label] = subset_metrics(pred, y, instance_mask(shape, cells), mape_floor)
    for mode in ("divergence", "convergence"):
        pairs = select_spatial_deviation((x, y), spec, mode)
        out[f"spatial {mode}"] = subset_metrics(pred, y, instance_mask(shape, pairs), mape_floor)
    return out
