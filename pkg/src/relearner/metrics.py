"""Point and exceedance metrics plus the JSON evaluation report."""

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import AllMasked, ShapeMismatch

DEFAULT_MAPE_FLOOR = 1e-3


def _pair(pred, y):
    pred = np.asarray(pred, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if pred.shape != y.shape:
        raise ShapeMismatch(f"prediction {pred.shape} vs labels {y.shape}")
    return pred, y


def mae(pred, y):
    pred, y = _pair(pred, y)
    return float(np.mean(np.abs(pred - y)))


def rmse(pred, y):
    pred, y = _pair(pred, y)
    return float(np.sqrt(np.mean((pred - y) ** 2)))


def mape(pred, y, floor=DEFAULT_MAPE_FLOOR):
    """Percent error over entries with ``|y| >= floor``; raises AllMasked if none."""
    pred, y = _pair(pred, y)
    keep = np.abs(y) >= floor
    if not keep.any():
        raise AllMasked(f"no label reaches the MAPE floor {floor}")
    return float(100.0 * np.mean(np.abs(pred[keep] - y[keep]) / np.abs(y[keep])))


def _triple(pred, y, floor):
    try:
        pct = mape(pred, y, floor)
    except AllMasked:
        pct = None
    return {"mae": mae(pred, y), "rmse": rmse(pred, y), "mape": pct}


def point_metrics(pred, y, mape_floor=DEFAULT_MAPE_FLOOR):
    """MAE / RMSE / MAPE overall and per horizon.

    Arrays shaped ``(..., T_P, N, f)`` get one entry per horizon (1-based);
    lower-rank inputs only get the aggregate.
    """
    pred, y = _pair(pred, y)
    out = {"overall": _triple(pred, y, mape_floor), "horizons": []}
    if pred.ndim >= 3:
        for h in range(pred.shape[-3]):
            row = _triple(pred[..., h, :, :], y[..., h, :, :], mape_floor)
            row["horizon"] = h + 1
            out["horizons"].append(row)
    return out


def exceedance_counts(pred, y, eps):
    pred, y = _pair(pred, y)
    if pred.ndim != 1:
        raise ShapeMismatch("exceedance metrics take one node's sequence")
    obs, fc = y >= eps, pred >= eps
    return {
        "hits": int(np.sum(obs & fc)),
        "false_alarms": int(np.sum(~obs & fc)),
        "misses": int(np.sum(obs & ~fc)),
        "correct_negatives": int(np.sum(~obs & ~fc)),
        "length": int(y.size),
    }


def _ratio(num, den):
    return None if den == 0 else num / den


def exceedance_metrics(pred, y, eps=75.0):
    """(CSI, POD, FAR) for one node; ``None`` where a denominator is zero.

    The CSI denominator is the sequence length minus the correct negatives.
    """
    c = exceedance_counts(pred, y, eps)
    csi = _ratio(c["hits"], c["length"] - c["correct_negatives"])
    pod = _ratio(c["hits"], c["hits"] + c["misses"])
    far = _ratio(c["false_alarms"], c["hits"] + c["false_alarms"])
    return csi, pod, far


def exceedance_summary(pred, y, eps=75.0):
    """Average each score over every (window, node, channel) sequence where it is defined."""
    pred, y = _pair(pred, y)
    p = np.moveaxis(pred, -3, -1).reshape(-1, pred.shape[-3])
    t = np.moveaxis(y, -3, -1).reshape(-1, y.shape[-3])
    acc = {"csi": [], "pod": [], "far": []}
    for a, b in zip(p, t):
        for key, val in zip(("csi", "pod", "far"), exceedance_metrics(a, b, eps)):
            if val is not None:
                acc[key].append(val)
    return {k: (float(np.mean(v)) if v else None) for k, v in acc.items()}


@dataclass
class EvalReport:
    horizons: list
    overall: dict
    exceedance: dict = None
    deviation: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def check(self):
        rows = [self.overall] + list(self.horizons)
        for band in self.deviation.values():
            if band.get("overall"):
                rows.append(band["overall"])
        for r in rows:
            for key in ("mae", "rmse", "mape"):
                v = r.get(key)
                if v is not None and not math.isfinite(v):
                    raise ValueError(f"non-finite {key} in report")
            if r.get("mae") is not None and r["mae"] > r["rmse"] * (1 + 1e-12) + 1e-15:
                raise ValueError("MAE exceeds RMSE")
        hs = [r["horizon"] for r in self.horizons]
        if hs != list(range(1, len(hs) + 1)):
            raise ValueError("horizon entries must run 1..T_P")
        return self

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        return cls(d["horizons"], d["overall"], d.get("exceedance"), d.get("deviation", {}), d.get("meta", {}))

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    def horizon_rows(self):
        """Long rows ``(horizon, metric, value)`` for CSV output."""
        for r in self.horizons:
            for key in ("mae", "rmse", "mape"):
                yield r["horizon"], key, r[key]


def build_report(pred, y, mape_floor=DEFAULT_MAPE_FLOOR, eps=None, meta=None):
    pm = point_metrics(pred, y, mape_floor)
    exc = exceedance_summary(pred, y, eps) if eps is not None else None
    return EvalReport(pm["horizons"], pm["overall"], exc, {}, dict(meta or {})).check()
