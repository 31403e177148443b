"""Windowing, MAE loss, AdamW and the joint / finetune training loops."""

import logging
import zlib
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import autodiff as ad
from .errors import NonFiniteGradient, SegmentTooShort, ShapeMismatch
from .numerics import make_rng

log = logging.getLogger(__name__)

REGIMES = ("joint", "finetune")


@dataclass
class TrainConfig:
    learning_rate: float = 0.002
    weight_decay: float = 0.01
    batch_size: int = 32
    max_epochs: int = 100
    patience: int = 15
    regime: str = "joint"
    seed: int = 0
    history: int = 12
    horizon: int = 12
    split: tuple = (0.6, 0.2, 0.2)
    clip_norm: float = 5.0
    pretrain_epochs: int = -1  # finetune phase 1 length; -1 means max_epochs
    freeze_backbone_phase2: bool = False

    def __post_init__(self):
        self.split = tuple(float(r) for r in self.split)
        if len(self.split) != 3 or any(r < 0 for r in self.split) or abs(sum(self.split) - 1.0) > 1e-9:
            raise ValueError(f"split ratios must be three nonnegative numbers summing to 1, got {self.split}")
        if self.history < 1 or self.horizon < 1:
            raise ValueError("history and horizon must be at least 1")
        if self.patience > self.max_epochs:
            raise ValueError("patience may not exceed max_epochs")
        if self.regime not in REGIMES:
            raise ValueError(f"regime must be one of {REGIMES}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")

    def to_dict(self):
        d = asdict(self)
        d["split"] = list(self.split)
        return d

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass
class WindowSet:
    x: np.ndarray  # (W, T, N, f)
    y: np.ndarray  # (W, T_P, N, f)
    start: np.ndarray = field(default=None)  # first frame of each window

    def __len__(self):
        return self.x.shape[0]

    def subset(self, idx):
        return WindowSet(self.x[idx], self.y[idx], None if self.start is None else self.start[idx])


def split_sizes(count, ratios):
    """Floor sizes for the later segments, remainder goes to the first."""
    val = int(np.floor(count * ratios[1]))
    test = int(np.floor(count * ratios[2]))
    return count - val - test, val, test


def sliding_windows(frames, T, T_P, offset=0):
    frames = np.asarray(frames)
    n = frames.shape[0] - T - T_P + 1
    if n < 1:
        raise SegmentTooShort(f"segment of {frames.shape[0]} frames cannot hold a window of {T}+{T_P}")
    idx = np.arange(n)
    x = np.stack([frames[i: i + T] for i in idx])
    y = np.stack([frames[i + T: i + T + T_P] for i in idx])
    return WindowSet(x.astype(np.float64), y.astype(np.float64), idx + offset)


def split_and_window(frames, cfg):
    """Contiguous temporal split, then stride-1 windows inside each segment."""
    frames = np.asarray(frames)
    if frames.ndim != 3:
        raise ShapeMismatch(f"frames must be F x N x f, got {frames.shape}")
    sizes = split_sizes(frames.shape[0], cfg.split)
    out, start = [], 0
    for size in sizes:
        out.append(sliding_windows(frames[start: start + size], cfg.history, cfg.horizon, start))
        start += size
    return tuple(out)


def split_windows(ws, ratios):
    """Split an already-windowed set of independent samples in order."""
    a, b, _ = split_sizes(len(ws), ratios)
    return ws.subset(slice(0, a)), ws.subset(slice(a, a + b)), ws.subset(slice(a + b, None))


def mae_loss(pred, target):
    """Mean absolute error as a differentiable scalar; ``target`` is constant."""
    p = pred if isinstance(pred, ad.Tensor) else ad.tensor(pred)
    t = np.asarray(target.data if isinstance(target, ad.Tensor) else target, dtype=np.float64)
    if p.shape != t.shape:
        raise ShapeMismatch(f"prediction {p.shape} vs target {t.shape}")
    return ad.mean(ad.abs(ad.sub(p, t)))


class AdamW:
    """Adam moments with weight decay applied directly to the parameters."""

    def __init__(self, lr=0.002, weight_decay=0.01, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.weight_decay = lr, weight_decay
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m, self.v = {}, {}
        self.t = 0

    def step(self, params, grads):
        for name, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise NonFiniteGradient(name)
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name, g in grads.items():
            p = params[name]
            m = self.m.get(name)
            v = self.v.get(name)
            m = (1.0 - self.beta1) * g if m is None else self.beta1 * m + (1.0 - self.beta1) * g
            v = (1.0 - self.beta2) * g * g if v is None else self.beta2 * v + (1.0 - self.beta2) * g * g
            self.m[name], self.v[name] = m, v
            update = (m / c1) / (np.sqrt(v / c2) + self.eps) + self.weight_decay * p.data
            p.data = p.data - self.lr * update


def clip_global(grads, max_norm):
    if max_norm is None or max_norm <= 0:
        return grads
    total = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total > max_norm:
        scale = max_norm / total
        return {k: g * scale for k, g in grads.items()}
    return grads


def evaluate_mae(model, ws, batch_size=256):
    if len(ws) == 0:
        return float("nan")
    err, count = 0.0, 0
    for i in range(0, len(ws), batch_size):
        pred = model.predict(ws.x[i: i + batch_size])
        err += float(np.sum(np.abs(pred - ws.y[i: i + batch_size])))
        count += pred.size
    return err / count


def train_step(model, opt, xb, yb, names, clip_norm):
    for p in model.params.values():
        p.grad = None
    loss = mae_loss(model.forward(xb).y_hat, yb)
    loss.backward()
    grads = {}
    for n in names:
        g = model.params[n].grad
        grads[n] = np.zeros_like(model.params[n].data) if g is None else g
    opt.step(model.params, clip_global(grads, clip_norm))
    return float(loss.data)


def _run_phase(model, train_ws, val_ws, cfg, names, epochs, phase, history, shuffle_rng):
    opt = AdamW(cfg.learning_rate, cfg.weight_decay)
    best_val = evaluate_mae(model, val_ws)
    best_state = model.state()
    best_epoch, since = 0, 0
    n = len(train_ws)
    for epoch in range(1, epochs + 1):
        order = shuffle_rng.permutation(n)
        total, seen = 0.0, 0
        for i in range(0, n, cfg.batch_size):
            idx = order[i: i + cfg.batch_size]
            loss = train_step(model, opt, train_ws.x[idx], train_ws.y[idx], names, cfg.clip_norm)
            total += loss * idx.size
            seen += idx.size
        val = evaluate_mae(model, val_ws)
        history.append({"phase": phase, "epoch": epoch, "train_loss": total / seen, "val_mae": val})
        log.info("%s epoch %d train %.6f val %.6f", phase, epoch, total / seen, val)
        if val < best_val:
            best_val, best_state, best_epoch, since = val, model.state(), epoch, 0
        else:
            since += 1
            if since >= cfg.patience:
                break
    model.load_state(best_state)
    return best_epoch, best_val


def train(model, data, cfg):
    """Train ``model`` in place on ``data = (train, val)`` window sets.

    Returns ``(model, history)`` where history is a list of per-epoch dicts.
    The shuffle stream is derived from ``cfg.seed`` only, so two models that
    share a seed see identical batches.
    """
    train_ws, val_ws = data[0], data[1]
    if len(train_ws) == 0 or len(val_ws) == 0:
        raise ValueError("training needs nonempty train and validation sets")
    history = []
    if cfg.max_epochs == 0:
        return model, history
    shuffle_rng = make_rng(cfg.seed, zlib.crc32(b"shuffle"))
    residual = set(model.residual_names())
    everything = list(model.params)
    if cfg.regime == "joint" or not residual:
        _run_phase(model, train_ws, val_ws, cfg, everything, cfg.max_epochs, "joint", history, shuffle_rng)
        return model, history
    # finetune: pretrain with the residual head at its zero-initialized state
    pre = cfg.max_epochs if cfg.pretrain_epochs < 0 else cfg.pretrain_epochs
    backbone = [n for n in everything if n not in residual]
    if pre > 0:
        _run_phase(model, train_ws, val_ws, cfg, backbone, pre, "pretrain", history, shuffle_rng)
    phase2 = [n for n in everything if n in residual] if cfg.freeze_backbone_phase2 else everything
    _run_phase(model, train_ws, val_ws, cfg, phase2, cfg.max_epochs, "finetune", history, shuffle_rng)
    return model, history
