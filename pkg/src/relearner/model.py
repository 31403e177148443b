"""Trainable forecaster: encoder, toy backbones, base decoder and the
residual-correction path (mapper, kernel bank, residual decoder).

All tensors are batched as ``(batch, steps, nodes, channels)``.
"""

import hashlib
import json
import zlib
from dataclasses import asdict, dataclass, field, fields
from typing import Optional

import numpy as np

from . import autodiff as ad
from .errors import FormatError, ShapeMismatch
from .graphs import GraphKernel
from .kernels import AdaptiveKernel, DataDrivenKernel, KernelBank, propagate
from .numerics import make_rng

VARIANTS = ("mlp-stid", "graph-conv")
KERNEL_TYPES = ("predefined", "diffusion", "adaptive", "data-driven")
CHECKPOINT_FORMAT = "relearner-checkpoint"


@dataclass
class ModelConfig:
    nodes: int = 0
    history: int = 12
    horizon: int = 12
    feats: int = 1
    variant: str = "mlp-stid"
    d_model: int = 32
    d_node: Optional[int] = None
    depth: int = 2
    relearner: bool = True
    kernels: tuple = ("predefined", "adaptive")
    layers: int = 1
    d_adp: int = 8
    d_hid: int = 16
    diag_mode: str = "zero"
    share_backbone: bool = True
    encoder_mode: Optional[str] = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown backbone variant {self.variant!r}")
        self.kernels = tuple(self.kernels)
        for k in self.kernels:
            if k not in KERNEL_TYPES:
                raise ValueError(f"unknown kernel type {k!r}")
        if self.d_node is None:
            self.d_node = 16 if self.variant == "mlp-stid" else 0
        if self.encoder_mode is None:
            self.encoder_mode = "flatten" if self.variant == "mlp-stid" else "per-step"
        if self.encoder_mode not in ("flatten", "per-step"):
            raise ValueError(f"unknown encoder mode {self.encoder_mode!r}")

    @property
    def latent_steps(self):
        return 1 if self.encoder_mode == "flatten" else self.history

    def to_dict(self):
        d = asdict(self)
        d["kernels"] = list(self.kernels)
        return d

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


def config_hash(d):
    blob = json.dumps(d, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class ForwardResult:
    y_base: ad.Tensor
    y_corr: Optional[ad.Tensor]
    y_hat: ad.Tensor
    diagnostics: dict = field(default_factory=dict)


def _linear(x, w, b):
    return ad.add(ad.matmul(x, w), b)


class ReLearnerModel:
    """Parameter bundle plus the forward dataflow.

    Parameters live in ``self.params`` (declaration order is checkpoint
    order); fixed graph kernels live in ``self.buffers``. Each parameter is
    initialized from its own seeded stream keyed by name, so adding or
    removing the residual path never changes the backbone's initial values.
    """

    def __init__(self, cfg, graph_kernels=None, seed=0, _init=True):
        self.cfg = cfg
        self.seed = seed
        self.params = {}
        self.buffers = {}
        graph_kernels = graph_kernels or {}
        n, d = cfg.nodes, cfg.d_model
        if n < 1:
            raise ValueError("model needs a positive node count")
        in_enc = (cfg.history * cfg.feats if cfg.encoder_mode == "flatten" else cfg.feats) + cfg.d_node
        flat = cfg.latent_steps * d
        out = cfg.horizon * cfg.feats

        if cfg.d_node:
            self._param("encoder.node_emb", (n, cfg.d_node), scale=1.0)
        self._linear_params("encoder.proj", in_enc, d)
        if cfg.variant == "graph-conv":
            gk = graph_kernels.get("predefined")
            self.buffers["backbone.kernel"] = np.eye(n) if gk is None else np.asarray(gk.matrix, dtype=np.float64)
        self._backbone_params("backbone", d)
        self._linear_params("base_decoder", flat, out)

        if cfg.relearner:
            self._linear_params("residual_mapper.hidden", d, d)
            self._linear_params("residual_mapper.out", d, d)
            if not cfg.share_backbone:
                self._backbone_params("backbone_res", d)
            static_idx = 0
            for kind in cfg.kernels:
                if kind == "predefined":
                    self.buffers[f"kernel_bank.static{static_idx}"] = self._static(graph_kernels, "predefined", n)
                    static_idx += 1
                elif kind == "diffusion":
                    fwd, bwd = graph_kernels.get("diffusion", (None, None))
                    for m in (fwd, bwd):
                        self.buffers[f"kernel_bank.static{static_idx}"] = (
                            np.eye(n) if m is None else np.asarray(m.matrix, dtype=np.float64)
                        )
                        static_idx += 1
            n_kernels = self._kernel_count()
            self._param("kernel_bank.raw_alpha", (n_kernels, n), zero=True)
            self._param("kernel_bank.raw_tau", (n,), zero=True)
            for i, kind in enumerate(cfg.kernels):
                if kind == "adaptive":
                    self._param(f"kernel_bank.adp{i}.E1", (n, cfg.d_adp), scale=1.0)
                    self._param(f"kernel_bank.adp{i}.E2", (n, cfg.d_adp), scale=1.0)
                elif kind == "data-driven":
                    self._linear_params(f"kernel_bank.att{i}.q", d, cfg.d_hid)
                    self._linear_params(f"kernel_bank.att{i}.k", d, cfg.d_hid)
            self._linear_params("residual_decoder.hidden", flat, d)
            self._linear_params("residual_decoder.out", d, out, zero=True)
        if not _init:
            return

    @staticmethod
    def _static(graph_kernels, kind, n):
        gk = graph_kernels.get(kind)
        return np.eye(n) if gk is None else np.asarray(gk.matrix, dtype=np.float64)

    def _kernel_count(self):
        return sum(2 if k == "diffusion" else 1 for k in self.cfg.kernels)

    def _param(self, name, shape, fan_in=None, zero=False, scale=None):
        if zero:
            data = np.zeros(shape)
        else:
            rng = make_rng(self.seed, zlib.crc32(name.encode()))
            bound = scale if scale is not None else 1.0 / np.sqrt(fan_in)
            data = rng.uniform(-bound, bound, size=shape)
        self.params[name] = ad.tensor(data, requires_grad=True)

    def _linear_params(self, prefix, fan_in, fan_out, zero=False):
        self._param(f"{prefix}.W", (fan_in, fan_out), fan_in=fan_in, zero=zero)
        self._param(f"{prefix}.b", (fan_out,), fan_in=fan_in, zero=zero)

    def _backbone_params(self, prefix, d):
        for i in range(self.cfg.depth):
            self._linear_params(f"{prefix}.block{i}.fc1", d, d)
            self._linear_params(f"{prefix}.block{i}.fc2", d, d)

    def lin(self, prefix, x):
        return _linear(x, self.params[f"{prefix}.W"], self.params[f"{prefix}.b"])

    # forward path

    def _check_input(self, x):
        x = np.asarray(x, dtype=np.float64) if not isinstance(x, ad.Tensor) else x
        data = x.data if isinstance(x, ad.Tensor) else x
        if data.ndim == 3:
            data = data[None]
        c = self.cfg
        if data.shape[1:] != (c.history, c.nodes, c.feats):
            raise ShapeMismatch(
                f"input {data.shape[1:]} does not match ({c.history}, {c.nodes}, {c.feats})"
            )
        return ad.tensor(data)

    def encode(self, x):
        c = self.cfg
        x = self._check_input(x)
        B = x.shape[0]
        if c.encoder_mode == "flatten":
            h = ad.reshape(ad.transpose(x, (0, 2, 1, 3)), (B, c.nodes, c.history * c.feats))
            if c.d_node:
                emb = ad.broadcast_to(self.params["encoder.node_emb"], (B, c.nodes, c.d_node))
                h = ad.concat([h, emb], axis=-1)
            z = self.lin("encoder.proj", h)
            return ad.reshape(z, (B, 1, c.nodes, c.d_model))
        h = x
        if c.d_node:
            emb = ad.broadcast_to(self.params["encoder.node_emb"], (B, c.history, c.nodes, c.d_node))
            h = ad.concat([h, emb], axis=-1)
        return self.lin("encoder.proj", h)

    def backbone_forward(self, z, prefix="backbone"):
        kernel = self.buffers.get("backbone.kernel")
        for i in range(self.cfg.depth):
            h = ad.matmul(kernel, z) if kernel is not None else z
            h = self.lin(f"{prefix}.block{i}.fc2", ad.gelu(self.lin(f"{prefix}.block{i}.fc1", h)))
            z = ad.add(z, h)
        return z

    def _flatten_steps(self, z):
        B, S, N, d = z.shape
        return ad.reshape(ad.transpose(z, (0, 2, 1, 3)), (B, N, S * d))

    def _unflatten_out(self, h):
        c = self.cfg
        B = h.shape[0]
        return ad.transpose(ad.reshape(h, (B, c.nodes, c.horizon, c.feats)), (0, 2, 1, 3))

    def decode_base(self, z_h):
        return self._unflatten_out(self.lin("base_decoder", self._flatten_steps(z_h)))

    def residual_map(self, z_h):
        return self.lin("residual_mapper.out", ad.gelu(self.lin("residual_mapper.hidden", z_h)))

    def kernel_bank(self):
        c = self.cfg
        kernels = []
        static_idx = 0
        for i, kind in enumerate(c.kernels):
            if kind in ("predefined", "diffusion"):
                for _ in range(2 if kind == "diffusion" else 1):
                    m = self.buffers[f"kernel_bank.static{static_idx}"]
                    kernels.append(GraphKernel(m, kind))
                    static_idx += 1
            elif kind == "adaptive":
                p = self.params
                kernels.append(AdaptiveKernel(p[f"kernel_bank.adp{i}.E1"], p[f"kernel_bank.adp{i}.E2"], c.diag_mode))
            else:
                p = self.params
                kernels.append(
                    DataDrivenKernel(
                        p[f"kernel_bank.att{i}.q.W"], p[f"kernel_bank.att{i}.q.b"],
                        p[f"kernel_bank.att{i}.k.W"], p[f"kernel_bank.att{i}.k.b"],
                        c.diag_mode,
                    )
                )
        return KernelBank(kernels, self.params["kernel_bank.raw_alpha"], self.params["kernel_bank.raw_tau"], c.layers)

    def decode_residual(self, z):
        h = ad.gelu(self.lin("residual_decoder.hidden", self._flatten_steps(z)))
        return self._unflatten_out(self.lin("residual_decoder.out", h))

    def forward(self, x):
        """Inference dataflow; takes inputs only, never labels."""
        z_e = self.encode(x)
        z_h = self.backbone_forward(z_e)
        y_base = self.decode_base(z_h)
        diag = {"z_e": _norm(z_e), "z_h": _norm(z_h)}
        if not self.cfg.relearner:
            return ForwardResult(y_base, None, y_base, diag)
        z_r = self.residual_map(z_h)
        prefix = "backbone" if self.cfg.share_backbone else "backbone_res"
        z_res = self.backbone_forward(ad.sub(z_e, z_r), prefix)
        z_tilde = propagate(self.kernel_bank(), z_res)
        y_corr = self.decode_residual(z_tilde)
        diag.update(z_res=_norm(z_res), z_res_propagated=_norm(z_tilde))
        return ForwardResult(y_base, y_corr, ad.add(y_base, y_corr), diag)

    __call__ = forward

    def predict(self, x, batch_size=256):
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 3
        if single:
            x = x[None]
        outs = [self.forward(x[i: i + batch_size]).y_hat.data for i in range(0, x.shape[0], batch_size)]
        y = np.concatenate(outs) if outs else np.zeros((0, self.cfg.horizon, self.cfg.nodes, self.cfg.feats))
        return y[0] if single else y

    # parameter handling

    def group(self, prefixes):
        return [k for k in self.params if k.startswith(tuple(prefixes))]

    def residual_names(self):
        return self.group(("residual_mapper.", "kernel_bank.", "residual_decoder.", "backbone_res."))

    def state(self):
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state(self, state):
        for k, v in state.items():
            self.params[k].data = np.array(v, dtype=np.float64)

    def header(self):
        cfg = self.cfg.to_dict()
        blocks = [{"name": k, "shape": list(v.shape), "kind": "param"} for k, v in self.params.items()]
        blocks += [{"name": k, "shape": list(v.shape), "kind": "buffer"} for k, v in self.buffers.items()]
        return {
            "format": CHECKPOINT_FORMAT,
            "version": 1,
            "variant": self.cfg.variant,
            "relearner": self.cfg.relearner,
            "config": cfg,
            "config_hash": config_hash(cfg),
            "seed": self.seed,
            "blocks": blocks,
        }

    def save(self, path, extra=None):
        head = self.header()
        if extra:
            head["extra"] = extra
        with open(path, "wb") as fh:
            fh.write(json.dumps(head, sort_keys=True).encode("utf-8") + b"\n")
            for k, v in self.params.items():
                fh.write(np.ascontiguousarray(v.data, dtype="<f8").tobytes())
            for k, v in self.buffers.items():
                fh.write(np.ascontiguousarray(v, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            line = fh.readline()
            try:
                head = json.loads(line.decode("utf-8"))
            except (UnicodeDecodeError, json.JSONDecodeError) as exc:
                raise FormatError(f"{path}: bad checkpoint header") from exc
            if head.get("format") != CHECKPOINT_FORMAT:
                raise FormatError(f"{path}: not a checkpoint file")
            raw = fh.read()
        cfg = ModelConfig.from_dict(head["config"])
        model = cls(cfg, seed=head.get("seed", 0))
        offset = 0
        for block in head["blocks"]:
            count = int(np.prod(block["shape"])) if block["shape"] else 1
            nbytes = 8 * count
            if offset + nbytes > len(raw):
                raise FormatError(f"{path}: truncated parameter block {block['name']}")
            arr = np.frombuffer(raw, dtype="<f8", count=count, offset=offset).astype(np.float64)
            arr = arr.reshape(block["shape"])
            offset += nbytes
            if block["kind"] == "param":
                if block["name"] not in model.params or model.params[block["name"]].shape != arr.shape:
                    raise FormatError(f"{path}: unexpected parameter block {block['name']}")
                model.params[block["name"]].data = arr
            else:
                model.buffers[block["name"]] = arr
        if offset != len(raw):
            raise FormatError(f"{path}: {len(raw) - offset} trailing bytes")
        model.extra = head.get("extra", {})
        return model


def _norm(t):
    return float(np.sqrt(np.mean(t.data ** 2))) if t.data.size else 0.0
