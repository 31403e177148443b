"""Learnable residual-propagation kernels and the L-fold propagation layer."""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ShapeMismatch
from .graphs import GraphKernel

DIAG_MODES = ("zero", "mask")


def softmax_minus_diag(logits, diag_mode="zero"):
    """Row softmax of ``logits - diag(logits)``.

    ``zero`` sets the diagonal logit to 0 (it still gets ``e^0`` mass);
    ``mask`` sends it to -inf so the diagonal gets no mass.
    """
    if diag_mode not in DIAG_MODES:
        raise ValueError(f"unknown diag mode {diag_mode!r}")
    n = logits.shape[-1]
    off = 1.0 - np.eye(n)
    z = ad.mul(logits, off)
    if diag_mode == "mask":
        z = ad.add(z, np.where(np.eye(n, dtype=bool), -np.inf, 0.0))
    return ad.softmax(z, axis=-1)


def adaptive_tensor(e1, e2, diag_mode="zero"):
    """``softmax(ReLU(E1 E2^T) - diag)`` as a differentiable N x N tensor."""
    if e1.shape != e2.shape:
        raise ShapeMismatch(f"embedding shapes differ: {e1.shape} vs {e2.shape}")
    return softmax_minus_diag(ad.relu(ad.matmul(e1, ad.transpose(e2, (1, 0)))), diag_mode)


@dataclass
class AdaptiveKernelParams:
    E1: np.ndarray
    E2: np.ndarray


def adaptive_kernel(params, diag_mode="zero"):
    m = adaptive_tensor(ad.tensor(params.E1), ad.tensor(params.E2), diag_mode)
    return GraphKernel(m.data, "adaptive")


class AdaptiveKernel:
    kind = "adaptive"
    dynamic = False

    def __init__(self, e1, e2, diag_mode="zero"):
        self.e1, self.e2, self.diag_mode = e1, e2, diag_mode

    def params(self):
        return {"E1": self.e1, "E2": self.e2}

    def evaluate(self, z=None):
        return adaptive_tensor(self.e1, self.e2, self.diag_mode)


class DataDrivenKernel:
    """Scaled dot-product attention between two single-layer projections."""

    kind = "data-driven"
    dynamic = True

    def __init__(self, w1, b1, w2, b2, diag_mode="zero"):
        self.w1, self.b1, self.w2, self.b2 = w1, b1, w2, b2
        self.diag_mode = diag_mode

    @property
    def hidden(self):
        return self.w1.shape[1]

    def params(self):
        return {"W1": self.w1, "b1": self.b1, "W2": self.w2, "b2": self.b2}

    def evaluate(self, z):
        q = ad.add(ad.matmul(z, self.w1), self.b1)
        k = ad.add(ad.matmul(z, self.w2), self.b2)
        nd = k.ndim
        logits = ad.matmul(q, ad.transpose(k, tuple(range(nd - 2)) + (nd - 1, nd - 2)))
        return softmax_minus_diag(ad.mul(logits, 1.0 / np.sqrt(self.hidden)), self.diag_mode)


def data_driven_kernel(z_t, proj1, proj2, diag_mode="zero"):
    """Attention kernel for one time step; ``proj`` are ``(weight, bias)`` pairs."""
    k = DataDrivenKernel(*(ad.tensor(v) for v in (*proj1, *proj2)), diag_mode=diag_mode)
    return GraphKernel(k.evaluate(ad.tensor(z_t)).data, "data-driven")


class StaticKernel:
    dynamic = False

    def __init__(self, kernel):
        self.kernel = kernel
        self.kind = kernel.kind
        self.matrix = ad.tensor(kernel.matrix)

    def params(self):
        return {}

    def evaluate(self, z=None):
        return self.matrix


class KernelBank:
    """K kernels with per-node gains ``alpha_i = tanh(raw_alpha_i)`` and
    ``tau = sigmoid(raw_tau)``, shared across ``layers`` propagation steps."""

    def __init__(self, kernels, raw_alpha, raw_tau, layers=1):
        if not kernels:
            raise ValueError("a kernel bank needs at least one kernel")
        if layers < 0:
            raise ValueError("layers must be nonnegative")
        self.kernels = [StaticKernel(k) if isinstance(k, GraphKernel) else k for k in kernels]
        self.raw_alpha = raw_alpha if isinstance(raw_alpha, ad.Tensor) else ad.tensor(raw_alpha, True)
        self.raw_tau = raw_tau if isinstance(raw_tau, ad.Tensor) else ad.tensor(raw_tau, True)
        self.layers = layers
        n = self.raw_tau.shape[0]
        if self.raw_alpha.shape != (len(self.kernels), n):
            raise ShapeMismatch(f"raw_alpha {self.raw_alpha.shape} != ({len(self.kernels)}, {n})")

    @property
    def nodes(self):
        return self.raw_tau.shape[0]

    def alpha(self):
        return ad.bounded_tanh(self.raw_alpha)

    def tau(self):
        return ad.bounded_sigmoid(self.raw_tau)

    def params(self):
        out = {"raw_alpha": self.raw_alpha, "raw_tau": self.raw_tau}
        for i, k in enumerate(self.kernels):
            for name, t in k.params().items():
                out[f"kernel{i}.{name}"] = t
        return out

    def operator(self, z, static=None):
        """``diag(tau) (I + mean_i diag(alpha_i) K_i)`` for the current iterate."""
        n = self.nodes
        alpha = self.alpha()
        K = len(self.kernels)
        total = None
        for i, k in enumerate(self.kernels):
            mat = static[i] if (static is not None and not k.dynamic) else k.evaluate(z)
            a_i = ad.reshape(ad.take(alpha, [i], 0), (n, 1))
            term = ad.mul(a_i, mat)
            total = term if total is None else ad.add(total, term)
        inner = ad.add(np.eye(n), ad.mul(total, 1.0 / K))
        return ad.mul(ad.reshape(self.tau(), (n, 1)), inner)


def propagate(bank, z):
    """Apply the bank's operator along the node axis ``layers`` times.

    ``z`` has shape ``(..., steps, N, d)``. Static kernels are evaluated once;
    data-driven kernels are rebuilt from the current iterate at every layer
    and step.
    """
    z = z if isinstance(z, ad.Tensor) else ad.tensor(z)
    if bank.layers == 0:
        return z
    if z.shape[-2] != bank.nodes:
        raise ShapeMismatch(f"tensor has {z.shape[-2]} nodes, bank has {bank.nodes}")
    static = [None if k.dynamic else k.evaluate() for k in bank.kernels]
    dynamic = any(k.dynamic for k in bank.kernels)
    op = None if dynamic else bank.operator(None, static)
    for _ in range(bank.layers):
        m = bank.operator(z, static) if dynamic else op
        z = ad.matmul(m, z)
    return z
