"""Independent checks of the closed forms, shared by the CLI and the test suite.

Each suite returns a :class:`SuiteResult` holding the worst observed error
and the tolerance it was held to.
"""

import itertools
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .forward import neumann_apply, coefficients, predict_exact, predict_neumann
from .gmrf import (
    GmrfParams,
    InjectionSpec,
    assemble_gamma,
    conditional_mean_exact,
    generate_synthetic,
    random_params,
    sample,
    synthetic_graph,
    temporal_w,
)
from .graphs import GraphKernel, WeightedGraph
from .metrics import exceedance_metrics
from .numerics import make_rng
from .residual import correct_node, correct_partition, residual_term


@dataclass
class SuiteResult:
    name: str
    worst: float
    tol: float
    seconds: float
    detail: dict = field(default_factory=dict)

    @property
    def passed(self):
        return bool(np.isfinite(self.worst) and self.worst <= self.tol)

    def line(self):
        flag = "PASS" if self.passed else "FAIL"
        return f"{flag} {self.name}: worst {self.worst:.3e} (tol {self.tol:.1e}, {self.seconds:.2f}s)"


def _instance(rng, nodes, T, T_P, feats):
    # theta kept moderate so the smoothing factor stays well inside (0, 1)
    p = random_params(rng, nodes, T, T_P, theta_range=(0.1, 1.2))
    x = rng.standard_normal((T, nodes, feats))
    return p, x


def prop1_suite(seed=0, count=100, max_nodes=8, T=4, T_P=4, max_feats=2, tol=1e-8):
    """Neumann forward prediction against dense per-step Gaussian conditioning."""
    rng = make_rng(seed, 1)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(count):
        n = int(rng.integers(1, max_nodes + 1))
        f = int(rng.integers(1, max_feats + 1))
        p, x = _instance(rng, n, T, T_P, f)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            approx = predict_neumann(p, x, tol=1e-12, k_max=64)
        worst = max(worst, float(np.max(np.abs(approx - predict_exact(p, x)))))
    return SuiteResult("forward prediction vs exact conditioning", worst, tol, time.perf_counter() - start)


def neumann_bound_suite(seed=0, count=50, ks=(1, 3, 5), max_nodes=8, T=4, T_P=4):
    """Truncation error after powers 0..K relative to ``|v| gamma^(K+1) / (1 - gamma)``.

    ``worst`` is the largest error / bound ratio, held to 1.
    """
    rng = make_rng(seed, 2)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(count):
        n = int(rng.integers(1, max_nodes + 1))
        p, x = _instance(rng, n, T, T_P, 1)
        co = coefficients(p)
        nmat = p.normalized()
        exact = predict_exact(p, x)
        for t in range(T_P):
            g = co.gamma[t]
            v = np.tensordot(co.beta[t], x, axes=(0, 0))
            vmax = float(np.max(np.abs(v)))
            if vmax == 0.0:
                continue
            for K in ks:
                part, _, _ = neumann_apply(nmat, v, g, tol=0.0, k_max=K)
                err = float(np.max(np.abs(part - exact[t])))
                bound = vmax * g ** (K + 1) / (1.0 - g)
                worst = max(worst, err / bound if bound > 0 else (np.inf if err > 1e-14 else 0.0))
    return SuiteResult("Neumann truncation bound", worst, 1.0, time.perf_counter() - start)


def _oracle_partition(p, x, y, t, v2):
    """Exact mean of step ``t`` given x, labels of ``v2`` at ``t`` and zero elsewhere."""
    g = assemble_gamma(p)
    feats = x.shape[2]
    hist = p.history_indices()
    step = p.step_indices(t)
    fut = np.arange(hist.size, g.shape[0])
    others = np.setdiff1d(fut, step)
    v1 = np.setdiff1d(np.arange(p.nodes), v2)
    obs = np.concatenate([hist, others, step[v2]])
    vals = np.vstack([x.reshape(-1, feats), np.zeros((others.size, feats)), y[t, v2]])
    out = np.full((p.nodes, feats), np.nan)
    out[v1] = conditional_mean_exact(g, obs, vals, step[v1])
    return out, g


def prop2_suite(seed=0, count=50, max_nodes=6, T=4, T_P=4, tol=1e-8, tol_special=1e-10, partition=True):
    """Residual correction against exact conditioning on the other nodes' labels."""
    rng = make_rng(seed, 3)
    start = time.perf_counter()
    worst_node = worst_part = worst_special = 0.0
    for _ in range(count):
        n = int(rng.integers(2, max_nodes + 1))
        p, _ = _instance(rng, n, T, T_P, 1)
        draw = sample(p, rng, 1, 1)[0]
        x, y = draw[:T], draw[T:]
        base = predict_exact(p, x)
        for t in range(T_P):
            for u in range(n):
                others = [v for v in range(n) if v != u]
                oracle, _ = _oracle_partition(p, x, y, t, np.array(others))
                r = residual_term(p, x, y, t, u, base=base)
                got = correct_node(p, base, r, t, u)
                worst_node = max(worst_node, float(np.max(np.abs(got - oracle[u]))))
                if partition:
                    part = correct_partition(p, base, y[t, others], t, [u], others)
                    worst_special = max(worst_special, float(np.max(np.abs(part[0] - got))))
            if partition and n >= 3:
                for v1 in itertools.combinations(range(n), 2):
                    v2 = np.array([v for v in range(n) if v not in v1])
                    oracle, _ = _oracle_partition(p, x, y, t, v2)
                    part = correct_partition(p, base, y[t, v2], t, list(v1), v2)
                    worst_part = max(worst_part, float(np.max(np.abs(part - oracle[list(v1)]))))
    worst = max(worst_node, worst_part)
    res = SuiteResult("residual correction vs exact conditioning", worst, tol, time.perf_counter() - start)
    res.detail = {"node": worst_node, "partition": worst_part, "single_vs_node": worst_special}
    if worst_special > tol_special:
        res.worst = max(res.worst, tol * worst_special / tol_special)
    return res


def sampler_suite(seed=0, draws=100_000, z_max=5.0):
    """Empirical covariance of a 6-variable field against the inverse potential.

    ``worst`` is the largest entrywise deviation in standard-error units.
    """
    rng = make_rng(seed, 4)
    start = time.perf_counter()
    a = np.array([[0.0, 1.0, 0.5], [1.0, 0.0, 2.0], [0.5, 2.0, 0.0]])
    W = np.array([[2.0, -0.6], [-0.6, 1.5]])
    p = GmrfParams(W, np.array([0.8, 1.3]), WeightedGraph(a), history=1)
    cov = np.linalg.inv(assemble_gamma(p))
    s = np.stack(sample(p, rng, draws, 1)).reshape(draws, -1)
    emp = s.T @ s / draws  # zero mean is known
    se = np.sqrt((np.outer(np.diag(cov), np.diag(cov)) + cov ** 2) / draws)
    worst = float(np.max(np.abs(emp - cov) / se))
    return SuiteResult("sampler covariance (standard errors)", worst, z_max, time.perf_counter() - start)


def metric_suite(seed=0, count=1000, max_len=24):
    """Exceedance scores against explicit per-step counting."""
    rng = make_rng(seed, 5)
    start = time.perf_counter()
    mismatches = 0
    for _ in range(count):
        L = int(rng.integers(1, max_len + 1))
        y = rng.uniform(0, 150, L)
        pred = rng.uniform(0, 150, L)
        eps = 75.0
        hits = fa = miss = cn = 0
        for a, b in zip(y, pred):
            if a >= eps and b >= eps:
                hits += 1
            elif a < eps and b >= eps:
                fa += 1
            elif a >= eps:
                miss += 1
            else:
                cn += 1
        want = (
            hits / (L - cn) if L - cn else None,
            hits / (hits + miss) if hits + miss else None,
            fa / (hits + fa) if hits + fa else None,
        )
        if exceedance_metrics(pred, y, eps) != want:
            mismatches += 1
    return SuiteResult("exceedance scores vs counting", float(mismatches), 0.0, time.perf_counter() - start)


def grad_error(analytic, numeric, floor=1e-6):
    """Norm-wise relative gradient error.

    The scale is floored so that a gradient which cancels to exactly zero
    (balanced MAE signs) is not judged on finite-difference round-off.
    """
    diff = np.linalg.norm(analytic - numeric)
    scale = max(np.linalg.norm(numeric), np.linalg.norm(analytic), floor)
    return float(diff / scale)


def check_gradients(fn, params, eps=1e-5, rng=None):
    """Relative error per parameter under a random upstream gradient."""
    rng = rng if rng is not None else np.random.default_rng(0)
    seed_grad = rng.standard_normal(fn().shape)
    res = ad.parameters_grad_check(fn, params, eps, seed_grad)
    return {k: grad_error(a, n) for k, (a, n) in res.items()}


def toy_synthetic(seed, nodes=30, T=12, T_P=12, windows=2000, spec=None, epsilon=0.05, theta=1.0):
    """The deviation-injected benchmark used for recall and end-to-end checks."""
    rng = make_rng(seed, 6)
    g, d = synthetic_graph(rng, nodes, epsilon)
    p = GmrfParams(temporal_w(T + T_P), np.full(T + T_P, theta), g, T)
    spec = spec or InjectionSpec(temporal=0.2, precursor_steps=3)
    return generate_synthetic(p, windows, spec, rng, distances=d)


def _away_from_zero(rng, shape, margin=0.2):
    v = rng.uniform(margin, 1.5, size=shape)
    return v * np.where(rng.uniform(size=shape) < 0.5, -1.0, 1.0)


def op_gradient_cases(rng):
    """Name -> (closure, params) for every differentiable primitive."""
    from .kernels import adaptive_tensor, softmax_minus_diag

    def leaf(shape, kink=False):
        return ad.tensor(_away_from_zero(rng, shape) if kink else rng.standard_normal(shape), True)

    a, b = leaf((2, 3)), leaf((2, 3))
    m1, m2 = leaf((2, 3, 4)), leaf((4, 2))
    s = leaf((3, 3))
    k = leaf((3, 4), kink=True)
    c1, c2 = leaf((2, 2)), leaf((2, 3))
    e1, e2 = leaf((3, 2)), leaf((3, 2))
    cases = {
        "add": (lambda: ad.add(a, ad.reshape(ad.take(b, [0], 0), (1, 3))), {"a": a, "b": b}),
        "sub": (lambda: ad.sub(a, b), {"a": a, "b": b}),
        "mul": (lambda: ad.mul(a, b), {"a": a, "b": b}),
        "matmul": (lambda: ad.matmul(m1, m2), {"a": m1, "b": m2}),
        "sum": (lambda: ad.sum(m1, axis=1), {"a": m1}),
        "mean": (lambda: ad.mean(m1, axis=2, keepdims=True), {"a": m1}),
        "abs": (lambda: ad.abs(k), {"a": k}),
        "reshape": (lambda: ad.mul(ad.reshape(m1, (6, 4)), np.arange(24.0).reshape(6, 4)), {"a": m1}),
        "transpose": (lambda: ad.mul(ad.transpose(m1, (2, 0, 1)), np.arange(24.0).reshape(4, 2, 3)), {"a": m1}),
        "broadcast_to": (lambda: ad.mul(ad.broadcast_to(b, (2, 2, 3)), np.arange(12.0).reshape(2, 2, 3)), {"a": b}),
        "concat": (lambda: ad.mul(ad.concat([c1, c2], axis=1), np.arange(10.0).reshape(2, 5)), {"a": c1, "b": c2}),
        "take": (lambda: ad.take(s, [2, 0, 2], 1), {"a": s}),
        "gelu": (lambda: ad.gelu(s), {"a": s}),
        "relu": (lambda: ad.relu(k), {"a": k}),
        "tanh": (lambda: ad.tanh(s), {"a": s}),
        "sigmoid": (lambda: ad.sigmoid(s), {"a": s}),
        "bounded_tanh": (lambda: ad.bounded_tanh(s), {"a": s}),
        "bounded_sigmoid": (lambda: ad.bounded_sigmoid(s), {"a": s}),
        "softmax": (lambda: ad.softmax(s, axis=-1), {"a": s}),
        "softmax_minus_diag[zero]": (lambda: softmax_minus_diag(s, "zero"), {"a": s}),
        "softmax_minus_diag[mask]": (lambda: softmax_minus_diag(s, "mask"), {"a": s}),
        "adaptive_kernel": (lambda: adaptive_tensor(e1, e2), {"E1": e1, "E2": e2}),
    }
    return cases


def _model_toy(rng, kinds, variant="mlp-stid", nodes=3, T=2, T_P=2):
    from .model import ModelConfig, ReLearnerModel

    cfg = ModelConfig(
        nodes=nodes, history=T, horizon=T_P, feats=1, d_model=4, d_adp=2, d_hid=3,
        kernels=kinds, layers=2, variant=variant,
    )
    ring = np.roll(np.eye(nodes), 1, axis=1)
    gk = {
        "predefined": GraphKernel(0.5 * (ring + ring.T), "predefined"),
        "diffusion": (GraphKernel(ring, "diffusion-forward"), GraphKernel(ring.T, "diffusion-backward")),
    }
    model = ReLearnerModel(cfg, gk, seed=int(rng.integers(1 << 30)))
    for name, p in model.params.items():
        # zero-initialized blocks would hide their own gradients
        if not p.data.any():
            p.data = 0.5 * rng.standard_normal(p.shape)
    return model


def gradient_suite(seed=0, tol=1e-4, eps=1e-5):
    """Finite-difference checks of every primitive, each model stage and
    the full forward + MAE composite for each kernel type and backbone."""
    from .training import mae_loss

    rng = make_rng(seed, 7)
    start = time.perf_counter()
    errors = {}
    for name, (fn, params) in op_gradient_cases(rng).items():
        for pname, e in check_gradients(fn, params, eps, rng).items():
            errors[f"op:{name}.{pname}"] = e
    for kinds in (("predefined",), ("diffusion",), ("adaptive",), ("data-driven",)):
        for variant in ("mlp-stid", "graph-conv"):
            model = _model_toy(rng, kinds, variant)
            x = rng.standard_normal((2, 2, 3, 1))
            y = rng.standard_normal((2, 2, 3, 1))
            fn = lambda: mae_loss(model.forward(x).y_hat, y)
            for pname, e in check_gradients(fn, model.params, eps, rng).items():
                errors[f"model[{kinds[0]},{variant}]:{pname}"] = e
            # propagate with respect to its input
            from .kernels import propagate

            z = ad.tensor(rng.standard_normal((2, 3, 4)), True)
            bank = model.kernel_bank()
            errors[f"propagate[{kinds[0]}]:z"] = check_gradients(lambda: propagate(bank, z), {"z": z}, eps, rng)["z"]
    worst_name = max(errors, key=errors.get)
    res = SuiteResult("gradient checks", errors[worst_name], tol, time.perf_counter() - start)
    res.detail = {"checks": len(errors), "worst": worst_name}
    return res
