import numpy as np
import pytest

from relearner import autodiff as ad
from relearner.errors import ShapeMismatch
from relearner.graphs import GraphKernel
from relearner.kernels import (
    AdaptiveKernel,
    AdaptiveKernelParams,
    DataDrivenKernel,
    KernelBank,
    adaptive_kernel,
    data_driven_kernel,
    propagate,
    softmax_minus_diag,
)
from relearner.oracles import check_gradients

SWAP = np.array([[0.0, 1.0], [1.0, 0.0]])


def raw_for(alpha, tau):
    return np.arctanh(np.asarray(alpha, float)), np.log(np.asarray(tau, float) / (1 - np.asarray(tau, float)))


def test_adaptive_identity_embeddings():
    k = adaptive_kernel(AdaptiveKernelParams(np.eye(2), np.eye(2)))
    np.testing.assert_allclose(k.matrix, 0.5)


def test_adaptive_all_negative_product_is_uniform():
    e1 = np.array([[1.0], [1.0], [1.0]])
    k = adaptive_kernel(AdaptiveKernelParams(e1, -e1))
    np.testing.assert_allclose(k.matrix, 1 / 3)


def test_adaptive_scaling_changes_row(rng):
    e1, e2 = np.abs(rng.standard_normal((3, 2))), np.abs(rng.standard_normal((3, 2)))
    base = adaptive_kernel(AdaptiveKernelParams(e1, e2)).matrix
    e1s = e1.copy()
    e1s[0] *= 3.0
    scaled = adaptive_kernel(AdaptiveKernelParams(e1s, e2)).matrix
    assert not np.allclose(base[0], scaled[0])
    np.testing.assert_allclose(base[1:], scaled[1:])


def test_adaptive_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        adaptive_kernel(AdaptiveKernelParams(np.eye(2), np.ones((2, 3))))


def test_mask_mode_gives_no_diagonal_mass(rng):
    m = softmax_minus_diag(ad.tensor(rng.standard_normal((4, 4))), "mask").data
    np.testing.assert_array_equal(np.diag(m), 0.0)
    np.testing.assert_allclose(m.sum(axis=1), 1.0, atol=1e-12)


def test_data_driven_zero_projection_is_uniform(rng):
    z = rng.standard_normal((4, 3))
    zero = (np.zeros((3, 2)), np.zeros(2))
    np.testing.assert_allclose(data_driven_kernel(z, zero, zero).matrix, 0.25)


def test_data_driven_two_nodes_hand_logit():
    z = np.array([[1.0], [2.0]])
    w = (np.array([[1.0]]), np.zeros(1))
    k = data_driven_kernel(z, w, w).matrix
    # off-diagonal logits are z_u * z_v = 2; the diagonal logit is zeroed
    s = 1 / (1 + np.exp(-2.0))
    np.testing.assert_allclose(k, [[1 - s, s], [s, 1 - s]])


def test_data_driven_rows_sum_to_one(rng):
    z = rng.standard_normal((5, 4))
    p1 = (rng.standard_normal((4, 3)), rng.standard_normal(3))
    p2 = (rng.standard_normal((4, 3)), rng.standard_normal(3))
    np.testing.assert_allclose(data_driven_kernel(z, p1, p2).matrix.sum(axis=1), 1.0, atol=1e-12)


def test_propagate_hand_example():
    ra, rt = raw_for([[0.5, 0.5]], [0.5, 0.5])
    bank = KernelBank([GraphKernel(SWAP, "predefined")], ra, rt, layers=1)
    out = propagate(bank, np.array([[2.0], [0.0]])).data
    np.testing.assert_allclose(out, [[1.0], [0.5]])


def test_propagate_zero_layers_is_identity(rng):
    bank = KernelBank([GraphKernel(SWAP, "predefined")], rng.standard_normal((1, 2)), rng.standard_normal(2), layers=0)
    z = rng.standard_normal((3, 2, 4))
    assert propagate(bank, z).data is not None
    np.testing.assert_array_equal(propagate(bank, z).data, z)


def test_zero_kernel_is_pure_gain(rng):
    tau = np.array([0.3, 0.8, 0.5])
    ra, rt = raw_for(rng.uniform(-0.9, 0.9, (1, 3)), tau)
    bank = KernelBank([GraphKernel(np.zeros((3, 3)), "predefined")], ra, rt, layers=3)
    z = rng.standard_normal((2, 3, 4))
    np.testing.assert_allclose(propagate(bank, z).data, (tau ** 3)[:, None] * z, atol=1e-14)


def test_row_stochastic_bound(rng):
    kernels = []
    for _ in range(3):
        m = rng.uniform(size=(5, 5))
        kernels.append(GraphKernel(m / m.sum(axis=1, keepdims=True), "predefined"))
    bank = KernelBank(kernels, rng.standard_normal((3, 5)) * 3, rng.standard_normal(5) * 3, layers=1)
    z = rng.standard_normal((4, 5, 2))
    out = propagate(bank, z).data
    gain = np.max(bank.tau().data * (1 + np.max(np.abs(bank.alpha().data), axis=0)))
    assert np.max(np.abs(out)) <= gain * np.max(np.abs(z)) + 1e-12
    assert gain < 2.0


def test_propagate_shape_mismatch(rng):
    bank = KernelBank([GraphKernel(SWAP, "predefined")], np.zeros((1, 2)), np.zeros(2))
    with pytest.raises(ShapeMismatch):
        propagate(bank, rng.standard_normal((3, 4)))


def test_data_driven_recomputed_each_layer(rng):
    w1, b1 = ad.tensor(rng.standard_normal((2, 2))), ad.tensor(rng.standard_normal(2))
    w2, b2 = ad.tensor(rng.standard_normal((2, 2))), ad.tensor(rng.standard_normal(2))
    k = DataDrivenKernel(w1, b1, w2, b2)
    bank = KernelBank([k], rng.standard_normal((1, 3)), rng.standard_normal(3), layers=2)
    z = rng.standard_normal((3, 2))
    once = bank.operator(ad.tensor(z)).data
    first = once @ z
    second = bank.operator(ad.tensor(first)).data @ first
    np.testing.assert_allclose(propagate(bank, z).data, second, atol=1e-14)
    assert not np.allclose(second, once @ first)


def test_propagate_gradients_three_nodes(rng):
    e1 = ad.tensor(rng.standard_normal((3, 2)), True)
    e2 = ad.tensor(rng.standard_normal((3, 2)), True)
    ra = ad.tensor(rng.standard_normal((2, 3)), True)
    rt = ad.tensor(rng.standard_normal(3), True)
    z = ad.tensor(rng.standard_normal((2, 3, 2)), True)
    ring = GraphKernel(np.roll(np.eye(3), 1, axis=1), "predefined")

    def fn():
        return propagate(KernelBank([ring, AdaptiveKernel(e1, e2)], ra, rt, layers=2), z)

    errs = check_gradients(fn, {"raw_alpha": ra, "raw_tau": rt, "z": z, "E1": e1, "E2": e2}, 1e-5, rng)
    assert max(errs.values()) < 1e-4, errs


def test_bank_parameter_names():
    e = ad.tensor(np.eye(2), True)
    bank = KernelBank([GraphKernel(SWAP, "predefined"), AdaptiveKernel(e, e)], np.zeros((2, 2)), np.zeros(2))
    assert list(bank.params()) == ["raw_alpha", "raw_tau", "kernel1.E1", "kernel1.E2"]
