import numpy as np
import pytest

from relearner import gmrf
from relearner.errors import IndexOverlap, NotPositiveDefinite, SpecExceedsNodes
from relearner.graphs import WeightedGraph

G2 = np.array([[2.0, -1.0], [-1.0, 2.0]])
PATH2 = WeightedGraph(np.array([[0.0, 1.0], [1.0, 0.0]]))


def small_params(rng, n=3, T=2, T_P=2):
    return gmrf.random_params(rng, n, T, T_P, theta_range=(0.1, 1.2))


def test_single_node_gamma_is_w():
    W = np.array([[2.0, -0.5], [-0.5, 1.5]])
    p = gmrf.GmrfParams(W, [0.7, 1.1], WeightedGraph(np.zeros((1, 1))), 1)
    np.testing.assert_array_equal(gmrf.assemble_gamma(p), W)


def test_identity_w_path_graph():
    p = gmrf.GmrfParams(np.eye(2), [1.0, 1.0], PATH2, 1)
    lap = np.array([[1.0, -1.0], [-1.0, 1.0]])
    want = np.eye(4) + np.kron(np.eye(2), lap)
    np.testing.assert_allclose(gmrf.assemble_gamma(p), want)


def test_indefinite_w_rejected():
    with pytest.raises(NotPositiveDefinite):
        gmrf.GmrfParams(np.array([[1.0, 2.0], [2.0, 1.0]]), [1.0, 1.0], PATH2, 1)


def test_flat_index_is_step_major(rng):
    p = small_params(rng)
    assert p.index(1, 2) == 1 * p.nodes + 2
    np.testing.assert_array_equal(p.step_indices(0), np.arange(2 * 3, 3 * 3))


def test_sample_is_deterministic(rng):
    p = small_params(rng)
    a = gmrf.sample(p, np.random.default_rng(3), 2)
    b = gmrf.sample(p, np.random.default_rng(3), 2)
    assert len(a) == 2 and not np.array_equal(a[0], a[1])
    for u, v in zip(a, b):
        np.testing.assert_array_equal(u, v)
    assert a[0].shape == (p.steps, p.nodes, 1)


def test_sample_unit_variance():
    p = gmrf.GmrfParams(np.eye(2), [0.0, 0.0], WeightedGraph(np.zeros((1, 1))), 1)
    s = np.stack(gmrf.sample(p, np.random.default_rng(0), 100_000))[:, 0, 0, 0]
    assert np.var(s) == pytest.approx(1.0, rel=0.02)


def test_sample_two_variable_covariance():
    # two steps of a single node realize the 2-variable potential directly
    p = gmrf.GmrfParams(G2, [0.0, 0.0], WeightedGraph(np.zeros((1, 1))), 1)
    s = np.stack(gmrf.sample(p, np.random.default_rng(1), 100_000)).reshape(-1, 2)
    np.testing.assert_allclose(s.T @ s / s.shape[0], [[2 / 3, 1 / 3], [1 / 3, 2 / 3]], rtol=0.03)


def test_conditional_mean_examples():
    assert gmrf.conditional_mean_exact(G2, [0], [[1.0]], [1])[0, 0] == pytest.approx(0.5)
    np.testing.assert_array_equal(gmrf.conditional_mean_exact(G2, [0], [[0.0]], [1]), [[0.0]])
    block = np.diag([2.0, 3.0, 4.0])
    np.testing.assert_array_equal(gmrf.conditional_mean_exact(block, [0], [[5.0]], [1, 2]), np.zeros((2, 1)))


def test_conditional_mean_overlap():
    with pytest.raises(IndexOverlap):
        gmrf.conditional_mean_exact(G2, [0], [[1.0]], [0])


def test_conditional_mean_marginalizes_unlisted(rng):
    p = small_params(rng)
    g = gmrf.assemble_gamma(p)
    cov = np.linalg.inv(g)
    obs, qry = np.array([0, 3]), np.array([5, 7])
    vals = rng.standard_normal((2, 1))
    want = cov[np.ix_(qry, obs)] @ np.linalg.solve(cov[np.ix_(obs, obs)], vals)
    np.testing.assert_allclose(gmrf.conditional_mean_exact(g, obs, vals, qry), want, atol=1e-12)


def test_marginal_covariance_examples(rng):
    assert gmrf.marginal_covariance(G2, [1])[0, 0] == pytest.approx(2 / 3)
    p = small_params(rng)
    g = gmrf.assemble_gamma(p)
    np.testing.assert_allclose(gmrf.marginal_covariance(p, np.arange(g.shape[0])), np.linalg.inv(g), atol=1e-12)
    block = np.diag([2.0, 4.0])
    np.testing.assert_allclose(gmrf.marginal_covariance(block, [1]), [[0.25]])


def _synthetic(spec, windows=20, n=30, seed=0):
    rng = np.random.default_rng(seed)
    g, d = gmrf.synthetic_graph(rng, n, 0.05)
    p = gmrf.GmrfParams(gmrf.temporal_w(8), np.full(8, 1.0), g, 4)
    return gmrf.generate_synthetic(p, windows, spec, rng, distances=d)


def test_no_injection_means_no_annotations():
    ds = _synthetic(gmrf.InjectionSpec())
    assert ds.annotations == []
    assert ds.x.shape == (20, 4, 30, 1) and ds.y.shape == (20, 4, 30, 1)


def test_temporal_fraction_counts():
    ds = _synthetic(gmrf.InjectionSpec(temporal=0.2))
    per_window = {}
    for a in ds.annotated("temporal"):
        per_window[a["window"]] = per_window.get(a["window"], 0) + 1
    assert set(per_window.values()) == {6}


def test_divergent_pair_properties():
    spec = gmrf.InjectionSpec(divergent=0.2, delta=1.5)
    ds = _synthetic(spec)
    for a in ds.annotated("divergent"):
        w, (u, v) = a["window"], a["nodes"]
        np.testing.assert_array_equal(ds.x[w, :, u], ds.x[w, :, v])
        assert np.max(np.abs(ds.y[w, :, u] - ds.y[w, :, v])) >= spec.delta * ds.node_std[v]


def test_convergent_pair_properties():
    ds = _synthetic(gmrf.InjectionSpec(convergent=0.2))
    for a in ds.annotated("convergent"):
        w, (u, v) = a["window"], a["nodes"]
        np.testing.assert_array_equal(ds.y[w, :, u], ds.y[w, :, v])
        assert np.corrcoef(ds.x[w, :, u, 0], ds.x[w, :, v, 0])[0, 1] == pytest.approx(-1.0)


def test_precursor_neighbours_are_annotated():
    ds = _synthetic(gmrf.InjectionSpec(temporal=0.2, precursor_steps=2))
    assert ds.annotated("precursor")
    adj = ds.params.graph.adjacency > 0
    for a in ds.annotated("precursor"):
        shifted = [b["nodes"][0] for b in ds.annotated("temporal") if b["window"] == a["window"]]
        assert adj[a["nodes"][0], shifted].any()


def test_spec_exceeds_nodes():
    with pytest.raises(SpecExceedsNodes):
        gmrf.InjectionSpec(divergent=0.6, convergent=0.6).counts(10)
