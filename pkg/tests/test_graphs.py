import math

import numpy as np
import pytest

from relearner import graphs as gr
from relearner.errors import AllFiltered, DegenerateDegree, MissingAltitude, PreconditionError

SWAP = np.array([[0.0, 1.0], [1.0, 0.0]])


def random_graph(rng, n, p=0.6):
    a = rng.uniform(0.5, 2.0, (n, n)) * (rng.uniform(size=(n, n)) < p)
    np.fill_diagonal(a, 0.0)
    return gr.WeightedGraph(a)


@pytest.mark.parametrize("mode", ["transition", "symmetric"])
def test_normalize_unit_degrees(mode):
    np.testing.assert_array_equal(gr.normalize(gr.WeightedGraph(SWAP), mode), SWAP)


def test_normalize_transition_scales_columns():
    np.testing.assert_allclose(gr.normalize(gr.WeightedGraph(2 * SWAP), "transition"), SWAP)


def test_normalize_strict_isolated():
    a = np.zeros((3, 3))
    a[0, 1] = a[1, 0] = 1.0
    with pytest.raises(DegenerateDegree):
        gr.normalize(gr.WeightedGraph(a), "symmetric", isolated="strict")


def test_isolated_node_modes():
    a = np.zeros((2, 2))
    np.testing.assert_array_equal(gr.normalize(a, isolated="self_loop"), np.eye(2))
    np.testing.assert_array_equal(gr.normalize(a, isolated="zero"), np.zeros((2, 2)))


def test_laplacian_like_examples():
    np.testing.assert_allclose(gr.laplacian_like(gr.WeightedGraph(SWAP)), [[1, -1], [-1, 1]])
    empty = gr.WeightedGraph(np.zeros((3, 3)))
    np.testing.assert_array_equal(gr.laplacian_like(empty, isolated="zero"), np.eye(3))


def test_transition_laplacian_columns_sum_to_zero(rng):
    g = random_graph(rng, 4, p=1.0)
    lap = gr.laplacian_like(g, "transition")
    np.testing.assert_allclose(lap.sum(axis=0), 0.0, atol=1e-14)


def test_symmetric_normalization_is_symmetric(rng):
    a = random_graph(rng, 6).adjacency
    g = gr.WeightedGraph(a + a.T)
    m = gr.normalize(g, "symmetric")
    np.testing.assert_allclose(m, m.T, atol=1e-15)
    assert np.max(np.abs(np.linalg.eigvalsh(m))) <= 1 + 1e-12


def test_gaussian_weights_threshold():
    assert gr.gaussian_kernel_weights(np.array(0.0), 1.0, 0.1) == 1.0
    assert gr.gaussian_kernel_weights(np.array(3.0), 1.0, 0.1) == 0.0
    assert gr.gaussian_kernel_weights(np.array(1.0), 1.0, 0.1) == pytest.approx(math.exp(-1))
    with pytest.raises(PreconditionError):
        gr.gaussian_kernel_weights(np.array(1.0), 1.0, 1.5)


def test_traffic_kernel_columns_are_stochastic(rng):
    pts = rng.uniform(0, 1000, (6, 2))
    d = np.sqrt(((pts[:, None] - pts[None]) ** 2).sum(-1))
    k = gr.traffic_kernel(d, 0.1)
    np.testing.assert_allclose(k.matrix.sum(axis=0), 1.0, atol=1e-14)
    assert np.all(np.diag(k.meta["weights"]) == 1.0)


def test_traffic_kernel_all_filtered():
    # equal spacing gives zero spread, so sigma^2 falls back to 1
    d = 5.0 * (1 - np.eye(3))
    with pytest.raises(AllFiltered):
        gr.traffic_kernel(d, 0.1)


def test_haversine_quarter_meridian():
    d = gr.haversine_matrix(np.array([0.0, 0.0]), np.array([0.0, 90.0]))
    assert d[0, 1] == pytest.approx(gr.EARTH_RADIUS_M * math.pi / 2)
    assert d[0, 0] == 0.0


def test_atmosphere_colocated_edge():
    geo = gr.GeoTable([10.0, 10.0], [45.0, 45.0], alt=[100.0, 100.0])
    k = gr.atmosphere_kernel(geo, 1000.0, xi_alt=300.0)
    assert k.meta["weights"][0, 1] == 1.0


def test_atmosphere_distance_gate():
    geo = gr.GeoTable([10.0, 11.0], [45.0, 45.0])
    k = gr.atmosphere_kernel(geo, 1000.0)
    assert k.meta["weights"][0, 1] == 0.0


def test_atmosphere_ridge_blocks_edge():
    def ridge(lon, lat):
        return np.where(np.abs(lon - 10.005) < 0.002, 700.0, 100.0)

    geo = gr.GeoTable([10.0, 10.01], [45.0, 45.0], alt=[150.0, 200.0], terrain=ridge)
    h = gr.relative_altitude(geo)
    assert h[0, 1] == pytest.approx(500.0)
    k = gr.atmosphere_kernel(geo, 5000.0, xi_alt=300.0)
    assert k.meta["weights"][0, 1] == 0.0
    assert gr.atmosphere_kernel(geo, 5000.0).meta["weights"][0, 1] == 1.0


def test_atmosphere_needs_altitude():
    geo = gr.GeoTable([10.0, 10.0], [45.0, 45.0])
    with pytest.raises(MissingAltitude):
        gr.atmosphere_kernel(geo, 1000.0, xi_alt=300.0)


def test_diffusion_symmetric_graph():
    fwd, bwd = gr.diffusion_kernel(gr.WeightedGraph(SWAP))
    np.testing.assert_array_equal(fwd.matrix, bwd.matrix)


def test_diffusion_directed_chain():
    fwd, bwd = gr.diffusion_kernel(gr.WeightedGraph(np.array([[0.0, 1.0], [0.0, 0.0]])))
    np.testing.assert_array_equal(fwd.matrix, [[0.0, 1.0], [0.0, 0.0]])
    np.testing.assert_array_equal(bwd.matrix, [[0.0, 0.0], [1.0, 0.0]])


def test_diffusion_nonzero_columns_sum_to_one(rng):
    for k in gr.diffusion_kernel(random_graph(rng, 7, 0.3)):
        s = k.matrix.sum(axis=0)
        np.testing.assert_allclose(s[s > 0], 1.0, atol=1e-14)


def test_adjacency_csv_round_trip(tmp_path, rng):
    g = random_graph(rng, 5)
    path = tmp_path / "g.csv"
    gr.write_adjacency_csv(path, g)
    np.testing.assert_array_equal(gr.read_adjacency_csv(path, nodes=5).adjacency, g.adjacency)


def test_weighted_graph_validation():
    with pytest.raises(PreconditionError):
        gr.WeightedGraph(np.eye(2))
    with pytest.raises(PreconditionError):
        gr.WeightedGraph(-SWAP)
