import numpy as np
import pytest

from relearner.errors import FormatError
from relearner.graphs import WeightedGraph
from relearner.io import StDataset, from_windows, graph_kernels, read_stds, write_stds


def test_series_round_trip(tmp_path, rng):
    frames = rng.standard_normal((20, 3, 2)).astype(np.float32)
    a = np.array([[0.0, 1.0, 0.0], [1.0, 0.0, 2.0], [0.0, 2.0, 0.0]])
    path = str(tmp_path / "s.stds")
    write_stds(path, StDataset(frames, "5min", "mph", WeightedGraph(a)))
    back = read_stds(path)
    np.testing.assert_array_equal(back.frames, frames)
    np.testing.assert_array_equal(back.adjacency.adjacency, a)
    assert (back.frequency, back.units, back.window_length) == ("5min", "mph", None)


def test_payload_layout(tmp_path):
    frames = np.arange(12, dtype=np.float32).reshape(2, 3, 2)
    path = tmp_path / "s.stds"
    write_stds(str(path), StDataset(frames))
    head, payload = path.read_bytes().split(b"\n", 1)
    np.testing.assert_array_equal(np.frombuffer(payload, "<f4"), np.arange(12))


def test_window_round_trip(tmp_path, rng):
    x = rng.standard_normal((5, 3, 2, 1))
    y = rng.standard_normal((5, 2, 2, 1))
    path = str(tmp_path / "w.stds")
    write_stds(path, from_windows(x, y, annotations=[{"window": 1, "case": "temporal", "nodes": [0], "sign": 1.0}]))
    ds = read_stds(path)
    ws = ds.windows()
    np.testing.assert_allclose(ws.x, x.astype(np.float32))
    np.testing.assert_allclose(ws.y, y.astype(np.float32))
    assert ds.annotations[0]["case"] == "temporal"


def test_truncated_payload(tmp_path):
    path = tmp_path / "s.stds"
    write_stds(str(path), StDataset(np.zeros((4, 2, 1), np.float32)))
    path.write_bytes(path.read_bytes()[:-2])
    with pytest.raises(FormatError):
        read_stds(str(path))


def test_bad_header(tmp_path):
    path = tmp_path / "s.stds"
    path.write_bytes(b"not json\n")
    with pytest.raises(FormatError):
        read_stds(str(path))


def test_graph_kernels_are_column_stochastic():
    g = WeightedGraph(np.array([[0.0, 1.0, 0.0], [1.0, 0.0, 3.0], [0.0, 3.0, 0.0]]))
    k = graph_kernels(g)
    np.testing.assert_allclose(k["predefined"].matrix.sum(axis=0), 1.0)
    assert set(k) == {"predefined", "diffusion"}
