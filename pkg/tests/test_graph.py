"""Unit tests for netprobe.graph classes and functions."""

import os
import tempfile
import unittest

from hypothesis import given, seed, settings
from hypothesis import strategies as st
import numpy as np

import netprobe.graph as gr

TRIANGLE = gr.WeightedGraph(3, ((0, 1, 1.0), (2, 1, 2.0), (0, 2, 0.5)))


@st.composite
def weighted_graphs(draw, max_n=8):
    n = draw(st.integers(min_value=2, max_value=max_n))
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    chosen = draw(st.lists(st.sampled_from(pairs), unique=True, max_size=len(pairs)))
    weights = draw(st.lists(st.floats(min_value=0.01, max_value=100.0), min_size=len(chosen), max_size=len(chosen)))
    return gr.WeightedGraph(n, tuple((i, j, w) for (i, j), w in zip(chosen, weights)))


class TestWeightedGraph(unittest.TestCase):
    """Construction and accessors of WeightedGraph"""

    def test_canonical_edges(self):
        """Edges are stored with i < j and sorted"""
        self.assertEqual(TRIANGLE.edges, ((0, 1, 1.0), (0, 2, 0.5), (1, 2, 2.0)))
        self.assertEqual(TRIANGLE.num_edges, 3)
        self.assertEqual(TRIANGLE.edge_set(), {(0, 1), (0, 2), (1, 2)})
        self.assertEqual(gr.WeightedGraph(3, ((1, 0, 1.0),)), gr.WeightedGraph(3, ((0, 1, 1.0),)))

    def test_invalid_edges(self):
        """Self-loops, duplicates, bad weights and bad indices are rejected"""
        bad = [
            ("self-loop", ((1, 1, 1.0),)),
            ("duplicate", ((0, 1, 1.0), (1, 0, 2.0))),
            ("zero weight", ((0, 1, 0.0),)),
            ("negative weight", ((0, 1, -1.0),)),
            ("nan weight", ((0, 1, float("nan")),)),
            ("out of range", ((0, 3, 1.0),)),
        ]
        for label, edges in bad:
            with self.subTest(label):
                self.assertRaises(ValueError, gr.WeightedGraph, 3, edges)
        self.assertRaises(ValueError, gr.WeightedGraph, 0)

    def test_adjacency(self):
        """adjacency is symmetric with the weights off the diagonal"""
        adj = TRIANGLE.adjacency()
        np.testing.assert_array_equal(adj, adj.T)
        self.assertEqual(adj[2, 1], 2.0)
        self.assertEqual(adj[0, 0], 0.0)

    def test_relabel(self):
        """relabel moves every edge to the permuted nodes"""
        g = TRIANGLE.relabel([2, 0, 1])
        self.assertEqual(g.weight_map(), {(0, 2): 1.0, (1, 2): 0.5, (0, 1): 2.0})
        self.assertRaises(ValueError, TRIANGLE.relabel, [0, 0, 1])

    def test_repr(self):
        """repr shows size and edge count"""
        self.assertEqual(repr(TRIANGLE), "WeightedGraph(n=3, num_edges=3)")


class TestMatrices(unittest.TestCase):
    """Incidence and Laplacian matrices"""

    def test_incidence(self):
        """Column k has +1 at i and -1 at j of edge k"""
        inc = gr.incidence_matrix(TRIANGLE)
        self.assertEqual(inc.shape, (3, 3))
        np.testing.assert_array_equal(inc[:, 2], [0.0, 1.0, -1.0])
        np.testing.assert_array_equal(inc.sum(axis=0), np.zeros(3))

    def test_path_laplacian(self):
        """Path 0-1-2 with weights 1 and 2"""
        g = gr.WeightedGraph(3, ((0, 1, 1.0), (1, 2, 2.0)))
        expected = np.array([[1.0, -1.0, 0.0], [-1.0, 3.0, -2.0], [0.0, -2.0, 2.0]])
        np.testing.assert_array_equal(gr.weighted_laplacian(g), expected)

    def test_edge_scale(self):
        """edge_scale multiplies every weight; bad scales are rejected"""
        np.testing.assert_allclose(
            gr.weighted_laplacian(TRIANGLE, [2.0, 2.0, 2.0]), 2.0 * gr.weighted_laplacian(TRIANGLE)
        )
        self.assertRaises(ValueError, gr.weighted_laplacian, TRIANGLE, [1.0, 1.0])
        self.assertRaises(ValueError, gr.weighted_laplacian, TRIANGLE, [1.0, 0.0, 1.0])

    def test_empty_graph(self):
        """An edgeless graph has a zero Laplacian"""
        np.testing.assert_array_equal(gr.weighted_laplacian(gr.WeightedGraph(4)), np.zeros((4, 4)))

    @seed(7)
    @settings(max_examples=50, deadline=None)
    @given(g=weighted_graphs())
    def test_laplacian_properties(self, g):
        """Laplacian is symmetric, PSD and annihilates the ones vector"""
        lap = gr.weighted_laplacian(g)
        np.testing.assert_allclose(lap, lap.T)
        np.testing.assert_allclose(lap @ np.ones(g.n), np.zeros(g.n), atol=1e-10)
        self.assertGreaterEqual(np.linalg.eigvalsh(lap).min(), -1e-9)

    @seed(11)
    @settings(max_examples=30, deadline=None)
    @given(g=weighted_graphs(), data=st.data())
    def test_relabel_conjugates_laplacian(self, g, data):
        """Relabelling permutes rows and columns of the Laplacian"""
        perm = data.draw(st.permutations(range(g.n)))
        lap = gr.weighted_laplacian(g)
        relabelled = gr.weighted_laplacian(g.relabel(perm))
        p = np.zeros((g.n, g.n))
        p[perm, np.arange(g.n)] = 1.0
        np.testing.assert_allclose(relabelled, p @ lap @ p.T, atol=1e-12)


class TestRandomGraph(unittest.TestCase):
    """Seeded Erdos-Renyi sampling"""

    def test_reproducible(self):
        """Same seed, same graph; different seed, different graph"""
        a = gr.random_graph(30, 0.2, (0.3, 10.0), seed=5)
        b = gr.random_graph(30, 0.2, (0.3, 10.0), seed=5)
        c = gr.random_graph(30, 0.2, (0.3, 10.0), seed=6)
        self.assertEqual(a, b)
        self.assertNotEqual(a, c)

    def test_extremes(self):
        """p = 0 gives no edges, p = 1 the complete graph"""
        self.assertEqual(gr.random_graph(6, 0.0, (1.0, 2.0), seed=1).num_edges, 0)
        self.assertEqual(gr.random_graph(6, 1.0, (1.0, 2.0), seed=1).num_edges, 15)

    def test_weights_in_range(self):
        """Weights fall inside weight_range"""
        w = gr.random_graph(40, 0.5, (0.3, 10.0), seed=2).weights
        self.assertTrue(np.all((w >= 0.3) & (w <= 10.0)))

    def test_invalid(self):
        """Out of range arguments are rejected"""
        self.assertRaises(ValueError, gr.random_graph, 1, 0.5, (1.0, 2.0), 0)
        self.assertRaises(ValueError, gr.random_graph, 5, 1.5, (1.0, 2.0), 0)
        self.assertRaises(ValueError, gr.random_graph, 5, 0.5, (2.0, 1.0), 0)
        self.assertRaises(ValueError, gr.random_graph, 5, 0.5, (0.0, 1.0), 0)


class TestCsv(unittest.TestCase):
    """Edge list and adjacency CSV files"""

    def test_edge_csv_roundtrip(self):
        """write_edge_csv followed by read_edge_csv gives the same graph"""
        g = gr.random_graph(12, 0.4, (0.3, 10.0), seed=3)
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "g.csv")
            gr.write_edge_csv(g, path)
            self.assertEqual(gr.read_edge_csv(path, n=12), g)

    def test_missing_columns(self):
        """A CSV without the weight column is rejected"""
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "bad.csv")
            with open(path, "w") as f:
                f.write("i,j\n0,1\n")
            self.assertRaises(ValueError, gr.read_edge_csv, path)

    def test_adjacency_csv(self):
        """Adjacency CSV has n rows of n values"""
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "adj.csv")
            gr.write_adjacency_csv(TRIANGLE, path)
            with open(path) as f:
                rows = f.read().strip().split("\n")
            self.assertEqual(len(rows), 3)
            self.assertEqual(rows[1].split(","), ["1", "0", "2"])


if __name__ == "__main__":
    unittest.main()
