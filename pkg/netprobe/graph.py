"""Implements weighted undirected graphs and the matrices derived from them.

A WeightedGraph is the hidden topology of a diffusively-coupled network:
a node count and a list of edges, each with a positive coupling weight.
Edges are always stored in canonical orientation (i < j), which also fixes
the orientation of the incidence matrix (+1 at i, -1 at j).

Classes:
    WeightedGraph: Immutable node count + canonical weighted edge list.

Functions:
    incidence_matrix: Node-by-edge +1/-1 matrix of a graph.
    weighted_laplacian: E diag(weight * scale) E^T for a graph.
    random_graph: Seeded Erdos-Renyi graph with log-uniform weights.
    log_uniform: Draw log-uniformly distributed values from a generator.
    read_edge_csv: Load a graph from an `i,j,weight` CSV file.
    write_edge_csv: Reverse of read_edge_csv.
    write_adjacency_csv: Dump the weighted adjacency matrix as CSV.
"""

from dataclasses import dataclass
import math

import numpy as np
import pandas as pd


EDGE_CSV_COLUMNS = ["i", "j", "weight"]
MIN_RANDOM_GRAPH_SIZE = 2


def log_uniform(rng, lo, hi, size=None):
    """Draws values whose logarithm is uniform on [ln lo, ln hi].

    Args:
        rng: A numpy Generator.
        lo, hi: Positive bounds, lo <= hi.
        size: Passed through to rng.uniform.

    Raises:
        ValueError: lo is not positive or lo > hi.
    """
    if not 0 < lo <= hi:
        raise ValueError(f"log-uniform range needs 0 < lo <= hi, got ({lo}, {hi})")
    return np.exp(rng.uniform(math.log(lo), math.log(hi), size=size))


@dataclass(frozen=True)
class WeightedGraph:
    """Undirected graph on nodes 0..n-1 with positive edge weights.

    Edges passed in either orientation are canonicalized to (i, j, weight)
    with i < j and sorted, so two graphs with the same edge set compare
    equal.

    Attributes:
        n: Number of nodes.
        edges: Tuple of (i, j, weight) triples, canonical and sorted.

    Raises:
        ValueError: Self-loop, duplicate edge, non-positive or non-finite
            weight, or node index out of range.
    """

    n: int
    edges: tuple = ()

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"node count must be a positive integer, got {self.n}")

        canonical = {}
        for i, j, weight in self.edges:
            i, j = int(i), int(j)
            if i == j:
                raise ValueError(f"self-loop at node {i}")
            if not (0 <= i < self.n and 0 <= j < self.n):
                raise ValueError(f"edge ({i}, {j}) outside [0:{self.n - 1}]")
            if not (math.isfinite(weight) and weight > 0):
                raise ValueError(f"edge ({i}, {j}) has non-positive weight {weight}")
            key = (min(i, j), max(i, j))
            if key in canonical:
                raise ValueError(f"duplicate edge {key}")
            canonical[key] = float(weight)

        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(
            self, "edges", tuple((i, j, w) for (i, j), w in sorted(canonical.items()))
        )

    @property
    def num_edges(self):
        return len(self.edges)

    @property
    def weights(self):
        """Edge weights as an array, in edge order."""
        return np.array([w for _, _, w in self.edges], dtype=float)

    @property
    def endpoints(self):
        """Two int arrays (heads, tails) holding i and j of every edge."""
        heads = np.array([i for i, _, _ in self.edges], dtype=int)
        tails = np.array([j for _, j, _ in self.edges], dtype=int)
        return heads, tails

    def edge_set(self):
        """Returns the set of canonical (i, j) pairs."""
        return {(i, j) for i, j, _ in self.edges}

    def weight_map(self):
        """Returns {(i, j): weight} for every edge."""
        return {(i, j): w for i, j, w in self.edges}

    def adjacency(self):
        """Returns the symmetric weighted adjacency matrix."""
        adj = np.zeros((self.n, self.n))
        for i, j, w in self.edges:
            adj[i, j] = adj[j, i] = w
        return adj

    def relabel(self, perm):
        """Returns the graph with node i renamed to perm[i].

        Raises:
            ValueError: perm is not a permutation of range(n).
        """
        perm = [int(p) for p in perm]
        if sorted(perm) != list(range(self.n)):
            raise ValueError(f"{perm} is not a permutation of 0..{self.n - 1}")
        return WeightedGraph(self.n, tuple((perm[i], perm[j], w) for i, j, w in self.edges))

    def to_frame(self):
        """Returns the edge list as a DataFrame with columns i, j, weight."""
        return pd.DataFrame(list(self.edges), columns=EDGE_CSV_COLUMNS)

    def __repr__(self):
        return f"{self.__class__.__name__}(n={self.n}, num_edges={self.num_edges})"


def incidence_matrix(g):
    """Builds the n x |E| incidence matrix of g.

    Column k belongs to edge k = (i, j): +1 at row i, -1 at row j. Every
    column therefore sums to zero.
    """
    inc = np.zeros((g.n, g.num_edges))
    for k, (i, j, _) in enumerate(g.edges):
        inc[i, k] = 1.0
        inc[j, k] = -1.0
    return inc


def weighted_laplacian(g, edge_scale=None):
    """Returns E diag(weight_e * edge_scale_e) E^T for graph g.

    The result is symmetric, positive semi-definite and has zero row sums.

    Args:
        g: A WeightedGraph.
        edge_scale: Optional per-edge positive multipliers, in edge order
            (e.g. controller gains or controller derivatives). Defaults to
            all ones.

    Raises:
        ValueError: edge_scale has the wrong length or a non-positive entry.
    """
    if edge_scale is None:
        edge_scale = np.ones(g.num_edges)
    edge_scale = np.asarray(edge_scale, dtype=float)
    if edge_scale.shape != (g.num_edges,):
        raise ValueError(f"edge_scale needs {g.num_edges} entries, got {edge_scale.shape}")
    if np.any(~(edge_scale > 0)):
        raise ValueError("edge_scale entries must be positive")

    inc = incidence_matrix(g)
    return (inc * (g.weights * edge_scale)) @ inc.T


def random_graph(n, p, weight_range, seed):
    """Samples an Erdos-Renyi graph with log-uniform weights.

    Every unordered pair (i, j), visited in lexicographic order, is kept
    independently with probability p. Weights of kept edges are then drawn
    log-uniformly from weight_range. The same seed gives the same graph.

    Args:
        n: Number of nodes (at least 2).
        p: Edge probability in [0, 1].
        weight_range: Tuple (lo, hi) with 0 < lo <= hi.
        seed: Integer seed (or SeedSequence) for numpy's default_rng.

    Raises:
        ValueError: Out of range n, p or weight_range.
    """
    if n < MIN_RANDOM_GRAPH_SIZE:
        raise ValueError(f"random graph needs n >= {MIN_RANDOM_GRAPH_SIZE}, got {n}")
    if not 0 <= p <= 1:
        raise ValueError(f"edge probability {p} outside [0, 1]")
    lo, hi = weight_range
    if not 0 < lo <= hi:
        raise ValueError(f"weight range needs 0 < lo <= hi, got ({lo}, {hi})")

    rng = np.random.default_rng(seed)
    heads, tails = np.triu_indices(n, k=1)
    keep = rng.random(heads.size) < p
    weights = log_uniform(rng, lo, hi, size=int(keep.sum()))
    return WeightedGraph(n, tuple(zip(heads[keep].tolist(), tails[keep].tolist(), weights.tolist())))


def read_edge_csv(path, n=None):
    """Loads a graph from an edge-list CSV with header `i,j,weight`.

    Args:
        path: File to read.
        n: Node count. Defaults to 1 + the largest index in the file, which
            cannot see trailing isolated nodes, so callers that know n
            should pass it.

    Raises:
        ValueError: Missing columns or invalid edges.
    """
    frame = pd.read_csv(path, float_precision="round_trip")
    missing = set(EDGE_CSV_COLUMNS) - set(frame.columns)
    if missing:
        raise ValueError(f"{path}: missing columns {sorted(missing)}")
    edges = tuple(
        (int(row.i), int(row.j), float(row.weight)) for row in frame.itertuples(index=False)
    )
    if n is None:
        n = 1 + max((max(i, j) for i, j, _ in edges), default=0)
    return WeightedGraph(n, edges)


def write_edge_csv(g, path):
    """Writes the edge list of g with header `i,j,weight`.

    Weights are written with repr precision so read_edge_csv reproduces
    the graph exactly.
    """
    g.to_frame().to_csv(path, index=False, float_format="%.17g")


def write_adjacency_csv(g, path):
    """Writes the n x n weighted adjacency matrix (no header, no index)."""
    pd.DataFrame(g.adjacency()).to_csv(path, index=False, header=False, float_format="%.17g")
