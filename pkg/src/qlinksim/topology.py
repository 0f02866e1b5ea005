"""Graph generators, edge-list ingestion, and connectivity queries.

Cluster sizes are measured in edges: the size of a connected component of
the live-link subgraph is the number of live links it contains.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from .core import DEFAULT_ALPHA, LinkModel, Topology, effective_probability


class UnionFind:
    """Union-find over node ids with per-component live-edge counters."""

    def __init__(self, n: int):
        self.parent = list(range(n))
        self.rank = [0] * n
        # edges added into the component rooted at each index
        self.edge_count = [0] * n

    def find(self, x: int) -> int:
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def add_edge(self, u: int, v: int) -> None:
        ru, rv = self.find(u), self.find(v)
        if ru == rv:
            self.edge_count[ru] += 1
            return
        if self.rank[ru] < self.rank[rv]:
            ru, rv = rv, ru
        self.parent[rv] = ru
        if self.rank[ru] == self.rank[rv]:
            self.rank[ru] += 1
        self.edge_count[ru] += self.edge_count[rv] + 1
        self.edge_count[rv] = 0

    def connected(self, u: int, v: int) -> bool:
        return self.find(u) == self.find(v)

    def largest_component_edges(self) -> int:
        return max(self.edge_count, default=0)


def square_lattice(width: int, height: int) -> Topology:
    """Square grid with 4-neighbor connectivity and open boundaries."""
    if width < 2 or height < 2:
        raise ValueError("lattice dimensions must be >= 2")
    idx = lambda x, y: y * width + x
    edges = []
    for y in range(height):
        for x in range(width):
            if x + 1 < width:
                edges.append((idx(x, y), idx(x + 1, y)))
            if y + 1 < height:
                edges.append((idx(x, y), idx(x, y + 1)))
    return Topology(width * height, tuple(edges))


def triangular_lattice(width: int, height: int) -> Topology:
    """Square grid plus one consistently oriented diagonal per cell.

    This is the standard triangular-lattice construction with bulk
    coordination number 6 and bond percolation threshold 2*sin(pi/18).
    """
    if width < 2 or height < 2:
        raise ValueError("lattice dimensions must be >= 2")
    idx = lambda x, y: y * width + x
    edges = list(square_lattice(width, height).edges)
    for y in range(height - 1):
        for x in range(width - 1):
            edges.append((idx(x, y), idx(x + 1, y + 1)))
    return Topology(width * height, tuple(edges))


def pyramid(n_layers: int) -> Topology:
    """Triangulated two-dimensional pyramid with ``n_layers`` rows.

    Row i (1-based) holds i nodes; every node connects to its horizontal
    neighbor and to the two nodes below it, so each upward triangle is fully
    wired.  Node 0 is the apex; :func:`pyramid_bottom_node` maps bottom-row
    positions to node ids.
    """
    if n_layers < 2:
        raise ValueError("pyramid needs at least 2 layers")
    row_start = [i * (i + 1) // 2 for i in range(n_layers)]
    edges = []
    for i in range(n_layers):
        for j in range(i + 1):
            node = row_start[i] + j
            if j + 1 <= i:
                edges.append((node, node + 1))
            if i + 1 < n_layers:
                below = row_start[i + 1] + j
                edges.append((node, below))
                edges.append((node, below + 1))
    return Topology(n_layers * (n_layers + 1) // 2, tuple(edges))


def pyramid_apex() -> int:
    return 0


def pyramid_bottom_node(n_layers: int, position: int) -> int:
    """Node id of bottom-row position ``position`` (1-based, left to right)."""
    if not (1 <= position <= n_layers):
        raise ValueError("bottom position out of range")
    return n_layers * (n_layers - 1) // 2 + (position - 1)


def chain(edge_count: int) -> Topology:
    """Path graph: a linear repeater chain of ``edge_count`` elementary links."""
    if edge_count < 1:
        raise ValueError("chain needs at least one edge")
    return Topology(edge_count + 1, tuple((i, i + 1) for i in range(edge_count)))


def load_edge_list(
    source: str | Path,
    alpha: float = DEFAULT_ALPHA,
    extra_loss: float = 1.0,
    n_parallel: int = 1,
) -> tuple[Topology, LinkModel]:
    """Parse the plain-text edge-list format.

    First non-comment line: ``nodes <N>``.  Each subsequent line is either
    ``u v <length_km>`` or ``u v p=<prob>``; the two styles may not be mixed
    within one file.  ``#`` starts a comment.
    """
    if isinstance(source, Path) or (isinstance(source, str) and "\n" not in source
                                    and Path(source).is_file()):
        text = Path(source).read_text()
    else:
        text = source

    node_count = None
    edges: list[tuple[int, int]] = []
    probs: list[float] = []
    style = None  # "length" or "prob"
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if node_count is None:
            if len(parts) != 2 or parts[0] != "nodes":
                raise ValueError(f"line {lineno}: expected 'nodes <N>'")
            node_count = int(parts[1])
            if node_count < 1:
                raise ValueError(f"line {lineno}: node count must be positive")
            continue
        if len(parts) != 3:
            raise ValueError(f"line {lineno}: expected 'u v <length>' or 'u v p=<prob>'")
        try:
            u, v = int(parts[0]), int(parts[1])
        except ValueError as exc:
            raise ValueError(f"line {lineno}: bad node id") from exc
        if u == v:
            raise ValueError(f"line {lineno}: self-loop ({u}, {v})")
        if not (0 <= u < node_count and 0 <= v < node_count):
            raise ValueError(f"line {lineno}: node id out of range")
        if parts[2].startswith("p="):
            this_style = "prob"
            try:
                p = float(parts[2][2:])
            except ValueError as exc:
                raise ValueError(f"line {lineno}: bad probability") from exc
            if not (0.0 < p <= 1.0):
                raise ValueError(f"line {lineno}: probability {p} outside (0, 1]")
        else:
            this_style = "length"
            try:
                length = float(parts[2])
            except ValueError as exc:
                raise ValueError(f"line {lineno}: bad length") from exc
            if length < 0:
                raise ValueError(f"line {lineno}: negative length")
            p = effective_probability(length, alpha, extra_loss, n_parallel)
        if style is None:
            style = this_style
        elif style != this_style:
            raise ValueError(f"line {lineno}: mixed length/probability styles")
        edges.append((u, v))
        probs.append(p)
    if node_count is None:
        raise ValueError("missing 'nodes <N>' header")
    return Topology(node_count, tuple(edges)), LinkModel(tuple(probs))


def dump_edge_list(topology: Topology, link_model: LinkModel) -> str:
    """Serialize a topology back to the edge-list format (probability style)."""
    lines = [f"nodes {topology.node_count}"]
    for (u, v), p in zip(topology.edges, link_model.probabilities):
        lines.append(f"{u} {v} p={p!r}")
    return "\n".join(lines) + "\n"


def largest_cluster_edges(live_edges, topology: Topology) -> int:
    """Number of live edges in the largest connected component."""
    uf = UnionFind(topology.node_count)
    for i in live_edges:
        u, v = topology.edges[i]
        uf.add_edge(u, v)
    return uf.largest_component_edges()


def connected(live_edges, a: int, b: int, topology: Topology) -> bool:
    """Whether nodes a and b are joined by a path of live edges."""
    uf = UnionFind(topology.node_count)
    for i in live_edges:
        u, v = topology.edges[i]
        uf.add_edge(u, v)
    return uf.connected(a, b)


def largest_cluster_edges_batch(live: np.ndarray, topology: Topology) -> np.ndarray:
    """Largest-cluster edge counts for a batch of live masks.

    ``live`` is a (B, M) boolean array.  All replicas are labeled in one
    sparse connected-components pass over a block-diagonal graph (replica b's
    nodes offset by b * node_count), which beats per-replica union-find on
    lattice-sized graphs.
    """
    from scipy.sparse import coo_matrix
    from scipy.sparse.csgraph import connected_components

    out = np.zeros(live.shape[0], dtype=np.int64)
    rep_idx, edge_idx = np.nonzero(live)
    if rep_idx.size == 0:
        return out
    edge_arr = topology.edge_array()
    offset = rep_idx * topology.node_count
    u = edge_arr[edge_idx, 0] + offset
    v = edge_arr[edge_idx, 1] + offset
    nodes = np.unique(np.concatenate([u, v]))
    ru = np.searchsorted(nodes, u)
    rv = np.searchsorted(nodes, v)
    graph = coo_matrix(
        (np.ones(ru.size, dtype=np.int8), (ru, rv)),
        shape=(nodes.size, nodes.size),
    )
    _, labels = connected_components(graph, directed=False)
    edge_label = labels[ru]
    component_edges = np.bincount(edge_label)
    np.maximum.at(out, rep_idx, component_edges[edge_label])
    return out
