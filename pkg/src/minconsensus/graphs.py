"""Weighted undirected graphs and their structural constants.

A :class:`WeightedGraph` carries positive edge weights and a nonempty strict
subset of anchor ("source") nodes.  From it we derive everything the error
bounds depend on:

* ``d``        -- per-node distance to the nearest source,
* ``C(i)``     -- the constraining neighbours of each node, i.e. those
  realising ``d_i = d_j + w_ij``,
* ``zeta``     -- the worst ratio ``d_i / (d_l + w_il)`` over neighbours
  that are *not* constraining; always in (0, 1),
* ``effective_diameter`` -- the node count of the longest chain in which
  every node is preceded by one of its constraining neighbours.

All functions here are pure and all returned arrays are frozen, so values
can be shared freely across threads.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra

from .rng import GRAPH, stream

# Absolute tolerance for deciding d_j + w_ij == d_i.  Weights may be
# irrational (euclidean mode), so the constraining sets must be stable
# under float rounding.
DIST_TIE_TOL = 1e-9

# zeta used when no node has a non-constraining neighbour; any value in
# (0, 1) is valid in that case.
DEFAULT_ZETA = 0.5


class WeightedGraph:
    """Undirected connected graph with positive weights and source nodes.

    Nodes are ``0..n-1``.  ``edges`` is an iterable of ``(u, v, w)`` with
    ``w > 0``; ``sources`` a nonempty strict subset of the nodes.
    Connectivity is checked at construction.  Instances are immutable.
    """

    def __init__(self, node_count: int, edges, sources) -> None:
        n = int(node_count)
        if n < 2:
            raise ValueError("graph needs at least two nodes")
        self.node_count = n

        seen: dict[tuple[int, int], float] = {}
        for item in edges:
            u, v, w = int(item[0]), int(item[1]), float(item[2])
            if not (0 <= u < n and 0 <= v < n):
                raise ValueError(f"edge ({u},{v}) out of range for n={n}")
            if u == v:
                raise ValueError(f"self-loop at node {u}")
            if w <= 0:
                raise ValueError(f"edge ({u},{v}) has non-positive weight {w}")
            key = (u, v) if u < v else (v, u)
            if key in seen and seen[key] != w:
                raise ValueError(f"duplicate edge {key} with conflicting weights")
            seen[key] = w
        if not seen:
            raise ValueError("graph has no edges")

        pairs = sorted(seen)
        self.edge_u = np.array([p[0] for p in pairs], dtype=np.int32)
        self.edge_v = np.array([p[1] for p in pairs], dtype=np.int32)
        self.edge_weight = np.array([seen[p] for p in pairs], dtype=np.float64)

        src = sorted({int(s) for s in sources})
        if not src:
            raise ValueError("source set must be nonempty")
        if any(s < 0 or s >= n for s in src):
            raise ValueError("source index out of range")
        if len(src) == n:
            raise ValueError("source set must be a strict subset of the nodes")
        self.sources = tuple(src)
        self.is_source = np.zeros(n, dtype=bool)
        self.is_source[src] = True

        # Directed view: each undirected edge appears once per direction,
        # sorted by (src, dst) so per-node neighbourhoods are contiguous.
        m = len(pairs)
        dsrc = np.concatenate([self.edge_u, self.edge_v])
        ddst = np.concatenate([self.edge_v, self.edge_u])
        dpair = np.concatenate([np.arange(m), np.arange(m)]).astype(np.int32)
        order = np.lexsort((ddst, dsrc))
        self.dir_src = np.ascontiguousarray(dsrc[order], dtype=np.int32)
        self.dir_dst = np.ascontiguousarray(ddst[order], dtype=np.int32)
        self.dir_pair = np.ascontiguousarray(dpair[order])
        self.dir_weight = self.edge_weight[self.dir_pair]
        self.indptr = np.searchsorted(self.dir_src, np.arange(n + 1)).astype(np.int64)
        if np.any(np.diff(self.indptr) == 0):
            raise ValueError("graph is disconnected (isolated node)")

        self._check_connected()
        for arr in (self.edge_u, self.edge_v, self.edge_weight, self.is_source,
                    self.dir_src, self.dir_dst, self.dir_pair, self.dir_weight,
                    self.indptr):
            arr.setflags(write=False)

    def _check_connected(self) -> None:
        n = self.node_count
        seen = np.zeros(n, dtype=bool)
        stack = [0]
        seen[0] = True
        while stack:
            u = stack.pop()
            for e in range(self.indptr[u], self.indptr[u + 1]):
                v = self.dir_dst[e]
                if not seen[v]:
                    seen[v] = True
                    stack.append(v)
        if not seen.all():
            raise ValueError("graph is disconnected")

    @property
    def edge_count(self) -> int:
        return len(self.edge_weight)

    def neighbors(self, i: int) -> np.ndarray:
        return self.dir_dst[self.indptr[i]:self.indptr[i + 1]]

    def neighbor_weights(self, i: int) -> np.ndarray:
        return self.dir_weight[self.indptr[i]:self.indptr[i + 1]]

    def dir_edge_ids(self, srcs, dsts) -> np.ndarray:
        """Directed-edge indices of the pairs ``(srcs[t], dsts[t])``."""
        key = self.dir_src.astype(np.int64) * self.node_count + self.dir_dst
        want = np.asarray(srcs, dtype=np.int64) * self.node_count + np.asarray(dsts)
        idx = np.searchsorted(key, want)
        bad = (idx >= len(key)) | (key[np.minimum(idx, len(key) - 1)] != want)
        if np.any(bad):
            raise KeyError("requested node pair is not an edge")
        return idx

    def __repr__(self) -> str:  # pragma: no cover
        return (f"WeightedGraph(n={self.node_count}, m={self.edge_count}, "
                f"sources={list(self.sources)})")


@dataclass(frozen=True)
class StructuralConstants:
    """Derived per-graph quantities the stability bounds are built from."""

    distances: np.ndarray
    constraining: tuple[tuple[int, ...], ...]
    zeta: float
    effective_diameter: int

    def __post_init__(self):
        if not (0.0 < self.zeta < 1.0):
            raise ValueError(f"zeta must lie in (0,1), got {self.zeta}")
        n = len(self.distances)
        nonsource = int(np.sum(self.distances > 0))
        if self.effective_diameter > n:
            raise ValueError("effective diameter cannot exceed the node count")
        if nonsource and self.effective_diameter < 2:
            raise ValueError("effective diameter must be >= 2 with non-source nodes")
        self.distances.setflags(write=False)


def shortest_distances(g: WeightedGraph) -> np.ndarray:
    """Distance of every node to its nearest source (multi-source Dijkstra)."""
    mat = csr_matrix(
        (g.edge_weight, (g.edge_u, g.edge_v)),
        shape=(g.node_count, g.node_count),
    )
    d = dijkstra(mat, directed=False, indices=list(g.sources), min_only=True)
    if not np.all(np.isfinite(d)):
        raise ValueError("graph is disconnected: some node cannot reach a source")
    d = np.asarray(d, dtype=np.float64)
    d[list(g.sources)] = 0.0
    return d


def true_constraining_sets(
    g: WeightedGraph, d: np.ndarray, tol: float = DIST_TIE_TOL
) -> tuple[tuple[int, ...], ...]:
    """Per-node sets ``C(i) = { j in N(i) : d_j + w_ij = d_i }``.

    Sources have no constraining neighbours.  Ties are decided with an
    absolute tolerance so euclidean weights behave.
    """
    achieves = np.abs(d[g.dir_dst] + g.dir_weight - d[g.dir_src]) <= tol
    achieves &= ~g.is_source[g.dir_src]
    out = []
    for i in range(g.node_count):
        lo, hi = g.indptr[i], g.indptr[i + 1]
        out.append(tuple(int(j) for j in g.dir_dst[lo:hi][achieves[lo:hi]]))
    return tuple(out)


def compute_zeta(
    g: WeightedGraph,
    d: np.ndarray,
    constraining: tuple[tuple[int, ...], ...],
    default: float = DEFAULT_ZETA,
) -> float:
    """Largest ratio ``d_i / (d_l + w_il)`` over non-constraining neighbours.

    Every such ratio is strictly below 1, so the result certifies the
    window contraction.  If no node has a non-constraining neighbour the
    ratio set is empty (or all zero, when only sources contribute) and
    ``default`` is returned instead.
    """
    con_mask = np.zeros(2 * g.edge_count, dtype=bool)
    for i, cs in enumerate(constraining):
        if not cs:
            continue
        lo, hi = g.indptr[i], g.indptr[i + 1]
        con_mask[lo:hi] = np.isin(g.dir_dst[lo:hi], cs)
    ratios = d[g.dir_src] / (d[g.dir_dst] + g.dir_weight)
    ratios = ratios[~con_mask]
    if ratios.size == 0 or float(ratios.max()) <= 0.0:
        zeta = float(default)
    else:
        zeta = float(ratios.max())
    if not (0.0 < zeta < 1.0):
        raise ValueError(f"zeta computed outside (0,1): {zeta}")
    return zeta


def effective_diameter(
    g: WeightedGraph,
    constraining: tuple[tuple[int, ...], ...],
    count: str = "nodes",
) -> int:
    """Longest chain following constraining predecessors.

    ``count="nodes"`` (default) returns the node count of the longest
    chain; ``count="edges"`` its edge count.  The predecessor relation is
    acyclic because distances strictly decrease along it; a detected cycle
    signals inconsistent inputs.
    """
    if count not in ("nodes", "edges"):
        raise ValueError("count must be 'nodes' or 'edges'")
    n = g.node_count
    succ: list[list[int]] = [[] for _ in range(n)]
    indeg = np.zeros(n, dtype=np.int64)
    for i, preds in enumerate(constraining):
        indeg[i] = len(preds)
        for j in preds:
            succ[j].append(i)

    length = np.ones(n, dtype=np.int64)
    queue = [i for i in range(n) if indeg[i] == 0]
    processed = 0
    while queue:
        j = queue.pop()
        processed += 1
        for i in succ[j]:
            length[i] = max(length[i], length[j] + 1)
            indeg[i] -= 1
            if indeg[i] == 0:
                queue.append(i)
    if processed != n:
        raise RuntimeError(
            "cycle detected in the constraining relation; distances are inconsistent"
        )
    longest = int(length.max())
    return longest if count == "nodes" else longest - 1


def structural_constants(
    g: WeightedGraph,
    tie_tol: float = DIST_TIE_TOL,
    default_zeta: float = DEFAULT_ZETA,
) -> StructuralConstants:
    """Compute distances, constraining sets, zeta and the effective diameter."""
    d = shortest_distances(g)
    cons = true_constraining_sets(g, d, tol=tie_tol)
    zeta = compute_zeta(g, d, cons, default=default_zeta)
    dia = effective_diameter(g, cons)
    return StructuralConstants(
        distances=d, constraining=cons, zeta=zeta, effective_diameter=dia
    )


@dataclass(frozen=True)
class GeometricGraphSpec:
    """Random geometric graph: uniform points in a rectangle, edges within radius."""

    node_count: int
    area_width: float = 4.0   # km
    area_height: float = 2.0  # km
    radius: float = 0.35      # km
    weight_mode: str = "hop_count"  # or "euclidean"
    seed: int = 0

    def __post_init__(self):
        if self.node_count < 2:
            raise ValueError("node_count must be >= 2")
        if self.radius <= 0 or self.area_width <= 0 or self.area_height <= 0:
            raise ValueError("radius and area dimensions must be positive")
        if self.weight_mode not in ("hop_count", "euclidean"):
            raise ValueError("weight_mode must be 'hop_count' or 'euclidean'")


def generate_geometric(
    spec: GeometricGraphSpec,
    max_retries: int = 64,
    stream_key: int = 0,
    return_positions: bool = False,
):
    """Generate a connected random geometric graph.

    Node 0 is the single source.  If a placement comes out disconnected, a
    fresh substream is drawn, up to ``max_retries`` attempts.  Identical
    ``(spec, stream_key)`` always reproduce the same graph.
    """
    n = spec.node_count
    for attempt in range(max_retries):
        rng = stream(spec.seed, GRAPH, stream_key, attempt)
        pts = rng.random((n, 2)) * np.array([spec.area_width, spec.area_height])
        diff = pts[:, None, :] - pts[None, :, :]
        dist = np.sqrt(np.sum(diff * diff, axis=-1))
        iu, iv = np.triu_indices(n, k=1)
        close = dist[iu, iv] <= spec.radius
        if not np.any(close):
            continue
        uu, vv, dd = iu[close], iv[close], dist[iu, iv][close]
        if spec.weight_mode == "hop_count":
            ww = np.ones_like(dd)
        else:
            ww = dd
        try:
            g = WeightedGraph(n, zip(uu, vv, ww), sources=[0])
        except ValueError:
            continue  # disconnected; retry on a new substream
        return (g, pts) if return_positions else g
    raise ValueError(
        f"no connected placement in {max_retries} attempts "
        f"(n={n}, radius={spec.radius}); the radius is likely too small"
    )


# ---------------------------------------------------------------------------
# Serialization: {"n": int, "sources": [int], "edges": [[i, j, w]]}

def graph_to_json(g: WeightedGraph) -> dict:
    return {
        "n": g.node_count,
        "sources": [int(s) for s in g.sources],
        "edges": [
            [int(u), int(v), float(w)]
            for u, v, w in zip(g.edge_u, g.edge_v, g.edge_weight)
        ],
    }


def graph_from_json(obj: dict) -> WeightedGraph:
    try:
        return WeightedGraph(obj["n"], obj["edges"], obj["sources"])
    except KeyError as exc:
        raise ValueError(f"graph JSON is missing field {exc}") from exc


def save_graph(g: WeightedGraph, path) -> None:
    Path(path).write_text(json.dumps(graph_to_json(g)), encoding="utf-8")


def load_graph(path) -> WeightedGraph:
    return graph_from_json(json.loads(Path(path).read_text(encoding="utf-8")))
