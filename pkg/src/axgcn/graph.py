"""Joint graphs, hop distances and partitioned adjacency masks.

Two partition strategies feed the graph convolution:

* ``distance``: K = 2 masks, the identity (the root itself) and the 1-hop
  adjacency, each symmetrically normalized by its own degree matrix.
* ``multiscale``: with ``A_hat = D^-1/2 (A + I) D^-1/2`` and ``D`` the degree
  matrix of ``A + I``, mask k is ``min(A_hat ** k, 1)`` (matrix power,
  elementwise clamp) for k = 1..K.  The ``exact`` variant instead keeps the
  pairs at hop distance exactly k plus the diagonal.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import ParameterError, TopologyError

# COCO-17 skeleton as a spanning tree (16 edges).  The hip-hip link is left
# out so the torso (shoulders + hips) stays acyclic; the head hangs off the
# left shoulder through the ear, one of the standard COCO limb links.
COCO_EDGES: tuple[tuple[int, int], ...] = (
    (0, 1), (0, 2), (1, 3), (2, 4),
    (5, 7), (7, 9), (6, 8), (8, 10),
    (5, 6), (5, 11), (6, 12),
    (11, 13), (13, 15), (12, 14), (14, 16),
    (3, 5),
)


@dataclass(frozen=True)
class JointGraph:
    num_nodes: int
    edges: tuple[tuple[int, int], ...]
    joints: tuple[int, ...] = ()

    def __post_init__(self):
        seen = set()
        for i, j in self.edges:
            if i == j:
                raise TopologyError(f"self-edge on node {i}")
            if not (0 <= i < self.num_nodes and 0 <= j < self.num_nodes):
                raise TopologyError(f"edge ({i}, {j}) outside 0..{self.num_nodes - 1}")
            key = (min(i, j), max(i, j))
            if key in seen:
                raise TopologyError(f"duplicate edge {key}")
            seen.add(key)

    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.num_nodes, self.num_nodes))
        for i, j in self.edges:
            a[i, j] = a[j, i] = 1.0
        return a

    def neighbors(self, i: int) -> list[int]:
        return [int(j) for j in np.flatnonzero(self.adjacency()[i])]


@dataclass(frozen=True)
class PartitionedGraph:
    """K normalized masks (K, N, N) plus, for distance partitioning, the raw masks."""

    strategy: str
    masks: np.ndarray
    raw_masks: np.ndarray | None = None
    graph: JointGraph | None = None

    @property
    def num_partitions(self) -> int:
        return self.masks.shape[0]

    @property
    def num_nodes(self) -> int:
        return self.masks.shape[1]


def _components(n: int, edges: Iterable[tuple[int, int]]) -> list[list[int]]:
    adj = {i: [] for i in range(n)}
    for i, j in edges:
        adj[i].append(j)
        adj[j].append(i)
    seen, comps = set(), []
    for s in range(n):
        if s in seen:
            continue
        comp, queue = [], deque([s])
        seen.add(s)
        while queue:
            u = queue.popleft()
            comp.append(u)
            for v in adj[u]:
                if v not in seen:
                    seen.add(v)
                    queue.append(v)
        comps.append(sorted(comp))
    return comps


def build_part_graph(joints: Sequence[int], edges=COCO_EDGES) -> JointGraph:
    """Induced subgraph of the COCO skeleton on ``joints``, reindexed densely."""
    joints = tuple(int(j) for j in joints)
    if not joints:
        raise ParameterError("joint subset is empty")
    pos = {j: k for k, j in enumerate(joints)}
    sub = tuple(sorted((min(pos[i], pos[j]), max(pos[i], pos[j]))
                       for i, j in edges if i in pos and j in pos))
    comps = _components(len(joints), sub)
    if len(comps) > 1:
        named = [[joints[k] for k in c] for c in comps]
        raise TopologyError(f"joint subset is disconnected; components: {named}")
    return JointGraph(len(joints), sub, joints)


def shortest_paths(g: JointGraph) -> np.ndarray:
    """All-pairs hop distances by BFS; unreachable pairs raise."""
    n = g.num_nodes
    adj = [[] for _ in range(n)]
    for i, j in g.edges:
        adj[i].append(j)
        adj[j].append(i)
    dist = np.full((n, n), -1, dtype=np.int64)
    for s in range(n):
        dist[s, s] = 0
        queue = deque([s])
        while queue:
            u = queue.popleft()
            for v in adj[u]:
                if dist[s, v] < 0:
                    dist[s, v] = dist[s, u] + 1
                    queue.append(v)
    if np.any(dist < 0):
        raise TopologyError("graph is disconnected")
    return dist


def symmetric_normalize(a: np.ndarray) -> np.ndarray:
    """``D^-1/2 A D^-1/2`` with D the row-sum degree; zero-degree rows stay zero."""
    deg = a.sum(axis=1)
    inv = np.zeros_like(deg)
    nz = deg > 0
    inv[nz] = deg[nz] ** -0.5
    return inv[:, None] * a * inv[None, :]


def distance_partition(g: JointGraph) -> PartitionedGraph:
    dist = shortest_paths(g)
    raw = np.stack([(dist == 0).astype(float), (dist == 1).astype(float)])
    masks = np.stack([symmetric_normalize(m) for m in raw])
    return PartitionedGraph("distance", masks, raw, g)


def normalized_self_loop_adjacency(g: JointGraph) -> np.ndarray:
    return symmetric_normalize(g.adjacency() + np.eye(g.num_nodes))


def multiscale_partition(g: JointGraph, scales: int = 3, exact: bool = False) -> PartitionedGraph:
    if scales < 1:
        raise ParameterError(f"number of scales must be >= 1, got {scales}")
    if exact:
        dist = shortest_paths(g)
        eye = np.eye(g.num_nodes, dtype=bool)
        raw = np.stack([((dist == k) | eye).astype(float) for k in range(1, scales + 1)])
        masks = np.stack([symmetric_normalize(m) for m in raw])
        return PartitionedGraph("exact", masks, raw, g)
    shortest_paths(g)  # connectivity check
    a_hat = normalized_self_loop_adjacency(g)
    masks, power = [], np.eye(g.num_nodes)
    for _ in range(scales):
        power = power @ a_hat
        # matmul rounding can break exact symmetry by an ulp
        power = 0.5 * (power + power.T)
        masks.append(np.minimum(power, 1.0))
    return PartitionedGraph("multiscale", np.stack(masks), None, g)


def partition(g: JointGraph, strategy: str, scales: int = 3) -> PartitionedGraph:
    if strategy == "distance":
        return distance_partition(g)
    if strategy == "multiscale":
        return multiscale_partition(g, scales)
    if strategy == "exact":
        return multiscale_partition(g, scales, exact=True)
    raise ParameterError(f"unknown partition strategy {strategy!r}")
