"""Prior class hierarchy: loading, validation, adjacency normalization and
personalized PageRank attention over the nodes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np


class HierarchyError(ValueError):
    """Base class for invalid hierarchy input."""


class CycleError(HierarchyError):
    pass


class MultipleRootsError(HierarchyError):
    pass


class MultipleParentsError(HierarchyError):
    pass


class InternalLeafError(HierarchyError):
    """A leaf-map entry names a node that has children."""


class UnknownNodeError(HierarchyError):
    pass


class LeafMapError(HierarchyError):
    """Leaf map is malformed: bad class indices or unmapped leaves."""


class DisconnectedError(HierarchyError):
    pass


@dataclass(frozen=True)
class PprConfig:
    alpha: float = 0.85
    tolerance: float = 1e-8
    max_iterations: int = 100

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"PPR damping must lie in (0, 1), got {self.alpha}")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be positive")


@dataclass(frozen=True, eq=False)
class HierarchyGraph:
    """A rooted tree over ``N`` named nodes with ``K`` leaf classes.

    ``leaf_map[k]`` is the node index of class ``k``. Construction validates
    the tree invariants and raises a ``HierarchyError`` subclass otherwise.
    """

    names: tuple[str, ...]
    edges: tuple[tuple[int, int], ...]
    leaf_map: tuple[int, ...]
    adjacency: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        n = len(self.names)
        if n == 0:
            raise HierarchyError("hierarchy has no nodes")
        if len(set(self.names)) != n:
            raise HierarchyError("duplicate node names")
        parent = [-1] * n
        for p, c in self.edges:
            if not (0 <= p < n and 0 <= c < n):
                raise UnknownNodeError(f"edge ({p}, {c}) references a node outside 0..{n - 1}")
            if p == c:
                raise CycleError(f"self-loop on {self.names[p]!r}")
            if parent[c] != -1 and parent[c] != p:
                raise MultipleParentsError(
                    f"{self.names[c]!r} has parents {self.names[parent[c]]!r} and {self.names[p]!r}"
                )
            parent[c] = p
        for start in range(n):
            seen = set()
            node = start
            while node != -1:
                if node in seen:
                    raise CycleError(f"cycle through {self.names[node]!r}")
                seen.add(node)
                node = parent[node]
        roots = [i for i in range(n) if parent[i] == -1]
        if len(roots) > 1:
            raise MultipleRootsError(f"multiple roots: {[self.names[r] for r in roots]}")

        adj = np.zeros((n, n))
        for p, c in self.edges:
            adj[p, c] = adj[c, p] = 1.0
        _check_connected(adj, self.names)
        object.__setattr__(self, "adjacency", adj)

        has_child = {p for p, _ in self.edges}
        leaves = {i for i in range(n) if i not in has_child}
        for k, node in enumerate(self.leaf_map):
            if not 0 <= node < n:
                raise UnknownNodeError(f"class {k} maps to node {node} outside 0..{n - 1}")
            if node in has_child:
                raise InternalLeafError(f"class {k} maps to internal node {self.names[node]!r}")
        if len(set(self.leaf_map)) != len(self.leaf_map):
            raise LeafMapError("two classes map to the same node")
        missing = leaves - set(self.leaf_map)
        if missing:
            raise LeafMapError(f"leaves without a class index: {sorted(self.names[i] for i in missing)}")

    @property
    def node_count(self) -> int:
        return len(self.names)

    @property
    def num_classes(self) -> int:
        return len(self.leaf_map)

    @property
    def root(self) -> int:
        children = {c for _, c in self.edges}
        return next(i for i in range(self.node_count) if i not in children)

    def parent_of(self, node: int) -> int | None:
        for p, c in self.edges:
            if c == node:
                return p
        return None

    def children_of(self, node: int) -> list[int]:
        return [c for p, c in self.edges if p == node]

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise UnknownNodeError(f"unknown node {name!r}") from None

    @classmethod
    def from_named(cls, edges: Sequence[tuple[str, str]], leaves: Sequence[str]) -> HierarchyGraph:
        """Build from (parent, child) name pairs; indices follow first appearance."""
        order: dict[str, int] = {}
        for p, c in edges:
            order.setdefault(p, len(order))
            order.setdefault(c, len(order))
        if not edges and len(leaves) == 1:
            order[leaves[0]] = 0
        idx_edges = []
        for p, c in edges:
            pair = (order[p], order[c])
            if pair not in idx_edges:
                idx_edges.append(pair)
        leaf_map = []
        for k, name in enumerate(leaves):
            if name not in order:
                raise UnknownNodeError(f"leaf map entry {k} names unknown node {name!r}")
            leaf_map.append(order[name])
        return cls(tuple(order), tuple(idx_edges), tuple(leaf_map))

    def relabel(self, perm: Sequence[int]) -> HierarchyGraph:
        """Return the same tree with node ``i`` moved to index ``perm[i]``."""
        perm = list(perm)
        names = [""] * self.node_count
        for i, j in enumerate(perm):
            names[j] = self.names[i]
        return HierarchyGraph(
            tuple(names),
            tuple((perm[p], perm[c]) for p, c in self.edges),
            tuple(perm[i] for i in self.leaf_map),
        )


def _check_connected(adj: np.ndarray, names) -> None:
    n = len(adj)
    seen = {0}
    frontier = [0]
    while frontier:
        i = frontier.pop()
        for j in np.flatnonzero(adj[i]):
            if j not in seen:
                seen.add(int(j))
                frontier.append(int(j))
    if len(seen) != n:
        lost = sorted(names[i] for i in range(n) if i not in seen)
        raise DisconnectedError(f"graph is disconnected; unreachable: {lost}")


def _content_lines(path):
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if line:
            yield lineno, line.split()


def load_graph(edge_list_path, leaf_map_path) -> HierarchyGraph:
    """Read an edge list (``parent child`` per line) and a leaf map
    (``k node_name`` per line, k = 0..K-1 each exactly once)."""
    edges = []
    for lineno, parts in _content_lines(edge_list_path):
        if len(parts) != 2:
            raise HierarchyError(f"{edge_list_path}:{lineno}: expected 'parent child', got {parts}")
        edges.append((parts[0], parts[1]))
    entries: dict[int, str] = {}
    for lineno, parts in _content_lines(leaf_map_path):
        if len(parts) != 2:
            raise LeafMapError(f"{leaf_map_path}:{lineno}: expected 'k node_name', got {parts}")
        try:
            k = int(parts[0])
        except ValueError:
            raise LeafMapError(f"{leaf_map_path}:{lineno}: class index {parts[0]!r} is not an integer") from None
        if k in entries:
            raise LeafMapError(f"{leaf_map_path}:{lineno}: class index {k} listed twice")
        entries[k] = parts[1]
    if sorted(entries) != list(range(len(entries))):
        raise LeafMapError(f"{leaf_map_path}: class indices must be exactly 0..{len(entries) - 1}")
    return HierarchyGraph.from_named(edges, [entries[k] for k in range(len(entries))])


def save_graph(g: HierarchyGraph, edge_list_path, leaf_map_path) -> None:
    lines = [f"{g.names[p]} {g.names[c]}" for p, c in g.edges]
    Path(edge_list_path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    lines = [f"{k} {g.names[n]}" for k, n in enumerate(g.leaf_map)]
    Path(leaf_map_path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def normalized_adjacency(g: HierarchyGraph) -> np.ndarray:
    """Symmetric GCN propagation matrix D'^-1/2 (A + I) D'^-1/2."""
    a = g.adjacency + np.eye(g.node_count)
    d = a.sum(axis=1)
    return a / np.sqrt(np.outer(d, d))


def transition_matrix(g: HierarchyGraph) -> np.ndarray:
    """Column-stochastic random-walk matrix of the undirected tree.

    A node without neighbours (only possible for N=1) keeps its mass.
    """
    a = g.adjacency.copy()
    deg = a.sum(axis=0)
    lonely = deg == 0
    a[lonely, lonely] = 1.0
    deg[lonely] = 1.0
    return a / deg[None, :]


def expand_prediction(p_k, g: HierarchyGraph) -> np.ndarray:
    """Zero-pad K class scores into N node scores (leaf slots only).

    Accepts a single vector (K,) or a batch (B, K).
    """
    p = np.asarray(p_k, dtype=np.float64)
    if p.shape[-1] != g.num_classes:
        raise ValueError(f"prediction has {p.shape[-1]} classes, hierarchy has {g.num_classes}")
    out = np.zeros(p.shape[:-1] + (g.node_count,))
    out[..., list(g.leaf_map)] = p
    return out


def personalized_pagerank(g: HierarchyGraph, personalization, cfg: PprConfig = PprConfig()) -> np.ndarray:
    """Random walk with restart by power iteration.

    Iterates ``a <- alpha*v + (1-alpha)*P a`` from ``a = v`` where ``v`` is the
    L1-normalized personalization, until the L1 change drops below the
    tolerance. A batch (B, N) is iterated jointly until every row converges.
    """
    v = np.asarray(personalization, dtype=np.float64)
    single = v.ndim == 1
    v = np.atleast_2d(v)
    if v.shape[-1] != g.node_count:
        raise ValueError(f"personalization has length {v.shape[-1]}, graph has {g.node_count} nodes")
    if np.any(v < 0):
        raise ValueError("personalization must be nonnegative")
    mass = v.sum(axis=1, keepdims=True)
    if np.any(mass <= 0):
        raise ValueError("personalization has no positive entry")
    v = v / mass
    pt = transition_matrix(g).T
    alpha = cfg.alpha
    a = v
    for _ in range(cfg.max_iterations):
        nxt = alpha * v + (1.0 - alpha) * (a @ pt)
        delta = np.abs(nxt - a).sum(axis=1).max()
        a = nxt
        if delta < cfg.tolerance:
            break
    return a[0] if single else a


def hierarchy_attention(p_k, g: HierarchyGraph, cfg: PprConfig = PprConfig()) -> np.ndarray:
    """Node attention ``PPR(p_N) + p_N`` for a class-score vector (or batch)."""
    p_n = expand_prediction(p_k, g)
    return personalized_pagerank(g, p_n, cfg) + p_n


def ppr_oracle_solve(g: HierarchyGraph, personalization, alpha: float = 0.85) -> np.ndarray:
    """Stationary PPR vector from ``(I - (1-alpha) P) a = alpha v`` by Gaussian
    elimination with partial pivoting. Test oracle for small graphs."""
    v = np.asarray(personalization, dtype=np.float64)
    v = v / v.sum()
    n = g.node_count
    m = np.eye(n) - (1.0 - alpha) * transition_matrix(g)
    aug = np.hstack([m, alpha * v[:, None]])
    for col in range(n):
        piv = col + int(np.argmax(np.abs(aug[col:, col])))
        if abs(aug[piv, col]) < 1e-14:
            raise ArithmeticError("singular PPR system")
        if piv != col:
            aug[[col, piv]] = aug[[piv, col]]
        aug[col] /= aug[col, col]
        for row in range(n):
            if row != col and aug[row, col] != 0.0:
                aug[row] -= aug[row, col] * aug[col]
    return aug[:, -1].copy()
