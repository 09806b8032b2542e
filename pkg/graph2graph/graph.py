"""
Graph data model and the adjacency-vector sequence representation.

A graph on n nodes is written as n - 1 adjacency vectors: vector i (for node i,
counting from 1) has length i and entry k is the edge indicator between node i
and node i - k. Only the lower triangle of the adjacency matrix is stored.
Sequences are zero-padded to a fixed width so that every graph of a dataset
produces tensors of the same shape.
"""

import json
import logging
from dataclasses import dataclass, field
from typing import Optional

import networkx as nx
import numpy as np

from .errors import GraphError

logger = logging.getLogger(__name__)

# Upper bound on tie-resolution branches explored per component
SEARCH_BUDGET = 50000


@dataclass(frozen=True)
class Graph:
    n: int
    edges: frozenset = field(default_factory=frozenset)
    label: Optional[int] = None

    def __post_init__(self):
        if self.n < 0:
            raise GraphError(f"node count must be >= 0, got {self.n}")
        if not isinstance(self.edges, frozenset):
            object.__setattr__(self, 'edges', frozenset(self.edges))
        for edge in self.edges:
            i, j = edge
            if i == j:
                raise GraphError(f"self-loop on node {i}")
            if not (0 <= j < i < self.n):
                raise GraphError(f"edge {edge} must satisfy 0 <= j < i < {self.n}")

    @classmethod
    def build(cls, n, pairs=(), label=None):
        """Create a graph from unordered pairs, dropping duplicates and orientation"""
        edges = set()
        for a, b in pairs:
            a, b = int(a), int(b)
            if a == b:
                raise GraphError(f"self-loop on node {a}")
            edges.add((max(a, b), min(a, b)))
        return cls(int(n), frozenset(edges), label)

    def edge_list(self):
        return sorted(self.edges)

    def adjacency(self):
        adj = [set() for _ in range(self.n)]
        for i, j in self.edges:
            adj[i].add(j)
            adj[j].add(i)
        return adj

    def degrees(self):
        deg = [0] * self.n
        for i, j in self.edges:
            deg[i] += 1
            deg[j] += 1
        return deg

    def relabel(self, order):
        """Return the graph whose node p is this graph's node order[p]"""
        if sorted(order) != list(range(self.n)):
            raise GraphError(f"order is not a permutation of {self.n} nodes")
        new_index = {old: new for new, old in enumerate(order)}
        return Graph.build(self.n, ((new_index[i], new_index[j]) for i, j in self.edges), self.label)

    def with_label(self, label):
        return Graph(self.n, self.edges, label)

    def to_networkx(self):
        G = nx.Graph()
        G.add_nodes_from(range(self.n))
        G.add_edges_from(self.edge_list())
        return G

    def to_dict(self):
        return {'n': self.n, 'edges': [list(e) for e in self.edge_list()], 'label': self.label}

    @classmethod
    def from_dict(cls, obj):
        try:
            return cls.build(obj['n'], obj.get('edges', []), obj.get('label'))
        except (KeyError, TypeError, ValueError) as e:
            raise GraphError(f"malformed graph record: {e}") from e


class AdjVecSeq:
    """Ordered adjacency vectors X_1 .. X_{width-1}, entries in {0, 1}"""

    def __init__(self, vectors, width):
        self.vectors = [np.asarray(v, dtype=np.int8) for v in vectors]
        self.width = int(width)
        if len(self.vectors) > max(self.width - 1, 0):
            raise GraphError(f"{len(self.vectors)} vectors do not fit width {self.width}")
        for i, vec in enumerate(self.vectors, start=1):
            if vec.shape != (i,):
                raise GraphError(f"vector {i} must have length {i}, got shape {vec.shape}")
            if np.any((vec != 0) & (vec != 1)):
                raise GraphError(f"vector {i} has entries outside {{0, 1}}")

    def __len__(self):
        return len(self.vectors)

    def __eq__(self, other):
        if not isinstance(other, AdjVecSeq):
            return NotImplemented
        return (self.width == other.width and len(self) == len(other)
                and all(np.array_equal(a, b) for a, b in zip(self.vectors, other.vectors)))

    def __repr__(self):
        body = ', '.join('(' + ','.join(str(int(x)) for x in v) + ')' for v in self.vectors)
        return f"AdjVecSeq(width={self.width}, [{body}])"

    def edge_count(self):
        return int(sum(int(v.sum()) for v in self.vectors))

    def dense(self):
        """(width-1, width-1) matrix D with D[i-1, k-1] = X_{i,k} for k <= i"""
        size = max(self.width - 1, 0)
        out = np.zeros((size, size), dtype=np.int8)
        for i, vec in enumerate(self.vectors, start=1):
            out[i - 1, :i] = vec
        return out

    @classmethod
    def from_dense(cls, mat, width=None):
        mat = np.asarray(mat)
        size = mat.shape[0]
        width = size + 1 if width is None else width
        rows = [(mat[i - 1, :i] > 0).astype(np.int8) for i in range(1, min(size, width - 1) + 1)]
        return cls(rows, width)


def to_sequence(g, width):
    if g.n > width:
        raise GraphError(f"graph with {g.n} nodes exceeds width {width}")
    vectors = [np.zeros(i, dtype=np.int8) for i in range(1, width)]
    for i, j in g.edges:
        vectors[i - 1][i - j - 1] = 1
    return AdjVecSeq(vectors, width)


def from_sequence(s):
    edges = []
    for i, vec in enumerate(s.vectors, start=1):
        for k in np.flatnonzero(vec):
            edges.append((i, i - int(k) - 1))
    return Graph.build(max(s.width, 0), edges)


def _refine_colors(adj):
    # colour refinement seeded with degrees; ranks are assigned from sorted
    # signatures so they do not depend on node labels
    colors = [len(a) for a in adj]
    while True:
        sigs = [(colors[v], tuple(sorted(colors[w] for w in adj[v]))) for v in range(len(adj))]
        palette = {sig: rank for rank, sig in enumerate(sorted(set(sigs)))}
        refined = [palette[sig] for sig in sigs]
        if len(set(refined)) == len(set(colors)):
            return refined
        colors = refined


def _components(g):
    return sorted(sorted(c) for c in nx.connected_components(g.to_networkx()))


def _drop_twins(candidates, adj):
    kept = []
    for v in candidates:
        twin = False
        for u in kept:
            if adj[u] - {v} == adj[v] - {u}:
                twin = True
                break
        if not twin:
            kept.append(v)
    return kept


class _ComponentSearch:
    """DFS orders of one component; keeps the greatest adjacency-vector code"""

    def __init__(self, comp, adj, colors):
        self.comp = comp
        self.adj = adj
        self.key = {v: (len(adj[v]), colors[v]) for v in comp}
        self.best_code = None
        self.best_order = None
        self.expanded = 0

    def run(self):
        top_degree = max(len(self.adj[v]) for v in self.comp)
        roots = [v for v in self.comp if len(self.adj[v]) == top_degree]
        best_color = min(self.key[v][1] for v in roots)
        roots = [v for v in roots if self.key[v][1] == best_color]
        for root in _drop_twins(roots, self.adj):
            self._search([root], {root}, (root,), [])
        return self.best_order, self.best_code

    def _search(self, order, visited, path, code):
        if self.best_code is not None and code < self.best_code[:len(code)]:
            return
        if len(order) == len(self.comp):
            if self.best_code is None or code > self.best_code:
                self.best_code = list(code)
                self.best_order = list(order)
            return
        self.expanded += 1
        if self.expanded > SEARCH_BUDGET and self.best_order is not None:
            return

        while True:
            fresh = [w for w in self.adj[path[-1]] if w not in visited]
            if fresh:
                break
            path = path[:-1]
        low = min(self.key[w] for w in fresh)
        tied = sorted(w for w in fresh if self.key[w] == low)

        for v in _drop_twins(tied, self.adj):
            vector = [1 if order[-k] in self.adj[v] else 0 for k in range(1, len(order) + 1)]
            visited.add(v)
            order.append(v)
            self._search(order, visited, path + (v,), code + vector)
            order.pop()
            visited.discard(v)


def canonical_permutation(g):
    """Canonical node order of g: result[p] is the original node placed at position p"""
    if g.n == 0:
        return []
    adj = g.adjacency()
    colors = _refine_colors(adj)
    placed = []
    for comp in _components(g):
        search = _ComponentSearch(comp, adj, colors)
        order, code = search.run()
        if search.expanded > SEARCH_BUDGET:
            logger.warning("canonical order search budget hit on a %d-node component", len(comp))
        top_degree = max(len(adj[v]) for v in comp)
        placed.append(((top_degree, len(comp), code), order))
    # the component holding a maximum-degree node comes first, so node 0 has maximum degree
    placed.sort(key=lambda item: item[0], reverse=True)
    return [v for _, order in placed for v in order]


def canonical_order(g):
    return g.relabel(canonical_permutation(g))


def read_jsonl(path):
    graphs = []
    with open(path, 'r', encoding='utf-8') as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                graphs.append(Graph.from_dict(json.loads(line)))
            except json.JSONDecodeError as e:
                raise GraphError(f"{path}:{lineno}: {e}") from e
    return graphs


def write_jsonl(path, graphs):
    with open(path, 'w', encoding='utf-8') as f:
        for g in graphs:
            f.write(json.dumps(g.to_dict(), sort_keys=True) + '\n')
