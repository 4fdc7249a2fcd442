"""And-inverter graphs: data model, text format, features and batching.

Graph file format (UTF-8 text)::

    aig <N> <E>
    node <id> <type> <n_inverted_inputs>     # N lines, ids 0..N-1 in order
    edge <src> <dst>                         # E lines, driver -> sink

Node types are 0 (primary input), 1 (primary output) and 2 (AND).
``#`` starts a comment; blank lines are ignored.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    AcyclicityError,
    GraphFormatError,
    GraphInvariantError,
    InDegreeError,
    ParameterError,
)

PI, PO, AND = 0, 1, 2
TYPE_NAMES = {PI: "PI", PO: "PO", AND: "AND"}
REQUIRED_IN_DEGREE = {PI: 0, PO: 1, AND: 2}

_INT = re.compile(r"(?:0|[1-9][0-9]*)\Z")


def _frozen(a):
    a = np.asarray(a, dtype=np.int64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class AigGraph:
    types: np.ndarray
    inverted: np.ndarray
    edges: np.ndarray  # (E, 2) driver -> sink

    @classmethod
    def build(cls, types, inverted, edges, validate=True):
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        g = cls(_frozen(types), _frozen(inverted), _frozen(edges))
        if validate:
            validate_graph(g)
        return g

    @property
    def n_nodes(self):
        return len(self.types)

    @property
    def n_edges(self):
        return len(self.edges)

    def count(self, node_type):
        return int(np.sum(self.types == node_type))

    @property
    def n_and(self):
        return self.count(AND)

    def in_degree(self):
        return np.bincount(self.edges[:, 1], minlength=self.n_nodes)

    def depth(self):
        """Length (in edges) of the longest driver-to-sink path."""
        succ = [[] for _ in range(self.n_nodes)]
        for s, d in self.edges.tolist():
            succ[s].append(d)
        level = [0] * self.n_nodes
        for v in topological_order(self):
            for u in succ[v]:
                level[u] = max(level[u], level[v] + 1)
        return max(level) if level else 0

    def __eq__(self, other):
        if not isinstance(other, AigGraph):
            return NotImplemented
        return (np.array_equal(self.types, other.types)
                and np.array_equal(self.inverted, other.inverted)
                and np.array_equal(self.edges, other.edges))

    __hash__ = None


def topological_order(g):
    """Kahn's algorithm; raises AcyclicityError naming a node on a cycle."""
    n = g.n_nodes
    indeg = np.bincount(g.edges[:, 1], minlength=n).tolist()
    succ = [[] for _ in range(n)]
    for s, d in g.edges.tolist():
        succ[s].append(d)
    ready = [v for v in range(n) if indeg[v] == 0]
    order = []
    while ready:
        v = ready.pop()
        order.append(v)
        for u in succ[v]:
            indeg[u] -= 1
            if indeg[u] == 0:
                ready.append(u)
    if len(order) != n:
        stuck = min(v for v in range(n) if indeg[v] > 0)
        raise AcyclicityError(f"graph has a cycle through node {stuck}")
    return order


def validate_graph(g):
    n = g.n_nodes
    if n == 0:
        raise GraphInvariantError("graph has no nodes")
    if g.inverted.shape != (n,):
        raise GraphInvariantError("inverted-input counts do not match node count")
    bad = np.flatnonzero(~np.isin(g.types, list(TYPE_NAMES)))
    if bad.size:
        raise GraphInvariantError(f"node {bad[0]} has invalid type {g.types[bad[0]]}")
    if np.any(g.inverted < 0):
        v = int(np.flatnonzero(g.inverted < 0)[0])
        raise GraphInvariantError(f"node {v} has a negative inverted-input count")
    for i, (s, d) in enumerate(g.edges.tolist()):
        if not (0 <= s < n and 0 <= d < n):
            raise GraphInvariantError(f"edge {i} ({s} -> {d}) has an endpoint outside [0, {n})")
    if len({(s, d) for s, d in g.edges.tolist()}) != g.n_edges:
        raise GraphInvariantError("graph has duplicate edges")
    indeg = g.in_degree()
    for v in range(n):
        t = int(g.types[v])
        if indeg[v] != REQUIRED_IN_DEGREE[t]:
            raise InDegreeError(
                f"node {v} ({TYPE_NAMES[t]}) has in-degree {indeg[v]}, "
                f"expected {REQUIRED_IN_DEGREE[t]}")
        if g.inverted[v] > indeg[v]:
            raise GraphInvariantError(
                f"node {v} has {g.inverted[v]} inverted inputs but in-degree {indeg[v]}")
    topological_order(g)


# --------------------------------------------------------------------------
# text format

def _parse_int(tok, lineno, what):
    if not _INT.match(tok):
        raise GraphFormatError(f"invalid integer {tok!r} for {what}", lineno)
    return int(tok)


def parse_graph(text):
    lines = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        body = raw.split("#", 1)[0].strip()
        if body:
            lines.append((lineno, body.split()))
    if not lines:
        raise GraphFormatError("missing 'aig <N> <E>' header")
    lineno, head = lines[0]
    if len(head) != 3 or head[0] != "aig":
        raise GraphFormatError("expected header 'aig <N> <E>'", lineno)
    n = _parse_int(head[1], lineno, "node count")
    e = _parse_int(head[2], lineno, "edge count")
    body = lines[1:]
    if len(body) != n + e:
        last = body[-1][0] if body else lineno
        raise GraphFormatError(
            f"header declares {n} nodes and {e} edges but found {len(body)} records", last)

    types, inverted = [], []
    for i, (lineno, toks) in enumerate(body[:n]):
        if len(toks) != 4 or toks[0] != "node":
            raise GraphFormatError("expected 'node <id> <type> <n_inverted_inputs>'", lineno)
        nid = _parse_int(toks[1], lineno, "node id")
        if nid != i:
            raise GraphFormatError(f"node id {nid} out of order, expected {i}", lineno)
        t = _parse_int(toks[2], lineno, "node type")
        if t not in TYPE_NAMES:
            raise GraphFormatError(f"node type {t} not in {{0, 1, 2}}", lineno)
        types.append(t)
        inverted.append(_parse_int(toks[3], lineno, "inverted-input count"))

    edges = []
    for lineno, toks in body[n:]:
        if len(toks) != 3 or toks[0] != "edge":
            raise GraphFormatError("expected 'edge <src> <dst>'", lineno)
        edges.append((_parse_int(toks[1], lineno, "edge source"),
                      _parse_int(toks[2], lineno, "edge sink")))
    return AigGraph.build(types, inverted, edges)


def load_graph(path):
    return parse_graph(Path(path).read_text(encoding="utf-8"))


def format_graph(g):
    out = [f"aig {g.n_nodes} {g.n_edges}"]
    out += [f"node {i} {t} {k}" for i, (t, k) in enumerate(zip(g.types.tolist(), g.inverted.tolist()))]
    out += [f"edge {s} {d}" for s, d in g.edges.tolist()]
    return "\n".join(out) + "\n"


def write_graph(g, path):
    Path(path).write_text(format_graph(g), encoding="utf-8")


# --------------------------------------------------------------------------
# matrices

def build_features(g):
    """Integer feature matrix: column 0 node type, column 1 inverted-input count."""
    return np.stack([g.types, g.inverted], axis=1).astype(np.int64)


def adjacency_matrix(g):
    a = np.zeros((g.n_nodes, g.n_nodes), dtype=np.int64)
    a[g.edges[:, 0], g.edges[:, 1]] = 1
    return a


def propagate_once(g, features=None):
    """One step of ``A @ F`` with ``A[i, j] = 1`` iff edge i -> j.

    Exact in integers; used for golden checks, not for training.
    """
    f = build_features(g) if features is None else np.asarray(features)
    x = np.zeros(f.shape, dtype=np.result_type(f.dtype, np.int64))
    np.add.at(x, g.edges[:, 0], f[g.edges[:, 1]])
    return x


# --------------------------------------------------------------------------
# batching

@dataclass(frozen=True, eq=False)
class BatchedGraph:
    types: np.ndarray
    inverted: np.ndarray
    edges: np.ndarray
    graph_ids: np.ndarray
    node_counts: np.ndarray

    @property
    def n_graphs(self):
        return len(self.node_counts)

    @property
    def n_nodes(self):
        return len(self.types)

    @property
    def offsets(self):
        return np.concatenate([[0], np.cumsum(self.node_counts)[:-1]]).astype(np.int64)

    def features(self):
        return np.stack([self.types, self.inverted], axis=1)


def batch_graphs(graphs):
    """Block-diagonal union of ``graphs`` with node ids shifted per graph."""
    graphs = list(graphs)
    if not graphs:
        raise ParameterError("batch_graphs needs at least one graph")
    counts = np.array([g.n_nodes for g in graphs], dtype=np.int64)
    offsets = np.concatenate([[0], np.cumsum(counts)[:-1]])
    edges = np.concatenate([g.edges + off for g, off in zip(graphs, offsets)], axis=0)
    return BatchedGraph(
        types=np.concatenate([g.types for g in graphs]),
        inverted=np.concatenate([g.inverted for g in graphs]),
        edges=edges.reshape(-1, 2),
        graph_ids=np.repeat(np.arange(len(graphs)), counts),
        node_counts=counts,
    )


def unbatch(batch):
    out = []
    graph_of_edge = batch.graph_ids[batch.edges[:, 0]] if len(batch.edges) else np.array([], int)
    for gid, off in enumerate(batch.offsets):
        mask = batch.graph_ids == gid
        edges = batch.edges[graph_of_edge == gid] - off
        out.append(AigGraph.build(batch.types[mask], batch.inverted[mask], edges))
    return out


def relabel(g, perm):
    """Copy of ``g`` where old node ``v`` becomes node ``perm[v]``."""
    perm = np.asarray(perm, dtype=np.int64)
    inv = np.argsort(perm)
    return AigGraph.build(g.types[inv], g.inverted[inv], perm[g.edges])
