#!/usr/bin/env python3
"""
Bi-Typed Graph Model
Document and word nodes, three typed edge sets, and renormalized adjacency
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterable, List, NamedTuple, Sequence, Tuple, Union

import numpy as np
import scipy.sparse as sp

from errors import GraphError

logger = logging.getLogger(__name__)


class NodeKind(str, Enum):
    DOCUMENT = "document"
    WORD = "word"


class EdgeType(str, Enum):
    DD = "dd"
    WW = "ww"
    DW = "dw"


EDGE_TYPES = (EdgeType.DD, EdgeType.WW, EdgeType.DW)

# (src kind, dst kind) per edge type; DW is always stored document -> word
ENDPOINT_KINDS = {
    EdgeType.DD: (NodeKind.DOCUMENT, NodeKind.DOCUMENT),
    EdgeType.WW: (NodeKind.WORD, NodeKind.WORD),
    EdgeType.DW: (NodeKind.DOCUMENT, NodeKind.WORD),
}


class NodeId(NamedTuple):
    index: int
    kind: NodeKind


class Edge(NamedTuple):
    src: NodeId
    dst: NodeId
    weight: float = 1.0


# Edge list input: plain (src, dst[, weight]) tuples or NodeIds carrying their kind
EdgeInput = Union[Tuple[int, int], Tuple[int, int, float], Tuple[NodeId, NodeId], Tuple[NodeId, NodeId, float]]


@dataclass(frozen=True)
class BiTypedGraph:
    """Immutable bi-typed network; DD/WW hold both directions, DW holds doc->word"""

    n_docs: int
    n_words: int
    edges: Dict[EdgeType, Tuple[Edge, ...]] = field(default_factory=dict)

    @property
    def n_nodes(self) -> int:
        return self.n_docs + self.n_words

    def count(self, t: EdgeType) -> int:
        """Number of undirected edges of type t"""
        stored = len(self.edges.get(t, ()))
        return stored if t == EdgeType.DW else stored // 2

    def pairs(self, t: EdgeType) -> List[Tuple[int, int, float]]:
        """Canonical undirected (src, dst, weight) triples; src < dst for DD/WW"""
        out = []
        for e in self.edges.get(t, ()):
            if t == EdgeType.DW or e.src.index < e.dst.index:
                out.append((e.src.index, e.dst.index, e.weight))
        return out

    def adjacency(self, t: EdgeType) -> sp.csr_matrix:
        """Raw (unnormalized) symmetric adjacency of one edge type.

        DD is n_docs square, WW is n_words square and DW is the joint
        (docs then words) square matrix holding the bipartite block and
        its transpose.
        """
        if t == EdgeType.DD:
            size = self.n_docs
            offset_src = offset_dst = 0
        elif t == EdgeType.WW:
            size = self.n_words
            offset_src = offset_dst = 0
        else:
            size = self.n_nodes
            offset_src, offset_dst = 0, self.n_docs

        rows, cols, vals = [], [], []
        for e in self.edges.get(t, ()):
            rows.append(e.src.index + offset_src)
            cols.append(e.dst.index + offset_dst)
            vals.append(e.weight)
        matrix = sp.coo_matrix(
            (np.asarray(vals, dtype=np.float64), (np.asarray(rows, dtype=np.int64), np.asarray(cols, dtype=np.int64))),
            shape=(size, size),
        ).tocsr()
        if t == EdgeType.DW:
            matrix = (matrix + matrix.T).tocsr()
        matrix.sort_indices()
        return matrix


@dataclass(frozen=True)
class NormalizedAdjacency:
    """D̃^-1/2 (A + I) D̃^-1/2 for one edge type"""

    edge_type: EdgeType
    matrix: sp.csr_matrix

    @property
    def shape(self) -> Tuple[int, int]:
        return self.matrix.shape

    def joint(self, n_docs: int, n_words: int) -> sp.csr_matrix:
        """Lift onto the joint node space (docs then words); other nodes keep only a self-loop"""
        n = n_docs + n_words
        if self.matrix.shape == (n, n):
            return self.matrix
        if self.edge_type == EdgeType.DD:
            lifted = sp.block_diag((self.matrix, sp.identity(n_words, format="csr")), format="csr")
        elif self.edge_type == EdgeType.WW:
            lifted = sp.block_diag((sp.identity(n_docs, format="csr"), self.matrix), format="csr")
        else:
            raise GraphError(f"DW adjacency of shape {self.matrix.shape} does not match {n} joint nodes")
        lifted.sort_indices()
        return lifted


def _endpoint(raw, expected: NodeKind, limit: int, t: EdgeType, position: str) -> int:
    if isinstance(raw, NodeId):
        if NodeKind(raw.kind) != expected:
            raise GraphError(f"{t.value} edge {position} is a {NodeKind(raw.kind).value} node, expected {expected.value}")
        index = raw.index
    else:
        index = raw
    if isinstance(index, (bool, np.bool_)) or not isinstance(index, (int, np.integer)):
        raise GraphError(f"{t.value} edge {position} index must be an integer, got {index!r}")
    index = int(index)
    if index < 0 or index >= limit:
        raise GraphError(f"{t.value} edge {position} index {index} out of range [0, {limit})")
    return index


def _collect(t: EdgeType, edges: Iterable[EdgeInput], n_docs: int, n_words: int) -> Tuple[Edge, ...]:
    src_kind, dst_kind = ENDPOINT_KINDS[t]
    limits = {NodeKind.DOCUMENT: n_docs, NodeKind.WORD: n_words}
    seen: Dict[Tuple[int, int], float] = {}
    self_loops = 0

    for item in edges:
        if len(item) not in (2, 3):
            raise GraphError(f"{t.value} edge must be (src, dst[, weight]), got {item!r}")
        src = _endpoint(item[0], src_kind, limits[src_kind], t, "source")
        dst = _endpoint(item[1], dst_kind, limits[dst_kind], t, "target")
        weight = float(item[2]) if len(item) == 3 else 1.0
        if not np.isfinite(weight) or weight <= 0:
            raise GraphError(f"{t.value} edge ({src}, {dst}) has invalid weight {weight}")

        if t != EdgeType.DW:
            if src == dst:
                self_loops += 1
                continue
            key = (min(src, dst), max(src, dst))
        else:
            key = (src, dst)
        if key not in seen:
            seen[key] = weight

    if self_loops:
        logger.debug(f"⚠️ Dropped {self_loops} self-loops from {t.value} edges")

    out: List[Edge] = []
    for (a, b), w in sorted(seen.items()):
        out.append(Edge(NodeId(a, src_kind), NodeId(b, dst_kind), w))
        if t != EdgeType.DW:
            out.append(Edge(NodeId(b, dst_kind), NodeId(a, src_kind), w))
    if t != EdgeType.DW:
        out.sort(key=lambda e: (e.src.index, e.dst.index))
    return tuple(out)


def build_graph(
    dd_edges: Iterable[EdgeInput],
    ww_edges: Iterable[EdgeInput],
    dw_edges: Iterable[EdgeInput],
    n_docs: int,
    n_words: int,
) -> BiTypedGraph:
    """Build a symmetric, deduplicated bi-typed graph"""
    if n_docs < 0 or n_words < 0:
        raise GraphError("node counts must be non-negative")

    graph = BiTypedGraph(
        n_docs=n_docs,
        n_words=n_words,
        edges={
            EdgeType.DD: _collect(EdgeType.DD, dd_edges, n_docs, n_words),
            EdgeType.WW: _collect(EdgeType.WW, ww_edges, n_docs, n_words),
            EdgeType.DW: _collect(EdgeType.DW, dw_edges, n_docs, n_words),
        },
    )
    logger.info(
        f"📊 Graph: {n_docs} documents, {n_words} words, "
        f"{graph.count(EdgeType.DD)} DD / {graph.count(EdgeType.WW)} WW / {graph.count(EdgeType.DW)} DW edges"
    )
    return graph


def renormalize(adjacency: sp.spmatrix) -> sp.csr_matrix:
    """D̃^-1/2 (A + I) D̃^-1/2 of a square symmetric matrix"""
    n = adjacency.shape[0]
    a_tilde = (sp.csr_matrix(adjacency, dtype=np.float64) + sp.identity(n, dtype=np.float64, format="csr")).tocsr()
    degree = np.asarray(a_tilde.sum(axis=1)).ravel()
    inv_sqrt = 1.0 / np.sqrt(degree)
    scale = sp.diags(inv_sqrt)
    out = (scale @ a_tilde @ scale).tocsr()
    out.sort_indices()
    return out


def normalize(graph: BiTypedGraph, t: EdgeType) -> NormalizedAdjacency:
    """Renormalized adjacency of one sub-network"""
    size = {EdgeType.DD: graph.n_docs, EdgeType.WW: graph.n_words, EdgeType.DW: graph.n_nodes}[t]
    if size < 1:
        raise GraphError(f"cannot normalize {t.value}: no nodes of that type")
    return NormalizedAdjacency(edge_type=t, matrix=renormalize(graph.adjacency(t)))


@dataclass(frozen=True)
class DegreeSummary:
    edge_type: EdgeType
    nodes: int
    edges: int
    min_degree: int
    max_degree: int
    mean_degree: float
    isolated: int


def degree_stats(graph: BiTypedGraph) -> Dict[EdgeType, DegreeSummary]:
    """Min/max/mean degree and isolated-node count per edge type"""
    stats = {}
    for t in EDGE_TYPES:
        adjacency = graph.adjacency(t)
        n = adjacency.shape[0]
        degree = np.diff(adjacency.indptr)
        stats[t] = DegreeSummary(
            edge_type=t,
            nodes=n,
            edges=graph.count(t),
            min_degree=int(degree.min()) if n else 0,
            max_degree=int(degree.max()) if n else 0,
            mean_degree=float(degree.mean()) if n else 0.0,
            isolated=int(np.sum(degree == 0)),
        )
    return stats


def replace_edges(graph: BiTypedGraph, replacements: Dict[EdgeType, Sequence[Tuple[int, int, float]]]) -> BiTypedGraph:
    """New graph with some edge sets swapped out (used after refinement)"""
    lists = {t: replacements.get(t, graph.pairs(t)) for t in EDGE_TYPES}
    return build_graph(lists[EdgeType.DD], lists[EdgeType.WW], lists[EdgeType.DW], graph.n_docs, graph.n_words)
