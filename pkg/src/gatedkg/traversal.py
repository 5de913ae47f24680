"""Entry-node selection and condition-gated breadth-first path enumeration."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import InvalidPath, NoEntryNodes
from .gating import ConditionVerdictTable, gate
from .kg import ConditionLabel, EntityId, EvidenceSnippet, KnowledgeGraph
from .providers import EmbeddingProvider
from .query import ParsedQuery


@dataclass(frozen=True)
class TraversalConfig:
    k_nodes: int = 5
    tau: float = 0.35
    d_max: int = 4
    max_paths: int = 10000

    def __post_init__(self) -> None:
        if self.k_nodes < 1:
            raise ValueError("k_nodes must be >= 1")
        if self.d_max < 1:
            raise ValueError("d_max must be >= 1")
        if self.max_paths < 1:
            raise ValueError("max_paths must be >= 1")
        if not -1.0 <= self.tau <= 1.0:
            raise ValueError("tau must lie in [-1, 1]")


@dataclass(frozen=True)
class ReasoningPath:
    nodes: tuple[EntityId, ...]
    edges: tuple[str, ...]
    conditions_along: tuple[ConditionLabel, ...] = ()
    snippets_along: tuple[EvidenceSnippet, ...] = ()

    @classmethod
    def from_edges(cls, graph: KnowledgeGraph, start: EntityId, edge_ids: Sequence[str]) -> ReasoningPath:
        if not edge_ids:
            raise InvalidPath("a path needs at least one edge")
        nodes = [start]
        conds: list[ConditionLabel] = []
        snips: list[EvidenceSnippet] = []
        for eid in edge_ids:
            edge = graph.edges.get(eid)
            if edge is None or edge.source != nodes[-1]:
                raise InvalidPath(f"edge {eid} does not continue the path at {nodes[-1]!r}")
            nodes.append(edge.target)
            conds.extend(c for c in edge.conditions if c not in conds)
            snips.extend(edge.snippets)
        if len(set(nodes)) != len(nodes):
            raise InvalidPath("path revisits a node")
        return cls(tuple(nodes), tuple(edge_ids), tuple(conds), tuple(snips))

    def __len__(self) -> int:
        return len(self.edges)

    @property
    def terminal(self) -> EntityId:
        return self.nodes[-1]

    def to_json(self) -> dict:
        return {"nodes": list(self.nodes), "edges": list(self.edges)}


class TraversalResult(list):
    """List of paths plus traversal bookkeeping."""

    def __init__(self, paths: Iterable[ReasoningPath] = (), blocked_count: int = 0, truncated: bool = False) -> None:
        super().__init__(paths)
        self.blocked_count = blocked_count
        self.truncated = truncated

    def dump_records(self) -> list[dict]:
        return [{**p.to_json(), "blocked_count": self.blocked_count, "truncated": self.truncated} for p in self]


class NodeIndex:
    """Node labels of a graph with their embeddings, computed once."""

    def __init__(self, graph: KnowledgeGraph, embedder: EmbeddingProvider) -> None:
        self.nodes = sorted(graph.nodes)
        self.matrix = embedder.embed_batch(self.nodes) if self.nodes else np.zeros((0, 1))
        norms = np.linalg.norm(self.matrix, axis=1) if self.nodes else np.zeros(0)
        self.norms = norms

    def cosines(self, vec: np.ndarray) -> np.ndarray:
        vnorm = float(np.linalg.norm(vec))
        if vnorm == 0.0 or not self.nodes:
            return np.zeros(len(self.nodes))
        denom = self.norms * vnorm
        dots = self.matrix @ vec
        return np.divide(dots, denom, out=np.zeros_like(dots), where=denom > 0)


def select_entry_nodes(query: ParsedQuery, graph: KnowledgeGraph, embedder: EmbeddingProvider,
                       config: TraversalConfig = TraversalConfig(),
                       index: NodeIndex | None = None) -> list[tuple[EntityId, float]]:
    """Top ``k_nodes`` nodes per keyword with cosine >= tau, merged keeping the best score."""
    index = index or NodeIndex(graph, embedder)
    best: dict[EntityId, float] = {}
    if query.keywords and index.nodes:
        kw_vecs = embedder.embed_batch(list(query.keywords))
        for vec in kw_vecs:
            scores = index.cosines(vec)
            ranked = sorted((n for n in range(len(index.nodes)) if scores[n] >= config.tau),
                            key=lambda n: (-scores[n], index.nodes[n]))
            for n in ranked[:config.k_nodes]:
                node = index.nodes[n]
                best[node] = max(best.get(node, -2.0), float(scores[n]))
    if not best:
        raise NoEntryNodes(f"no graph node reaches similarity {config.tau} for keywords {list(query.keywords)}")
    return sorted(best.items(), key=lambda kv: (-kv[1], kv[0]))


def gated_bfs(graph: KnowledgeGraph, entries: Sequence[EntityId], table: ConditionVerdictTable,
              config: TraversalConfig = TraversalConfig()) -> TraversalResult:
    """Maximal gated simple paths from ``entries``, breadth-first.

    A path ends when it reaches ``d_max`` edges or its last node has no open
    edge to a node not already on the path. Prefixes are not emitted.
    Collection stops at ``max_paths`` with ``truncated`` set.
    """
    emitted: list[ReasoningPath] = []
    blocked: set[str] = set()
    truncated = False
    open_cache: dict[EntityId, list] = {}

    def open_edges(node: EntityId) -> list:
        edges = open_cache.get(node)
        if edges is None:
            edges = []
            for e in graph.out_edges(node):
                if gate(e, table):
                    edges.append(e)
                else:
                    blocked.add(e.id)
            open_cache[node] = edges
        return edges

    starts = []
    for entry in entries:
        if entry in graph.nodes and entry not in starts:
            starts.append(entry)
    # frontier items: (nodes, edge ids)
    frontier: list[tuple[tuple[EntityId, ...], tuple[str, ...]]] = [((s,), ()) for s in starts]
    for _depth in range(config.d_max):
        nxt = []
        for nodes, eids in frontier:
            ext = [e for e in open_edges(nodes[-1]) if e.target not in nodes]
            if not ext:
                if eids:
                    emitted.append(ReasoningPath.from_edges(graph, nodes[0], eids))
                continue
            for e in ext:
                nxt.append((nodes + (e.target,), eids + (e.id,)))
        room = config.max_paths - len(emitted)
        if len(emitted) >= config.max_paths or len(nxt) > room:
            truncated = True
            emitted = emitted[:config.max_paths]
            nxt = nxt[:max(room, 0)]
        frontier = nxt
        if not frontier:
            break
    for nodes, eids in frontier:
        if len(emitted) >= config.max_paths:
            truncated = True
            break
        emitted.append(ReasoningPath.from_edges(graph, nodes[0], eids))
    return TraversalResult(emitted, blocked_count=len(blocked), truncated=truncated)
