"""Keyword-similarity scoring of reasoning paths and top-N selection."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InvalidPath
from .kg import KnowledgeGraph
from .providers import EmbeddingProvider, cosine
from .query import ParsedQuery
from .traversal import ReasoningPath


TIE_DIGITS = 12


@dataclass(frozen=True)
class RankingConfig:
    k_paths: int = 3

    def __post_init__(self) -> None:
        if self.k_paths < 1:
            raise ValueError("k_paths must be >= 1")


@dataclass(frozen=True)
class ScoredPath:
    path: ReasoningPath
    score: float
    linearization: str

    def sort_key(self) -> tuple:
        # scores equal up to float noise count as ties so the text tie-break applies
        return (-round(self.score, TIE_DIGITS), self.linearization, self.path.edges)


def linearize(path: ReasoningPath, graph: KnowledgeGraph) -> str:
    """``"a -[r1]-> b -[r2]-> c"``."""
    if not path.edges:
        raise InvalidPath("cannot linearize an empty path")
    parts = [path.nodes[0]]
    for eid, node in zip(path.edges, path.nodes[1:]):
        edge = graph.edges.get(eid)
        if edge is None:
            raise InvalidPath(f"unknown edge {eid}")
        parts.append(f"-[{edge.relation}]-> {node}")
    return " ".join(parts)


def keyword_vectors(query: ParsedQuery, embedder: EmbeddingProvider) -> np.ndarray:
    return embedder.embed_batch(list(query.keywords))


def score_path(query: ParsedQuery, path_text: str, embedder: EmbeddingProvider,
               keyword_vecs: np.ndarray | None = None) -> float:
    """Sum over keywords of cos(embed(path_text), embed(keyword))."""
    if not query.keywords:
        raise ValueError("query has no keywords")
    kv = keyword_vecs if keyword_vecs is not None else keyword_vectors(query, embedder)
    pv = embedder.embed_batch([path_text])[0]
    return float(sum(cosine(pv, k) for k in kv))


def rank_and_select(paths: Sequence[ReasoningPath], query: ParsedQuery, graph: KnowledgeGraph,
                    embedder: EmbeddingProvider, config: RankingConfig = RankingConfig()) -> list[ScoredPath]:
    """Score every path, drop those ending at a negated entity, keep the top ``k_paths``.

    Order is by descending score, then linearization text.
    """
    negated = set(query.negated_entities)
    kept = [p for p in paths if p.terminal not in negated]
    if not kept:
        return []
    texts = [linearize(p, graph) for p in kept]
    kv = keyword_vectors(query, embedder) if query.keywords else np.zeros((0, 1))
    pv = embedder.embed_batch(texts)
    scored = [ScoredPath(p, float(sum(cosine(pv[i], k) for k in kv)), texts[i]) for i, p in enumerate(kept)]
    scored.sort(key=ScoredPath.sort_key)
    return scored[:config.k_paths]


def ranked_records(scored: Sequence[ScoredPath]) -> list[dict]:
    return [{"rank": i + 1, "score": s.score, "linearization": s.linearization, "nodes": list(s.path.nodes),
             "conditions": [c.serialize() for c in s.path.conditions_along]} for i, s in enumerate(scored)]
