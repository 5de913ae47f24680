"""Condition-annotated knowledge graph: entities, edges, and JSON Lines persistence.

An edge is a 4-tuple ``(source, relation, target, conditions)`` plus the
evidence snippets that support it. Edge identity is a content hash, so
re-inserting the same tuple merges snippets instead of duplicating the edge.
"""

from __future__ import annotations

import bisect
import hashlib
import json
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Iterator

from .errors import EmptyEntity, FormatError, GraphFrozen

EntityId = str

NEGATION_PREFIX = "not:"
# Order matters: longer markers first.
_NEGATION_MARKERS = ("not:", "without ", "not ", "no ", "¬")
_NON_WORD = re.compile(r"[^0-9a-z]+")


def canonicalize_entity(raw: str) -> EntityId:
    """Case-fold and collapse whitespace. Raises EmptyEntity on blank input."""
    value = " ".join(raw.split()).casefold()
    if not value:
        raise EmptyEntity(f"entity {raw!r} is empty after canonicalization")
    return value


def canonicalize_relation(raw: str) -> str:
    """``"Contraindicated in"`` -> ``"contraindicated_in"``."""
    value = _NON_WORD.sub("_", raw.casefold()).strip("_")
    if not value:
        raise EmptyEntity(f"relation {raw!r} is empty after canonicalization")
    return value


@dataclass(frozen=True, order=True)
class ConditionLabel:
    text: str
    negated: bool = False

    def __post_init__(self) -> None:
        text = " ".join(self.text.split()).casefold()
        negated = bool(self.negated)
        lifted = True
        while lifted:
            lifted = False
            for marker in _NEGATION_MARKERS:
                if text.startswith(marker) and text[len(marker):].strip():
                    text = text[len(marker):].strip()
                    negated = not negated
                    lifted = True
                    break
        if not text:
            raise EmptyEntity("condition text is empty")
        object.__setattr__(self, "text", text)
        object.__setattr__(self, "negated", negated)

    @classmethod
    def parse(cls, raw: str | ConditionLabel) -> ConditionLabel:
        """Build a label, lifting leading negation markers into ``negated``.

        Accepts the serialized ``not:`` form as well as ``¬``, ``not``,
        ``no`` and ``without`` prefixes. Stacked markers toggle polarity.
        """
        if isinstance(raw, ConditionLabel):
            return raw
        return cls(raw)

    def serialize(self) -> str:
        return NEGATION_PREFIX + self.text if self.negated else self.text

    def positive(self) -> ConditionLabel:
        return ConditionLabel(self.text, False) if self.negated else self

    def flipped(self) -> ConditionLabel:
        return ConditionLabel(self.text, not self.negated)

    def __str__(self) -> str:
        return ("¬" + self.text) if self.negated else self.text


@dataclass(frozen=True)
class EvidenceSnippet:
    doc_id: str
    text: str
    char_span: tuple[int, int] | None = None

    def __post_init__(self) -> None:
        if not self.text:
            raise ValueError("snippet text must be non-empty")
        if self.char_span is not None:
            start, end = self.char_span
            if not 0 <= start <= end:
                raise ValueError(f"bad char_span {self.char_span}")
            object.__setattr__(self, "char_span", (int(start), int(end)))

    @property
    def key(self) -> tuple[str, str]:
        return (self.doc_id, self.text)

    def sort_key(self) -> tuple:
        return (self.doc_id, self.text, self.char_span or (-1, -1))

    def to_json(self) -> dict:
        return {"doc_id": self.doc_id, "text": self.text,
                "span": list(self.char_span) if self.char_span is not None else None}


def _merge_snippets(*groups: Iterable[EvidenceSnippet]) -> tuple[EvidenceSnippet, ...]:
    seen: dict[tuple[str, str], EvidenceSnippet] = {}
    for snip in sorted((s for g in groups for s in g), key=EvidenceSnippet.sort_key):
        seen.setdefault(snip.key, snip)
    return tuple(seen.values())


def edge_id(source: str, relation: str, target: str, conditions: Iterable[ConditionLabel]) -> str:
    payload = json.dumps(
        [source, relation, target, sorted(c.serialize() for c in conditions)],
        ensure_ascii=False, separators=(",", ":"),
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


@dataclass(frozen=True)
class EdgeRecord:
    """A directed, condition-annotated relation with supporting snippets.

    Fields are canonicalized on construction, so plain strings are accepted
    for entities, the relation and conditions.
    """

    source: EntityId
    relation: str
    target: EntityId
    conditions: tuple[ConditionLabel, ...] = ()
    snippets: tuple[EvidenceSnippet, ...] = ()
    inverse_of: str | None = None
    id: str = field(default="", compare=True)

    def __post_init__(self) -> None:
        object.__setattr__(self, "source", canonicalize_entity(self.source))
        object.__setattr__(self, "target", canonicalize_entity(self.target))
        object.__setattr__(self, "relation", canonicalize_relation(self.relation))
        labels: list[ConditionLabel] = []
        for raw in self.conditions:
            label = ConditionLabel.parse(raw)
            if label not in labels:
                labels.append(label)
        object.__setattr__(self, "conditions", tuple(labels))
        object.__setattr__(self, "snippets", _merge_snippets(self.snippets))
        expected = edge_id(self.source, self.relation, self.target, labels)
        if self.id and self.id != expected:
            raise ValueError(f"edge id {self.id!r} does not match content hash {expected!r}")
        object.__setattr__(self, "id", expected)

    def with_snippets(self, extra: Iterable[EvidenceSnippet]) -> EdgeRecord:
        return replace(self, snippets=_merge_snippets(self.snippets, extra))

    def inverse(self, inverse_relation: str) -> EdgeRecord:
        return EdgeRecord(self.target, inverse_relation, self.source, self.conditions,
                          self.snippets, inverse_of=self.id)

    def to_json(self) -> dict:
        return {
            "kind": "edge",
            "id": self.id,
            "source": self.source,
            "relation": self.relation,
            "target": self.target,
            "conditions": [c.serialize() for c in self.conditions],
            "snippets": [s.to_json() for s in self.snippets],
            "inverse_of": self.inverse_of,
        }


class KnowledgeGraph:
    """Directed multigraph of condition-annotated edges.

    Mutable while building; ``freeze()`` makes it read-only so it can be
    shared between threads without locking.
    """

    def __init__(self) -> None:
        self.nodes: set[EntityId] = set()
        self.edges: dict[str, EdgeRecord] = {}
        self.out_index: dict[EntityId, list[str]] = {}
        self.documents: dict[str, str] = {}
        self._frozen = False

    # -- building -----------------------------------------------------------

    def _check_mutable(self) -> None:
        if self._frozen:
            raise GraphFrozen("graph is frozen")

    def freeze(self) -> KnowledgeGraph:
        self._frozen = True
        return self

    @property
    def frozen(self) -> bool:
        return self._frozen

    def add_node(self, raw: str) -> EntityId:
        self._check_mutable()
        node = canonicalize_entity(raw)
        self.nodes.add(node)
        self.out_index.setdefault(node, [])
        return node

    def add_document(self, doc_id: str, text: str) -> None:
        self._check_mutable()
        self.documents[doc_id] = text

    def _insert(self, edge: EdgeRecord) -> str:
        existing = self.edges.get(edge.id)
        if existing is not None:
            merged = existing.with_snippets(edge.snippets)
            links = [i for i in (merged.inverse_of, edge.inverse_of) if i is not None]
            if links:
                # several forward edges can share one inverse; keep the smallest id for order independence
                merged = replace(merged, inverse_of=min(links))
            self.edges[edge.id] = merged
            return edge.id
        self.add_node(edge.source)
        self.add_node(edge.target)
        self.edges[edge.id] = edge
        bisect.insort(self.out_index[edge.source], edge.id)
        return edge.id

    def add_tuple(self, edge: EdgeRecord, materialize_inverse: bool = False,
                  inverse_relation: str | None = None) -> list[str]:
        """Insert ``edge`` (merging snippets into an identical edge if present).

        With ``materialize_inverse`` and an ``inverse_relation``, the reverse
        edge is inserted as well, linked through ``inverse_of``. Returns the
        ids of the forward edge and, if inserted, the inverse edge.
        """
        self._check_mutable()
        ids = [self._insert(edge)]
        if materialize_inverse and inverse_relation:
            ids.append(self._insert(self.edges[ids[0]].inverse(inverse_relation)))
        return ids

    # -- queries ------------------------------------------------------------

    def out_edges(self, node: EntityId) -> list[EdgeRecord]:
        return [self.edges[i] for i in self.out_index.get(node, ())]

    def iter_edges(self) -> Iterator[EdgeRecord]:
        for key in sorted(self.edges):
            yield self.edges[key]

    def unique_conditions(self) -> set[ConditionLabel]:
        return unique_conditions(self)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, KnowledgeGraph):
            return NotImplemented
        return (self.nodes == other.nodes and self.edges == other.edges
                and self.documents == other.documents)

    def __repr__(self) -> str:
        return f"KnowledgeGraph(nodes={len(self.nodes)}, edges={len(self.edges)}, documents={len(self.documents)})"


def add_tuple(graph: KnowledgeGraph, edge: EdgeRecord, materialize_inverse: bool = False,
              inverse_relation: str | None = None) -> list[str]:
    return graph.add_tuple(edge, materialize_inverse, inverse_relation)


def unique_conditions(graph: KnowledgeGraph) -> set[ConditionLabel]:
    return {c for e in graph.edges.values() for c in e.conditions}


# -- persistence ---------------------------------------------------------------

def _dump(record: dict) -> str:
    return json.dumps(record, ensure_ascii=False, separators=(",", ":"))


def iter_graph_records(graph: KnowledgeGraph) -> Iterator[dict]:
    for doc_id in sorted(graph.documents):
        yield {"kind": "doc", "doc_id": doc_id, "text": graph.documents[doc_id]}
    for node in sorted(graph.nodes):
        yield {"kind": "node", "id": node}
    for edge in graph.iter_edges():
        yield edge.to_json()


def save_graph(graph: KnowledgeGraph, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for record in iter_graph_records(graph):
            fh.write(_dump(record))
            fh.write("\n")


def _snippet_from_json(obj: dict) -> EvidenceSnippet:
    span = obj.get("span")
    return EvidenceSnippet(obj["doc_id"], obj["text"], tuple(span) if span is not None else None)


def edge_from_json(obj: dict) -> EdgeRecord:
    return EdgeRecord(
        obj["source"], obj["relation"], obj["target"],
        tuple(ConditionLabel.parse(c) for c in obj["conditions"]),
        tuple(_snippet_from_json(s) for s in obj["snippets"]),
        inverse_of=obj.get("inverse_of"),
        id=obj["id"],
    )


def load_graph(path: str | Path) -> KnowledgeGraph:
    """Read a graph written by :func:`save_graph`.

    Raises FormatError carrying the 1-based line number of the first bad record.
    """
    graph = KnowledgeGraph()
    edge_lines: dict[str, int] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                kind = obj["kind"]
                if kind == "node":
                    graph.add_node(obj["id"])
                elif kind == "doc":
                    graph.add_document(obj["doc_id"], obj["text"])
                elif kind == "edge":
                    edge = edge_from_json(obj)
                    graph._insert(edge)
                    edge_lines[edge.id] = lineno
                else:
                    raise ValueError(f"unknown record kind {kind!r}")
            except (ValueError, KeyError, TypeError) as exc:
                raise FormatError(str(exc) or type(exc).__name__, line=lineno) from exc
    for eid, edge in graph.edges.items():
        for snip in edge.snippets:
            doc = graph.documents.get(snip.doc_id)
            if snip.char_span is not None and doc is not None:
                start, end = snip.char_span
                if doc[start:end] != snip.text:
                    raise FormatError(f"snippet span {snip.char_span} does not match document "
                                      f"{snip.doc_id!r}", line=edge_lines[eid])
    return graph
