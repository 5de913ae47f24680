"""Evidence packaging, answer prompt rendering and answer generation."""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from typing import Protocol, Sequence

from .errors import DanglingSnippet, EmptyEntity, ProviderError, SchemaError
from .kg import ConditionLabel, EntityId, EvidenceSnippet, KnowledgeGraph, canonicalize_entity
from .prompts import ANSWER_INSTRUCTIONS, ANSWER_SYSTEM, ANSWER_TEMPLATE, render
from .query import ParsedQuery
from .ranking import ScoredPath

log = logging.getLogger(__name__)

INSUFFICIENT = "insufficient evidence"


@dataclass(frozen=True)
class EvidenceEdge:
    source: EntityId
    relation: str
    target: EntityId
    conditions: tuple[ConditionLabel, ...]


@dataclass(frozen=True)
class EvidencePath:
    rank: int
    score: float
    linearization: str
    nodes: tuple[EntityId, ...]
    edges: tuple[EvidenceEdge, ...]
    snippets: tuple[EvidenceSnippet, ...]
    conditions: tuple[ConditionLabel, ...]


@dataclass(frozen=True)
class EvidencePackage:
    paths: tuple[EvidencePath, ...]
    query_fingerprint: str = ""

    @property
    def nodes(self) -> set[EntityId]:
        return {n for p in self.paths for n in p.nodes}

    def __bool__(self) -> bool:
        return bool(self.paths)


@dataclass(frozen=True)
class AnswerResult:
    answer: str
    reasoning: str = ""
    used_paths: tuple[dict, ...] = ()
    degraded: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not self.answer.strip():
            object.__setattr__(self, "answer", INSUFFICIENT)

    def to_json(self, question: str) -> dict:
        return {"question": question, "answer": self.answer, "reasoning": self.reasoning,
                "paths": [dict(p) for p in self.used_paths], "degraded": list(self.degraded)}


def assemble_evidence(scored: Sequence[ScoredPath], graph: KnowledgeGraph,
                      query: ParsedQuery | None = None) -> EvidencePackage:
    """Per-path bundles of nodes, edges, snippets and conditions, in rank order."""
    out = []
    for rank, sp in enumerate(scored, start=1):
        edges = []
        snippets: list[EvidenceSnippet] = []
        seen: set[tuple[str, str]] = set()
        for eid in sp.path.edges:
            edge = graph.edges[eid]
            edges.append(EvidenceEdge(edge.source, edge.relation, edge.target, edge.conditions))
            for snip in edge.snippets:
                if snip.doc_id not in graph.documents:
                    raise DanglingSnippet(f"snippet cites unknown document {snip.doc_id!r}")
                if snip.key not in seen:
                    seen.add(snip.key)
                    snippets.append(snip)
        out.append(EvidencePath(rank, sp.score, sp.linearization, sp.path.nodes, tuple(edges), tuple(snippets),
                                sp.path.conditions_along))
    return EvidencePackage(tuple(out), query.fingerprint if query is not None else "")


def render_paths(package: EvidencePackage) -> str:
    lines = []
    for p in package.paths:
        line = f"{p.rank}. {p.linearization}"
        if p.conditions:
            line += " [conditions: " + ", ".join(str(c) for c in p.conditions) + "]"
        lines.append(line)
    return "\n".join(lines) if lines else "(none)"


def render_evidence(package: EvidencePackage) -> str:
    blocks = []
    for p in package.paths:
        lines = [f"Path {p.rank}:"]
        lines.extend(f"- [{s.doc_id}] {s.text}" for s in p.snippets)
        if not p.snippets:
            lines.append("- (no snippets)")
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks) if blocks else "(none)"


def build_prompt(query: ParsedQuery | str, package: EvidencePackage, template: str = ANSWER_TEMPLATE,
                 instructions: str = ANSWER_INSTRUCTIONS) -> str:
    question = query.raw if isinstance(query, ParsedQuery) else query
    return render(template, {"question": question, "paths": render_paths(package),
                             "evidence": render_evidence(package), "instructions": instructions},
                  required={"question", "paths", "evidence", "instructions"})


def _used(package: EvidencePackage) -> tuple[dict, ...]:
    return tuple({"rank": p.rank, "linearization": p.linearization, "score": p.score} for p in package.paths)


class AnswerGenerator(Protocol):
    def generate(self, prompt: str, package: EvidencePackage) -> AnswerResult: ...


class OfflineAnswerGenerator:
    """Answer with the terminal node of the rank-1 path."""

    remote = False

    def generate(self, prompt: str, package: EvidencePackage) -> AnswerResult:
        if not package.paths:
            return AnswerResult(INSUFFICIENT)
        top = package.paths[0]
        return AnswerResult(top.nodes[-1], top.linearization, _used(package))


_SECTION = re.compile(r"^\s*(REASONING|ANSWER)\s*:\s*", re.I | re.M)


def parse_sections(content: str) -> tuple[str, str]:
    """Split ``REASONING: ... ANSWER: ...`` output. Raises SchemaError without ANSWER."""
    marks = list(_SECTION.finditer(content))
    sections: dict[str, str] = {}
    for i, m in enumerate(marks):
        end = marks[i + 1].start() if i + 1 < len(marks) else len(content)
        sections[m.group(1).upper()] = content[m.end():end].strip()
    if not sections.get("ANSWER"):
        raise SchemaError("generator output has no ANSWER section")
    return sections.get("REASONING", ""), sections["ANSWER"]


class ChatAnswerGenerator:
    remote = True

    def __init__(self, client, system_prompt: str = ANSWER_SYSTEM) -> None:
        self.client = client
        self.system_prompt = system_prompt

    def generate(self, prompt: str, package: EvidencePackage) -> AnswerResult:
        content = self.client.chat([("system", self.system_prompt), ("user", prompt)])
        reasoning, answer = parse_sections(content)
        answer = answer.splitlines()[0].strip().rstrip(".")
        try:
            answer = canonicalize_entity(answer)
        except EmptyEntity as exc:
            raise SchemaError("empty ANSWER section") from exc
        flags = () if answer in package.nodes or answer == INSUFFICIENT else ("ungrounded answer",)
        return AnswerResult(answer, reasoning, _used(package), flags)


def generate_answer(prompt: str, generator: AnswerGenerator | None, package: EvidencePackage) -> AnswerResult:
    """Run ``generator``; provider or format failures fall back to the offline answer."""
    offline = OfflineAnswerGenerator()
    if not package.paths:
        return AnswerResult(INSUFFICIENT)
    if generator is None:
        return offline.generate(prompt, package)
    try:
        return generator.generate(prompt, package)
    except (ProviderError, SchemaError) as exc:
        log.warning("answer generation failed (%s); using top path", exc)
        base = offline.generate(prompt, package)
        return AnswerResult(base.answer, base.reasoning, base.used_paths,
                            base.degraded + (f"generator: {type(exc).__name__}: {exc}",))
