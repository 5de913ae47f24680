"""End-to-end question answering over one graph."""

from __future__ import annotations

from dataclasses import dataclass, field

from .answer import INSUFFICIENT, AnswerGenerator, AnswerResult, EvidencePackage, assemble_evidence, build_prompt, generate_answer
from .errors import NoEntryNodes
from .gating import ConditionEvaluator, ConditionVerdictTable, VerdictCache, evaluate_conditions
from .kg import KnowledgeGraph, unique_conditions
from .providers import EmbeddingProvider, HashEmbedder
from .query import ParsedQuery, QueryParser, parse_query
from .ranking import RankingConfig, ScoredPath, rank_and_select
from .traversal import NodeIndex, TraversalConfig, TraversalResult, gated_bfs, select_entry_nodes


@dataclass(frozen=True)
class PipelineConfig:
    traversal: TraversalConfig = TraversalConfig()
    ranking: RankingConfig = RankingConfig()
    gating: bool = True


@dataclass
class Providers:
    """One implementation per model-dependent role; None means the offline rules."""

    parser: QueryParser | None = None
    evaluator: ConditionEvaluator | None = None
    embedder: EmbeddingProvider = field(default_factory=HashEmbedder)
    generator: AnswerGenerator | None = None


@dataclass
class PipelineOutput:
    parsed: ParsedQuery
    table: ConditionVerdictTable
    entries: list[tuple[str, float]]
    traversal: TraversalResult
    ranked: list[ScoredPath]
    package: EvidencePackage
    prompt: str | None
    result: AnswerResult


def answer_question(graph: KnowledgeGraph, question: str, config: PipelineConfig = PipelineConfig(),
                    providers: Providers | None = None, cache: VerdictCache | None = None,
                    index: NodeIndex | None = None) -> PipelineOutput:
    """parse -> evaluate conditions -> select entries -> gated BFS -> rank -> answer."""
    providers = providers or Providers()
    parsed = parse_query(question, providers.parser)
    conditions = unique_conditions(graph)
    if config.gating:
        table = evaluate_conditions(parsed, conditions, providers.evaluator, cache)
    else:
        table = ConditionVerdictTable.all_null(conditions, parsed.fingerprint)
    degraded = [d for d in (parsed.fallback,) if d] + list(table.degraded)
    try:
        entries = select_entry_nodes(parsed, graph, providers.embedder, config.traversal, index)
    except NoEntryNodes:
        entries = []
    traversal = gated_bfs(graph, [n for n, _ in entries], table, config.traversal) if entries else TraversalResult()
    if traversal.truncated:
        degraded.append("traversal truncated")
    ranked = rank_and_select(traversal, parsed, graph, providers.embedder, config.ranking)
    package = assemble_evidence(ranked, graph, parsed)
    prompt = build_prompt(parsed, package) if ranked else None
    if prompt is None:
        result = AnswerResult(INSUFFICIENT)
    else:
        result = generate_answer(prompt, providers.generator, package)
    if degraded:
        result = AnswerResult(result.answer, result.reasoning, result.used_paths, tuple(degraded) + result.degraded)
    return PipelineOutput(parsed, table, entries, traversal, ranked, package, prompt, result)
