from __future__ import annotations

import pytest

from conftest import BRAS_QUESTION, FIXTURES
from gatedkg.answer import (INSUFFICIENT, AnswerResult, ChatAnswerGenerator, EvidencePackage, OfflineAnswerGenerator,
                            assemble_evidence, build_prompt, generate_answer, parse_sections)
from gatedkg.errors import DanglingSnippet, ProviderError, SchemaError, TemplateError
from gatedkg.gating import ConditionVerdictTable
from gatedkg.kg import EdgeRecord, EvidenceSnippet, KnowledgeGraph
from gatedkg.pipeline import PipelineConfig, answer_question
from gatedkg.providers import HashEmbedder
from gatedkg.query import ParsedQuery
from gatedkg.ranking import RankingConfig, rank_and_select
from gatedkg.traversal import gated_bfs


def package_for(graph, keywords=("hypertension",), k=3, entries=("hypertension",)):
    q = ParsedQuery("q?", keywords)
    paths = gated_bfs(graph, list(entries), ConditionVerdictTable())
    scored = rank_and_select(paths, q, graph, HashEmbedder(), RankingConfig(k))
    return q, scored, assemble_evidence(scored, graph, q)


def test_single_edge_single_snippet():
    g = KnowledgeGraph()
    g.add_document("d", "Aspirin treats headache.")
    g.add_tuple(EdgeRecord("aspirin", "treats", "headache", (), (EvidenceSnippet("d", "Aspirin treats headache."),)))
    _, _, pkg = package_for(g.freeze(), ("aspirin",), entries=("aspirin",))
    assert len(pkg.paths) == 1 and len(pkg.paths[0].snippets) == 1


def test_shared_edge_snippet_appears_in_both_paths():
    g = KnowledgeGraph()
    g.add_document("d", "a to b. b to c. b to e.")
    for s, t, text in [("a", "b", "a to b."), ("b", "c", "b to c."), ("b", "e", "b to e.")]:
        g.add_tuple(EdgeRecord(s, "r", t, (), (EvidenceSnippet("d", text),)))
    _, _, pkg = package_for(g.freeze(), ("a",), entries=("a",))
    assert len(pkg.paths) == 2
    assert all(any(s.text == "a to b." for s in p.snippets) for p in pkg.paths)


def test_bras_top_path_has_no_conditions(bras_graph):
    out = answer_question(bras_graph, BRAS_QUESTION)
    top = out.package.paths[0]
    assert top.nodes[-1] == "amlodipine" and top.conditions == ()


def test_dangling_snippet():
    g = KnowledgeGraph()
    g.add_tuple(EdgeRecord("a", "r", "b", (), (EvidenceSnippet("missing", "text"),)))
    with pytest.raises(DanglingSnippet):
        package_for(g.freeze(), ("a",), entries=("a",))


@pytest.mark.parametrize("gating,golden", [(True, "golden_prompt_bras.txt"),
                                           (False, "golden_prompt_bras_ungated.txt")])
def test_prompt_matches_golden_file(bras_graph, gating, golden):
    out = answer_question(bras_graph, BRAS_QUESTION, PipelineConfig(gating=gating))
    assert out.prompt == (FIXTURES / golden).read_text()


def test_prompt_contains_every_linearization(bras_graph):
    out = answer_question(bras_graph, BRAS_QUESTION, PipelineConfig(gating=False))
    assert out.ranked
    assert all(s.linearization in out.prompt for s in out.ranked)


def test_empty_conditions_have_no_qualifier(bras_graph):
    q, _, pkg = package_for(bras_graph, ("amlodipine",), k=1)
    prompt = build_prompt(q, pkg)
    assert "1. hypertension -[treated_by]-> amlodipine\n" in prompt


def test_template_errors(bras_graph):
    q, _, pkg = package_for(bras_graph)
    with pytest.raises(TemplateError):
        build_prompt(q, pkg, template="{{paths}} {{evidence}} {{instructions}}")
    with pytest.raises(TemplateError):
        build_prompt(q, pkg, template="{{question}} {{paths}} {{evidence}} {{instructions}} {{extra}}")


def test_offline_answer_and_empty_package(bras_graph):
    assert answer_question(bras_graph, BRAS_QUESTION).result.answer == "amlodipine"
    assert generate_answer("p", None, EvidencePackage(())).answer == INSUFFICIENT
    assert OfflineAnswerGenerator().generate("p", EvidencePackage(())).answer == INSUFFICIENT
    assert AnswerResult("  ").answer == INSUFFICIENT


def test_no_entry_nodes_gives_insufficient_evidence(bras_graph):
    out = answer_question(bras_graph, "Which zebra eats quinoa?")
    assert out.result.answer == INSUFFICIENT and out.prompt is None


class FakeClient:
    def __init__(self, content=None, error=None):
        self.content, self.error = content, error

    def chat(self, messages):
        if self.error:
            raise self.error
        return self.content


def test_remote_sections_are_parsed(bras_graph):
    _, _, pkg = package_for(bras_graph)
    res = generate_answer("p", ChatAnswerGenerator(FakeClient("REASONING: imaging [d1].\nANSWER: Ultrasound")), pkg)
    assert res.answer == "ultrasound" and res.reasoning == "imaging [d1]."
    assert res.degraded == ("ungrounded answer",)
    grounded = generate_answer("p", ChatAnswerGenerator(FakeClient("ANSWER: Amlodipine.")), pkg)
    assert grounded.answer == "amlodipine" and grounded.degraded == ()


@pytest.mark.parametrize("client", [FakeClient("REASONING: no answer here"), FakeClient("ANSWER:   "),
                                    FakeClient(error=ProviderError("exhausted", "down"))])
def test_remote_failure_falls_back_to_top_path(bras_graph, client):
    _, scored, pkg = package_for(bras_graph)
    res = generate_answer("p", ChatAnswerGenerator(client), pkg)
    assert res.answer == scored[0].path.terminal
    assert res.degraded


def test_parse_sections_requires_answer():
    assert parse_sections("reasoning: a\nanswer: b") == ("a", "b")
    with pytest.raises(SchemaError):
        parse_sections("nothing")


def test_offline_runs_are_byte_identical(bras_graph):
    a = answer_question(bras_graph, BRAS_QUESTION).result.to_json(BRAS_QUESTION)
    b = answer_question(bras_graph, BRAS_QUESTION).result.to_json(BRAS_QUESTION)
    assert a == b
    assert set(a) == {"question", "answer", "reasoning", "paths", "degraded"}
    assert a["answer"] in {n for p in answer_question(bras_graph, BRAS_QUESTION).ranked for n in p.path.nodes}
