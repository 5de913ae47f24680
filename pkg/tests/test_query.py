from __future__ import annotations

import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from gatedkg.errors import EmptyQuery, ProviderError
from gatedkg.kg import ConditionLabel, canonicalize_entity
from gatedkg.query import ChatQueryParser, OfflineQueryParser, ParsedQuery, parse_query


def texts(labels):
    return {l.serialize() for l in labels}


def test_parse_gene_question_with_excluded_adults():
    q = parse_query("Which gene causes cardiomyopathy in pediatric patients but not in adults?")
    assert {"gene", "cardiomyopathy", "causes"} <= set(q.keywords)
    assert "pediatric" in " ".join(texts(q.required_conditions))
    assert "in adults" in texts(q.excluded_conditions)
    assert q.negated_entities == ()


def test_parse_drug_question_with_negated_class():
    q = parse_query("What drug treats hypertension in pregnant women, excluding ACE inhibitors?")
    assert {"drug", "hypertension", "treats"} <= set(q.keywords)
    assert "in pregnancy" in texts(q.required_conditions)
    assert q.negated_entities == ("ace inhibitors",)
    assert "ace" not in q.keywords and "inhibitors" not in q.keywords


def test_bare_question():
    q = parse_query("What is aspirin?")
    assert q.keywords == ("aspirin",)
    assert q.required_conditions == q.excluded_conditions == q.negated_entities == ()


@pytest.mark.parametrize("question,negated", [
    ("Which antibiotic treats tuberculosis other than rifampin?", "rifampin"),
    ("Which drug lowers blood pressure but not lisinopril?", "lisinopril"),
    ("What treats migraine, distinct from triptans?", "triptans"),
])
def test_negation_cues(question, negated):
    q = parse_query(question)
    assert negated in q.negated_entities
    assert negated not in q.keywords


def test_age_phrase_is_a_required_condition():
    q = parse_query("What antibiotic is safe for a 5-year-old boy with pneumonia and no known allergies?")
    assert q.required_conditions
    assert "pneumonia" in q.keywords


def test_empty_question():
    with pytest.raises(EmptyQuery):
        parse_query("   ")


def test_to_json_shape():
    q = parse_query("What is aspirin?")
    assert set(q.to_json()) >= {"raw", "keywords", "required", "excluded", "negated", "target_entity", "target_type"}


def test_disjointness_drops_from_required():
    label = ConditionLabel("in adults")
    q = ParsedQuery("q", ("x",), (label,), (label,))
    assert q.required_conditions == () and q.excluded_conditions == (label,)


class FakeClient:
    def __init__(self, content=None, error=None):
        self.content, self.error = content, error

    def chat(self, messages):
        if self.error:
            raise self.error
        return self.content


REMOTE = {
    "target_type": "drug", "target_entity": None, "positive_attributes": ["hypertension", "treats"],
    "negated_entities": ["ACE inhibitors"], "required_conditions": ["in pregnancy", "pregnant women"],
    "excluded_conditions": [],
}


def test_remote_parser_maps_schema():
    q = parse_query("What drug treats hypertension in pregnant women, excluding ACE inhibitors?",
                    ChatQueryParser(FakeClient(json.dumps(REMOTE))))
    assert q.keywords == ("drug", "hypertension", "treats")
    assert q.negated_entities == ("ace inhibitors",)
    assert texts(q.required_conditions) == {"in pregnancy", "pregnant women"}
    assert q.fallback is None


@pytest.mark.parametrize("client", [
    FakeClient(json.dumps({k: v for k, v in REMOTE.items() if k != "negated_entities"})),
    FakeClient("not json"),
    FakeClient(error=ProviderError("exhausted", "down")),
])
def test_remote_failures_fall_back_to_offline(client):
    question = "What drug treats hypertension in pregnant women, excluding ACE inhibitors?"
    q = parse_query(question, ChatQueryParser(client))
    offline = OfflineQueryParser().parse(question)
    assert q.fallback
    assert (q.keywords, q.required_conditions, q.negated_entities) == \
        (offline.keywords, offline.required_conditions, offline.negated_entities)


words = st.sampled_from(["which", "but not adults", "drug", "treats", "hypertension", "in", "children", "but",
                         "not", "adults", "excluding", "aspirin", "with", "gout", "during", "pregnancy", "other", "than", "the",
                         "68-year-old", "patient", "for", "elderly", ","])


@given(st.lists(words, min_size=1, max_size=14))
def test_offline_parse_properties(ws):
    question = " ".join(ws) + "?"
    q1, q2 = parse_query(question), parse_query(question)
    assert q1 == q2
    negated_words = {t for n in q1.negated_entities for t in n.split()}
    if any(w.isalpha() and w not in negated_words for w in " ".join(ws).split()):
        assert q1.keywords
    assert not set(q1.required_conditions) & set(q1.excluded_conditions)
    for n in q1.negated_entities:
        assert n == canonicalize_entity(n)
        assert n not in q1.keywords
    for label in q1.required_conditions + q1.excluded_conditions:
        assert ConditionLabel.parse(label.serialize()) == label
