from __future__ import annotations

import json
import re

import pytest
from hypothesis import given
from hypothesis import strategies as st

from gatedkg.errors import EmptyEntity, ProviderError
from gatedkg.extraction import (ChatTupleExtractor, DocumentChunk, ExtractionStats, RawTuple, RuleBasedExtractor,
                                SynonymDictionary, build_graph, chunk_document, extract_corpus, extract_tuples,
                                normalize_tuple, read_corpus, rule_based_extract)
from gatedkg.kg import ConditionLabel


def triples(tuples):
    return {(t.entity1.lower(), t.relation, t.entity2.lower(), tuple(c.lower() for c in t.conditions))
            for t in tuples}


def loose(text: str) -> str:
    """Word-wise singular form, for comparing against hand-written tuples."""
    return " ".join(re.sub(r"(?<=[a-z])s$", "", w) for w in text.lower().split())


# -- chunking --------------------------------------------------------------------------

def test_short_text_is_one_chunk():
    text = "x" * 99 + "."
    (chunk,) = chunk_document("d", text, 1500)
    assert chunk.text == text and chunk.char_offset == 0


def test_long_text_partitions_on_sentence_boundaries():
    text = " ".join(f"Sentence {i:02d} talks about drugs for hypertension in adults and children alike here."
                    + " Padding words follow to lengthen it." for i in range(30))
    assert 2900 <= len(text) <= 3600
    chunks = chunk_document("d", text, 1500)
    assert 2 <= len(chunks) <= 3
    assert "".join(c.text for c in chunks) == text
    assert all(len(c.text) <= 1500 for c in chunks)
    for prev, nxt in zip(chunks, chunks[1:]):
        assert nxt.char_offset == prev.char_offset + len(prev.text)
        assert prev.text.endswith(". ")


def test_hard_cut_without_boundaries():
    chunks = chunk_document("d", "a" * 1000, 300)
    assert [len(c.text) for c in chunks] == [300, 300, 300, 100]


def test_empty_text_and_limit_check():
    assert chunk_document("d", "", 1500) == []
    with pytest.raises(ValueError):
        chunk_document("d", "text", 199)


@given(st.text(alphabet="ab .?!\n", max_size=1200), st.integers(min_value=200, max_value=600))
def test_chunks_partition_any_text(text, limit):
    chunks = chunk_document("d", text, limit)
    assert "".join(c.text for c in chunks) == text
    assert all(0 < len(c.text) <= limit for c in chunks)
    assert [c.chunk_index for c in chunks] == list(range(len(chunks)))


# -- rule grammar ----------------------------------------------------------------------

def test_contraindicated_during_pregnancy():
    assert triples(rule_based_extract("Doxycycline is contraindicated during pregnancy.")) == {
        ("doxycycline", "contraindicated_in", "pregnancy", ())}


def test_preferred_in_pediatric_patients():
    got = triples(rule_based_extract(
        "In pediatric patients, ultrasound is the preferred first-line imaging modality."))
    assert ("ultrasound", "preferred_in", "first-line imaging modality", ("pediatric patients",)) in got


def test_misoprostol_increases_in_pregnancy():
    got = triples(rule_based_extract("Misoprostol increases uterine tone and contractions in pregnancy."))
    assert got == {("misoprostol", "increases", "uterine tone and contractions", ("pregnancy",))}


def test_passive_conjunction_is_split():
    got = rule_based_extract("L-type and T-type calcium channels are blocked by Compound 99 in cardiomyocytes.")
    assert triples(got) == {
        ("l-type calcium channels", "blocked_by", "compound 99", ("cardiomyocytes",)),
        ("t-type calcium channels", "blocked_by", "compound 99", ("cardiomyocytes",)),
    }
    assert all(t.inverse_relation == "blocks" for t in got)


def test_no_relation_sentence():
    assert rule_based_extract("The sky is blue.") == []


@pytest.mark.parametrize("sentence,expected", [
    ("Aspirin treats headache.", ("aspirin", "treats", "headache", ())),
    ("Hypertension is treated with amlodipine.", ("hypertension", "treated_with", "amlodipine", ())),
    ("Smoking causes lung cancer.", ("smoking", "causes", "lung cancer", ())),
    ("Obesity is associated with diabetes in adults.", ("obesity", "associated_with", "diabetes", ("adults",))),
    ("Statins reduce cholesterol.", ("statins", "reduces", "cholesterol", ())),
    ("Amoxicillin is recommended for otitis media in children.",
     ("amoxicillin", "recommended_for", "otitis media", ("children",))),
])
def test_frame_table(sentence, expected):
    assert expected in triples(rule_based_extract(sentence))


def test_misoprostol_and_hiv_documents(fixtures):
    miso = triples(rule_based_extract((fixtures / "corpus_clinical" / "misoprostol.txt").read_text()))
    assert {
        ("misoprostol", "contraindicated_in", "wanted pregnancies", ("pregnant women",)),
        ("misoprostol", "increases", "uterine tone and contractions", ("pregnancy",)),
    } <= miso
    rels = {(e1, r, loose(e2)) for e1, r, e2, _ in miso}
    assert ("misoprostol", "causes", "partial or complete abortion") in rels
    assert ("misoprostol", "associated_with", "birth defect") in rels
    hiv = rule_based_extract((fixtures / "corpus_clinical" / "hiv.txt").read_text())
    who = [(loose(t.entity2), t.conditions) for t in hiv if t.entity1 == "WHO" and t.relation == "recommends"]
    assert who == [("pi-based regimen", ("children < 3 years",))]


def test_clinical_corpus_yields_at_least_twelve_tuples(fixtures):
    tuples = extract_corpus(read_corpus(fixtures / "corpus_clinical"), RuleBasedExtractor())
    assert len(tuples) >= 12
    assert sum(t.entity1.lower() == "misoprostol" for t in tuples) == 4
    graph = build_graph(tuples)
    assert {"pregnancy", "children < 3 years"} <= {c.text for c in graph.unique_conditions()}


@given(st.text(max_size=300))
def test_rule_extraction_is_deterministic(text):
    assert rule_based_extract(text) == rule_based_extract(text)


# -- extractor plumbing ----------------------------------------------------------------

class FakeClient:
    def __init__(self, content=None, error=None):
        self.content = content
        self.error = error
        self.calls = []

    def chat(self, messages):
        self.calls.append(messages)
        if self.error:
            raise self.error
        return self.content


def test_chat_extractor_drops_bad_records():
    payload = json.dumps([
        {"entity1": "Aspirin", "relation": "treats", "inverse_relation": "treated_by", "entity2": "Headache",
         "conditions": ["in adults"]},
        {"entity1": "", "relation": "treats", "entity2": "x", "conditions": []},
        {"entity1": "a", "relation": "r", "entity2": "b", "conditions": "not a list"},
    ])
    client = FakeClient("Here you go:\n" + payload)
    chunk = DocumentChunk("doc", 0, "Aspirin treats headache in adults.", 0)
    stats = ExtractionStats()
    out = extract_tuples(chunk, ChatTupleExtractor(client), stats)
    assert [(t.entity1, t.entity2, t.conditions) for t in out] == [("Aspirin", "Headache", ("in adults",))]
    assert out[0].provenance == ("doc", 0)
    assert out[0].snippet == "Aspirin treats headache in adults."
    assert stats.dropped == 2
    assert "Aspirin treats headache in adults." in client.calls[0][1][1]


def test_provider_failure_goes_to_ledger():
    client = FakeClient(error=ProviderError("exhausted", "down"))
    stats = ExtractionStats()
    out = extract_corpus({"d1": "Aspirin treats headache."}, ChatTupleExtractor(client), stats=stats)
    assert out == []
    assert stats.failures == [{"doc_id": "d1", "chunk_index": 0, "error": "[exhausted] down"}]


def test_unparseable_provider_output_goes_to_ledger():
    stats = ExtractionStats()
    extract_corpus({"d1": "Aspirin treats headache."}, ChatTupleExtractor(FakeClient("no json here")), stats=stats)
    assert len(stats.failures) == 1


def test_provenance_completeness(fixtures):
    docs = read_corpus(fixtures / "corpus_clinical")
    tuples = extract_corpus(docs, RuleBasedExtractor(), jobs=4)
    graph = build_graph(tuples, documents=docs, materialize_inverse=False)
    for t in tuples:
        edge = normalize_tuple(t)
        assert any(s.doc_id == t.provenance[0] for s in graph.edges[edge.id].snippets)
    for edge in graph.edges.values():
        for s in edge.snippets:
            start, end = s.char_span
            assert graph.documents[s.doc_id][start:end] == s.text


def test_parallel_extraction_matches_serial(fixtures):
    docs = read_corpus(fixtures / "corpus_clinical")
    assert extract_corpus(docs, RuleBasedExtractor(), jobs=4) == extract_corpus(docs, RuleBasedExtractor(), jobs=1)


# -- normalization ---------------------------------------------------------------------

def test_normalize_with_synonyms():
    d = SynonymDictionary({"heart attack": "myocardial infarction"})
    edge = normalize_tuple(RawTuple("Aspirin", "treats", "heart attack"), d)
    assert (edge.source, edge.relation, edge.target) == ("aspirin", "treats", "myocardial infarction")


def test_normalize_lifts_negation_and_keeps_unknown_entities():
    edge = normalize_tuple(RawTuple("Hypertension", "Treated By", "amlodipine", ("¬BRAS",)), SynonymDictionary())
    assert edge.conditions == (ConditionLabel("bras", True),)
    assert edge.relation == "treated_by"
    assert edge.target == "amlodipine"


def test_normalize_rejects_empty_entities():
    with pytest.raises(ValueError):
        RawTuple(" ", "treats", "x")
    with pytest.raises(EmptyEntity):
        normalize_tuple(RawTuple("x", "???", "y"))


@given(st.sampled_from(["Heart Attack", "aspirin", "MI", "Myocardial  infarction"]),
       st.lists(st.sampled_from(["¬BRAS", "in adults", "not:pregnancy", "without gout"]), max_size=3))
def test_normalization_idempotent(entity, conds):
    d = SynonymDictionary({"heart attack": "myocardial infarction", "mi": "myocardial infarction"})
    first = normalize_tuple(RawTuple(entity, "Treats", "headache", tuple(conds)), d)
    again = normalize_tuple(RawTuple(first.source, first.relation, first.target,
                                     tuple(c.serialize() for c in first.conditions)), d)
    assert again == first


def test_synonym_dictionary_is_functional(tmp_path):
    d = SynonymDictionary({"heart attack": "myocardial infarction"})
    assert d.lookup("myocardial infarction") == "myocardial infarction"
    with pytest.raises(ValueError):
        d.add("heart attack", "angina")
    with pytest.raises(ValueError):
        d.add("myocardial infarction", "mi")
    path = tmp_path / "syn.tsv"
    path.write_text("# comment\nHeart Attack\tMyocardial Infarction\nMI\tmyocardial infarction\n")
    loaded = SynonymDictionary.from_tsv(path)
    assert loaded.lookup("mi") == loaded.lookup("heart attack") == "myocardial infarction"
    path.write_text("no tab here\n")
    with pytest.raises(ValueError):
        SynonymDictionary.from_tsv(path)
