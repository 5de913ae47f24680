"""Turn documents into condition-aware tuples and normalize them into edges.

The offline extractor is a small pattern grammar over sentences: it finds a
verb frame ("treated with", "contraindicated in", ...), takes the noun
phrases on either side, and lifts prepositional qualifiers ("in children",
"during pregnancy") into the tuple's condition list. The remote extractor
sends each chunk to a chat model with the extraction prompt.
"""

from __future__ import annotations

import json
import logging
import re
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Protocol, Sequence

from .errors import EmptyEntity, ProviderError, SchemaError
from .kg import (ConditionLabel, EdgeRecord, EntityId, EvidenceSnippet, KnowledgeGraph,
                 canonicalize_entity, canonicalize_relation)
from .prompts import EXTRACTION_SYSTEM, EXTRACTION_USER, render

log = logging.getLogger(__name__)

DEFAULT_MAX_CHUNK_CHARS = 1500
MIN_CHUNK_CHARS = 200
_BOUNDARIES = (". ", "? ", "! ", "\n")


# -- chunking -----------------------------------------------------------------

@dataclass(frozen=True)
class DocumentChunk:
    doc_id: str
    chunk_index: int
    text: str
    char_offset: int


def chunk_document(doc_id: str, text: str, max_chunk_chars: int = DEFAULT_MAX_CHUNK_CHARS) -> list[DocumentChunk]:
    """Split ``text`` into contiguous chunks of at most ``max_chunk_chars``.

    Cuts fall just after the last sentence boundary inside the window, or at
    the window edge when there is none. Concatenating the chunks gives back
    ``text`` exactly.
    """
    if max_chunk_chars < MIN_CHUNK_CHARS:
        raise ValueError(f"max_chunk_chars must be >= {MIN_CHUNK_CHARS}")
    chunks: list[DocumentChunk] = []
    pos = 0
    while pos < len(text):
        if len(text) - pos <= max_chunk_chars:
            cut = len(text)
        else:
            window = text[pos:pos + max_chunk_chars]
            best = max((window.rfind(b) + len(b) if window.rfind(b) >= 0 else -1) for b in _BOUNDARIES)
            cut = pos + best if best > 0 else pos + max_chunk_chars
        chunks.append(DocumentChunk(doc_id, len(chunks), text[pos:cut], pos))
        pos = cut
    return chunks


_SENTENCE_END = re.compile(r"(?<=[.!?])\s+|\n+")


def split_sentences(text: str) -> list[tuple[int, int]]:
    """Character spans of the sentences in ``text``, whitespace trimmed."""
    spans = []
    start = 0
    for m in _SENTENCE_END.finditer(text):
        spans.append((start, m.start()))
        start = m.end()
    spans.append((start, len(text)))
    out = []
    for s, e in spans:
        while s < e and text[s].isspace():
            s += 1
        while e > s and text[e - 1].isspace():
            e -= 1
        if e > s:
            out.append((s, e))
    return out


# -- tuples and synonyms --------------------------------------------------------

@dataclass(frozen=True)
class RawTuple:
    entity1: str
    relation: str
    entity2: str
    conditions: tuple[str, ...] = ()
    inverse_relation: str | None = None
    provenance: tuple[str, int] | None = None
    snippet: str | None = None
    snippet_span: tuple[int, int] | None = None

    def __post_init__(self) -> None:
        for name in ("entity1", "relation", "entity2"):
            value = getattr(self, name)
            if not isinstance(value, str) or not value.strip():
                raise ValueError(f"{name} must be a non-empty string")
        conds = self.conditions
        if isinstance(conds, str) or not all(isinstance(c, str) for c in conds):
            raise ValueError("conditions must be a list of strings")
        object.__setattr__(self, "conditions", tuple(conds))
        if self.inverse_relation is not None and not str(self.inverse_relation).strip():
            object.__setattr__(self, "inverse_relation", None)

    @classmethod
    def from_record(cls, rec: Mapping, provenance: tuple[str, int] | None = None) -> RawTuple:
        """Build from an extractor/wire record; raises ValueError when invalid."""
        if not isinstance(rec, Mapping):
            raise ValueError("tuple record must be an object")
        prov = provenance
        if prov is None and rec.get("doc_id") is not None:
            prov = (rec["doc_id"], int(rec.get("chunk_index", 0)))
        span = rec.get("span")
        conds = rec.get("conditions") or ()
        if isinstance(conds, (str, bytes)) or not isinstance(conds, (list, tuple)):
            raise ValueError("conditions must be a list of strings")
        return cls(
            entity1=rec.get("entity1"), relation=rec.get("relation"), entity2=rec.get("entity2"),
            conditions=tuple(conds),
            inverse_relation=rec.get("inverse_relation") or None,
            provenance=prov, snippet=rec.get("snippet"),
            snippet_span=tuple(span) if span is not None else None,
        )

    def to_record(self) -> dict:
        rec = {
            "entity1": self.entity1,
            "relation": self.relation,
            "inverse_relation": self.inverse_relation,
            "entity2": self.entity2,
            "conditions": list(self.conditions),
        }
        if self.provenance is not None:
            rec["doc_id"], rec["chunk_index"] = self.provenance
        if self.snippet is not None:
            rec["snippet"] = self.snippet
            rec["span"] = list(self.snippet_span) if self.snippet_span is not None else None
        return rec


class SynonymDictionary:
    """Functional surface-form -> canonical entity mapping.

    Canonical targets always map to themselves. Unknown entities pass
    through unchanged.
    """

    def __init__(self, entries: Mapping[str, str] | None = None) -> None:
        self.entries: dict[EntityId, EntityId] = {}
        for surface, canonical in (entries or {}).items():
            self.add(surface, canonical)

    def add(self, surface: str, canonical: str) -> None:
        s = canonicalize_entity(surface)
        c = canonicalize_entity(canonical)
        if self.entries.get(c, c) != c:
            raise ValueError(f"{canonical!r} is itself mapped to {self.entries[c]!r}")
        old = self.entries.get(s)
        if old is not None and old != c:
            raise ValueError(f"conflicting targets for {surface!r}: {old!r} vs {c!r}")
        if s != c and any(t == s for t in self.entries.values()):
            raise ValueError(f"{surface!r} is already a canonical target")
        self.entries[s] = c
        self.entries.setdefault(c, c)

    def lookup(self, entity: str) -> EntityId:
        key = canonicalize_entity(entity)
        return self.entries.get(key, key)

    def __len__(self) -> int:
        return len(self.entries)

    @classmethod
    def from_tsv(cls, path: str | Path) -> SynonymDictionary:
        out = cls()
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.rstrip("\n")
                if not line.strip() or line.startswith("#"):
                    continue
                surface, sep, canonical = line.partition("\t")
                if not sep or not canonical.strip():
                    raise ValueError(f"{path}:{lineno}: expected 'surface<TAB>canonical'")
                out.add(surface, canonical)
        return out


# -- rule grammar ----------------------------------------------------------------

@dataclass(frozen=True)
class Frame:
    pattern: re.Pattern[str]
    relation: str
    inverse: str | None = None
    passive: bool = False          # "A and B are R by C" splits the subject
    population_with: bool = False  # "in <population> with <X>" -> object X, condition population
    swap: bool = False             # "X is a risk factor for Y" -> (Y, risk_factor, X)
    listing: bool = False          # object is a list of items
    topic_subject: bool = False    # subject comes from a capture group or the document topic


def _f(regex: str, relation: str, inverse: str | None = None, **kw) -> Frame:
    return Frame(re.compile(regex, re.IGNORECASE), relation, inverse, **kw)


FRAMES: tuple[Frame, ...] = (
    _f(r"\bshould not be (?:taken|used|given|administered|prescribed) (?:by|to|in)\b",
       "contraindicated_in", "contraindicates", population_with=True),
    _f(r"\bcontraindicated (?:in|during|for|with)\b", "contraindicated_in", "contraindicates",
       population_with=True),
    _f(r"\brisk factors? (?:for (?P<subj>[^,;]+?) )?(?:include|includes|are|is)\b", "risk_factor",
       "risk_factor_for", listing=True, topic_subject=True),
    _f(r"\b(?:is|are) (?:a |an )?(?:major |known |important |common )?risk factors? for\b",
       "risk_factor", "risk_factor_for", swap=True),
    _f(r"\bdiagnosis (?:of (?P<subj>[^,;]+?) )?(?:can be |may be |is )?(?:made|established|confirmed) "
       r"(?:from|by|with|using|on)\b", "diagnosed_by", "diagnoses", topic_subject=True),
    _f(r"\bdiagnosed (?:by|with|using|from)\b", "diagnosed_by", "diagnoses"),
    _f(r"\btreated (?:with|using)\b", "treated_with", "treats"),
    _f(r"\btreated by\b", "treated_by", "treats", passive=True),
    _f(r"\b(?:used to treat|used in the treatment of|indicated for|treats|treat)\b", "treats", "treated_by"),
    _f(r"\brecommended (?:for|in)\b", "recommended_for", "recommended_treatment"),
    _f(r"\brecommends?\b", "recommends", "recommended_by"),
    _f(r"\b(?:the |a )?preferred(?: (?:in|for)\b)?", "preferred_in", "has_preferred"),
    _f(r"\bcaused by\b", "caused_by", "causes", passive=True),
    _f(r"\b(?:causes|cause|caused)\b", "causes", "caused_by"),
    _f(r"\bassociated with\b", "associated_with", "associated_with"),
    _f(r"\b(?:increases|increase|increased)\b", "increases", "increased_by"),
    _f(r"\b(?:reduces|reduce|reduced|decreases|decrease)\b", "reduces", "reduced_by"),
    _f(r"\b(?:lowers|lower)\b", "lowers", "lowered_by"),
    _f(r"\bblocked by\b", "blocked_by", "blocks", passive=True),
    _f(r"\bblocks?\b", "blocks", "blocked_by"),
    _f(r"\b(?:is|are|was|were) superior to\b", "superior_to", "inferior_to"),
    _f(r"\b(?:is|are|was|were) (?:directly )?proportional to\b", "proportional_to"),
    _f(r"\b(?:interacts|interact) with\b", "interacts_with", "interacts_with"),
    _f(r"\b(?:is|are) an alternative to\b", "alternative_to", "alternative_to"),
    _f(r"\bpresentations? (?:may be \w+ and )?(?:include|includes)\b", "presents_with", "presentation_of",
       listing=True, topic_subject=True),
    _f(r"\bpresents? with\b", "presents_with", "presentation_of"),
    _f(r"\b(?:includes|include)\b", "includes", "included_in", listing=True),
    _f(r"\b(?:is|are) (?:a|an) (?!alternative\b)", "is_a", "has_instance"),
)

_DETERMINER = re.compile(r"^(?:(?:a|an|the|both|all|its|their|this|these|those|such|some)\s+)+", re.I)
_AUX_TAIL = re.compile(
    r"(?:\s+(?:is|are|was|were|be|been|being|has|have|had|may|might|can|could|should|would|will|must|"
    r"often|commonly|frequently|typically|usually|generally|also|both|not|never|only|first))+\s*$", re.I)
_LEAD_ADVERB = re.compile(
    r"^(?:thus|therefore|however|additionally|also|moreover|furthermore|in addition|similarly|"
    r"consequently|notably|importantly|overall|finally),?\s+", re.I)
_REPORTING = re.compile(
    r"^.*?\b(?:found|showed|shows|show|demonstrated|demonstrates|suggests|suggested|indicated|indicates|"
    r"reported|reports|revealed|reveals|concluded) that\s+", re.I)
_LEAD_QUALIFIER = re.compile(r"^(in|during|for|among)\s+([^,]{1,80}),\s*", re.I)
_CLAUSE_SPLIT = re.compile(
    r"(;\s*|,?\s+and because\s+|,?\s+because\s+|,\s*which\s+|,?\s+whereas\s+|,?\s+while\s+|,\s+but\s+)",
    re.I)
_PARENS = re.compile(r"\s*\([^)]*\)")
_TEMPORAL_COORD = re.compile(
    r"\b(before|during|after),?\s+(before|during|after),?\s+(?:and|or)\s+(before|during|after)\b", re.I)
# nouns that take "in" as a complement ("a change in mental status") do not start a qualifier
_COMPLEMENT_NOUNS = ("change", "changes", "increase", "decrease", "reduction", "rise", "decline", "drop")
_QUALIFIER = re.compile("".join(f"(?<!{n})" for n in _COMPLEMENT_NOUNS)
                        + r"\s(in|during|for|with|without|among|before/during/after|before|after)\s", re.I)
_OBJECT_TAIL = re.compile(
    r"\s(?:to|due to|because|since|so that|which|who|that|whereas|while|as well as|as|than)\s.*$", re.I)
_RELATIVE = re.compile(r"\s(?:who|that)\s", re.I)
_REL_CLAUSE = re.compile(
    r"^(?:(?:had|has|have|were|was|are|is)\s+)?(?:(never|not)\s+)?(?:(?:been|be)\s+)?(.*)$", re.I)
_FILLER_QUALIFIERS = frozenset({
    "the past", "past", "the future", "future", "general", "particular", "addition", "practice", "contrast",
    "total", "part", "turn", "fact", "short", "summary", "some cases", "most cases", "many cases",
})
_GENERIC_POPULATION = frozenset({"patient", "patients", "people", "individuals", "persons", "subjects",
                                 "those", "cases"})
_POPULATION_HEADS = _GENERIC_POPULATION | frozenset({
    "women", "woman", "men", "man", "children", "child", "adults", "adult", "infants", "infant",
    "males", "females", "mothers", "girls", "boys", "elderly", "neonates", "adolescents", "newborns",
})
_PRONOUN_SUBJECTS = frozenset({
    "it", "its use", "its administration", "this drug", "this agent", "this medication", "which",
    "this", "they", "their use", "the drug", "the agent",
})
_AGE_LT = re.compile(r"\b(?:less than|under|younger than|below)\s+(\d+)(?:\s*(?:years?|yrs?)(?:\s+old|\s+of\s+age)?)?",
                     re.I)
_AGE_GT = re.compile(r"\b(?:more than|over|older than|above)\s+(\d+)(?:\s*(?:years?|yrs?)(?:\s+old|\s+of\s+age)?)?",
                     re.I)
_LIST_SPLIT = re.compile(r",\s*(?:and\s+|or\s+)?|\s+and\s+", re.I)
_TRIM = " \t,;:.!?\"'"


def _clean_entity(text: str) -> str:
    text = _DETERMINER.sub("", text.strip(_TRIM) + " ").strip(_TRIM + " ")
    return " ".join(text.split())


def _normalize_condition(text: str) -> str:
    text = _AGE_LT.sub(lambda m: f"< {m.group(1)} years", text)
    text = _AGE_GT.sub(lambda m: f"> {m.group(1)} years", text)
    return " ".join(text.split())


def _qualifier_pieces(text: str) -> list[str]:
    """``"in children who had never been exposed to X in the past"`` -> condition strings."""
    rel_parts = _RELATIVE.split(" " + text, maxsplit=1)
    head = rel_parts[0].strip()
    out: list[str] = []
    bounds = [m.start() for m in _QUALIFIER.finditer(" " + head)] + [len(head) + 1]
    pieces = [(" " + head)[bounds[i]:bounds[i + 1]].strip() for i in range(len(bounds) - 1)]
    if not pieces:
        pieces = [head]
    for piece in pieces:
        prep, _, rest = piece.partition(" ")
        prep_l = prep.lower()
        if prep_l in {"in", "during", "for", "with", "among"}:
            phrase = rest
        else:
            phrase = piece
        phrase = _clean_entity(_OBJECT_TAIL.sub("", " " + _normalize_condition(phrase)))
        if not phrase or phrase.lower() in _FILLER_QUALIFIERS or phrase.lower() in _GENERIC_POPULATION:
            continue
        out.append(_normalize_condition(phrase))
    if len(rel_parts) > 1:
        m = _REL_CLAUSE.match(rel_parts[1].strip())
        body = m.group(2) if m else rel_parts[1]
        body_pieces = _qualifier_pieces_plain(body)
        if body_pieces:
            out.append(("not " if m and m.group(1) else "") + body_pieces)
    return out


def _qualifier_pieces_plain(body: str) -> str:
    """Drop trailing filler qualifiers such as ``in the past``."""
    body = body.strip(_TRIM)
    m = _QUALIFIER.search(" " + body)
    while m is not None:
        tail = (" " + body)[m.end():].strip(_TRIM)
        if _clean_entity(tail).lower() in _FILLER_QUALIFIERS:
            body = (" " + body)[:m.start()].strip()
            m = _QUALIFIER.search(" " + body)
        else:
            break
    return _normalize_condition(_clean_entity(body))


def _split_object(text: str) -> tuple[str, list[str]]:
    """Separate an object phrase from its trailing qualifiers."""
    text = _TEMPORAL_COORD.sub(lambda m: "/".join(g.lower() for g in m.groups()), text)
    text = text.split(",")[0]
    m = _QUALIFIER.search(" " + text + " ")
    if m is None:
        obj, quals = text, []
    else:
        cut = max(m.start() - 1, 0)
        obj, quals = text[:cut], _qualifier_pieces(text[cut:].strip())
    obj = _OBJECT_TAIL.sub("", " " + obj).strip()
    return _clean_entity(obj), quals


def _split_subject(text: str) -> tuple[str, list[str], bool]:
    """Return (subject, conditions, negated) for the text before a frame."""
    tail = _AUX_TAIL.search(text)
    negated = False
    if tail:
        negated = bool(re.search(r"\b(?:not|never)\b", tail.group(0), re.I))
        text = text[:tail.start()]
    conds: list[str] = []
    m = re.search(r"\s(in|during|among)\s", " " + text + " ", re.I)
    if m is not None:
        cut = max(m.start() - 1, 0)
        conds = _qualifier_pieces(text[cut:].strip())
        text = text[:cut]
    if " ".join(text.split()).lower() in _PRONOUN_SUBJECTS:
        return "it", conds, negated
    return _clean_entity(text), conds, negated


def _distribute_heads(subject: str) -> list[str]:
    """``"L-type and T-type calcium channels"`` -> both channels spelled out."""
    parts = [p.strip() for p in _LIST_SPLIT.split(subject) if p and p.strip()]
    if len(parts) < 2:
        return [subject]
    last_words = parts[-1].split()
    head = " ".join(last_words[1:])
    out = []
    for p in parts[:-1]:
        out.append(f"{p} {head}" if head and len(p.split()) == 1 else p)
    out.append(parts[-1])
    return [_clean_entity(p) for p in out if _clean_entity(p)]


def _is_population(phrase: str) -> bool:
    words = phrase.lower().split()
    return bool(words) and words[-1] in _POPULATION_HEADS


def _find_frames(clause: str) -> list[tuple[Frame, re.Match[str]]]:
    """Leftmost-longest frame matches; later ones only when coordinated by ``and``."""
    found: list[tuple[Frame, re.Match[str]]] = []
    pos = 0
    while True:
        best: tuple[Frame, re.Match[str]] | None = None
        for frame in FRAMES:
            m = frame.pattern.search(clause, pos)
            if m is None or m.end() == m.start():
                continue
            if best is None or m.start() < best[1].start() or (
                    m.start() == best[1].start() and m.end() > best[1].end()):
                best = (frame, m)
        if best is None:
            return found
        if found:
            between = clause[found[-1][1].end():best[1].start()]
            if not re.search(r"\band(?:\s+(?:is|are|was|were|has|have|may|can|should|also))*\s*$", between, re.I):
                return found
        found.append(best)
        pos = best[1].end()
        if best[0].listing:
            return found


@dataclass
class _Ctx:
    topic: str | None
    sentence_conditions: list[str]
    main_subject: str | None = None
    previous_conditions: list[str] = field(default_factory=list)


def _clause_tuples(clause: str, ctx: _Ctx, relative: bool) -> list[RawTuple]:
    clause = _REPORTING.sub("", _LEAD_ADVERB.sub("", clause.strip()))
    frames = _find_frames(clause)
    if not frames:
        return []
    out: list[RawTuple] = []
    first_frame, first_m = frames[0]
    subj_text = clause[:first_m.start()]
    subject, subj_conds, negated = _split_subject(subj_text)
    if first_frame.topic_subject:
        captured = first_m.groupdict().get("subj")
        if captured:
            subject = _clean_entity(captured)
        elif not subject or _is_population(subject) or subject.lower() in _PRONOUN_SUBJECTS:
            subject = ctx.topic or ""
    if relative or subject.lower() in _PRONOUN_SUBJECTS:
        subject = ctx.main_subject or ""
    if negated and first_frame.relation != "contraindicated_in":
        return []
    inherited = list(ctx.previous_conditions) if relative else []
    base_conds = ctx.sentence_conditions + inherited + subj_conds
    if subject and _is_population(subject) and ctx.topic and not first_frame.topic_subject \
            and subject.lower() not in _GENERIC_POPULATION:
        base_conds = base_conds + [subject]
        subject = ctx.topic
    if not subject:
        return []
    if ctx.main_subject is None:
        ctx.main_subject = subject
    subjects = _distribute_heads(subject) if first_frame.passive else [subject]

    clause_conds: list[str] = []
    for i, (frame, m) in enumerate(frames):
        end = frames[i + 1][1].start() if i + 1 < len(frames) else len(clause)
        obj_text = clause[m.end():end]
        obj_text = re.sub(r"\s+and(?:\s+(?:is|are|was|were|has|have|may|can|should|also))*\s*$", "", obj_text,
                          flags=re.I)
        items = [obj_text]
        if frame.listing:
            such = re.search(r"\bsuch as\b", obj_text, re.I)
            if such:
                obj_text = obj_text[such.end():]
            items = [p for p in _LIST_SPLIT.split(obj_text.split(";")[0]) if p and p.strip()]
        for item in items:
            obj, quals = _split_object(item)
            conds = base_conds + quals
            if frame.population_with and _is_population(obj):
                with_q = re.search(r"\swith\s+(.+)$", " " + item.split(",")[0], re.I)
                if with_q:
                    inner, inner_quals = _split_object(with_q.group(1))
                    quals = [q for q in quals if q.lower() != inner.lower()]
                    pop = [] if obj.lower() in _GENERIC_POPULATION else [obj]
                    obj = inner
                    conds = base_conds + pop + [q for q in quals if q not in inner_quals] + inner_quals
            if not obj:
                continue
            for subj in subjects:
                e1, e2 = (obj, subj) if frame.swap else (subj, obj)
                if e1.lower() == e2.lower():
                    continue
                seen: list[str] = []
                for c in conds:
                    if c and c.lower() not in (s.lower() for s in seen):
                        seen.append(c)
                out.append(RawTuple(e1, frame.relation, e2, tuple(seen), frame.inverse))
                clause_conds = seen
    ctx.previous_conditions = clause_conds
    return out


def _detect_topic(text: str) -> tuple[str | None, str]:
    first, nl, rest = text.lstrip().partition("\n")
    first = first.strip()
    if nl and first and len(first.split()) <= 10 and first[-1] not in ".!?:;,":
        return first.rstrip("#").strip("# ").strip(), rest
    return None, text


def rule_based_extract(text: str, topic: str | None = None) -> list[RawTuple]:
    """Deterministic pattern extraction of condition-aware tuples.

    A heading on the first line (short, no final punctuation) is taken as
    the document topic and used as the subject of subject-less frames such
    as "Risk factors include ...".
    """
    detected, body = _detect_topic(text)
    topic = topic or detected
    if detected is None:
        body = text
    out: list[RawTuple] = []
    for start, end in split_sentences(body):
        sentence = _PARENS.sub("", body[start:end]).strip()
        sentence = sentence.rstrip(".!? ")
        sentence = _LEAD_ADVERB.sub("", sentence)
        ctx = _Ctx(topic=topic, sentence_conditions=[])
        lead = _LEAD_QUALIFIER.match(sentence)
        if lead:
            cond = _normalize_condition(_clean_entity(lead.group(2)))
            if cond.lower() not in _FILLER_QUALIFIERS and cond.lower() not in _GENERIC_POPULATION:
                ctx.sentence_conditions.append(cond)
            sentence = sentence[lead.end():]
        parts = _CLAUSE_SPLIT.split(sentence)
        relative = False
        for idx in range(0, len(parts), 2):
            clause = parts[idx]
            if clause.strip():
                out.extend(_clause_tuples(clause, ctx, relative))
            if idx + 1 < len(parts):
                relative = bool(re.search(r"\bwhich\b", parts[idx + 1], re.I))
    return out


# -- extractor interface ---------------------------------------------------------

class TupleExtractor(Protocol):
    max_concurrency: int

    def extract(self, text: str, topic: str | None = None) -> list[Mapping]:
        """Return wire-format tuple records for ``text``."""
        ...


class RuleBasedExtractor:
    max_concurrency = 64
    remote = False

    def extract(self, text: str, topic: str | None = None) -> list[Mapping]:
        return [t.to_record() for t in rule_based_extract(text, topic)]


def _parse_json_payload(content: str, opener: str) -> object:
    closer = "]" if opener == "[" else "}"
    start = content.find(opener)
    end = content.rfind(closer)
    if start < 0 or end < start:
        raise SchemaError(f"no JSON {'array' if opener == '[' else 'object'} in provider output")
    try:
        return json.loads(content[start:end + 1])
    except json.JSONDecodeError as exc:
        raise SchemaError(f"unparseable JSON: {exc}") from exc


class ChatTupleExtractor:
    """Extraction through a chat provider using the extraction prompt."""

    remote = True

    def __init__(self, client, system_prompt: str = EXTRACTION_SYSTEM, user_template: str = EXTRACTION_USER) -> None:
        self.client = client
        self.system_prompt = system_prompt
        self.user_template = user_template
        self.max_concurrency = getattr(getattr(client, "config", None), "max_concurrency", 1)

    def extract(self, text: str, topic: str | None = None) -> list[Mapping]:
        user = render(self.user_template, {"passage": text}, required={"passage"})
        content = self.client.chat([("system", self.system_prompt), ("user", user)])
        data = _parse_json_payload(content, "[")
        if not isinstance(data, list):
            raise SchemaError("extractor output is not a JSON array")
        return data


@dataclass
class ExtractionStats:
    """Counters and failure ledger shared by concurrent extraction calls."""

    dropped: int = 0
    failures: list[dict] = field(default_factory=list)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def drop(self, n: int = 1) -> None:
        with self._lock:
            self.dropped += n

    def fail(self, chunk: DocumentChunk, error: Exception) -> None:
        with self._lock:
            self.failures.append({"doc_id": chunk.doc_id, "chunk_index": chunk.chunk_index, "error": str(error)})


def locate_snippet(chunk: DocumentChunk, entity1: str, entity2: str) -> tuple[str, tuple[int, int]]:
    """The first chunk sentence mentioning both entities.

    Failing that, the first mentioning the object, then the subject (topic
    subjects often appear only in a heading), then the whole chunk. The span
    is in document coordinates.
    """
    e1, e2 = entity1.casefold(), entity2.casefold()
    by_object = by_subject = None
    for s, e in split_sentences(chunk.text):
        sent = chunk.text[s:e].casefold()
        if e1 in sent and e2 in sent:
            return chunk.text[s:e], (chunk.char_offset + s, chunk.char_offset + e)
        if by_object is None and e2 in sent:
            by_object = (s, e)
        if by_subject is None and e1 in sent:
            by_subject = (s, e)
    fallback = by_object or by_subject
    if fallback is not None:
        s, e = fallback
        return chunk.text[s:e], (chunk.char_offset + s, chunk.char_offset + e)
    return chunk.text, (chunk.char_offset, chunk.char_offset + len(chunk.text))


def extract_tuples(chunk: DocumentChunk, extractor: TupleExtractor, stats: ExtractionStats | None = None,
                   topic: str | None = None) -> list[RawTuple]:
    """Run ``extractor`` on one chunk, attaching provenance and snippets.

    Invalid records are dropped and counted; a provider failure skips the
    chunk and is written to the failure ledger.
    """
    stats = stats if stats is not None else ExtractionStats()
    try:
        records = extractor.extract(chunk.text, topic=topic)
    except (ProviderError, SchemaError) as exc:
        log.warning("extraction failed for %s#%d: %s", chunk.doc_id, chunk.chunk_index, exc)
        stats.fail(chunk, exc)
        return []
    out: list[RawTuple] = []
    for rec in records:
        try:
            raw = RawTuple.from_record(rec, provenance=(chunk.doc_id, chunk.chunk_index))
            text, span = locate_snippet(chunk, raw.entity1, raw.entity2)
            out.append(RawTuple(raw.entity1, raw.relation, raw.entity2, raw.conditions, raw.inverse_relation,
                                raw.provenance, text, span))
        except (ValueError, TypeError) as exc:
            log.warning("dropping malformed tuple from %s#%d: %s", chunk.doc_id, chunk.chunk_index, exc)
            stats.drop()
    return out


def document_topic(text: str) -> str | None:
    return _detect_topic(text)[0]


def extract_corpus(documents: Mapping[str, str], extractor: TupleExtractor,
                   max_chunk_chars: int = DEFAULT_MAX_CHUNK_CHARS, stats: ExtractionStats | None = None,
                   jobs: int = 1) -> list[RawTuple]:
    """Extract every chunk of every document; output order is deterministic."""
    stats = stats if stats is not None else ExtractionStats()
    work = []
    for doc_id in sorted(documents):
        text = documents[doc_id]
        topic = document_topic(text)
        work.extend((chunk, topic) for chunk in chunk_document(doc_id, text, max_chunk_chars))
    workers = max(1, min(jobs, getattr(extractor, "max_concurrency", 1)))
    if workers == 1:
        results = [extract_tuples(c, extractor, stats, t) for c, t in work]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda ct: extract_tuples(ct[0], extractor, stats, ct[1]), work))
    return [t for group in results for t in group]


# -- normalization -----------------------------------------------------------------

def normalize_tuple(raw: RawTuple, dictionary: SynonymDictionary | None = None) -> EdgeRecord:
    """Canonicalize a raw tuple into an EdgeRecord.

    Entities go through the synonym dictionary, the relation is snake-cased
    and condition strings become ConditionLabels with negation lifted.
    """
    dictionary = dictionary if dictionary is not None else SynonymDictionary()
    source = dictionary.lookup(raw.entity1)
    target = dictionary.lookup(raw.entity2)
    conditions = tuple(ConditionLabel.parse(c) for c in raw.conditions if c and c.strip())
    snippets: tuple[EvidenceSnippet, ...] = ()
    if raw.snippet and raw.provenance is not None:
        snippets = (EvidenceSnippet(raw.provenance[0], raw.snippet, raw.snippet_span),)
    return EdgeRecord(source, canonicalize_relation(raw.relation), target, conditions, snippets)


def build_graph(tuples: Iterable[RawTuple], dictionary: SynonymDictionary | None = None,
                documents: Mapping[str, str] | None = None, materialize_inverse: bool = True,
                freeze: bool = True) -> KnowledgeGraph:
    graph = KnowledgeGraph()
    for doc_id, text in (documents or {}).items():
        graph.add_document(doc_id, text)
    for raw in tuples:
        try:
            edge = normalize_tuple(raw, dictionary)
        except EmptyEntity as exc:
            log.warning("skipping tuple %r: %s", raw, exc)
            continue
        inverse = canonicalize_relation(raw.inverse_relation) if raw.inverse_relation else None
        graph.add_tuple(edge, materialize_inverse=materialize_inverse, inverse_relation=inverse)
    return graph.freeze() if freeze else graph


def read_corpus(directory: str | Path) -> dict[str, str]:
    """Every ``*.txt``/``*.md`` file in ``directory``, keyed by file stem."""
    path = Path(directory)
    if not path.is_dir():
        raise NotADirectoryError(str(path))
    docs = {}
    for f in sorted(path.iterdir()):
        if f.is_file() and f.suffix in {".txt", ".md"}:
            docs[f.stem] = f.read_text(encoding="utf-8")
    return docs


def document_text_for(chunks: Sequence[DocumentChunk]) -> str:
    return "".join(c.text for c in chunks)
